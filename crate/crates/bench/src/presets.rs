//! Named experiment presets and the models behind them.
//!
//! The `*-fig*` presets reproduce the benchmark configurations at full size;
//! the `-tiny` variants keep the same dim(P)-versus-dim(H) regime at n <= 512
//! so CI can afford the exact n-pass baselines. Synthetic presets expose
//! dense operators with controlled spectra for estimator calibration.

use ntk_core::linalg::{DenseMatrix, ProbeDistribution, ProbeSpec};
use ntk_core::rng::{derive_seed, SplitMix64};
use ntk_core::{
    draw_probes, init_params, thin_qr, Activation, DenseJacobian, GruConfig, JacobianContext,
    JacobianOps, MlpConfig, ModelConfig, ParamVector, StateTensor,
};

use crate::error::{HarnessError, Result};

/// Seed streams used when expanding a master seed into model randomness.
const PARAM_STREAM: u64 = 101;
const INPUT_STREAM: u64 = 102;
const SYNTH_STREAM: u64 = 103;

/// What kind of operator an experiment runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Mlp(MlpConfig),
    Gru(GruConfig),
    /// NTK = JJᵀ for a Gaussian n x rank Jacobian: exactly low rank.
    SynthLowRank {
        dim: usize,
        rank: usize,
    },
    /// NTK with eigenvalues i^(-exponent) in a random orthogonal basis.
    SynthPowerLaw {
        dim: usize,
        exponent: f64,
    },
}

impl ModelSpec {
    pub fn state_dim(&self) -> usize {
        match self {
            ModelSpec::Mlp(c) => c.state_dim(),
            ModelSpec::Gru(c) => c.state_dim(),
            ModelSpec::SynthLowRank { dim, .. } => *dim,
            ModelSpec::SynthPowerLaw { dim, .. } => *dim,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            ModelSpec::Mlp(c) => c.param_count(),
            ModelSpec::Gru(c) => c.param_count(),
            ModelSpec::SynthLowRank { rank, .. } => *rank,
            ModelSpec::SynthPowerLaw { dim, .. } => *dim,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            ModelSpec::Mlp(c) => format!(
                "mlp {}x{} layers={} batch={} (n={}, P={})",
                c.input_dim,
                c.hidden_dim,
                c.num_layers,
                c.batch,
                c.state_dim(),
                c.param_count()
            ),
            ModelSpec::Gru(c) => format!(
                "gru {}x{} T={} batch={} (n={}, P={})",
                c.input_dim,
                c.hidden_dim,
                c.timesteps,
                c.batch,
                c.state_dim(),
                c.param_count()
            ),
            ModelSpec::SynthLowRank { dim, rank } => {
                format!("synthetic low-rank (n={dim}, rank={rank})")
            }
            ModelSpec::SynthPowerLaw { dim, exponent } => {
                format!("synthetic power-law (n={dim}, exponent={exponent})")
            }
        }
    }
}

/// Deep-MLP benchmark model: 15 tanh layers of width 64 on 50 Gaussian
/// 100-dimensional inputs (n = 3,200; P = 64,704).
pub fn mlp_benchmark_config() -> MlpConfig {
    MlpConfig {
        input_dim: 100,
        hidden_dim: 64,
        num_layers: 15,
        output_dim: None,
        activation: Activation::Tanh,
        batch: 50,
    }
}

/// GRU benchmark model: 64 hidden units over 15 timesteps on 50 sequences
/// of 10-dimensional inputs (n = 48,000; P = 14,592).
pub fn gru_benchmark_config() -> GruConfig {
    GruConfig {
        input_dim: 10,
        hidden_dim: 64,
        timesteps: 15,
        batch: 50,
    }
}

/// MNIST classifier used by the metric study: 784 -> 256 -> 10 with a
/// linear readout, evaluated on 512 held-out examples (n = 5,120).
pub fn mnist_benchmark_config() -> MlpConfig {
    MlpConfig {
        input_dim: 784,
        hidden_dim: 256,
        num_layers: 2,
        output_dim: Some(10),
        activation: Activation::Tanh,
        batch: 512,
    }
}

/// CI-sized MLP that keeps dim(H) < dim(P): n = 256, P = 1,024.
pub fn mlp_tiny_config() -> MlpConfig {
    MlpConfig {
        input_dim: 12,
        hidden_dim: 16,
        num_layers: 4,
        output_dim: None,
        activation: Activation::Tanh,
        batch: 16,
    }
}

/// CI-sized GRU that keeps dim(P) < dim(H): n = 512, P = 288.
pub fn gru_tiny_config() -> GruConfig {
    GruConfig {
        input_dim: 2,
        hidden_dim: 8,
        timesteps: 8,
        batch: 8,
    }
}

/// CI-sized classifier for the metric study on synthetic data:
/// 32 -> 32 -> 10 over 48 eval examples (n = 480).
pub fn mnist_tiny_config() -> MlpConfig {
    MlpConfig {
        input_dim: 32,
        hidden_dim: 32,
        num_layers: 2,
        output_dim: Some(10),
        activation: Activation::Tanh,
        batch: 48,
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "mlp-fig2",
    "gru-fig3",
    "mnist-fig4",
    "mlp-tiny",
    "gru-tiny",
    "mnist-tiny",
    "synth-lowrank",
    "synth-powerlaw",
];

pub fn preset(name: &str) -> Result<ModelSpec> {
    match name {
        "mlp-fig2" => Ok(ModelSpec::Mlp(mlp_benchmark_config())),
        "gru-fig3" => Ok(ModelSpec::Gru(gru_benchmark_config())),
        "mnist-fig4" => Ok(ModelSpec::Mlp(mnist_benchmark_config())),
        "mlp-tiny" => Ok(ModelSpec::Mlp(mlp_tiny_config())),
        "gru-tiny" => Ok(ModelSpec::Gru(gru_tiny_config())),
        "mnist-tiny" => Ok(ModelSpec::Mlp(mnist_tiny_config())),
        "synth-lowrank" => Ok(ModelSpec::SynthLowRank { dim: 256, rank: 4 }),
        "synth-powerlaw" => Ok(ModelSpec::SynthPowerLaw {
            dim: 512,
            exponent: 1.0,
        }),
        other => Err(HarnessError::Config(format!(
            "unknown preset `{other}`; available: {}",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Frozen model randomness, built once per experiment from the master seed
/// and cheap to re-instantiate with fresh call counters per repeat.
#[derive(Debug, Clone)]
pub enum ModelData {
    Mlp {
        config: MlpConfig,
        params: ParamVector,
        inputs: StateTensor,
    },
    Gru {
        config: GruConfig,
        params: ParamVector,
        inputs: StateTensor,
    },
    Dense {
        jacobian: DenseMatrix,
    },
}

/// A jacobian with its own counters, owned by one repeat.
pub enum BuiltJacobian {
    Model(JacobianContext),
    Dense(DenseJacobian),
}

impl BuiltJacobian {
    pub fn as_ops(&self) -> &dyn JacobianOps {
        match self {
            BuiltJacobian::Model(c) => c,
            BuiltJacobian::Dense(d) => d,
        }
    }
}

pub fn gaussian_state(len: usize, axes: Vec<(String, usize)>, seed: u64) -> StateTensor {
    let mut rng = SplitMix64::new(seed);
    StateTensor::new((0..len).map(|_| rng.next_standard_normal()).collect(), axes)
        .expect("axes match length")
}

impl ModelData {
    pub fn build(spec: &ModelSpec, master_seed: u64) -> Result<ModelData> {
        let param_seed = derive_seed(master_seed, PARAM_STREAM);
        let input_seed = derive_seed(master_seed, INPUT_STREAM);
        match spec {
            ModelSpec::Mlp(config) => {
                let params = init_params(&ModelConfig::Mlp(config.clone()), param_seed)?;
                let inputs = gaussian_state(
                    config.batch * config.input_dim,
                    vec![
                        ("batch".into(), config.batch),
                        ("input".into(), config.input_dim),
                    ],
                    input_seed,
                );
                Ok(ModelData::Mlp {
                    config: config.clone(),
                    params,
                    inputs,
                })
            }
            ModelSpec::Gru(config) => {
                let params = init_params(&ModelConfig::Gru(config.clone()), param_seed)?;
                let inputs = gaussian_state(
                    config.batch * config.timesteps * config.input_dim,
                    vec![
                        ("batch".into(), config.batch),
                        ("time".into(), config.timesteps),
                        ("input".into(), config.input_dim),
                    ],
                    input_seed,
                );
                Ok(ModelData::Gru {
                    config: config.clone(),
                    params,
                    inputs,
                })
            }
            ModelSpec::SynthLowRank { dim, rank } => {
                let j = draw_probes(
                    *dim,
                    &ProbeSpec {
                        distribution: ProbeDistribution::Gaussian,
                        count: *rank,
                        seed: derive_seed(master_seed, SYNTH_STREAM),
                    },
                )?;
                Ok(ModelData::Dense { jacobian: j })
            }
            ModelSpec::SynthPowerLaw { dim, exponent } => {
                // J = U diag(sqrt(lambda)): NTK = U diag(lambda) Uᵀ with a
                // Haar-ish orthogonal U from the QR of a Gaussian matrix.
                let g = draw_probes(
                    *dim,
                    &ProbeSpec {
                        distribution: ProbeDistribution::Gaussian,
                        count: *dim,
                        seed: derive_seed(master_seed, SYNTH_STREAM),
                    },
                )?;
                let u = thin_qr(&g)?;
                if u.cols() != *dim {
                    return Err(HarnessError::Config(
                        "random basis was rank deficient; change the seed".into(),
                    ));
                }
                let mut j = u;
                for c in 0..*dim {
                    let scale = ((c + 1) as f64).powf(-exponent / 2.0);
                    for r in 0..*dim {
                        let v = j.get(r, c) * scale;
                        j.set(r, c, v);
                    }
                }
                Ok(ModelData::Dense { jacobian: j })
            }
        }
    }

    /// Fresh jacobian with zeroed counters; value-identical across calls.
    pub fn instantiate(&self) -> Result<BuiltJacobian> {
        match self {
            ModelData::Mlp {
                config,
                params,
                inputs,
            } => Ok(BuiltJacobian::Model(JacobianContext::new(
                ModelConfig::Mlp(config.clone()),
                params.clone(),
                inputs.clone(),
            )?)),
            ModelData::Gru {
                config,
                params,
                inputs,
            } => Ok(BuiltJacobian::Model(JacobianContext::new(
                ModelConfig::Gru(config.clone()),
                params.clone(),
                inputs.clone(),
            )?)),
            ModelData::Dense { jacobian } => {
                Ok(BuiltJacobian::Dense(DenseJacobian::new(jacobian.clone())))
            }
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelData::Mlp { config, .. } => config.state_dim(),
            ModelData::Gru { config, .. } => config.state_dim(),
            ModelData::Dense { jacobian } => jacobian.rows(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_presets_have_expected_sizes() {
        assert_eq!(preset("mlp-fig2").unwrap().state_dim(), 3_200);
        assert_eq!(preset("mlp-fig2").unwrap().param_dim(), 64_704);
        assert_eq!(preset("gru-fig3").unwrap().state_dim(), 48_000);
        assert_eq!(preset("gru-fig3").unwrap().param_dim(), 14_592);
        assert_eq!(preset("mnist-fig4").unwrap().state_dim(), 5_120);
    }

    #[test]
    fn tiny_presets_fit_ci_and_keep_the_regime() {
        let mlp = preset("mlp-tiny").unwrap();
        assert!(mlp.state_dim() <= 512);
        assert!(mlp.state_dim() < mlp.param_dim(), "MLP keeps n < P");
        let gru = preset("gru-tiny").unwrap();
        assert!(gru.state_dim() <= 512);
        assert!(gru.param_dim() < gru.state_dim(), "GRU keeps P < n");
        let mnist = preset("mnist-tiny").unwrap();
        assert!(mnist.state_dim() <= 512);
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(preset("mlp-fig9").is_err());
    }

    #[test]
    fn model_data_is_deterministic() {
        let spec = preset("mlp-tiny").unwrap();
        let a = ModelData::build(&spec, 42).unwrap();
        let b = ModelData::build(&spec, 42).unwrap();
        match (&a, &b) {
            (
                ModelData::Mlp {
                    params: pa,
                    inputs: ia,
                    ..
                },
                ModelData::Mlp {
                    params: pb,
                    inputs: ib,
                    ..
                },
            ) => {
                assert_eq!(pa.data, pb.data);
                assert_eq!(ia.data, ib.data);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn synthetic_low_rank_has_the_advertised_rank() {
        let spec = ModelSpec::SynthLowRank { dim: 32, rank: 3 };
        let data = ModelData::build(&spec, 7).unwrap();
        let built = data.instantiate().unwrap();
        assert_eq!(built.as_ops().state_dim(), 32);
        assert_eq!(built.as_ops().param_dim(), 3);
    }
}
