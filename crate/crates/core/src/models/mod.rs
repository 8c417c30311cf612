//! Model families whose parameter Jacobians the estimators probe.
//!
//! Two architectures are provided: a deep MLP whose state is the final-layer
//! activation over a batch, and a GRU whose state is the hidden vector at
//! every timestep. Parameters live in a flat vector with a manifest so the
//! same buffer can be viewed tensor by tensor.
//!
//! Conventions pinned here and relied on everywhere else:
//! - weights are row-major `(out, in)`, applied as `x · Wᵀ + b`;
//! - GRU gates are packed in (reset, update, candidate) order along the 3H
//!   axis, and the reset gate multiplies the hidden-to-hidden candidate term;
//! - the GRU state update is `h = (1 - z) ⊙ n + z ⊙ h_prev`;
//! - state tensors are flattened batch-major: `[batch, units]` for the MLP
//!   and `[batch, time, units]` for the GRU;
//! - weight init is uniform on `(-1/sqrt(fan_in), 1/sqrt(fan_in))`
//!   (variance `1/(3 fan_in)`, the stock linear-layer default), biases
//!   start at zero. At depth this contracts tanh activations and produces
//!   the effectively low-rank kernels the estimators are benchmarked on.

pub mod gru;
pub mod mlp;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation and the stored output.
    /// The ReLU subgradient at exactly zero is defined as 0.
    #[inline]
    pub fn derivative(&self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Deep MLP: one `input_dim -> hidden_dim` layer followed by
/// `num_layers - 1` square layers, every layer with a bias.
///
/// When `output_dim` is set, the last layer maps to that width instead and
/// acts as a linear readout (identity activation); this is the
/// classification head used by the MNIST-style experiments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub output_dim: Option<usize>,
    pub activation: Activation,
    pub batch: usize,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0
            || self.hidden_dim == 0
            || self.num_layers == 0
            || self.batch == 0
            || self.output_dim == Some(0)
        {
            return Err(Error::invalid("MLP dimensions must all be at least 1"));
        }
        Ok(())
    }

    /// Widths of each layer's (out, in) pair, in order.
    pub(crate) fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.num_layers);
        let mut current = self.input_dim;
        for layer in 0..self.num_layers {
            let is_last = layer + 1 == self.num_layers;
            let out = match (is_last, self.output_dim) {
                (true, Some(o)) => o,
                _ => self.hidden_dim,
            };
            dims.push((out, current));
            current = out;
        }
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|&(out, inp)| out * inp + out)
            .sum()
    }

    /// Length of the flattened state h(θ): batch times final width.
    pub fn state_dim(&self) -> usize {
        let (out, _) = *self.layer_dims().last().expect("at least one layer");
        self.batch * out
    }

    pub fn manifest(&self) -> ParamManifest {
        let mut entries = Vec::new();
        let mut offset = 0;
        for (layer, (out, inp)) in self.layer_dims().into_iter().enumerate() {
            entries.push(ParamEntry {
                name: format!("layer{layer}.weight"),
                shape: vec![out, inp],
                offset,
            });
            offset += out * inp;
            entries.push(ParamEntry {
                name: format!("layer{layer}.bias"),
                shape: vec![out],
                offset,
            });
            offset += out;
        }
        ParamManifest {
            entries,
            total: offset,
        }
    }
}

/// GRU evaluated for a fixed number of timesteps from a zero initial state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GruConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub timesteps: usize,
    pub batch: usize,
}

impl GruConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.timesteps == 0 || self.batch == 0 {
            return Err(Error::invalid("GRU dimensions must all be at least 1"));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let h = self.hidden_dim;
        let i = self.input_dim;
        3 * h * i + 3 * h * h + 2 * 3 * h
    }

    /// Length of the flattened state: batch * timesteps * hidden.
    pub fn state_dim(&self) -> usize {
        self.batch * self.timesteps * self.hidden_dim
    }

    pub fn manifest(&self) -> ParamManifest {
        let h = self.hidden_dim;
        let i = self.input_dim;
        let entries = vec![
            ParamEntry {
                name: "w_ih".into(),
                shape: vec![3 * h, i],
                offset: 0,
            },
            ParamEntry {
                name: "w_hh".into(),
                shape: vec![3 * h, h],
                offset: 3 * h * i,
            },
            ParamEntry {
                name: "b_ih".into(),
                shape: vec![3 * h],
                offset: 3 * h * i + 3 * h * h,
            },
            ParamEntry {
                name: "b_hh".into(),
                shape: vec![3 * h],
                offset: 3 * h * i + 3 * h * h + 3 * h,
            },
        ];
        ParamManifest {
            entries,
            total: 3 * h * i + 3 * h * h + 6 * h,
        }
    }
}

/// Either model family, as consumed by the operator layer.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelConfig {
    Mlp(MlpConfig),
    Gru(GruConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Mlp(c) => c.validate(),
            ModelConfig::Gru(c) => c.validate(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.param_count(),
            ModelConfig::Gru(c) => c.param_count(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            ModelConfig::Mlp(c) => c.state_dim(),
            ModelConfig::Gru(c) => c.state_dim(),
        }
    }

    pub fn manifest(&self) -> ParamManifest {
        match self {
            ModelConfig::Mlp(c) => c.manifest(),
            ModelConfig::Gru(c) => c.manifest(),
        }
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered layout of every tensor in a parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamManifest {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

/// Flat parameter vector plus the manifest describing its tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub data: Vec<f64>,
    pub manifest: ParamManifest,
}

impl ParamVector {
    pub fn zeros(manifest: ParamManifest) -> Self {
        let data = vec![0.0; manifest.total];
        ParamVector { data, manifest }
    }

    pub fn from_data(manifest: ParamManifest, data: Vec<f64>) -> Result<Self> {
        if data.len() != manifest.total {
            return Err(Error::shape(
                format!("{} parameters", manifest.total),
                format!("{}", data.len()),
            ));
        }
        Ok(ParamVector { data, manifest })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slice of the tensor with the given manifest name.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        let entry = self.manifest.entries.iter().find(|e| e.name == name)?;
        Some(&self.data[entry.offset..entry.offset + entry.len()])
    }

    /// Splits into (name, shape, values) views; `flatten` reassembles them.
    pub fn unflatten(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.manifest
            .entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.shape.clone(),
                    &self.data[e.offset..e.offset + e.len()],
                )
            })
            .collect()
    }

    /// Rebuilds a flat vector from unflattened views over the same manifest.
    pub fn flatten(
        manifest: ParamManifest,
        tensors: &[(String, Vec<usize>, &[f64])],
    ) -> Result<Self> {
        let mut data = vec![0.0; manifest.total];
        if tensors.len() != manifest.entries.len() {
            return Err(Error::invalid("tensor count does not match manifest"));
        }
        for ((name, shape, values), entry) in tensors.iter().zip(&manifest.entries) {
            if *name != entry.name || *shape != entry.shape || values.len() != entry.len() {
                return Err(Error::invalid(format!(
                    "tensor `{name}` does not match manifest"
                )));
            }
            data[entry.offset..entry.offset + entry.len()].copy_from_slice(values);
        }
        Ok(ParamVector { data, manifest })
    }
}

/// Flattened model state with labeled axes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub data: Vec<f64>,
    pub axes: Vec<(String, usize)>,
}

impl StateTensor {
    pub fn new(data: Vec<f64>, axes: Vec<(String, usize)>) -> Result<Self> {
        let expected: usize = axes.iter().map(|(_, e)| e).product();
        if expected != data.len() {
            return Err(Error::shape(
                format!("{expected} entries from axes {axes:?}"),
                format!("{}", data.len()),
            ));
        }
        Ok(StateTensor { data, axes })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn extent(&self, label: &str) -> Option<usize> {
        self.axes.iter().find(|(l, _)| l == label).map(|&(_, e)| e)
    }
}

/// Deterministic initialization: weights uniform on ±1/sqrt(fan_in)
/// (variance 1/(3 fan_in)), biases exactly zero. The stream consumes
/// manifest entries in order.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let manifest = config.manifest();
    let mut params = ParamVector::zeros(manifest);
    let mut rng = SplitMix64::new(seed);
    let entries = params.manifest.entries.clone();
    for entry in &entries {
        if entry.shape.len() != 2 {
            continue; // biases stay zero
        }
        let fan_in = entry.shape[1];
        let bound = 1.0 / (fan_in as f64).sqrt();
        for x in &mut params.data[entry.offset..entry.offset + entry.len()] {
            *x = rng.next_symmetric(bound);
        }
    }
    Ok(params)
}

/// Number of scalar parameters of either model family.
pub fn param_count(config: &ModelConfig) -> usize {
    config.param_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_mlp() -> MlpConfig {
        MlpConfig {
            input_dim: 100,
            hidden_dim: 64,
            num_layers: 15,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 50,
        }
    }

    fn fig_gru() -> GruConfig {
        GruConfig {
            input_dim: 10,
            hidden_dim: 64,
            timesteps: 15,
            batch: 50,
        }
    }

    #[test]
    fn mlp_param_count_matches_reference() {
        assert_eq!(fig_mlp().param_count(), 64_704);
    }

    #[test]
    fn gru_param_count_matches_reference() {
        assert_eq!(fig_gru().param_count(), 14_592);
    }

    #[test]
    fn minimal_mlp_has_two_params() {
        let c = MlpConfig {
            input_dim: 1,
            hidden_dim: 1,
            num_layers: 1,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 1,
        };
        assert_eq!(c.param_count(), 2);
    }

    #[test]
    fn state_dims_match_reference() {
        assert_eq!(fig_mlp().state_dim(), 3_200);
        assert_eq!(fig_gru().state_dim(), 48_000);
        let mnist = MlpConfig {
            input_dim: 784,
            hidden_dim: 256,
            num_layers: 2,
            output_dim: Some(10),
            activation: Activation::Tanh,
            batch: 512,
        };
        assert_eq!(mnist.state_dim(), 5_120);
        assert_eq!(mnist.param_count(), 784 * 256 + 256 + 256 * 10 + 10);
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let cfg = ModelConfig::Mlp(fig_mlp());
        let a = init_params(&cfg, 5).unwrap();
        let b = init_params(&cfg, 5).unwrap();
        assert_eq!(a.data, b.data);
        assert_eq!(a.len(), cfg.param_count());
        for entry in &a.manifest.entries {
            if entry.shape.len() == 1 {
                for &x in &a.data[entry.offset..entry.offset + entry.len()] {
                    assert_eq!(x, 0.0);
                }
            }
        }
        let c = init_params(&cfg, 6).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn init_weight_variance_matches_the_scheme() {
        let cfg = ModelConfig::Mlp(fig_mlp());
        let p = init_params(&cfg, 123).unwrap();
        let w = p.tensor("layer3.weight").unwrap(); // 64x64, fan_in 64
        let n = w.len() as f64;
        let mean: f64 = w.iter().sum::<f64>() / n;
        let var: f64 = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let target = 1.0 / (3.0 * 64.0); // uniform(±1/sqrt(64))
        assert!(
            (var - target).abs() <= 0.2 * target,
            "variance {var} vs target {target}"
        );
        let bound = 1.0 / 8.0;
        assert!(w.iter().all(|x| x.abs() < bound), "support respected");
    }

    #[test]
    fn manifest_round_trip_is_identity() {
        for cfg in [
            ModelConfig::Mlp(MlpConfig {
                input_dim: 3,
                hidden_dim: 4,
                num_layers: 3,
                output_dim: Some(2),
                activation: Activation::Relu,
                batch: 2,
            }),
            ModelConfig::Gru(GruConfig {
                input_dim: 3,
                hidden_dim: 4,
                timesteps: 2,
                batch: 2,
            }),
        ] {
            let p = init_params(&cfg, 9).unwrap();
            let views = p.unflatten();
            let rebuilt = ParamVector::flatten(p.manifest.clone(), &views).unwrap();
            assert_eq!(rebuilt.data, p.data);
        }
    }

    #[test]
    fn param_count_equals_init_length() {
        for seed in [0u64, 1, 2] {
            let cfg = ModelConfig::Gru(fig_gru());
            assert_eq!(init_params(&cfg, seed).unwrap().len(), cfg.param_count());
        }
    }

    #[test]
    fn state_tensor_validates_axes() {
        assert!(
            StateTensor::new(vec![0.0; 6], vec![("batch".into(), 2), ("units".into(), 3)]).is_ok()
        );
        assert!(
            StateTensor::new(vec![0.0; 5], vec![("batch".into(), 2), ("units".into(), 3)]).is_err()
        );
    }
}
