//! Demo-sized models: small enough that the exact n-pass trace runs in
//! milliseconds, so every interactive estimate can show its true error.

use ntk_core::rng::{derive_seed, SplitMix64};
use ntk_core::{
    init_params, Activation, GruConfig, JacobianContext, MlpConfig, ModelConfig, StateTensor,
};

pub fn gaussian_state(len: usize, axes: Vec<(String, usize)>, seed: u64) -> StateTensor {
    let mut rng = SplitMix64::new(seed);
    StateTensor::new((0..len).map(|_| rng.next_standard_normal()).collect(), axes)
        .expect("axes match length")
}

pub fn demo_model(name: &str) -> Result<ModelConfig, String> {
    match name {
        "mlp" => Ok(ModelConfig::Mlp(MlpConfig {
            input_dim: 8,
            hidden_dim: 12,
            num_layers: 3,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 12,
        })),
        "gru" => Ok(ModelConfig::Gru(GruConfig {
            input_dim: 3,
            hidden_dim: 6,
            timesteps: 6,
            batch: 6,
        })),
        other => Err(format!("unknown model `{other}` (expected mlp or gru)")),
    }
}

pub fn build_context(name: &str, seed: u64) -> Result<JacobianContext, String> {
    let config = demo_model(name)?;
    let params = init_params(&config, derive_seed(seed, 1)).map_err(|e| e.to_string())?;
    let inputs = match &config {
        ModelConfig::Mlp(c) => gaussian_state(
            c.batch * c.input_dim,
            vec![("batch".into(), c.batch), ("input".into(), c.input_dim)],
            derive_seed(seed, 2),
        ),
        ModelConfig::Gru(c) => gaussian_state(
            c.batch * c.timesteps * c.input_dim,
            vec![
                ("batch".into(), c.batch),
                ("time".into(), c.timesteps),
                ("input".into(), c.input_dim),
            ],
            derive_seed(seed, 2),
        ),
    };
    JacobianContext::new(config, params, inputs).map_err(|e| e.to_string())
}
