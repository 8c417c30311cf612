//! MLP forward evaluation and its hand-written Jacobian product rules.
//!
//! Layer l computes `a_l = act(a_{l-1} · W_lᵀ + b_l)` on a batch of rows.
//! The tape keeps every pre-activation and activation, which is all the
//! adjoint and tangent passes need; replaying it reproduces the forward
//! output bit for bit.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::models::{Activation, MlpConfig, ParamVector, StateTensor};

/// Recorded intermediates of one MLP forward evaluation.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// activations[0] is the input batch; activations[l] the output of layer l.
    pub(crate) activations: Vec<DenseMatrix>,
    /// preacts[l] is the affine output feeding activation of layer l.
    pub(crate) preacts: Vec<DenseMatrix>,
}

pub(crate) struct LayerView<'a> {
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub out_dim: usize,
    pub in_dim: usize,
    pub activation: Activation,
    pub weight: &'a [f64],
}

pub(crate) fn layer_views<'a>(config: &MlpConfig, params: &'a [f64]) -> Vec<LayerView<'a>> {
    let mut views = Vec::with_capacity(config.num_layers);
    let mut offset = 0;
    let dims = config.layer_dims();
    for (idx, (out, inp)) in dims.iter().copied().enumerate() {
        let is_readout = idx + 1 == config.num_layers && config.output_dim.is_some();
        views.push(LayerView {
            weight_offset: offset,
            bias_offset: offset + out * inp,
            out_dim: out,
            in_dim: inp,
            activation: if is_readout {
                Activation::Identity
            } else {
                config.activation
            },
            weight: &params[offset..offset + out * inp],
        });
        offset += out * inp + out;
    }
    views
}

fn affine(input: &DenseMatrix, weight: &[f64], bias: &[f64], out_dim: usize) -> DenseMatrix {
    let mut z = input.matmul_nt_slice(weight, out_dim);
    for r in 0..z.rows() {
        let row = z.row_mut(r);
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
    z
}

fn validate_inputs(config: &MlpConfig, params: &ParamVector, inputs: &StateTensor) -> Result<()> {
    config.validate()?;
    if params.len() != config.param_count() {
        return Err(Error::shape(
            format!("{} parameters", config.param_count()),
            format!("{}", params.len()),
        ));
    }
    if inputs.len() != config.batch * config.input_dim {
        return Err(Error::shape(
            format!("batch x input = {}", config.batch * config.input_dim),
            format!("{}", inputs.len()),
        ));
    }
    Ok(())
}

/// Runs the forward pass, recording the tape.
pub fn forward_with_tape(
    config: &MlpConfig,
    params: &ParamVector,
    inputs: &StateTensor,
) -> Result<(StateTensor, MlpTape)> {
    validate_inputs(config, params, inputs)?;
    let input = DenseMatrix::from_vec(config.batch, config.input_dim, inputs.data.clone())?;
    let mut activations = vec![input];
    let mut preacts = Vec::with_capacity(config.num_layers);
    for layer in layer_views(config, &params.data) {
        let bias = &params.data[layer.bias_offset..layer.bias_offset + layer.out_dim];
        let z = affine(
            activations.last().unwrap(),
            layer.weight,
            bias,
            layer.out_dim,
        );
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = layer.activation.apply(*v);
        }
        preacts.push(z);
        activations.push(a);
    }
    let out = activations.last().unwrap();
    let state = StateTensor::new(
        out.data().to_vec(),
        vec![
            ("batch".to_string(), out.rows()),
            ("units".to_string(), out.cols()),
        ],
    )?;
    Ok((
        state,
        MlpTape {
            activations,
            preacts,
        },
    ))
}

/// Convenience forward without keeping the tape.
pub fn mlp_forward(
    config: &MlpConfig,
    params: &ParamVector,
    inputs: &StateTensor,
) -> Result<StateTensor> {
    forward_with_tape(config, params, inputs).map(|(state, _)| state)
}

/// Tangent propagation: J_θ · tangent, reusing the recorded forward values.
pub fn jvp(
    config: &MlpConfig,
    params: &ParamVector,
    tape: &MlpTape,
    tangent: &[f64],
) -> Result<Vec<f64>> {
    if tangent.len() != config.param_count() {
        return Err(Error::shape(
            format!("{} tangent entries", config.param_count()),
            format!("{}", tangent.len()),
        ));
    }
    let batch = config.batch;
    let mut t = DenseMatrix::zeros(batch, config.input_dim); // inputs carry no tangent
    for (l, layer) in layer_views(config, &params.data).iter().enumerate() {
        let a_prev = &tape.activations[l];
        let dw = &tangent[layer.weight_offset..layer.weight_offset + layer.out_dim * layer.in_dim];
        let db = &tangent[layer.bias_offset..layer.bias_offset + layer.out_dim];

        // dz = t · Wᵀ + a_prev · dWᵀ + db
        let mut dz = t.matmul_nt_slice(layer.weight, layer.out_dim);
        dz.scaled_add(1.0, &a_prev.matmul_nt_slice(dw, layer.out_dim));
        for r in 0..batch {
            let row = dz.row_mut(r);
            for (v, &b) in row.iter_mut().zip(db) {
                *v += b;
            }
        }
        let pre = &tape.preacts[l];
        let post = &tape.activations[l + 1];
        let mut t_next = dz;
        for i in 0..t_next.data().len() {
            let gate = layer.activation.derivative(pre.data()[i], post.data()[i]);
            t_next.data_mut()[i] *= gate;
        }
        t = t_next;
    }
    Ok(t.data().to_vec())
}

/// Adjoint replay: J_θᵀ · cotangent, accumulated layer by layer in reverse.
pub fn vjp(
    config: &MlpConfig,
    params: &ParamVector,
    tape: &MlpTape,
    cotangent: &[f64],
) -> Result<Vec<f64>> {
    let n = config.state_dim();
    if cotangent.len() != n {
        return Err(Error::shape(
            format!("{n} cotangent entries"),
            format!("{}", cotangent.len()),
        ));
    }
    let views = layer_views(config, &params.data);
    let last = views.last().expect("at least one layer");
    let mut delta = DenseMatrix::from_vec(config.batch, last.out_dim, cotangent.to_vec())?;
    let mut grad = vec![0.0; config.param_count()];

    for (l, layer) in views.iter().enumerate().rev() {
        let pre = &tape.preacts[l];
        let post = &tape.activations[l + 1];
        for i in 0..delta.data().len() {
            let gate = layer.activation.derivative(pre.data()[i], post.data()[i]);
            delta.data_mut()[i] *= gate;
        }
        let a_prev = &tape.activations[l];
        // dW = deltaᵀ · a_prev, db = column sums of delta.
        delta.matmul_tn_into(
            a_prev,
            &mut grad[layer.weight_offset..layer.weight_offset + layer.out_dim * layer.in_dim],
        );
        let db = &mut grad[layer.bias_offset..layer.bias_offset + layer.out_dim];
        for r in 0..delta.rows() {
            for (acc, &d) in db.iter_mut().zip(delta.row(r)) {
                *acc += d;
            }
        }
        if l > 0 {
            delta = delta.matmul_slice(layer.weight, layer.in_dim);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;
    use crate::models::ModelConfig;
    use crate::rng::SplitMix64;

    fn input_tensor(batch: usize, dim: usize, seed: u64) -> StateTensor {
        let mut rng = SplitMix64::new(seed);
        let data: Vec<f64> = (0..batch * dim)
            .map(|_| rng.next_standard_normal())
            .collect();
        StateTensor::new(data, vec![("batch".into(), batch), ("input".into(), dim)]).unwrap()
    }

    #[test]
    fn reference_config_state_size() {
        let cfg = MlpConfig {
            input_dim: 100,
            hidden_dim: 64,
            num_layers: 15,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 50,
        };
        let params = init_params(&ModelConfig::Mlp(cfg.clone()), 0).unwrap();
        let out = mlp_forward(&cfg, &params, &input_tensor(50, 100, 1)).unwrap();
        assert_eq!(out.len(), 3_200);
        assert_eq!(out.extent("batch"), Some(50));
        assert_eq!(out.extent("units"), Some(64));
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let cfg = MlpConfig {
            input_dim: 3,
            hidden_dim: 3,
            num_layers: 1,
            output_dim: None,
            activation: Activation::Identity,
            batch: 2,
        };
        let mut params = ParamVector::zeros(cfg.manifest());
        // W = I, b = 0.
        for i in 0..3 {
            params.data[i * 3 + i] = 1.0;
        }
        let inputs = input_tensor(2, 3, 7);
        let out = mlp_forward(&cfg, &params, &inputs).unwrap();
        for (a, b) in out.data.iter().zip(&inputs.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn tiny_forward_matches_scalar_evaluation() {
        // 2 -> 3 -> 3 tanh network checked against an explicit loop oracle.
        let cfg = MlpConfig {
            input_dim: 2,
            hidden_dim: 3,
            num_layers: 2,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 2,
        };
        let params = init_params(&ModelConfig::Mlp(cfg.clone()), 11).unwrap();
        let inputs = input_tensor(2, 2, 12);
        let out = mlp_forward(&cfg, &params, &inputs).unwrap();

        let w1 = params.tensor("layer0.weight").unwrap();
        let b1 = params.tensor("layer0.bias").unwrap();
        let w2 = params.tensor("layer1.weight").unwrap();
        let b2 = params.tensor("layer1.bias").unwrap();
        for b in 0..2 {
            let x = &inputs.data[b * 2..(b + 1) * 2];
            let mut h = [0.0f64; 3];
            for o in 0..3 {
                let mut z = b1[o];
                for i in 0..2 {
                    z += w1[o * 2 + i] * x[i];
                }
                h[o] = z.tanh();
            }
            for o in 0..3 {
                let mut z = b2[o];
                for i in 0..3 {
                    z += w2[o * 3 + i] * h[i];
                }
                let expect = z.tanh();
                let got = out.data[b * 3 + o];
                assert!(
                    (expect - got).abs() < 1e-14,
                    "batch {b} unit {o}: {expect} vs {got}"
                );
            }
        }
    }

    #[test]
    fn readout_layer_is_linear() {
        let cfg = MlpConfig {
            input_dim: 4,
            hidden_dim: 3,
            num_layers: 2,
            output_dim: Some(2),
            activation: Activation::Tanh,
            batch: 5,
        };
        let params = init_params(&ModelConfig::Mlp(cfg.clone()), 3).unwrap();
        let out = mlp_forward(&cfg, &params, &input_tensor(5, 4, 4)).unwrap();
        assert_eq!(out.len(), 10);
        // A tanh readout would keep |h| < 1; scaling the readout weights up
        // must scale outputs past 1 if the layer is truly linear.
        let mut big = params.clone();
        let entry = big
            .manifest
            .entries
            .iter()
            .find(|e| e.name == "layer1.weight")
            .unwrap()
            .clone();
        for x in &mut big.data[entry.offset..entry.offset + entry.len()] {
            *x *= 50.0;
        }
        let out_big = mlp_forward(&cfg, &big, &input_tensor(5, 4, 4)).unwrap();
        let max = out_big.data.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        assert!(max > 1.0, "readout saturated, max {max}");
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = MlpConfig {
            input_dim: 4,
            hidden_dim: 3,
            num_layers: 2,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 5,
        };
        let params = init_params(&ModelConfig::Mlp(cfg.clone()), 3).unwrap();
        let bad = input_tensor(5, 3, 4);
        assert!(mlp_forward(&cfg, &params, &bad).is_err());
    }
}
