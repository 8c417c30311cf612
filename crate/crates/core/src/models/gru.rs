//! GRU forward evaluation and Jacobian product rules over all timesteps.
//!
//! Gate order along the packed 3H axis is (reset, update, candidate); the
//! reset gate multiplies the hidden-to-hidden candidate pre-activation:
//!
//! ```text
//! r = sigma(W_ir x + b_ir + W_hr h + b_hr)
//! z = sigma(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh (W_in x + b_in + r .* (W_hn h + b_hn))
//! h' = (1 - z) .* n + z .* h
//! ```
//!
//! The state exposes the hidden vector of every timestep, so the adjoint
//! pass injects a cotangent at each step while also carrying the recurrent
//! adjoint backward (backpropagation through time).

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::models::{GruConfig, ParamVector, StateTensor};

/// Offsets of the four parameter tensors in the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GruLayout {
    pub w_ih: usize, // 3H x I
    pub w_hh: usize, // 3H x H
    pub b_ih: usize, // 3H
    pub b_hh: usize, // 3H
}

impl GruLayout {
    pub fn of(config: &GruConfig) -> Self {
        let h = config.hidden_dim;
        let i = config.input_dim;
        GruLayout {
            w_ih: 0,
            w_hh: 3 * h * i,
            b_ih: 3 * h * i + 3 * h * h,
            b_hh: 3 * h * i + 3 * h * h + 3 * h,
        }
    }
}

/// Recorded intermediates of one GRU forward evaluation.
#[derive(Debug, Clone)]
pub struct GruTape {
    /// hidden[t] is h_t; hidden[0] is the zero initial state.
    pub(crate) hidden: Vec<DenseMatrix>,
    pub(crate) reset: Vec<DenseMatrix>,
    pub(crate) update: Vec<DenseMatrix>,
    pub(crate) candidate: Vec<DenseMatrix>,
    /// Hidden-side candidate pre-activation W_hn h + b_hn, needed by both
    /// product rules through the reset gate.
    pub(crate) candidate_hidden_pre: Vec<DenseMatrix>,
    /// Input slabs per timestep (batch x input).
    pub(crate) inputs: Vec<DenseMatrix>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn validate(config: &GruConfig, params: &ParamVector, inputs: &StateTensor) -> Result<()> {
    config.validate()?;
    if params.len() != config.param_count() {
        return Err(Error::shape(
            format!("{} parameters", config.param_count()),
            format!("{}", params.len()),
        ));
    }
    let expected = config.batch * config.timesteps * config.input_dim;
    if inputs.len() != expected {
        return Err(Error::shape(
            format!("batch x time x input = {expected}"),
            format!("{}", inputs.len()),
        ));
    }
    Ok(())
}

/// Gathers the timestep-t slab from a batch-major [batch, time, dim] buffer.
fn time_slice(data: &[f64], batch: usize, timesteps: usize, dim: usize, t: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(batch, dim);
    for b in 0..batch {
        let src = &data[(b * timesteps + t) * dim..(b * timesteps + t + 1) * dim];
        m.row_mut(b).copy_from_slice(src);
    }
    m
}

/// Scatters a batch x dim slab into the timestep-t slot of the flat state.
fn scatter_time_slice(out: &mut [f64], slab: &DenseMatrix, timesteps: usize, t: usize) {
    let dim = slab.cols();
    for b in 0..slab.rows() {
        out[(b * timesteps + t) * dim..(b * timesteps + t + 1) * dim].copy_from_slice(slab.row(b));
    }
}

/// Runs the recurrence from h_0 = 0, recording the tape. The returned state
/// tensor holds the hidden vector of every timestep, batch-major.
pub fn forward_with_tape(
    config: &GruConfig,
    params: &ParamVector,
    inputs: &StateTensor,
) -> Result<(StateTensor, GruTape)> {
    validate(config, params, inputs)?;
    let layout = GruLayout::of(config);
    let (h, i, t_steps, batch) = (
        config.hidden_dim,
        config.input_dim,
        config.timesteps,
        config.batch,
    );
    let p = &params.data;
    let w_ih = &p[layout.w_ih..layout.w_ih + 3 * h * i];
    let w_hh = &p[layout.w_hh..layout.w_hh + 3 * h * h];
    let b_ih = &p[layout.b_ih..layout.b_ih + 3 * h];
    let b_hh = &p[layout.b_hh..layout.b_hh + 3 * h];

    let mut tape = GruTape {
        hidden: vec![DenseMatrix::zeros(batch, h)],
        reset: Vec::with_capacity(t_steps),
        update: Vec::with_capacity(t_steps),
        candidate: Vec::with_capacity(t_steps),
        candidate_hidden_pre: Vec::with_capacity(t_steps),
        inputs: Vec::with_capacity(t_steps),
    };
    let mut state = vec![0.0; config.state_dim()];

    for t in 0..t_steps {
        let x_t = time_slice(&inputs.data, batch, t_steps, i, t);
        let h_prev = tape.hidden.last().unwrap().clone();

        // a_i = x Wihᵀ + b_ih ; a_h = h Whhᵀ + b_hh (both batch x 3H).
        let mut a_i = x_t.matmul_nt_slice(w_ih, 3 * h);
        let mut a_h = h_prev.matmul_nt_slice(w_hh, 3 * h);
        for b in 0..batch {
            for (v, &bias) in a_i.row_mut(b).iter_mut().zip(b_ih) {
                *v += bias;
            }
            for (v, &bias) in a_h.row_mut(b).iter_mut().zip(b_hh) {
                *v += bias;
            }
        }

        let mut reset = DenseMatrix::zeros(batch, h);
        let mut update = DenseMatrix::zeros(batch, h);
        let mut candidate = DenseMatrix::zeros(batch, h);
        let mut cand_hidden = DenseMatrix::zeros(batch, h);
        let mut h_new = DenseMatrix::zeros(batch, h);
        for b in 0..batch {
            for u in 0..h {
                let r = sigmoid(a_i.get(b, u) + a_h.get(b, u));
                let z = sigmoid(a_i.get(b, h + u) + a_h.get(b, h + u));
                let ahn = a_h.get(b, 2 * h + u);
                let n = (a_i.get(b, 2 * h + u) + r * ahn).tanh();
                let hp = h_prev.get(b, u);
                reset.set(b, u, r);
                update.set(b, u, z);
                candidate.set(b, u, n);
                cand_hidden.set(b, u, ahn);
                h_new.set(b, u, (1.0 - z) * n + z * hp);
            }
        }
        scatter_time_slice(&mut state, &h_new, t_steps, t);
        tape.reset.push(reset);
        tape.update.push(update);
        tape.candidate.push(candidate);
        tape.candidate_hidden_pre.push(cand_hidden);
        tape.inputs.push(x_t);
        tape.hidden.push(h_new);
    }

    let out = StateTensor::new(
        state,
        vec![
            ("batch".to_string(), batch),
            ("time".to_string(), t_steps),
            ("units".to_string(), h),
        ],
    )?;
    Ok((out, tape))
}

/// Convenience forward without keeping the tape.
pub fn gru_forward(
    config: &GruConfig,
    params: &ParamVector,
    inputs: &StateTensor,
) -> Result<StateTensor> {
    forward_with_tape(config, params, inputs).map(|(s, _)| s)
}

/// Tangent propagation through the recurrence: J_θ · tangent.
pub fn jvp(
    config: &GruConfig,
    params: &ParamVector,
    tape: &GruTape,
    tangent: &[f64],
) -> Result<Vec<f64>> {
    if tangent.len() != config.param_count() {
        return Err(Error::shape(
            format!("{} tangent entries", config.param_count()),
            format!("{}", tangent.len()),
        ));
    }
    let layout = GruLayout::of(config);
    let (h, i, t_steps, batch) = (
        config.hidden_dim,
        config.input_dim,
        config.timesteps,
        config.batch,
    );
    let p = &params.data;
    let w_hh = &p[layout.w_hh..layout.w_hh + 3 * h * h];
    let dw_ih = &tangent[layout.w_ih..layout.w_ih + 3 * h * i];
    let dw_hh = &tangent[layout.w_hh..layout.w_hh + 3 * h * h];
    let db_ih = &tangent[layout.b_ih..layout.b_ih + 3 * h];
    let db_hh = &tangent[layout.b_hh..layout.b_hh + 3 * h];

    let mut th = DenseMatrix::zeros(batch, h);
    let mut out = vec![0.0; config.state_dim()];

    for t in 0..t_steps {
        let x_t = &tape.inputs[t];
        let h_prev = &tape.hidden[t];
        let reset = &tape.reset[t];
        let update = &tape.update[t];
        let candidate = &tape.candidate[t];
        let ahn = &tape.candidate_hidden_pre[t];

        // ta_i = x dWihᵀ + db_ih ; ta_h = h dWhhᵀ + th Whhᵀ + db_hh.
        let mut ta_i = x_t.matmul_nt_slice(dw_ih, 3 * h);
        let mut ta_h = h_prev.matmul_nt_slice(dw_hh, 3 * h);
        ta_h.scaled_add(1.0, &th.matmul_nt_slice(w_hh, 3 * h));
        for b in 0..batch {
            for (v, &d) in ta_i.row_mut(b).iter_mut().zip(db_ih) {
                *v += d;
            }
            for (v, &d) in ta_h.row_mut(b).iter_mut().zip(db_hh) {
                *v += d;
            }
        }

        let mut th_next = DenseMatrix::zeros(batch, h);
        for b in 0..batch {
            for u in 0..h {
                let r = reset.get(b, u);
                let z = update.get(b, u);
                let n = candidate.get(b, u);
                let hp = h_prev.get(b, u);
                let tr = r * (1.0 - r) * (ta_i.get(b, u) + ta_h.get(b, u));
                let tz = z * (1.0 - z) * (ta_i.get(b, h + u) + ta_h.get(b, h + u));
                let tn = (1.0 - n * n)
                    * (ta_i.get(b, 2 * h + u) + tr * ahn.get(b, u) + r * ta_h.get(b, 2 * h + u));
                let t_new = tz * (hp - n) + (1.0 - z) * tn + z * th.get(b, u);
                th_next.set(b, u, t_new);
            }
        }
        scatter_time_slice(&mut out, &th_next, t_steps, t);
        th = th_next;
    }
    Ok(out)
}

/// Adjoint accumulation in reverse time order: J_θᵀ · cotangent. Each step
/// receives both its direct cotangent slice and the carried recurrent one.
pub fn vjp(
    config: &GruConfig,
    params: &ParamVector,
    tape: &GruTape,
    cotangent: &[f64],
) -> Result<Vec<f64>> {
    if cotangent.len() != config.state_dim() {
        return Err(Error::shape(
            format!("{} cotangent entries", config.state_dim()),
            format!("{}", cotangent.len()),
        ));
    }
    let layout = GruLayout::of(config);
    let (h, i, t_steps, batch) = (
        config.hidden_dim,
        config.input_dim,
        config.timesteps,
        config.batch,
    );
    let p = &params.data;
    let w_hh = &p[layout.w_hh..layout.w_hh + 3 * h * h];

    let mut grad = vec![0.0; config.param_count()];
    let mut carry = DenseMatrix::zeros(batch, h);

    for t in (0..t_steps).rev() {
        let v_t = time_slice(cotangent, batch, t_steps, h, t);
        let h_prev = &tape.hidden[t];
        let reset = &tape.reset[t];
        let update = &tape.update[t];
        let candidate = &tape.candidate[t];
        let ahn = &tape.candidate_hidden_pre[t];
        let x_t = &tape.inputs[t];

        // Pre-activation adjoints packed (r, z, n) for the input side and
        // (r, z, n-hidden) for the hidden side.
        let mut d_pre_i = DenseMatrix::zeros(batch, 3 * h);
        let mut d_pre_h = DenseMatrix::zeros(batch, 3 * h);
        let mut carry_direct = DenseMatrix::zeros(batch, h);
        for b in 0..batch {
            for u in 0..h {
                let g = v_t.get(b, u) + carry.get(b, u);
                let r = reset.get(b, u);
                let z = update.get(b, u);
                let n = candidate.get(b, u);
                let hp = h_prev.get(b, u);
                let dn = g * (1.0 - z);
                let dz = g * (hp - n);
                carry_direct.set(b, u, g * z);
                let da_n = dn * (1.0 - n * n);
                let dr = da_n * ahn.get(b, u);
                let da_hn = da_n * r;
                let da_z = dz * z * (1.0 - z);
                let da_r = dr * r * (1.0 - r);
                d_pre_i.set(b, u, da_r);
                d_pre_i.set(b, h + u, da_z);
                d_pre_i.set(b, 2 * h + u, da_n);
                d_pre_h.set(b, u, da_r);
                d_pre_h.set(b, h + u, da_z);
                d_pre_h.set(b, 2 * h + u, da_hn);
            }
        }

        // Parameter gradients for this step.
        d_pre_i.matmul_tn_into(x_t, &mut grad[layout.w_ih..layout.w_ih + 3 * h * i]);
        d_pre_h.matmul_tn_into(h_prev, &mut grad[layout.w_hh..layout.w_hh + 3 * h * h]);
        for b in 0..batch {
            for (acc, &d) in grad[layout.b_ih..layout.b_ih + 3 * h]
                .iter_mut()
                .zip(d_pre_i.row(b))
            {
                *acc += d;
            }
            for (acc, &d) in grad[layout.b_hh..layout.b_hh + 3 * h]
                .iter_mut()
                .zip(d_pre_h.row(b))
            {
                *acc += d;
            }
        }

        // Recurrent adjoint: direct gate path plus the hidden matmul path.
        carry = carry_direct;
        carry.scaled_add(1.0, &d_pre_h.matmul_slice(w_hh, h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, ModelConfig};
    use crate::rng::SplitMix64;

    fn gru_inputs(config: &GruConfig, seed: u64) -> StateTensor {
        let mut rng = SplitMix64::new(seed);
        let len = config.batch * config.timesteps * config.input_dim;
        StateTensor::new(
            (0..len).map(|_| rng.next_standard_normal()).collect(),
            vec![
                ("batch".into(), config.batch),
                ("time".into(), config.timesteps),
                ("input".into(), config.input_dim),
            ],
        )
        .unwrap()
    }

    #[test]
    fn reference_config_state_size() {
        let cfg = GruConfig {
            input_dim: 10,
            hidden_dim: 64,
            timesteps: 15,
            batch: 50,
        };
        let params = init_params(&ModelConfig::Gru(cfg.clone()), 0).unwrap();
        let out = gru_forward(&cfg, &params, &gru_inputs(&cfg, 1)).unwrap();
        assert_eq!(out.len(), 48_000);
    }

    #[test]
    fn zero_parameters_keep_state_at_zero() {
        let cfg = GruConfig {
            input_dim: 3,
            hidden_dim: 4,
            timesteps: 5,
            batch: 2,
        };
        let params = ParamVector::zeros(cfg.manifest());
        let out = gru_forward(&cfg, &params, &gru_inputs(&cfg, 2)).unwrap();
        for &x in &out.data {
            assert_eq!(x, 0.0);
        }
    }

    #[test]
    fn scalar_recurrence_matches_hand_evaluation() {
        let cfg = GruConfig {
            input_dim: 1,
            hidden_dim: 1,
            timesteps: 1,
            batch: 1,
        };
        // Manifest order: w_ih (3x1), w_hh (3x1), b_ih (3), b_hh (3),
        // each packed (r, z, n).
        let data = vec![
            0.3, -0.4, 0.5, // w_ir, w_iz, w_in
            0.2, 0.6, -0.7, // w_hr, w_hz, w_hn
            0.05, -0.02, 0.01, // b_ir, b_iz, b_in
            0.03, 0.04, -0.06, // b_hr, b_hz, b_hn
        ];
        let params = ParamVector::from_data(cfg.manifest(), data).unwrap();
        let x = 0.9f64;
        let inputs = StateTensor::new(
            vec![x],
            vec![("batch".into(), 1), ("time".into(), 1), ("input".into(), 1)],
        )
        .unwrap();
        let out = gru_forward(&cfg, &params, &inputs).unwrap();

        let h0 = 0.0f64;
        let r = sigmoid(0.3 * x + 0.05 + 0.2 * h0 + 0.03);
        let z = sigmoid(-0.4 * x - 0.02 + 0.6 * h0 + 0.04);
        let n = (0.5 * x + 0.01 + r * (-0.7 * h0 - 0.06)).tanh();
        let expect = (1.0 - z) * n + z * h0;
        assert!(
            (out.data[0] - expect).abs() < 1e-15,
            "{} vs {expect}",
            out.data[0]
        );
    }

    #[test]
    fn hidden_states_stay_inside_unit_box() {
        let cfg = GruConfig {
            input_dim: 3,
            hidden_dim: 5,
            timesteps: 12,
            batch: 4,
        };
        for seed in 0..5 {
            let mut params = init_params(&ModelConfig::Gru(cfg.clone()), seed).unwrap();
            for p in &mut params.data {
                *p *= 3.0; // exaggerate weights; the bound is structural
            }
            let out = gru_forward(&cfg, &params, &gru_inputs(&cfg, seed + 100)).unwrap();
            for &x in &out.data {
                assert!(x.abs() < 1.0, "state escaped the unit box: {x}");
            }
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = GruConfig {
            input_dim: 3,
            hidden_dim: 4,
            timesteps: 5,
            batch: 2,
        };
        let params = init_params(&ModelConfig::Gru(cfg.clone()), 0).unwrap();
        let bad = StateTensor::new(
            vec![0.0; 2 * 5 * 2],
            vec![("batch".into(), 2), ("time".into(), 5), ("input".into(), 2)],
        )
        .unwrap();
        assert!(gru_forward(&cfg, &params, &bad).is_err());
    }
}
