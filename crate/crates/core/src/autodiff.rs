//! Exact Jacobian-vector products against the parameter Jacobian of a
//! frozen model evaluation, without ever forming the Jacobian.
//!
//! A [`JacobianContext`] runs the forward pass once, records the tape, and
//! then serves any number of `jvp` (forward-mode) and `vjp` (reverse-mode)
//! products from it. The tape is immutable after construction, so a context
//! can be shared across threads; the only mutation is a pair of atomic call
//! counters that estimators read to account for their budgets.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::models::{gru, mlp, ModelConfig, ParamVector, StateTensor};

/// Matrix-free access to a parameter Jacobian J : P -> H.
///
/// `jvp` maps parameter-space tangents to state space; `vjp` maps
/// state-space cotangents back. Batched variants apply the product column by
/// column and must agree with the looped single-vector calls bit for bit.
pub trait JacobianOps: Sync {
    /// n, the flattened state length.
    fn state_dim(&self) -> usize;
    /// dim P, the flat parameter count.
    fn param_dim(&self) -> usize;

    fn jvp(&self, tangent: &[f64]) -> Result<Vec<f64>>;
    fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>>;

    /// (jvp calls, vjp calls) made so far.
    fn ad_counts(&self) -> (u64, u64);

    fn jvp_batch(&self, tangents: &DenseMatrix) -> Result<DenseMatrix> {
        if tangents.rows() != self.param_dim() {
            return Err(Error::shape(
                format!("{} rows", self.param_dim()),
                format!("{} rows", tangents.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.state_dim(), tangents.cols());
        for c in 0..tangents.cols() {
            let col = self.jvp(&tangents.col_to_vec(c))?;
            out.set_col(c, &col);
        }
        Ok(out)
    }

    fn vjp_batch(&self, cotangents: &DenseMatrix) -> Result<DenseMatrix> {
        if cotangents.rows() != self.state_dim() {
            return Err(Error::shape(
                format!("{} rows", self.state_dim()),
                format!("{} rows", cotangents.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.param_dim(), cotangents.cols());
        for c in 0..cotangents.cols() {
            let col = self.vjp(&cotangents.col_to_vec(c))?;
            out.set_col(c, &col);
        }
        Ok(out)
    }
}

/// Recorded forward intermediates for either architecture.
#[derive(Debug, Clone)]
pub enum Tape {
    Mlp(mlp::MlpTape),
    Gru(gru::GruTape),
}

/// A frozen (model, params, inputs) evaluation with its tape.
pub struct JacobianContext {
    config: ModelConfig,
    params: ParamVector,
    output: StateTensor,
    tape: Tape,
    jvp_calls: AtomicU64,
    vjp_calls: AtomicU64,
}

impl JacobianContext {
    pub fn new(config: ModelConfig, params: ParamVector, inputs: StateTensor) -> Result<Self> {
        let (output, tape) = match &config {
            ModelConfig::Mlp(c) => {
                let (out, tape) = mlp::forward_with_tape(c, &params, &inputs)?;
                (out, Tape::Mlp(tape))
            }
            ModelConfig::Gru(c) => {
                let (out, tape) = gru::forward_with_tape(c, &params, &inputs)?;
                (out, Tape::Gru(tape))
            }
        };
        Ok(JacobianContext {
            config,
            params,
            output,
            tape,
            jvp_calls: AtomicU64::new(0),
            vjp_calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// The forward output h(θ) the tape was recorded from.
    pub fn output(&self) -> &StateTensor {
        &self.output
    }

    pub fn reset_counts(&self) {
        self.jvp_calls.store(0, Ordering::Relaxed);
        self.vjp_calls.store(0, Ordering::Relaxed);
    }
}

impl JacobianOps for JacobianContext {
    fn state_dim(&self) -> usize {
        self.config.state_dim()
    }

    fn param_dim(&self) -> usize {
        self.config.param_count()
    }

    fn jvp(&self, tangent: &[f64]) -> Result<Vec<f64>> {
        self.jvp_calls.fetch_add(1, Ordering::Relaxed);
        match (&self.config, &self.tape) {
            (ModelConfig::Mlp(c), Tape::Mlp(t)) => mlp::jvp(c, &self.params, t, tangent),
            (ModelConfig::Gru(c), Tape::Gru(t)) => gru::jvp(c, &self.params, t, tangent),
            _ => unreachable!("tape always matches config"),
        }
    }

    fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        self.vjp_calls.fetch_add(1, Ordering::Relaxed);
        match (&self.config, &self.tape) {
            (ModelConfig::Mlp(c), Tape::Mlp(t)) => mlp::vjp(c, &self.params, t, cotangent),
            (ModelConfig::Gru(c), Tape::Gru(t)) => gru::vjp(c, &self.params, t, cotangent),
            _ => unreachable!("tape always matches config"),
        }
    }

    fn ad_counts(&self) -> (u64, u64) {
        (
            self.jvp_calls.load(Ordering::Relaxed),
            self.vjp_calls.load(Ordering::Relaxed),
        )
    }
}

/// A fixed dense matrix treated as a Jacobian; the workhorse of tests and
/// synthetic benchmark operators.
pub struct DenseJacobian {
    matrix: DenseMatrix, // state_dim x param_dim
    jvp_calls: AtomicU64,
    vjp_calls: AtomicU64,
}

impl DenseJacobian {
    pub fn new(matrix: DenseMatrix) -> Self {
        DenseJacobian {
            matrix,
            jvp_calls: AtomicU64::new(0),
            vjp_calls: AtomicU64::new(0),
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl JacobianOps for DenseJacobian {
    fn state_dim(&self) -> usize {
        self.matrix.rows()
    }

    fn param_dim(&self) -> usize {
        self.matrix.cols()
    }

    fn jvp(&self, tangent: &[f64]) -> Result<Vec<f64>> {
        if tangent.len() != self.param_dim() {
            return Err(Error::shape(
                format!("{}", self.param_dim()),
                format!("{}", tangent.len()),
            ));
        }
        self.jvp_calls.fetch_add(1, Ordering::Relaxed);
        let mut out = vec![0.0; self.state_dim()];
        for (r, o) in out.iter_mut().enumerate() {
            let row = self.matrix.row(r);
            *o = row.iter().zip(tangent).map(|(&a, &b)| a * b).sum();
        }
        Ok(out)
    }

    fn vjp(&self, cotangent: &[f64]) -> Result<Vec<f64>> {
        if cotangent.len() != self.state_dim() {
            return Err(Error::shape(
                format!("{}", self.state_dim()),
                format!("{}", cotangent.len()),
            ));
        }
        self.vjp_calls.fetch_add(1, Ordering::Relaxed);
        let mut out = vec![0.0; self.param_dim()];
        for (r, &c) in cotangent.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.matrix.row(r)) {
                *o += c * a;
            }
        }
        Ok(out)
    }

    fn ad_counts(&self) -> (u64, u64) {
        (
            self.jvp_calls.load(Ordering::Relaxed),
            self.vjp_calls.load(Ordering::Relaxed),
        )
    }
}

/// Materializes the dense Jacobian of a context via vjp against unit
/// cotangents; a validation oracle for small models only.
pub fn dense_jacobian_of(ctx: &impl JacobianOps) -> Result<DenseMatrix> {
    let n = ctx.state_dim();
    let p = ctx.param_dim();
    let mut j = DenseMatrix::zeros(n, p);
    let mut e = vec![0.0; n];
    for r in 0..n {
        e[r] = 1.0;
        let row = ctx.vjp(&e)?;
        j.row_mut(r).copy_from_slice(&row);
        e[r] = 0.0;
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_params, Activation, GruConfig, MlpConfig};
    use crate::rng::SplitMix64;

    fn tiny_mlp() -> (ModelConfig, ParamVector, StateTensor) {
        let cfg = MlpConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 3,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 2,
        };
        let model = ModelConfig::Mlp(cfg.clone());
        let params = init_params(&model, 5).unwrap();
        let mut rng = SplitMix64::new(17);
        let inputs = StateTensor::new(
            (0..cfg.batch * cfg.input_dim)
                .map(|_| rng.next_standard_normal())
                .collect(),
            vec![("batch".into(), cfg.batch), ("input".into(), cfg.input_dim)],
        )
        .unwrap();
        (model, params, inputs)
    }

    fn tiny_gru() -> (ModelConfig, ParamVector, StateTensor) {
        let cfg = GruConfig {
            input_dim: 2,
            hidden_dim: 3,
            timesteps: 4,
            batch: 2,
        };
        let model = ModelConfig::Gru(cfg.clone());
        let params = init_params(&model, 8).unwrap();
        let mut rng = SplitMix64::new(18);
        let inputs = StateTensor::new(
            (0..cfg.batch * cfg.timesteps * cfg.input_dim)
                .map(|_| rng.next_standard_normal())
                .collect(),
            vec![
                ("batch".into(), cfg.batch),
                ("time".into(), cfg.timesteps),
                ("input".into(), cfg.input_dim),
            ],
        )
        .unwrap();
        (model, params, inputs)
    }

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        (0..len).map(|_| rng.next_standard_normal()).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(&x, &y)| x * y).sum()
    }

    fn contexts() -> Vec<JacobianContext> {
        let (mc, mp, mi) = tiny_mlp();
        let (gc, gp, gi) = tiny_gru();
        vec![
            JacobianContext::new(mc, mp, mi).unwrap(),
            JacobianContext::new(gc, gp, gi).unwrap(),
        ]
    }

    #[test]
    fn zero_inputs_map_to_zero() {
        for ctx in contexts() {
            let jz = ctx.jvp(&vec![0.0; ctx.param_dim()]).unwrap();
            assert!(jz.iter().all(|&x| x == 0.0));
            let vz = ctx.vjp(&vec![0.0; ctx.state_dim()]).unwrap();
            assert!(vz.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn products_are_linear() {
        for ctx in contexts() {
            let p1 = random_vec(ctx.param_dim(), 1);
            let p2 = random_vec(ctx.param_dim(), 2);
            let alpha = 2.5;
            let lhs = ctx
                .jvp(
                    &p1.iter()
                        .zip(&p2)
                        .map(|(&a, &b)| alpha * a + b)
                        .collect::<Vec<_>>(),
                )
                .unwrap();
            let j1 = ctx.jvp(&p1).unwrap();
            let j2 = ctx.jvp(&p2).unwrap();
            for i in 0..lhs.len() {
                let rhs = alpha * j1[i] + j2[i];
                let scale = rhs.abs().max(1e-12);
                assert!((lhs[i] - rhs).abs() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity_holds() {
        for ctx in contexts() {
            for trial in 0..100 {
                let p = random_vec(ctx.param_dim(), 100 + trial);
                let v = random_vec(ctx.state_dim(), 500 + trial);
                let lhs = dot(&ctx.jvp(&p).unwrap(), &v);
                let rhs = dot(&p, &ctx.vjp(&v).unwrap());
                let err = (lhs - rhs).abs();
                assert!(
                    err <= 1e-10 * (lhs.abs() + 1e-300),
                    "trial {trial}: lhs {lhs} rhs {rhs}"
                );
            }
        }
    }

    #[test]
    fn jvp_matches_central_differences() {
        // Exercises both architectures with the finite-difference oracle.
        let cases = [
            {
                let (mc, mp, mi) = tiny_mlp();
                (mc, mp, mi)
            },
            {
                let (gc, gp, gi) = tiny_gru();
                (gc, gp, gi)
            },
        ];
        for (model, params, inputs) in cases {
            let ctx = JacobianContext::new(model.clone(), params.clone(), inputs.clone()).unwrap();
            let mut p = random_vec(ctx.param_dim(), 77);
            let norm = dot(&p, &p).sqrt();
            for x in &mut p {
                *x /= norm;
            }
            let analytic = ctx.jvp(&p).unwrap();

            let eps = 1e-5;
            let mut plus = params.clone();
            let mut minus = params.clone();
            for i in 0..p.len() {
                plus.data[i] += eps * p[i];
                minus.data[i] -= eps * p[i];
            }
            let f_plus = match &model {
                ModelConfig::Mlp(c) => mlp::mlp_forward(c, &plus, &inputs).unwrap(),
                ModelConfig::Gru(c) => gru::gru_forward(c, &plus, &inputs).unwrap(),
            };
            let f_minus = match &model {
                ModelConfig::Mlp(c) => mlp::mlp_forward(c, &minus, &inputs).unwrap(),
                ModelConfig::Gru(c) => gru::gru_forward(c, &minus, &inputs).unwrap(),
            };
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..analytic.len() {
                let fd = (f_plus.data[i] - f_minus.data[i]) / (2.0 * eps);
                num += (fd - analytic[i]).powi(2);
                den += analytic[i].powi(2);
            }
            let rel = (num / den).sqrt();
            assert!(rel <= 1e-6, "finite-difference relative error {rel}");
        }
    }

    #[test]
    fn affine_layer_vjp_matches_hand_derivation() {
        // h = x Wᵀ + b for a single identity layer: the gradient of ⟨h, v⟩
        // stacks (vᵀ per-sample outer x, summed) and the bias collects v.
        let cfg = MlpConfig {
            input_dim: 3,
            hidden_dim: 2,
            num_layers: 1,
            output_dim: None,
            activation: Activation::Identity,
            batch: 2,
        };
        let model = ModelConfig::Mlp(cfg.clone());
        let params = init_params(&model, 4).unwrap();
        let inputs = StateTensor::new(
            random_vec(6, 9),
            vec![("batch".into(), 2), ("input".into(), 3)],
        )
        .unwrap();
        let ctx = JacobianContext::new(model, params, inputs.clone()).unwrap();
        let v = random_vec(4, 10); // batch 2 x out 2
        let got = ctx.vjp(&v).unwrap();

        let mut expect = vec![0.0; 8]; // 2x3 weight + 2 bias
        for b in 0..2 {
            for o in 0..2 {
                let vo = v[b * 2 + o];
                for i in 0..3 {
                    expect[o * 3 + i] += vo * inputs.data[b * 3 + i];
                }
                expect[6 + o] += vo;
            }
        }
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-13, "{g} vs {e}");
        }
    }

    #[test]
    fn batched_products_match_loops_exactly() {
        for ctx in contexts() {
            let cols = 3;
            let mut p_mat = DenseMatrix::zeros(ctx.param_dim(), cols);
            for c in 0..cols {
                p_mat.set_col(c, &random_vec(ctx.param_dim(), 40 + c as u64));
            }
            let batch = ctx.jvp_batch(&p_mat).unwrap();
            for c in 0..cols {
                let single = ctx.jvp(&p_mat.col_to_vec(c)).unwrap();
                assert_eq!(batch.col_to_vec(c), single, "jvp column {c}");
            }

            let mut v_mat = DenseMatrix::zeros(ctx.state_dim(), cols);
            for c in 0..cols {
                v_mat.set_col(c, &random_vec(ctx.state_dim(), 80 + c as u64));
            }
            let batch_v = ctx.vjp_batch(&v_mat).unwrap();
            for c in 0..cols {
                let single = ctx.vjp(&v_mat.col_to_vec(c)).unwrap();
                assert_eq!(batch_v.col_to_vec(c), single, "vjp column {c}");
            }

            // Column permutation permutes the output identically.
            let perm = [2usize, 0, 1];
            let mut permuted = DenseMatrix::zeros(ctx.param_dim(), cols);
            for (dst, &src) in perm.iter().enumerate() {
                permuted.set_col(dst, &p_mat.col_to_vec(src));
            }
            let batch_perm = ctx.jvp_batch(&permuted).unwrap();
            for (dst, &src) in perm.iter().enumerate() {
                assert_eq!(batch_perm.col_to_vec(dst), batch.col_to_vec(src));
            }
        }
    }

    #[test]
    fn vjp_batch_identity_recovers_dense_jacobian() {
        let (model, params, inputs) = tiny_mlp();
        let ctx = JacobianContext::new(model.clone(), params.clone(), inputs.clone()).unwrap();
        let dense = dense_jacobian_of(&ctx).unwrap();

        // Finite-difference Jacobian, column by column in parameter space.
        let eps = 1e-5;
        let cfg = match &model {
            ModelConfig::Mlp(c) => c.clone(),
            _ => unreachable!(),
        };
        for col in [0usize, 3, 11, dense.cols() - 1] {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus.data[col] += eps;
            minus.data[col] -= eps;
            let f_plus = mlp::mlp_forward(&cfg, &plus, &inputs).unwrap();
            let f_minus = mlp::mlp_forward(&cfg, &minus, &inputs).unwrap();
            for r in 0..dense.rows() {
                let fd = (f_plus.data[r] - f_minus.data[r]) / (2.0 * eps);
                assert!(
                    (fd - dense.get(r, col)).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "J[{r},{col}]"
                );
            }
        }
    }

    #[test]
    fn counters_track_calls() {
        let (model, params, inputs) = tiny_mlp();
        let ctx = JacobianContext::new(model, params, inputs).unwrap();
        assert_eq!(ctx.ad_counts(), (0, 0));
        let _ = ctx.jvp(&vec![0.0; ctx.param_dim()]).unwrap();
        let _ = ctx.vjp(&vec![0.0; ctx.state_dim()]).unwrap();
        let _ = ctx.vjp(&vec![0.0; ctx.state_dim()]).unwrap();
        assert_eq!(ctx.ad_counts(), (1, 2));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let (model, params, inputs) = tiny_mlp();
        let ctx = JacobianContext::new(model, params, inputs).unwrap();
        assert!(ctx.jvp(&vec![0.0; ctx.param_dim() + 1]).is_err());
        assert!(ctx.vjp(&vec![0.0; ctx.state_dim() - 1]).is_err());
    }

    #[test]
    fn dense_jacobian_backend_is_consistent() {
        let mut rng = SplitMix64::new(3);
        let mut m = DenseMatrix::zeros(4, 3);
        for r in 0..4 {
            for c in 0..3 {
                m.set(r, c, rng.next_standard_normal());
            }
        }
        let jac = DenseJacobian::new(m.clone());
        let p = random_vec(3, 5);
        let v = random_vec(4, 6);
        let lhs = dot(&jac.jvp(&p).unwrap(), &v);
        let rhs = dot(&p, &jac.vjp(&v).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
