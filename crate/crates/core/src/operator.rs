//! Matrix-free linear operators on the state space, plus dense oracles.
//!
//! The NTK operator applies `v -> jvp(vjp(v))`; it is symmetric positive
//! semidefinite by construction. The cross variant pairs two evaluations
//! sharing a state space and is generally non-symmetric. Products compose
//! operators right to left. Every operator carries an atomic matvec counter;
//! estimator budgets are audited against these counters rather than trusted
//! from configuration.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::autodiff::JacobianOps;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Default cap on dense materialization; `exact` n-pass oracles above this
/// size need an explicit override.
pub const DENSE_CAP: usize = 4096;

/// Anything that can be applied to state-space vectors.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    /// One matvec; increments the operator's counter.
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;

    /// Column-wise application; the counter advances by the column count.
    fn apply_mat(&self, m: &DenseMatrix) -> Result<DenseMatrix> {
        if m.rows() != self.dim() {
            return Err(Error::shape(
                format!("{} rows", self.dim()),
                format!("{} rows", m.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.dim(), m.cols());
        for c in 0..m.cols() {
            let col = self.apply(&m.col_to_vec(c))?;
            out.set_col(c, &col);
        }
        Ok(out)
    }

    /// Matvecs performed so far.
    fn matvec_count(&self) -> u64;

    /// (jvp, vjp) calls charged to this operator's underlying contexts.
    fn ad_counts(&self) -> (u64, u64) {
        (0, 0)
    }
}

/// The NTK of one frozen evaluation: `v -> jvp(vjp(v))` on R^n.
pub struct NtkOperator<'a, J: JacobianOps + ?Sized> {
    jac: &'a J,
    matvecs: AtomicU64,
}

impl<'a, J: JacobianOps + ?Sized> NtkOperator<'a, J> {
    pub fn new(jac: &'a J) -> Self {
        NtkOperator {
            jac,
            matvecs: AtomicU64::new(0),
        }
    }

    pub fn jacobian(&self) -> &'a J {
        self.jac
    }
}

impl<'a, J: JacobianOps + ?Sized> LinearOperator for NtkOperator<'a, J> {
    fn dim(&self) -> usize {
        self.jac.state_dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(
                format!("{}", self.dim()),
                format!("{}", v.len()),
            ));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let pulled = self.jac.vjp(v)?;
        self.jac.jvp(&pulled)
    }

    fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    fn ad_counts(&self) -> (u64, u64) {
        self.jac.ad_counts()
    }
}

/// `v -> jvp_left(vjp_right(v))` for two evaluations sharing both spaces.
pub struct CrossNtkOperator<'a, L: JacobianOps + ?Sized, R: JacobianOps + ?Sized> {
    left: &'a L,
    right: &'a R,
    matvecs: AtomicU64,
}

impl<'a, L: JacobianOps + ?Sized, R: JacobianOps + ?Sized> CrossNtkOperator<'a, L, R> {
    pub fn new(left: &'a L, right: &'a R) -> Result<Self> {
        if left.state_dim() != right.state_dim() {
            return Err(Error::shape(
                format!("state dim {}", left.state_dim()),
                format!("state dim {}", right.state_dim()),
            ));
        }
        if left.param_dim() != right.param_dim() {
            return Err(Error::shape(
                format!("param dim {}", left.param_dim()),
                format!("param dim {}", right.param_dim()),
            ));
        }
        Ok(CrossNtkOperator {
            left,
            right,
            matvecs: AtomicU64::new(0),
        })
    }
}

impl<'a, L: JacobianOps + ?Sized, R: JacobianOps + ?Sized> LinearOperator
    for CrossNtkOperator<'a, L, R>
{
    fn dim(&self) -> usize {
        self.left.state_dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(
                format!("{}", self.dim()),
                format!("{}", v.len()),
            ));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let pulled = self.right.vjp(v)?;
        self.left.jvp(&pulled)
    }

    fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    fn ad_counts(&self) -> (u64, u64) {
        let (lj, lv) = self.left.ad_counts();
        let (rj, rv) = self.right.ad_counts();
        if std::ptr::eq(
            self.left as *const _ as *const u8,
            self.right as *const _ as *const u8,
        ) {
            (lj, lv)
        } else {
            (lj + rj, lv + rv)
        }
    }
}

/// Ordered product of operators, applied right to left; `factors[0]` acts
/// last. Used for traces of kernel products such as the squared Frobenius
/// norm and alignment numerators.
pub struct ProductOperator<'a> {
    factors: Vec<&'a dyn LinearOperator>,
    matvecs: AtomicU64,
}

impl<'a> ProductOperator<'a> {
    pub fn new(factors: Vec<&'a dyn LinearOperator>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::invalid("product of zero operators"));
        }
        let dim = factors[0].dim();
        for f in &factors {
            if f.dim() != dim {
                return Err(Error::shape(
                    format!("dim {dim}"),
                    format!("dim {}", f.dim()),
                ));
            }
        }
        Ok(ProductOperator {
            factors,
            matvecs: AtomicU64::new(0),
        })
    }
}

impl<'a> LinearOperator for ProductOperator<'a> {
    fn dim(&self) -> usize {
        self.factors[0].dim()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(
                format!("{}", self.dim()),
                format!("{}", v.len()),
            ));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let mut current = v.to_vec();
        for f in self.factors.iter().rev() {
            current = f.apply(&current)?;
        }
        Ok(current)
    }

    fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }

    fn ad_counts(&self) -> (u64, u64) {
        // Sum each distinct underlying operator once; repeated factors share
        // one counter.
        let mut total = (0u64, 0u64);
        for (i, f) in self.factors.iter().enumerate() {
            let dup = self.factors[..i]
                .iter()
                .any(|g| std::ptr::eq(*g as *const _ as *const u8, *f as *const _ as *const u8));
            if !dup {
                let (j, v) = f.ad_counts();
                total.0 += j;
                total.1 += v;
            }
        }
        total
    }
}

/// A plain dense square matrix behind the matvec interface; test and
/// synthetic-benchmark operator.
pub struct DenseOperator {
    matrix: DenseMatrix,
    matvecs: AtomicU64,
}

impl DenseOperator {
    pub fn new(matrix: DenseMatrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::invalid("dense operator must be square"));
        }
        Ok(DenseOperator {
            matrix,
            matvecs: AtomicU64::new(0),
        })
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.rows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(
                format!("{}", self.dim()),
                format!("{}", v.len()),
            ));
        }
        self.matvecs.fetch_add(1, Ordering::Relaxed);
        let mut out = vec![0.0; self.dim()];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.matrix.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum();
        }
        Ok(out)
    }

    fn matvec_count(&self) -> u64 {
        self.matvecs.load(Ordering::Relaxed)
    }
}

/// Ground-truth trace: Σ eᵢᵀ op(eᵢ) with exactly n matvecs.
pub fn exact_trace<O: LinearOperator + ?Sized>(op: &O) -> Result<f64> {
    let n = op.dim();
    let mut e = vec![0.0; n];
    let mut trace = 0.0;
    for i in 0..n {
        e[i] = 1.0;
        let col = op.apply(&e)?;
        trace += col[i];
        e[i] = 0.0;
    }
    Ok(trace)
}

/// Ground-truth squared Frobenius norm: Σ ‖op(eᵢ)‖² with n matvecs, no
/// dense storage.
pub fn exact_frobenius_sq<O: LinearOperator + ?Sized>(op: &O) -> Result<f64> {
    let n = op.dim();
    let mut e = vec![0.0; n];
    let mut total = 0.0;
    for i in 0..n {
        e[i] = 1.0;
        let col = op.apply(&e)?;
        total += col.iter().map(|x| x * x).sum::<f64>();
        e[i] = 0.0;
    }
    Ok(total)
}

/// Ground-truth alignment tr(AᵀB)/(‖A‖_F ‖B‖_F) using 2n matvecs per
/// operator. Symmetric operators are assumed (Aᵀ = A), which holds for NTKs.
pub fn exact_alignment<A: LinearOperator + ?Sized, B: LinearOperator + ?Sized>(
    a: &A,
    b: &B,
) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(
            format!("dim {}", a.dim()),
            format!("dim {}", b.dim()),
        ));
    }
    let n = a.dim();
    let mut e = vec![0.0; n];
    let mut inner = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for i in 0..n {
        e[i] = 1.0;
        let ca = a.apply(&e)?;
        let cb = b.apply(&e)?;
        inner += ca.iter().zip(&cb).map(|(&x, &y)| x * y).sum::<f64>();
        norm_a += ca.iter().map(|x| x * x).sum::<f64>();
        norm_b += cb.iter().map(|x| x * x).sum::<f64>();
        e[i] = 0.0;
    }
    if norm_a <= 0.0 || norm_b <= 0.0 {
        return Err(Error::DegenerateKernel(
            "alignment of a zero kernel".to_string(),
        ));
    }
    Ok(inner / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Ground-truth participation ratio tr(A)² / tr(AAᵀ) via one n-pass.
pub fn exact_effective_rank<O: LinearOperator + ?Sized>(op: &O) -> Result<f64> {
    let n = op.dim();
    let mut e = vec![0.0; n];
    let mut trace = 0.0;
    let mut frob = 0.0;
    for i in 0..n {
        e[i] = 1.0;
        let col = op.apply(&e)?;
        trace += col[i];
        frob += col.iter().map(|x| x * x).sum::<f64>();
        e[i] = 0.0;
    }
    if frob <= 0.0 {
        return Err(Error::DegenerateKernel(
            "effective rank of a zero kernel".to_string(),
        ));
    }
    Ok(trace * trace / frob)
}

/// Materializes the full matrix with n matvecs. Refused above [`DENSE_CAP`]
/// unless `allow_large` is set; this is a validation oracle, not a code path
/// the estimators ever need.
pub fn dense_ntk<O: LinearOperator + ?Sized>(op: &O, allow_large: bool) -> Result<DenseMatrix> {
    let n = op.dim();
    if n > DENSE_CAP && !allow_large {
        return Err(Error::DenseCapExceeded { n, cap: DENSE_CAP });
    }
    let mut out = DenseMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for c in 0..n {
        e[c] = 1.0;
        let col = op.apply(&e)?;
        for (r, &x) in col.iter().enumerate() {
            out.set(r, c, x);
        }
        e[c] = 0.0;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{DenseJacobian, JacobianContext};
    use crate::models::{init_params, Activation, MlpConfig, ModelConfig, StateTensor};
    use crate::rng::SplitMix64;

    fn random_vec(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = SplitMix64::new(seed);
        (0..len).map(|_| rng.next_standard_normal()).collect()
    }

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        DenseMatrix::from_vec(rows, cols, random_vec(rows * cols, seed)).unwrap()
    }

    /// A linear model h = Xθ realized as a dense Jacobian X.
    fn linear_jacobian(n: usize, p: usize, seed: u64) -> DenseJacobian {
        DenseJacobian::new(random_dense(n, p, seed))
    }

    fn tiny_mlp_context() -> JacobianContext {
        let cfg = MlpConfig {
            input_dim: 3,
            hidden_dim: 4,
            num_layers: 2,
            output_dim: None,
            activation: Activation::Tanh,
            batch: 3,
        };
        let model = ModelConfig::Mlp(cfg.clone());
        let params = init_params(&model, 2).unwrap();
        let inputs = StateTensor::new(
            random_vec(cfg.batch * cfg.input_dim, 3),
            vec![("batch".into(), cfg.batch), ("input".into(), cfg.input_dim)],
        )
        .unwrap();
        JacobianContext::new(model, params, inputs).unwrap()
    }

    /// Cholesky with a diagonal shift; succeeds iff the matrix is PSD up to
    /// the shift.
    fn is_psd_within(m: &DenseMatrix, shift: f64) -> bool {
        let n = m.rows();
        let mut a = m.clone();
        for i in 0..n {
            a.set(i, i, a.get(i, i) + shift);
        }
        let mut l = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut sum = a.get(i, j);
                for k in 0..j {
                    sum -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if sum <= 0.0 {
                        return false;
                    }
                    l.set(i, j, sum.sqrt());
                } else {
                    l.set(i, j, sum / l.get(j, j));
                }
            }
        }
        true
    }

    #[test]
    fn ntk_matvec_of_zero_is_zero() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        let out = op.apply(&vec![0.0; op.dim()]).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
        assert_eq!(op.matvec_count(), 1);
    }

    #[test]
    fn ntk_is_symmetric_in_inner_products() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        for trial in 0..20 {
            let u = random_vec(op.dim(), 10 + trial);
            let v = random_vec(op.dim(), 50 + trial);
            let ku = op.apply(&u).unwrap();
            let kv = op.apply(&v).unwrap();
            let lhs: f64 = ku.iter().zip(&v).map(|(&a, &b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&kv).map(|(&a, &b)| a * b).sum();
            assert!((lhs - rhs).abs() <= 1e-10 * (lhs.abs() + 1e-300));
        }
    }

    #[test]
    fn linear_model_ntk_is_gram_matrix() {
        let jac = linear_jacobian(6, 4, 7);
        let op = NtkOperator::new(&jac);
        let x = jac.matrix().clone();
        let gram = x.matmul_nt(&x); // XXᵀ
        let v = random_vec(6, 9);
        let got = op.apply(&v).unwrap();
        for r in 0..6 {
            let expect: f64 = gram.row(r).iter().zip(&v).map(|(&a, &b)| a * b).sum();
            assert!((got[r] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matmat_matches_matvec_and_permutes() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        let m = random_dense(op.dim(), 3, 4);
        let out = op.apply_mat(&m).unwrap();
        assert_eq!(op.matvec_count(), 3);
        for c in 0..3 {
            let single = op.apply(&m.col_to_vec(c)).unwrap();
            assert_eq!(out.col_to_vec(c), single);
        }
        let mut permuted = DenseMatrix::zeros(op.dim(), 3);
        for (dst, &src) in [2usize, 0, 1].iter().enumerate() {
            permuted.set_col(dst, &m.col_to_vec(src));
        }
        let out_perm = op.apply_mat(&permuted).unwrap();
        for (dst, &src) in [2usize, 0, 1].iter().enumerate() {
            assert_eq!(out_perm.col_to_vec(dst), out.col_to_vec(src));
        }
    }

    #[test]
    fn dense_ntk_is_symmetric_psd_and_trace_consistent() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        let dense = dense_ntk(&op, false).unwrap();
        let mut asym = 0.0f64;
        for r in 0..dense.rows() {
            for c in 0..dense.cols() {
                asym = asym.max((dense.get(r, c) - dense.get(c, r)).abs());
            }
        }
        assert!(asym <= 1e-10, "asymmetry {asym}");
        assert!(is_psd_within(&dense, 1e-10 * dense.max_abs().max(1.0)));

        let tr = exact_trace(&op).unwrap();
        let rel = (dense.trace() - tr).abs() / tr.abs();
        assert!(rel <= 1e-12, "trace mismatch {rel}");
    }

    #[test]
    fn ntk_quadratic_form_is_nonnegative() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        for trial in 0..100 {
            let v = random_vec(op.dim(), 1000 + trial);
            let kv = op.apply(&v).unwrap();
            let quad: f64 = v.iter().zip(&kv).map(|(&a, &b)| a * b).sum();
            let norm_sq: f64 = v.iter().map(|x| x * x).sum();
            assert!(quad >= -1e-10 * norm_sq, "negative quadratic form {quad}");
        }
    }

    #[test]
    fn exact_trace_of_linear_model_is_frobenius() {
        let jac = linear_jacobian(6, 4, 11);
        let op = NtkOperator::new(&jac);
        let tr = exact_trace(&op).unwrap();
        let expect = jac.matrix().frobenius_sq();
        assert!((tr - expect).abs() <= 1e-12 * expect);
        assert_eq!(op.matvec_count(), 6); // exactly n matvecs
    }

    #[test]
    fn zero_jacobian_has_zero_trace() {
        let jac = DenseJacobian::new(DenseMatrix::zeros(5, 3));
        let op = NtkOperator::new(&jac);
        assert_eq!(exact_trace(&op).unwrap(), 0.0);
    }

    #[test]
    fn matvec_counter_audits_ad_calls() {
        let ctx = tiny_mlp_context();
        let op = NtkOperator::new(&ctx);
        let k = 7;
        for trial in 0..k {
            let v = random_vec(op.dim(), 300 + trial as u64);
            let _ = op.apply(&v).unwrap();
        }
        assert_eq!(op.matvec_count(), k as u64);
        assert_eq!(op.ad_counts(), (k as u64, k as u64));
    }

    #[test]
    fn dense_cap_is_enforced() {
        let jac = DenseJacobian::new(DenseMatrix::zeros(DENSE_CAP + 1, 2));
        let op = NtkOperator::new(&jac);
        assert!(matches!(
            dense_ntk(&op, false),
            Err(Error::DenseCapExceeded { .. })
        ));
        assert!(dense_ntk(&op, true).is_ok());
    }

    #[test]
    fn cross_ntk_matches_dense_product() {
        let left = linear_jacobian(5, 4, 21);
        let right = DenseJacobian::new(random_dense(5, 4, 22));
        let op = CrossNtkOperator::new(&left, &right).unwrap();
        let cross = left.matrix().matmul_nt(right.matrix()); // X1 X2ᵀ
        let v = random_vec(5, 23);
        let got = op.apply(&v).unwrap();
        for r in 0..5 {
            let expect: f64 = cross.row(r).iter().zip(&v).map(|(&a, &b)| a * b).sum();
            assert!((got[r] - expect).abs() < 1e-12);
        }
        // Generally non-symmetric.
        let mut asym = 0.0f64;
        for r in 0..5 {
            for c in 0..5 {
                asym = asym.max((cross.get(r, c) - cross.get(c, r)).abs());
            }
        }
        assert!(asym > 1e-6);
    }

    #[test]
    fn product_operator_composes_right_to_left() {
        let jac = linear_jacobian(5, 3, 31);
        let ntk = NtkOperator::new(&jac);
        let product = ProductOperator::new(vec![&ntk, &ntk]).unwrap();
        let v = random_vec(5, 32);
        let got = product.apply(&v).unwrap();
        let expect = ntk.apply(&ntk.apply(&v).unwrap()).unwrap();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-12);
        }
        // Repeated factor: AD counts are not double counted.
        let before = product.ad_counts();
        let _ = product.apply(&v).unwrap();
        let after = product.ad_counts();
        assert_eq!(after.0 - before.0, 2); // two jvp per product apply
        assert_eq!(after.1 - before.1, 2);
    }

    #[test]
    fn exact_frobenius_matches_dense() {
        let jac = linear_jacobian(6, 3, 41);
        let op = NtkOperator::new(&jac);
        let dense = dense_ntk(&op, false).unwrap();
        let got = exact_frobenius_sq(&op).unwrap();
        assert!((got - dense.frobenius_sq()).abs() <= 1e-10 * got);
    }

    #[test]
    fn exact_effective_rank_of_projector_counts_rank() {
        // diag(1,1,0,0) has trace 2 and squared norm 2: PR = 2.
        let mut d = DenseMatrix::zeros(4, 4);
        d.set(0, 0, 1.0);
        d.set(1, 1, 1.0);
        let op = DenseOperator::new(d).unwrap();
        let pr = exact_effective_rank(&op).unwrap();
        assert!((pr - 2.0).abs() < 1e-14);
        // The identity has the maximal participation ratio, n.
        let id = DenseOperator::new(DenseMatrix::identity(16)).unwrap();
        assert!((exact_effective_rank(&id).unwrap() - 16.0).abs() < 1e-12);
    }

    #[test]
    fn exact_alignment_of_identical_kernels_is_one() {
        let jac = linear_jacobian(5, 3, 51);
        let a = NtkOperator::new(&jac);
        let b = NtkOperator::new(&jac);
        let cos = exact_alignment(&a, &b).unwrap();
        assert!((cos - 1.0).abs() < 1e-12);
    }
}
