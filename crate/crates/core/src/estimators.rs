//! Randomized trace estimators and the kernel statistics built on them.
//!
//! Three families:
//!
//! - `hutchpp_trace`: sketches the operator's range with a thin QR, takes the
//!   trace exactly on that subspace, and estimates the complement with
//!   Hutchinson probes. Error decays like 1/m in the matvec budget m.
//! - `hutchinson_trace`: the plain quadratic-form average; the baseline with
//!   1/sqrt(m) error decay.
//! - `one_sided_trace` / `product_trace`: estimators that touch only one AD
//!   mode. The one-sided trace uses orthogonalized probes with a residual
//!   term by default; `product_trace` estimates tr(J1 J2ᵀ J4 J3ᵀ) from
//!   paired probes and powers the one-sided norm, alignment and effective
//!   rank variants (experimental; they need far more samples than the
//!   sketched method for the same accuracy).
//!
//! Budgets are honest: the number of operator applications and the AD call
//! counters are read back from the operator after every run, and one NTK
//! matvec is charged as one jvp plus one vjp, so a bare one-sided AD call
//! costs half a matvec.

use crate::autodiff::JacobianOps;
use crate::error::{Error, Result};
use crate::linalg::{
    draw_probes, project_complement, thin_qr, DenseMatrix, ProbeDistribution, ProbeSpec,
};
use crate::operator::{LinearOperator, NtkOperator, ProductOperator};
use crate::rng::derive_seed;

/// Default sketch fraction of the budget for the sketched trace estimator.
pub const SKETCH_FRACTION_DEFAULT: f64 = 1.0 / 3.0;
/// Alternative preset allocating one sixth of the budget to the sketch.
pub const SKETCH_FRACTION_SIXTH: f64 = 1.0 / 6.0;
/// Default sketch fraction for the one-sided estimator (half the probes are
/// orthogonalized, half estimate the residual).
pub const ONE_SIDED_FRACTION_DEFAULT: f64 = 0.5;

#[cfg(not(target_arch = "wasm32"))]
mod clock {
    use std::time::Instant;

    pub struct Stopwatch(Instant);

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch(Instant::now())
        }

        pub fn elapsed_s(&self) -> f64 {
            self.0.elapsed().as_secs_f64()
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod clock {
    /// No monotonic clock on bare wasm; wall times report as zero there and
    /// cost columns carry the comparison instead.
    pub struct Stopwatch;

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch
        }

        pub fn elapsed_s(&self) -> f64 {
            0.0
        }
    }
}

use clock::Stopwatch;

/// Which AD mode a one-sided estimator is allowed to touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdMode {
    Reverse,
    Forward,
}

/// Identity of an estimator, echoed into every record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    HutchPlusPlus,
    Hutchinson,
    /// Debug mode: a full orthonormal basis, m = n, reproduces the exact
    /// trace through the estimator path.
    HutchinsonFullBasis,
    OneSidedReverse,
    OneSidedForward,
    ProductReverse,
    ProductForward,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::HutchPlusPlus => "hutchpp",
            EstimatorKind::Hutchinson => "hutchinson",
            EstimatorKind::HutchinsonFullBasis => "hutchinson-basis",
            EstimatorKind::OneSidedReverse => "rhutch",
            EstimatorKind::OneSidedForward => "fhutch",
            EstimatorKind::ProductReverse => "prop1",
            EstimatorKind::ProductForward => "prop1-fwd",
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sample budget and probe configuration of one estimator call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Total budget in the estimator's native currency: operator matvecs for
    /// the sketched estimators, single-mode AD calls for one-sided ones,
    /// probe pairs for the product estimator.
    pub m: usize,
    pub distribution: ProbeDistribution,
    pub seed: u64,
    /// Sketch fraction in (0, 1); `None` picks the per-estimator default
    /// ([`SKETCH_FRACTION_DEFAULT`] or [`ONE_SIDED_FRACTION_DEFAULT`]).
    pub split: Option<f64>,
    /// Orthogonalize one-sided probes (the listing's optional step); when
    /// off the one-sided estimator degrades to plain averaging.
    pub orthogonalize_probes: bool,
}

impl EstimatorConfig {
    pub fn new(m: usize, seed: u64) -> Self {
        EstimatorConfig {
            m,
            seed,
            distribution: ProbeDistribution::Rademacher,
            split: None,
            orthogonalize_probes: true,
        }
    }

    pub fn with_distribution(mut self, distribution: ProbeDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_split(mut self, split: f64) -> Self {
        self.split = Some(split);
        self
    }

    pub fn with_orthogonalize(mut self, on: bool) -> Self {
        self.orthogonalize_probes = on;
        self
    }

    fn sketch_fraction(&self, default: f64) -> Result<f64> {
        let f = self.split.unwrap_or(default);
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::invalid(format!(
                "sketch fraction must lie in (0, 1), got {f}"
            )));
        }
        Ok(f)
    }
}

/// One estimate with its audited cost. The unit of benchmark output.
#[derive(Debug, Clone)]
pub struct EstimateRecord {
    /// The reported estimate (clamped for the bounded metrics).
    pub value: f64,
    /// The estimate before any clamping; equals `value` for plain traces.
    pub raw_value: f64,
    pub estimator: EstimatorKind,
    /// Cost in NTK-matvec units; a bare jvp or vjp counts one half.
    pub matvec_cost: f64,
    pub jvp_calls: u64,
    pub vjp_calls: u64,
    /// Applications of the operator the estimator was handed (its own
    /// currency; for product operators one apply costs several matvecs).
    pub operator_applies: u64,
    pub wall_time_s: f64,
    pub config: EstimatorConfig,
}

struct CostSnapshot {
    jvp: u64,
    vjp: u64,
    applies: u64,
    watch: Stopwatch,
}

impl CostSnapshot {
    fn of_operator<O: LinearOperator + ?Sized>(op: &O) -> Self {
        let (jvp, vjp) = op.ad_counts();
        CostSnapshot {
            jvp,
            vjp,
            applies: op.matvec_count(),
            watch: Stopwatch::start(),
        }
    }

    fn of_jacobians(ctxs: &[&dyn JacobianOps]) -> Self {
        let (mut jvp, mut vjp) = (0, 0);
        for (i, c) in ctxs.iter().enumerate() {
            let dup = ctxs[..i]
                .iter()
                .any(|p| std::ptr::eq(*p as *const _ as *const u8, *c as *const _ as *const u8));
            if !dup {
                let (j, v) = c.ad_counts();
                jvp += j;
                vjp += v;
            }
        }
        CostSnapshot {
            jvp,
            vjp,
            applies: 0,
            watch: Stopwatch::start(),
        }
    }

    fn finish_operator<O: LinearOperator + ?Sized>(
        self,
        op: &O,
        kind: EstimatorKind,
        value: f64,
        cfg: &EstimatorConfig,
    ) -> EstimateRecord {
        let (jvp, vjp) = op.ad_counts();
        self.build(kind, value, cfg, jvp, vjp, op.matvec_count())
    }

    fn finish_jacobians(
        self,
        ctxs: &[&dyn JacobianOps],
        kind: EstimatorKind,
        value: f64,
        cfg: &EstimatorConfig,
    ) -> EstimateRecord {
        let (mut jvp, mut vjp) = (0, 0);
        for (i, c) in ctxs.iter().enumerate() {
            let dup = ctxs[..i]
                .iter()
                .any(|p| std::ptr::eq(*p as *const _ as *const u8, *c as *const _ as *const u8));
            if !dup {
                let (j, v) = c.ad_counts();
                jvp += j;
                vjp += v;
            }
        }
        self.build(kind, value, cfg, jvp, vjp, 0)
    }

    fn build(
        self,
        kind: EstimatorKind,
        value: f64,
        cfg: &EstimatorConfig,
        jvp_now: u64,
        vjp_now: u64,
        applies_now: u64,
    ) -> EstimateRecord {
        let jvp_calls = jvp_now - self.jvp;
        let vjp_calls = vjp_now - self.vjp;
        let operator_applies = applies_now - self.applies;
        let ad_total = jvp_calls + vjp_calls;
        let matvec_cost = if ad_total > 0 {
            ad_total as f64 / 2.0
        } else {
            operator_applies as f64
        };
        EstimateRecord {
            value,
            raw_value: value,
            estimator: kind,
            matvec_cost,
            jvp_calls,
            vjp_calls,
            operator_applies,
            wall_time_s: self.watch.elapsed_s(),
            config: *cfg,
        }
    }
}

fn probe_spec(cfg: &EstimatorConfig, count: usize, stream: u64) -> ProbeSpec {
    ProbeSpec {
        distribution: cfg.distribution,
        count,
        seed: derive_seed(cfg.seed, stream),
    }
}

/// Sketched trace estimator. Draws a sketch `S`, orthonormalizes the
/// operator's response `op(S)` into `Q`, takes `tr(op(Q)ᵀQ)` exactly, and
/// adds a Hutchinson estimate on the complement `(I - QQᵀ)`, scaled by one
/// over the number of residual probes actually used. Consumes exactly
/// `cfg.m` operator applications: sketch + rank(Q) + residual.
pub fn hutchpp_trace<O: LinearOperator + ?Sized>(
    op: &O,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    if cfg.m < 3 {
        return Err(Error::invalid(format!(
            "sketched trace needs a budget of at least 3, got {}",
            cfg.m
        )));
    }
    let dim = op.dim();
    let fraction = cfg.sketch_fraction(SKETCH_FRACTION_DEFAULT)?;
    let sketch_cols = (((cfg.m as f64) * fraction).floor() as usize).clamp(1, dim);
    if cfg.m < 2 * sketch_cols + 1 {
        return Err(Error::invalid(format!(
            "budget {} leaves no residual probes after a sketch of {sketch_cols} columns",
            cfg.m
        )));
    }

    let snap = CostSnapshot::of_operator(op);
    let sketch = draw_probes(dim, &probe_spec(cfg, sketch_cols, 0))?;
    let response = op.apply_mat(&sketch)?;
    let q = thin_qr(&response)?;
    let low_rank = if q.cols() > 0 {
        let w = op.apply_mat(&q)?;
        w.dot(&q)
    } else {
        0.0
    };

    let residual_cols = cfg.m - sketch_cols - q.cols();
    let t = draw_probes(dim, &probe_spec(cfg, residual_cols, 1))?;
    let b = project_complement(&q, &t)?;
    let gb = op.apply_mat(&b)?;
    let residual = gb.dot(&b) / residual_cols as f64;

    Ok(snap.finish_operator(op, EstimatorKind::HutchPlusPlus, low_rank + residual, cfg))
}

/// Plain Hutchinson estimator: the average of `vᵀ op(v)` over `cfg.m`
/// isotropic probes. Unbiased for any operator.
pub fn hutchinson_trace<O: LinearOperator + ?Sized>(
    op: &O,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    if cfg.m < 1 {
        return Err(Error::invalid("at least one probe is required"));
    }
    let snap = CostSnapshot::of_operator(op);
    let probes = draw_probes(op.dim(), &probe_spec(cfg, cfg.m, 0))?;
    let responses = op.apply_mat(&probes)?;
    let value = responses.dot(&probes) / cfg.m as f64;
    Ok(snap.finish_operator(op, EstimatorKind::Hutchinson, value, cfg))
}

/// Debug estimator: with `cfg.m == dim`, a random orthonormal basis turns
/// the quadratic-form sum into the exact trace (change of basis identity).
pub fn hutchinson_trace_full_basis<O: LinearOperator + ?Sized>(
    op: &O,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    let dim = op.dim();
    if cfg.m != dim {
        return Err(Error::invalid(format!(
            "full-basis mode needs m = dim ({dim}), got {}",
            cfg.m
        )));
    }
    let snap = CostSnapshot::of_operator(op);
    let probes = draw_probes(dim, &probe_spec(cfg, dim, 0))?;
    let basis = thin_qr(&probes)?;
    if basis.cols() != dim {
        return Err(Error::DegenerateKernel(
            "random probe matrix was numerically rank deficient".to_string(),
        ));
    }
    let responses = op.apply_mat(&basis)?;
    let value = responses.dot(&basis);
    Ok(snap.finish_operator(op, EstimatorKind::HutchinsonFullBasis, value, cfg))
}

/// One-sided trace estimator for tr(J Jᵀ) touching a single AD mode.
///
/// Reverse mode applies `G = vjp` to probes in the state space (d = n);
/// forward mode applies `G = jvp` to probes in the parameter space
/// (d = dim P). With orthogonalization on, `‖G(Q)‖²` is exact on the probe
/// span and the complement is estimated from residual probes; off, the plain
/// average `‖G(v)‖²` over m probes is returned. Exactly `cfg.m` AD calls of
/// the chosen mode are spent either way.
pub fn one_sided_trace<J: JacobianOps + ?Sized>(
    ctx: &J,
    mode: AdMode,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    if cfg.m < 2 {
        return Err(Error::invalid(format!(
            "one-sided trace needs a budget of at least 2, got {}",
            cfg.m
        )));
    }
    let d = match mode {
        AdMode::Reverse => ctx.state_dim(),
        AdMode::Forward => ctx.param_dim(),
    };
    let kind = match mode {
        AdMode::Reverse => EstimatorKind::OneSidedReverse,
        AdMode::Forward => EstimatorKind::OneSidedForward,
    };
    let apply = |m: &DenseMatrix| match mode {
        AdMode::Reverse => ctx.vjp_batch(m),
        AdMode::Forward => ctx.jvp_batch(m),
    };

    let (jvp0, vjp0) = ctx.ad_counts();
    let watch = Stopwatch::start();

    let value = if cfg.orthogonalize_probes {
        let fraction = cfg.sketch_fraction(ONE_SIDED_FRACTION_DEFAULT)?;
        let q_cols = (((cfg.m as f64) * fraction).floor() as usize).clamp(1, d);
        if q_cols >= cfg.m {
            return Err(Error::invalid(format!(
                "budget {} leaves no residual probes after {q_cols} orthogonal ones",
                cfg.m
            )));
        }
        let s = draw_probes(d, &probe_spec(cfg, q_cols, 0))?;
        let q = thin_qr(&s)?;
        if q.cols() == 0 {
            return Err(Error::DegenerateKernel(
                "probe matrix was numerically rank deficient".to_string(),
            ));
        }
        let exact_part = apply(&q)?.frobenius_sq();
        let residual_cols = cfg.m - q.cols();
        let t = draw_probes(d, &probe_spec(cfg, residual_cols, 1))?;
        let b = project_complement(&q, &t)?;
        exact_part + apply(&b)?.frobenius_sq() / residual_cols as f64
    } else {
        let probes = draw_probes(d, &probe_spec(cfg, cfg.m, 0))?;
        apply(&probes)?.frobenius_sq() / cfg.m as f64
    };

    let (jvp1, vjp1) = ctx.ad_counts();
    let ad_total = (jvp1 - jvp0) + (vjp1 - vjp0);
    Ok(EstimateRecord {
        value,
        raw_value: value,
        estimator: kind,
        matvec_cost: ad_total as f64 / 2.0,
        jvp_calls: jvp1 - jvp0,
        vjp_calls: vjp1 - vjp0,
        operator_applies: 0,
        wall_time_s: watch.elapsed_s(),
        config: *cfg,
    })
}

/// Paired-probe estimator of the product trace tr(J1 J2ᵀ J4 J3ᵀ) using a
/// single AD mode.
///
/// Reverse mode draws state-space pairs (u, v) and averages
/// `⟨vjp1(u), vjp2(v)⟩ · ⟨vjp3(u), vjp4(v)⟩`; forward mode draws
/// parameter-space pairs (p, q) and averages
/// `⟨jvp3(p), jvp1(q)⟩ · ⟨jvp4(p), jvp2(q)⟩`. Both are unbiased for the same
/// canonical product order. Contexts repeated by reference share their AD
/// work and are charged once.
pub fn product_trace(
    ctxs: [&dyn JacobianOps; 4],
    mode: AdMode,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    if cfg.m < 1 {
        return Err(Error::invalid("at least one probe pair is required"));
    }
    check_product_spaces(&ctxs, mode)?;
    let kind = match mode {
        AdMode::Reverse => EstimatorKind::ProductReverse,
        AdMode::Forward => EstimatorKind::ProductForward,
    };
    let snap = CostSnapshot::of_jacobians(&ctxs);

    let d = match mode {
        AdMode::Reverse => ctxs[0].state_dim(),
        AdMode::Forward => ctxs[0].param_dim(),
    };
    let u = draw_probes(d, &probe_spec(cfg, cfg.m, 0))?;
    let v = draw_probes(d, &probe_spec(cfg, cfg.m, 1))?;

    let value = product_samples_mean(&ctxs, mode, &u, &v)?;
    Ok(snap.finish_jacobians(&ctxs, kind, value, cfg))
}

/// Replaces the expectation in [`product_trace`] with the exhaustive sum
/// over every Rademacher probe pair; exact for the product trace. Only
/// feasible for tiny probe spaces (d <= 12).
pub fn product_trace_exhaustive(ctxs: [&dyn JacobianOps; 4], mode: AdMode) -> Result<f64> {
    check_product_spaces(&ctxs, mode)?;
    let d = match mode {
        AdMode::Reverse => ctxs[0].state_dim(),
        AdMode::Forward => ctxs[0].param_dim(),
    };
    if d > 12 {
        return Err(Error::invalid(format!(
            "exhaustive enumeration over {{+1,-1}}^{d} is infeasible"
        )));
    }
    let count = 1usize << d;
    // Sign vector of index k: bit i picks the sign of entry i.
    let mut signs = DenseMatrix::zeros(d, count);
    for k in 0..count {
        for i in 0..d {
            let s = if (k >> i) & 1 == 0 { 1.0 } else { -1.0 };
            signs.set(i, k, s);
        }
    }
    let total = product_samples_sum_all_pairs(&ctxs, mode, &signs)?;
    Ok(total / (count * count) as f64)
}

fn check_product_spaces(ctxs: &[&dyn JacobianOps; 4], mode: AdMode) -> Result<()> {
    match mode {
        AdMode::Reverse => {
            let n = ctxs[0].state_dim();
            if ctxs.iter().any(|c| c.state_dim() != n) {
                return Err(Error::shape(
                    format!("shared state dim {n}"),
                    "mismatched state spaces".to_string(),
                ));
            }
            if ctxs[0].param_dim() != ctxs[1].param_dim()
                || ctxs[2].param_dim() != ctxs[3].param_dim()
            {
                return Err(Error::shape(
                    "paired parameter spaces (1,2) and (3,4)".to_string(),
                    "mismatched parameter spaces".to_string(),
                ));
            }
        }
        AdMode::Forward => {
            let p = ctxs[0].param_dim();
            if ctxs.iter().any(|c| c.param_dim() != p) {
                return Err(Error::shape(
                    format!("shared param dim {p}"),
                    "mismatched parameter spaces".to_string(),
                ));
            }
            if ctxs[0].state_dim() != ctxs[2].state_dim()
                || ctxs[1].state_dim() != ctxs[3].state_dim()
            {
                return Err(Error::shape(
                    "paired state spaces (1,3) and (2,4)".to_string(),
                    "mismatched state spaces".to_string(),
                ));
            }
        }
    }
    Ok(())
}

/// Applies the mode's AD map for each distinct context, reusing results for
/// repeated references so shared Jacobians are charged once.
fn batched_pullbacks(
    ctxs: &[&dyn JacobianOps; 4],
    mode: AdMode,
    probes: &DenseMatrix,
    which: [usize; 2],
) -> Result<Vec<DenseMatrix>> {
    let mut results: Vec<Option<DenseMatrix>> = vec![None, None, None, None];
    for &idx in &which {
        if results[idx].is_some() {
            continue;
        }
        // Reuse an already computed result when the same context object
        // appears at another slot in `which`.
        let prior = which.iter().copied().find(|&j| {
            results[j].is_some()
                && std::ptr::eq(
                    ctxs[j] as *const _ as *const u8,
                    ctxs[idx] as *const _ as *const u8,
                )
        });
        let mat = if let Some(j) = prior {
            results[j].clone().unwrap()
        } else {
            match mode {
                AdMode::Reverse => ctxs[idx].vjp_batch(probes)?,
                AdMode::Forward => ctxs[idx].jvp_batch(probes)?,
            }
        };
        results[idx] = Some(mat);
    }
    Ok(results.into_iter().map(|r| r.unwrap_or_default()).collect())
}

fn column_dot(a: &DenseMatrix, ca: usize, b: &DenseMatrix, cb: usize) -> f64 {
    debug_assert_eq!(a.rows(), b.rows());
    let mut acc = 0.0;
    for r in 0..a.rows() {
        acc += a.get(r, ca) * b.get(r, cb);
    }
    acc
}

/// Mean over paired columns (u_k, v_k).
fn product_samples_mean(
    ctxs: &[&dyn JacobianOps; 4],
    mode: AdMode,
    u: &DenseMatrix,
    v: &DenseMatrix,
) -> Result<f64> {
    let m = u.cols();
    let mut total = 0.0;
    match mode {
        AdMode::Reverse => {
            // u feeds J1 and J3, v feeds J2 and J4.
            let us = batched_pullbacks(ctxs, mode, u, [0, 2])?;
            let vs = batched_pullbacks(ctxs, mode, v, [1, 3])?;
            for k in 0..m {
                let first = column_dot(&us[0], k, &vs[1], k);
                let second = column_dot(&us[2], k, &vs[3], k);
                total += first * second;
            }
        }
        AdMode::Forward => {
            // p feeds J3 and J4, q feeds J1 and J2.
            let ps = batched_pullbacks(ctxs, mode, u, [2, 3])?;
            let qs = batched_pullbacks(ctxs, mode, v, [0, 1])?;
            for k in 0..m {
                let first = column_dot(&ps[2], k, &qs[0], k);
                let second = column_dot(&ps[3], k, &qs[1], k);
                total += first * second;
            }
        }
    }
    Ok(total / m as f64)
}

/// Sum of the sample product over every (u column, v column) pair.
fn product_samples_sum_all_pairs(
    ctxs: &[&dyn JacobianOps; 4],
    mode: AdMode,
    signs: &DenseMatrix,
) -> Result<f64> {
    let count = signs.cols();
    let mut total = 0.0;
    match mode {
        AdMode::Reverse => {
            let us = batched_pullbacks(ctxs, mode, signs, [0, 2])?;
            let vs = batched_pullbacks(ctxs, mode, signs, [1, 3])?;
            for ku in 0..count {
                for kv in 0..count {
                    let first = column_dot(&us[0], ku, &vs[1], kv);
                    let second = column_dot(&us[2], ku, &vs[3], kv);
                    total += first * second;
                }
            }
        }
        AdMode::Forward => {
            let ps = batched_pullbacks(ctxs, mode, signs, [2, 3])?;
            let qs = batched_pullbacks(ctxs, mode, signs, [0, 1])?;
            for kp in 0..count {
                for kq in 0..count {
                    let first = column_dot(&ps[2], kp, &qs[0], kq);
                    let second = column_dot(&ps[3], kp, &qs[1], kq);
                    total += first * second;
                }
            }
        }
    }
    Ok(total)
}

/// Method selector for the kernel statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMethod {
    HutchPlusPlus,
    OneSidedReverse,
    OneSidedForward,
}

impl MetricMethod {
    fn ad_mode(&self) -> Option<AdMode> {
        match self {
            MetricMethod::HutchPlusPlus => None,
            MetricMethod::OneSidedReverse => Some(AdMode::Reverse),
            MetricMethod::OneSidedForward => Some(AdMode::Forward),
        }
    }
}

/// Estimated squared Frobenius norm ‖NTK‖² = tr(NTK·NTKᵀ). The sketched
/// method runs on the product operator (two vjp and two jvp per
/// application); the one-sided methods use the paired-probe product
/// estimator with all four slots bound to the same Jacobian.
pub fn frobenius_norm_sq<J: JacobianOps>(
    op: &NtkOperator<'_, J>,
    cfg: &EstimatorConfig,
    method: MetricMethod,
) -> Result<EstimateRecord> {
    match method.ad_mode() {
        None => {
            let product = ProductOperator::new(vec![op, op])?;
            hutchpp_trace(&product, cfg)
        }
        Some(mode) => {
            let j: &dyn JacobianOps = op.jacobian();
            product_trace([j, j, j, j], mode, cfg)
        }
    }
}

fn combine_stage_costs(stages: &[&EstimateRecord]) -> (f64, u64, u64, u64, f64) {
    let mut cost = 0.0;
    let mut jvp = 0;
    let mut vjp = 0;
    let mut applies = 0;
    let mut wall = 0.0;
    for s in stages {
        cost += s.matvec_cost;
        jvp += s.jvp_calls;
        vjp += s.vjp_calls;
        applies += s.operator_applies;
        wall += s.wall_time_s;
    }
    (cost, jvp, vjp, applies, wall)
}

/// Estimated kernel alignment tr(NTK1ᵀ NTK2) / (‖NTK1‖_F ‖NTK2‖_F).
///
/// The numerator and both norm estimates reuse the same probe streams
/// (same seed), which guarantees self-alignment of 1 and cancels much of
/// the ratio variance. The raw ratio is reported alongside a [0, 1] clamp.
pub fn alignment<J1: JacobianOps, J2: JacobianOps>(
    op1: &NtkOperator<'_, J1>,
    op2: &NtkOperator<'_, J2>,
    cfg: &EstimatorConfig,
    method: MetricMethod,
) -> Result<EstimateRecord> {
    if op1.dim() != op2.dim() {
        return Err(Error::shape(
            format!("state dim {}", op1.dim()),
            format!("state dim {}", op2.dim()),
        ));
    }
    let numerator = match method.ad_mode() {
        None => {
            let product = ProductOperator::new(vec![op1, op2])?;
            hutchpp_trace(&product, cfg)?
        }
        Some(mode) => {
            let j1: &dyn JacobianOps = op1.jacobian();
            let j2: &dyn JacobianOps = op2.jacobian();
            product_trace([j1, j1, j2, j2], mode, cfg)?
        }
    };
    let den1 = frobenius_norm_sq(op1, cfg, method)?;
    let den2 = frobenius_norm_sq(op2, cfg, method)?;
    if den1.value <= 0.0 || den2.value <= 0.0 {
        return Err(Error::DegenerateKernel(format!(
            "norm estimates must be positive, got {} and {}",
            den1.value, den2.value
        )));
    }
    let raw = numerator.value / (den1.value * den2.value).sqrt();
    let (cost, jvp, vjp, applies, wall) = combine_stage_costs(&[&numerator, &den1, &den2]);
    Ok(EstimateRecord {
        value: raw.clamp(0.0, 1.0),
        raw_value: raw,
        estimator: numerator.estimator,
        matvec_cost: cost,
        jvp_calls: jvp,
        vjp_calls: vjp,
        operator_applies: applies,
        wall_time_s: wall,
        config: *cfg,
    })
}

/// Estimated effective rank (participation ratio) tr(NTK)² / ‖NTK‖²_F,
/// clamped to [0, n]; the raw ratio is kept in `raw_value`.
pub fn effective_rank<J: JacobianOps>(
    op: &NtkOperator<'_, J>,
    cfg: &EstimatorConfig,
    method: MetricMethod,
) -> Result<EstimateRecord> {
    let trace = match method.ad_mode() {
        None => hutchpp_trace(op, cfg)?,
        Some(mode) => one_sided_trace(op.jacobian(), mode, cfg)?,
    };
    let frob = frobenius_norm_sq(op, cfg, method)?;
    if frob.value <= 0.0 {
        return Err(Error::DegenerateKernel(format!(
            "squared norm estimate must be positive, got {}",
            frob.value
        )));
    }
    let raw = trace.value * trace.value / frob.value;
    let n = op.dim() as f64;
    let (cost, jvp, vjp, applies, wall) = combine_stage_costs(&[&trace, &frob]);
    Ok(EstimateRecord {
        value: raw.clamp(0.0, n),
        raw_value: raw,
        estimator: trace.estimator,
        matvec_cost: cost,
        jvp_calls: jvp,
        vjp_calls: vjp,
        operator_applies: applies,
        wall_time_s: wall,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DenseJacobian;
    use crate::operator::DenseOperator;
    use crate::rng::SplitMix64;

    fn random_dense(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = SplitMix64::new(seed);
        let data = (0..rows * cols)
            .map(|_| rng.next_standard_normal())
            .collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn hutchpp_exact_on_low_rank_psd() {
        // UUᵀ with U 16x2: rank 2, so any sketch of width >= 2 nails it.
        let u = random_dense(16, 2, 3);
        let gram = u.matmul_nt(&u);
        let op = DenseOperator::new(gram.clone()).unwrap();
        let cfg = EstimatorConfig::new(9, 42); // sketch 3 >= rank 2
        let rec = hutchpp_trace(&op, &cfg).unwrap();
        let exact = gram.trace();
        assert!(
            (rec.value - exact).abs() <= 1e-10 * exact.abs(),
            "{} vs {exact}",
            rec.value
        );
        assert_eq!(rec.operator_applies as usize, cfg.m);
    }

    #[test]
    fn hutchpp_zero_operator_is_exactly_zero() {
        let op = DenseOperator::new(DenseMatrix::zeros(12, 12)).unwrap();
        let rec = hutchpp_trace(&op, &EstimatorConfig::new(6, 1)).unwrap();
        assert_eq!(rec.value, 0.0);
        assert_eq!(rec.operator_applies as usize, 6);
    }

    #[test]
    fn hutchpp_rejects_tiny_budgets() {
        let op = DenseOperator::new(DenseMatrix::identity(8)).unwrap();
        assert!(hutchpp_trace(&op, &EstimatorConfig::new(2, 1)).is_err());
        let bad_split = EstimatorConfig::new(10, 1).with_split(0.9);
        assert!(hutchpp_trace(&op, &bad_split).is_err());
    }

    #[test]
    fn hutchinson_diagonal_rademacher_is_exact_per_sample() {
        // vᵀ diag(d) v = Σ d_i for Rademacher v, so every seed returns 36.
        let mut d = DenseMatrix::zeros(8, 8);
        for i in 0..8 {
            d.set(i, i, (i + 1) as f64);
        }
        let op = DenseOperator::new(d).unwrap();
        for seed in 0..50 {
            let rec = hutchinson_trace(&op, &EstimatorConfig::new(8, seed)).unwrap();
            assert!((rec.value - 36.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hutchinson_zero_operator_is_zero() {
        let op = DenseOperator::new(DenseMatrix::zeros(9, 9)).unwrap();
        let rec = hutchinson_trace(&op, &EstimatorConfig::new(5, 3)).unwrap();
        assert_eq!(rec.value, 0.0);
    }

    #[test]
    fn hutchinson_full_basis_reproduces_exact_trace() {
        let a = random_dense(10, 10, 5);
        let sym = {
            let mut s = a.clone();
            let at = a.transpose();
            s.scaled_add(1.0, &at);
            s
        };
        let op = DenseOperator::new(sym.clone()).unwrap();
        let rec = hutchinson_trace_full_basis(&op, &EstimatorConfig::new(10, 9)).unwrap();
        assert!(
            (rec.value - sym.trace()).abs() <= 1e-10 * sym.trace().abs().max(1.0),
            "{} vs {}",
            rec.value,
            sym.trace()
        );
    }

    #[test]
    fn one_sided_exact_when_probes_span_the_space() {
        // d = 4 <= m/2: orthogonalized probes span everything, residual is 0.
        // Gaussian probes keep the probe matrix full rank at tiny d.
        let j = DenseJacobian::new(random_dense(4, 7, 11));
        let cfg = EstimatorConfig::new(10, 3).with_distribution(ProbeDistribution::Gaussian);
        let rec = one_sided_trace(&j, AdMode::Reverse, &cfg).unwrap();
        let exact = j.matrix().frobenius_sq();
        assert!(
            (rec.value - exact).abs() <= 1e-10 * exact,
            "{} vs {exact}",
            rec.value
        );
        assert_eq!(rec.vjp_calls as usize, cfg.m);
        assert_eq!(rec.jvp_calls, 0);
    }

    #[test]
    fn one_sided_forward_touches_only_jvp() {
        let j = DenseJacobian::new(random_dense(6, 3, 13));
        let cfg = EstimatorConfig::new(8, 5).with_distribution(ProbeDistribution::Gaussian);
        let rec = one_sided_trace(&j, AdMode::Forward, &cfg).unwrap();
        assert_eq!(rec.vjp_calls, 0);
        assert_eq!(rec.jvp_calls as usize, 8);
        let exact = j.matrix().frobenius_sq();
        // param dim 3 <= m/2 = 4, so forward probes span P and the value is exact.
        assert!((rec.value - exact).abs() <= 1e-10 * exact);
    }

    #[test]
    fn one_sided_unorthogonalized_spends_budget_exactly() {
        let j = DenseJacobian::new(random_dense(5, 4, 17));
        let cfg = EstimatorConfig::new(7, 2).with_orthogonalize(false);
        let rec = one_sided_trace(&j, AdMode::Reverse, &cfg).unwrap();
        assert_eq!(rec.vjp_calls as usize, 7);
        assert_eq!(rec.jvp_calls, 0);
        assert!((rec.matvec_cost - 3.5).abs() < 1e-12, "half-matvec units");
    }

    #[test]
    fn product_trace_zero_factor_gives_zero() {
        let j1 = DenseJacobian::new(random_dense(3, 2, 1));
        let j2 = DenseJacobian::new(DenseMatrix::zeros(3, 2));
        let j3 = DenseJacobian::new(random_dense(3, 2, 2));
        let j4 = DenseJacobian::new(random_dense(3, 2, 3));
        for mode in [AdMode::Reverse, AdMode::Forward] {
            let rec =
                product_trace([&j1, &j2, &j3, &j4], mode, &EstimatorConfig::new(5, 7)).unwrap();
            assert_eq!(rec.value, 0.0);
        }
    }

    #[test]
    fn product_trace_exhaustive_matches_dense_product() {
        // Canonical order tr(J1 J2ᵀ J4 J3ᵀ) checked against dense matmuls.
        let js: Vec<DenseJacobian> = (0..4)
            .map(|k| DenseJacobian::new(random_dense(3, 2, 100 + k)))
            .collect();
        let dense = {
            let a = js[0].matrix().matmul_nt(js[1].matrix()); // J1 J2ᵀ
            let b = js[3].matrix().matmul_nt(js[2].matrix()); // J4 J3ᵀ
            a.matmul(&b).trace()
        };
        let ctxs: [&dyn JacobianOps; 4] = [&js[0], &js[1], &js[2], &js[3]];
        let rev = product_trace_exhaustive(ctxs, AdMode::Reverse).unwrap();
        assert!(
            (rev - dense).abs() <= 1e-12 * dense.abs().max(1.0),
            "reverse {rev} vs dense {dense}"
        );
        let fwd = product_trace_exhaustive(ctxs, AdMode::Forward).unwrap();
        assert!(
            (fwd - dense).abs() <= 1e-12 * dense.abs().max(1.0),
            "forward {fwd} vs dense {dense}"
        );
    }

    #[test]
    fn product_trace_all_equal_is_squared_gram() {
        let j = DenseJacobian::new(random_dense(4, 3, 21));
        let gram = j.matrix().matmul_nt(j.matrix()); // JJᵀ
        let dense = gram.matmul(&gram).trace(); // tr((JJᵀ)²) = ‖JJᵀ‖_F²
        let ctxs: [&dyn JacobianOps; 4] = [&j, &j, &j, &j];
        let got = product_trace_exhaustive(ctxs, AdMode::Reverse).unwrap();
        assert!((got - dense).abs() <= 1e-12 * dense.abs());
    }

    #[test]
    fn product_trace_mode_purity() {
        let j = DenseJacobian::new(random_dense(4, 3, 31));
        let ctxs: [&dyn JacobianOps; 4] = [&j, &j, &j, &j];
        let rec = product_trace(ctxs, AdMode::Reverse, &EstimatorConfig::new(6, 3)).unwrap();
        assert_eq!(rec.jvp_calls, 0);
        // Shared context: u-batch and v-batch, each m columns.
        assert_eq!(rec.vjp_calls as usize, 2 * 6);
    }

    #[test]
    fn estimates_are_deterministic_in_config() {
        let a = random_dense(10, 10, 55);
        let sym = {
            let mut s = a.clone();
            s.scaled_add(1.0, &a.transpose());
            s
        };
        let op1 = DenseOperator::new(sym.clone()).unwrap();
        let op2 = DenseOperator::new(sym).unwrap();
        let cfg = EstimatorConfig::new(9, 1234);
        let r1 = hutchpp_trace(&op1, &cfg).unwrap();
        let r2 = hutchpp_trace(&op2, &cfg).unwrap();
        assert_eq!(r1.value.to_bits(), r2.value.to_bits());
    }

    #[test]
    fn frobenius_norm_linear_model_matches_dense() {
        let j = DenseJacobian::new(random_dense(6, 4, 61));
        let gram = j.matrix().matmul_nt(j.matrix());
        let expect = gram.frobenius_sq();
        let op = NtkOperator::new(&j);
        // Rank <= 4, sketch of 5 columns captures the product exactly.
        let cfg = EstimatorConfig::new(15, 8);
        let rec = frobenius_norm_sq(&op, &cfg, MetricMethod::HutchPlusPlus).unwrap();
        assert!(
            (rec.value - expect).abs() <= 1e-9 * expect,
            "{} vs {expect}",
            rec.value
        );
        // The product operator charges two vjp and two jvp per apply.
        assert_eq!(rec.jvp_calls, rec.vjp_calls);
        assert!((rec.matvec_cost - rec.jvp_calls as f64).abs() < 1e-12);
    }

    #[test]
    fn frobenius_norm_zero_operator() {
        let j = DenseJacobian::new(DenseMatrix::zeros(6, 4));
        let op = NtkOperator::new(&j);
        let rec = frobenius_norm_sq(
            &op,
            &EstimatorConfig::new(9, 3),
            MetricMethod::HutchPlusPlus,
        )
        .unwrap();
        assert_eq!(rec.value, 0.0);
    }

    #[test]
    fn self_alignment_is_one() {
        let j = DenseJacobian::new(random_dense(8, 5, 71));
        let op1 = NtkOperator::new(&j);
        let op2 = NtkOperator::new(&j);
        for method in [
            MetricMethod::HutchPlusPlus,
            MetricMethod::OneSidedReverse,
            MetricMethod::OneSidedForward,
        ] {
            let rec = alignment(&op1, &op2, &EstimatorConfig::new(12, 5), method).unwrap();
            assert!(
                (rec.value - 1.0).abs() <= 1e-10,
                "{method:?}: {}",
                rec.value
            );
        }
    }

    #[test]
    fn alignment_of_orthogonal_rank_one_kernels_is_zero() {
        // X = e1 aᵀ and Y = e2 bᵀ give NTKs supported on orthogonal axes.
        let mut x = DenseMatrix::zeros(5, 3);
        let mut y = DenseMatrix::zeros(5, 3);
        for c in 0..3 {
            x.set(0, c, 1.5 - c as f64);
            y.set(1, c, 0.5 + c as f64);
        }
        let jx = DenseJacobian::new(x);
        let jy = DenseJacobian::new(y);
        let op1 = NtkOperator::new(&jx);
        let op2 = NtkOperator::new(&jy);
        let rec = alignment(
            &op1,
            &op2,
            &EstimatorConfig::new(9, 17),
            MetricMethod::HutchPlusPlus,
        )
        .unwrap();
        assert!(rec.value.abs() <= 1e-12, "alignment {}", rec.value);
    }

    #[test]
    fn effective_rank_of_rank_one_kernel_is_one() {
        // J a single column: NTK = uuᵀ.
        let j = DenseJacobian::new(random_dense(7, 1, 81));
        let op = NtkOperator::new(&j);
        let rec = effective_rank(
            &op,
            &EstimatorConfig::new(9, 2),
            MetricMethod::HutchPlusPlus,
        )
        .unwrap();
        assert!((rec.value - 1.0).abs() <= 1e-9, "PR {}", rec.value);

        // Rank-1 identity: the squared norm equals the squared trace, and
        // the two estimators agree on it.
        let cfg = EstimatorConfig::new(9, 4);
        let tr = hutchpp_trace(&op, &cfg).unwrap().value;
        let frob = frobenius_norm_sq(&op, &cfg, MetricMethod::HutchPlusPlus)
            .unwrap()
            .value;
        assert!(
            (frob - tr * tr).abs() <= 1e-9 * frob,
            "rank-1 identity: {frob} vs {}",
            tr * tr
        );
    }

    #[test]
    fn effective_rank_degenerate_kernel_errors() {
        let j = DenseJacobian::new(DenseMatrix::zeros(5, 2));
        let op = NtkOperator::new(&j);
        assert!(matches!(
            effective_rank(
                &op,
                &EstimatorConfig::new(9, 2),
                MetricMethod::HutchPlusPlus
            ),
            Err(Error::DegenerateKernel(_))
        ));
    }

    #[test]
    fn hutchpp_budget_is_exact_even_when_rank_deficient() {
        // Rank-1 operator: the sketch collapses to one column and the
        // residual picks up the slack; total applies still equal m.
        let u = random_dense(10, 1, 91);
        let gram = u.matmul_nt(&u);
        let op = DenseOperator::new(gram.clone()).unwrap();
        let cfg = EstimatorConfig::new(12, 7);
        let rec = hutchpp_trace(&op, &cfg).unwrap();
        assert_eq!(op.matvec_count() as usize, cfg.m);
        assert_eq!(rec.operator_applies as usize, cfg.m);
        assert!((rec.value - gram.trace()).abs() <= 1e-9 * gram.trace().abs());
    }
}
