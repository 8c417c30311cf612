//! Experiment execution: budget sweeps over estimators with repeated seeds,
//! exact baselines, percentile aggregation and speedup bookkeeping.

use std::time::Instant;

use ntk_core::estimators::{
    hutchinson_trace, hutchpp_trace, one_sided_trace, AdMode, EstimateRecord, EstimatorConfig,
};
use ntk_core::operator::{exact_trace, LinearOperator, NtkOperator, DENSE_CAP};
use ntk_core::rng::derive_seed;
use ntk_core::ProbeDistribution;

use crate::error::{HarnessError, Result};
use crate::parallel::{auto_threads, parallel_map};
use crate::presets::{ModelData, ModelSpec};

/// Trace estimators the sweep can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEstimator {
    HutchPlusPlus,
    Hutchinson,
    OneSidedReverse,
    OneSidedForward,
}

impl TraceEstimator {
    pub const ALL: [TraceEstimator; 4] = [
        TraceEstimator::HutchPlusPlus,
        TraceEstimator::Hutchinson,
        TraceEstimator::OneSidedReverse,
        TraceEstimator::OneSidedForward,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TraceEstimator::HutchPlusPlus => "hutchpp",
            TraceEstimator::Hutchinson => "hutchinson",
            TraceEstimator::OneSidedReverse => "rhutch",
            TraceEstimator::OneSidedForward => "fhutch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hutchpp" => Ok(TraceEstimator::HutchPlusPlus),
            "hutchinson" => Ok(TraceEstimator::Hutchinson),
            "rhutch" => Ok(TraceEstimator::OneSidedReverse),
            "fhutch" => Ok(TraceEstimator::OneSidedForward),
            other => Err(HarnessError::Config(format!(
                "unknown estimator `{other}` (expected hutchpp, hutchinson, rhutch or fhutch)"
            ))),
        }
    }

    /// Stable tag feeding the seed derivation; never reorder.
    fn seed_tag(&self) -> u64 {
        match self {
            TraceEstimator::HutchPlusPlus => 1,
            TraceEstimator::Hutchinson => 2,
            TraceEstimator::OneSidedReverse => 3,
            TraceEstimator::OneSidedForward => 4,
        }
    }
}

/// Everything one trace sweep needs.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    pub estimators: Vec<TraceEstimator>,
    pub budgets: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
    pub distribution: ProbeDistribution,
    pub split: Option<f64>,
    pub orthogonalize: bool,
    /// When false, wall-time columns are written as zero so output bytes are
    /// a pure function of the spec and master seed.
    pub timing: bool,
    pub allow_large_exact: bool,
    /// Normalize relative error by the exact trace instead of the estimate.
    pub normalize_by_exact: bool,
    /// 0 = use every available core.
    pub threads: usize,
}

impl ExperimentSpec {
    pub fn new(model: ModelSpec) -> Self {
        ExperimentSpec {
            model,
            estimators: vec![TraceEstimator::HutchPlusPlus],
            budgets: vec![60],
            repeats: 50,
            master_seed: 0,
            distribution: ProbeDistribution::Rademacher,
            split: None,
            orthogonalize: true,
            timing: true,
            allow_large_exact: false,
            normalize_by_exact: false,
            threads: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(HarnessError::Config("no estimators selected".into()));
        }
        if self.budgets.is_empty() || self.budgets.iter().any(|&m| m == 0) {
            return Err(HarnessError::Config("budgets must be positive".into()));
        }
        if self.repeats == 0 {
            return Err(HarnessError::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }

    /// The documented repeat-seed rule: master -> estimator tag -> budget ->
    /// repeat index, each step through `derive_seed`.
    pub fn repeat_seed(&self, estimator: TraceEstimator, m: usize, repeat: usize) -> u64 {
        let est_base = derive_seed(self.master_seed, estimator.seed_tag());
        let m_base = derive_seed(est_base, m as u64);
        derive_seed(m_base, repeat as u64)
    }
}

/// One estimator run within a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub estimator: &'static str,
    pub m: usize,
    pub seed: u64,
    pub record: EstimateRecord,
    pub exact: f64,
    pub rel_error: f64,
}

/// Percentiles of one (estimator, m) cell.
#[derive(Debug, Clone)]
pub struct SweepAggregate {
    pub estimator: &'static str,
    pub m: usize,
    pub err_median: f64,
    pub err_p25: f64,
    pub err_p75: f64,
    pub wall_median: f64,
    pub wall_p25: f64,
    pub wall_p75: f64,
    pub cost_median: f64,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<SweepAggregate>,
    pub n: usize,
    pub exact_value: f64,
    pub exact_wall_s: f64,
    pub exact_matvecs: u64,
}

/// Linear-interpolation percentile of an unsorted sample, p in [0, 1].
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in percentile input"));
    let rank = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = rank - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn relative_error(estimate: f64, exact: f64, normalize_by_exact: bool) -> f64 {
    let numer = (exact - estimate).abs();
    if numer == 0.0 {
        return 0.0; // covers the zero-operator case without a 0/0 NaN
    }
    let denom = if normalize_by_exact {
        exact.abs()
    } else {
        estimate.abs()
    };
    numer / denom
}

fn run_one(
    data: &ModelData,
    estimator: TraceEstimator,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord> {
    let jac = data.instantiate()?;
    let record = match estimator {
        TraceEstimator::HutchPlusPlus => {
            let op = NtkOperator::new(jac.as_ops());
            hutchpp_trace(&op, cfg)?
        }
        TraceEstimator::Hutchinson => {
            let op = NtkOperator::new(jac.as_ops());
            hutchinson_trace(&op, cfg)?
        }
        TraceEstimator::OneSidedReverse => one_sided_trace(jac.as_ops(), AdMode::Reverse, cfg)?,
        TraceEstimator::OneSidedForward => one_sided_trace(jac.as_ops(), AdMode::Forward, cfg)?,
    };
    Ok(record)
}

/// Computes the exact trace baseline (n matvecs) with its wall time.
pub fn exact_baseline(data: &ModelData) -> Result<(f64, f64, u64)> {
    let jac = data.instantiate()?;
    let op = NtkOperator::new(jac.as_ops());
    let start = Instant::now();
    let value = exact_trace(&op)?;
    let wall = start.elapsed().as_secs_f64();
    Ok((value, wall, op.matvec_count()))
}

/// Runs the full sweep: every estimator at every budget, `repeats` seeds
/// each, with the exact n-pass trace as the error reference.
pub fn run_trace_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let data = ModelData::build(&spec.model, spec.master_seed)?;
    let n = data.state_dim();
    if n > DENSE_CAP && !spec.allow_large_exact {
        return Err(HarnessError::Core(ntk_core::Error::DenseCapExceeded {
            n,
            cap: DENSE_CAP,
        }));
    }

    let (exact_value, exact_wall_s, exact_matvecs) = exact_baseline(&data)?;

    // One job per (estimator, budget, repeat); order fixed up front.
    struct Job {
        estimator: TraceEstimator,
        m: usize,
        seed: u64,
    }
    let mut jobs = Vec::new();
    for &estimator in &spec.estimators {
        for &m in &spec.budgets {
            for repeat in 0..spec.repeats {
                jobs.push(Job {
                    estimator,
                    m,
                    seed: spec.repeat_seed(estimator, m, repeat),
                });
            }
        }
    }

    let threads = if spec.threads == 0 {
        auto_threads()
    } else {
        spec.threads
    };
    let outcomes = parallel_map(jobs.len(), threads, |i| {
        let job = &jobs[i];
        let mut cfg = EstimatorConfig::new(job.m, job.seed)
            .with_orthogonalize(spec.orthogonalize)
            .with_distribution(spec.distribution);
        cfg.split = spec.split;
        run_one(&data, job.estimator, &cfg)
    });

    let mut rows = Vec::with_capacity(jobs.len());
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let record = outcome?;
        let rel_error = relative_error(record.value, exact_value, spec.normalize_by_exact);
        rows.push(SweepRow {
            estimator: job.estimator.as_str(),
            m: job.m,
            seed: job.seed,
            record,
            exact: exact_value,
            rel_error,
        });
    }

    let aggregates = aggregate_rows(&rows);
    Ok(SweepResult {
        rows,
        aggregates,
        n,
        exact_value,
        exact_wall_s,
        exact_matvecs,
    })
}

/// Percentile aggregation per (estimator, m) cell, in first-seen row order.
pub fn aggregate_rows(rows: &[SweepRow]) -> Vec<SweepAggregate> {
    let mut cells: Vec<(&'static str, usize)> = Vec::new();
    for r in rows {
        if !cells.contains(&(r.estimator, r.m)) {
            cells.push((r.estimator, r.m));
        }
    }
    let mut out = Vec::new();
    for (estimator, m) in cells {
        let cell: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.estimator == estimator && r.m == m)
            .collect();
        let errs: Vec<f64> = cell.iter().map(|r| r.rel_error).collect();
        let walls: Vec<f64> = cell.iter().map(|r| r.record.wall_time_s).collect();
        let costs: Vec<f64> = cell.iter().map(|r| r.record.matvec_cost).collect();
        out.push(SweepAggregate {
            estimator,
            m,
            err_median: percentile(&errs, 0.5),
            err_p25: percentile(&errs, 0.25),
            err_p75: percentile(&errs, 0.75),
            wall_median: percentile(&walls, 0.5),
            wall_p25: percentile(&walls, 0.25),
            wall_p75: percentile(&walls, 0.75),
            cost_median: percentile(&costs, 0.5),
        });
    }
    out
}

/// Speedup of each estimator against the exact baseline at fixed accuracy
/// levels: the wall time of the exact trace divided by the median wall time
/// of the cheapest budget whose median error clears the level.
#[derive(Debug, Clone)]
pub struct SpeedupRow {
    pub estimator: &'static str,
    pub accuracy: f64,
    pub m: Option<usize>,
    pub speedup: Option<f64>,
}

pub const SPEEDUP_LEVELS: [f64; 5] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5];

pub fn speedup_table(result: &SweepResult, levels: &[f64]) -> Vec<SpeedupRow> {
    let mut estimators: Vec<&'static str> = Vec::new();
    for a in &result.aggregates {
        if !estimators.contains(&a.estimator) {
            estimators.push(a.estimator);
        }
    }
    let mut out = Vec::new();
    for est in estimators {
        for &level in levels {
            let hit = result
                .aggregates
                .iter()
                .filter(|a| a.estimator == est && a.err_median <= level)
                .min_by_key(|a| a.m);
            let (m, speedup) = match hit {
                Some(a) if a.wall_median > 0.0 => {
                    (Some(a.m), Some(result.exact_wall_s / a.wall_median))
                }
                Some(a) => (Some(a.m), None),
                None => (None, None),
            };
            out.push(SpeedupRow {
                estimator: est,
                accuracy: level,
                m,
                speedup,
            });
        }
    }
    out
}
