//! Kernel-statistic experiments: estimate the squared Frobenius norm, the
//! alignment between the kernels before and after training, and the
//! effective rank, sweeping the sample budget against exact n-pass values.

use std::path::PathBuf;
use std::time::Instant;

use ntk_core::estimators::{
    alignment, effective_rank, frobenius_norm_sq, EstimatorConfig, MetricMethod,
};
use ntk_core::operator::{
    exact_alignment, exact_effective_rank, exact_frobenius_sq, LinearOperator, NtkOperator,
    DENSE_CAP,
};
use ntk_core::rng::derive_seed;
use ntk_core::{
    JacobianContext, MlpConfig, ModelConfig, ParamVector, ProbeDistribution, StateTensor,
};

use crate::error::{HarnessError, Result};
use crate::mnist::{load_mnist_split, synthetic_blob_split, Split};
use crate::parallel::{auto_threads, parallel_map};
use crate::sweep::{aggregate_rows, percentile, SweepResult, SweepRow};
use crate::train::{accuracy, train_mnist_mlp, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Norm,
    Alignment,
    EffectiveRank,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Norm, Metric::Alignment, Metric::EffectiveRank];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Norm => "norm",
            Metric::Alignment => "align",
            Metric::EffectiveRank => "effrank",
        }
    }

    fn seed_tag(&self) -> u64 {
        match self {
            Metric::Norm => 11,
            Metric::Alignment => 12,
            Metric::EffectiveRank => 13,
        }
    }
}

/// Where the classifier's data comes from.
#[derive(Debug, Clone)]
pub enum DataSource {
    /// IDX files in a directory (train + t10k pairs).
    Mnist { dir: PathBuf },
    /// Hermetic Gaussian class blobs matching the model's input width.
    Synthetic,
}

#[derive(Debug, Clone)]
pub struct MetricSpec {
    pub model: MlpConfig,
    pub data: DataSource,
    pub train: TrainConfig,
    /// Training examples drawn from the source (synthetic size or a cap on
    /// the MNIST training split).
    pub train_examples: usize,
    pub budgets: Vec<usize>,
    pub repeats: usize,
    pub master_seed: u64,
    pub distribution: ProbeDistribution,
    pub split: Option<f64>,
    pub method: MetricMethod,
    pub timing: bool,
    pub allow_large_exact: bool,
    pub normalize_by_exact: bool,
    pub threads: usize,
}

impl MetricSpec {
    pub fn new(model: MlpConfig) -> Self {
        MetricSpec {
            model,
            data: DataSource::Synthetic,
            train: TrainConfig::default(),
            train_examples: 600,
            budgets: vec![60],
            repeats: 50,
            master_seed: 0,
            distribution: ProbeDistribution::Rademacher,
            split: None,
            method: MetricMethod::HutchPlusPlus,
            timing: true,
            allow_large_exact: false,
            normalize_by_exact: false,
            threads: 0,
        }
    }

    fn repeat_seed(&self, metric: Metric, m: usize, repeat: usize) -> u64 {
        let base = derive_seed(self.master_seed, metric.seed_tag());
        let m_base = derive_seed(base, m as u64);
        derive_seed(m_base, repeat as u64)
    }
}

pub struct MetricExperimentResult {
    /// (metric, sweep rows against that metric's exact value).
    pub sweeps: Vec<(Metric, SweepResult)>,
    pub train_accuracy: f64,
    pub initial_accuracy: f64,
}

struct FrozenPair {
    config: MlpConfig,
    initial: ParamVector,
    trained: ParamVector,
    eval_inputs: StateTensor,
}

impl FrozenPair {
    fn context(&self, params: &ParamVector) -> Result<JacobianContext> {
        Ok(JacobianContext::new(
            ModelConfig::Mlp(self.config.clone()),
            params.clone(),
            self.eval_inputs.clone(),
        )?)
    }
}

fn prepare(spec: &MetricSpec) -> Result<(FrozenPair, f64, f64)> {
    let (train_set, eval_set) = match &spec.data {
        DataSource::Mnist { dir } => {
            let train = load_mnist_split(dir, Split::Train)?;
            let test = load_mnist_split(dir, Split::Test)?;
            let train = if spec.train_examples > 0 {
                train.take(spec.train_examples)
            } else {
                train
            };
            (train, test.take(spec.model.batch))
        }
        DataSource::Synthetic => {
            let classes = spec.model.output_dim.unwrap_or(10);
            synthetic_blob_split(
                spec.train_examples,
                spec.model.batch,
                spec.model.input_dim,
                classes,
                derive_seed(spec.master_seed, 21),
            )
        }
    };
    if eval_set.len() < spec.model.batch {
        return Err(HarnessError::Config(format!(
            "evaluation set holds {} examples but the model batch is {}",
            eval_set.len(),
            spec.model.batch
        )));
    }

    let mut train_opts = spec.train.clone();
    train_opts.seed = derive_seed(spec.master_seed, 23);
    let (initial, trained, _report) = train_mnist_mlp(&spec.model, &train_set, &train_opts)?;
    let initial_accuracy = accuracy(&spec.model, &initial, &eval_set)?;
    let train_accuracy = accuracy(&spec.model, &trained, &eval_set)?;

    let eval_inputs = StateTensor::new(
        eval_set.images.data().to_vec(),
        vec![
            ("batch".into(), spec.model.batch),
            ("input".into(), spec.model.input_dim),
        ],
    )
    .map_err(HarnessError::Core)?;

    Ok((
        FrozenPair {
            config: spec.model.clone(),
            initial,
            trained,
            eval_inputs,
        },
        initial_accuracy,
        train_accuracy,
    ))
}

fn exact_metric(pair: &FrozenPair, metric: Metric) -> Result<(f64, f64, u64)> {
    let start = Instant::now();
    let (value, matvecs) = match metric {
        Metric::Norm => {
            let ctx = pair.context(&pair.trained)?;
            let op = NtkOperator::new(&ctx);
            (exact_frobenius_sq(&op)?, op.matvec_count())
        }
        Metric::Alignment => {
            let ctx0 = pair.context(&pair.initial)?;
            let ctxf = pair.context(&pair.trained)?;
            let op0 = NtkOperator::new(&ctx0);
            let opf = NtkOperator::new(&ctxf);
            let v = exact_alignment(&op0, &opf)?;
            (v, op0.matvec_count() + opf.matvec_count())
        }
        Metric::EffectiveRank => {
            let ctx = pair.context(&pair.trained)?;
            let op = NtkOperator::new(&ctx);
            (exact_effective_rank(&op)?, op.matvec_count())
        }
    };
    Ok((value, start.elapsed().as_secs_f64(), matvecs))
}

/// Runs the requested metrics, sweeping budgets with repeated seeds; every
/// estimate is a fresh pair of contexts so call counters stay per-run.
pub fn run_metric_experiment(
    spec: &MetricSpec,
    metrics: &[Metric],
) -> Result<MetricExperimentResult> {
    if metrics.is_empty() {
        return Err(HarnessError::Config("no metrics requested".into()));
    }
    if spec.budgets.is_empty() || spec.repeats == 0 {
        return Err(HarnessError::Config(
            "budgets and repeats must be positive".into(),
        ));
    }
    let n = spec.model.state_dim();
    if n > DENSE_CAP && !spec.allow_large_exact {
        return Err(HarnessError::Core(ntk_core::Error::DenseCapExceeded {
            n,
            cap: DENSE_CAP,
        }));
    }

    let (pair, initial_accuracy, train_accuracy) = prepare(spec)?;
    let threads = if spec.threads == 0 {
        auto_threads()
    } else {
        spec.threads
    };

    let mut sweeps = Vec::new();
    for &metric in metrics {
        let (exact_value, exact_wall_s, exact_matvecs) = exact_metric(&pair, metric)?;

        struct Job {
            m: usize,
            seed: u64,
        }
        let mut jobs = Vec::new();
        for &m in &spec.budgets {
            for repeat in 0..spec.repeats {
                jobs.push(Job {
                    m,
                    seed: spec.repeat_seed(metric, m, repeat),
                });
            }
        }
        let outcomes = parallel_map(jobs.len(), threads, |i| -> Result<_> {
            let job = &jobs[i];
            let mut cfg =
                EstimatorConfig::new(job.m, job.seed).with_distribution(spec.distribution);
            cfg.split = spec.split;
            let record = match metric {
                Metric::Norm => {
                    let ctx = pair.context(&pair.trained)?;
                    let op = NtkOperator::new(&ctx);
                    frobenius_norm_sq(&op, &cfg, spec.method)?
                }
                Metric::Alignment => {
                    let ctx0 = pair.context(&pair.initial)?;
                    let ctxf = pair.context(&pair.trained)?;
                    let op0 = NtkOperator::new(&ctx0);
                    let opf = NtkOperator::new(&ctxf);
                    alignment(&op0, &opf, &cfg, spec.method)?
                }
                Metric::EffectiveRank => {
                    let ctx = pair.context(&pair.trained)?;
                    let op = NtkOperator::new(&ctx);
                    effective_rank(&op, &cfg, spec.method)?
                }
            };
            Ok(record)
        });

        let mut rows = Vec::with_capacity(jobs.len());
        for (job, outcome) in jobs.iter().zip(outcomes) {
            let record = outcome?;
            let denom = if spec.normalize_by_exact {
                exact_value.abs()
            } else {
                record.value.abs()
            };
            let rel_error = (exact_value - record.value).abs() / denom;
            rows.push(SweepRow {
                estimator: method_label(spec.method),
                m: job.m,
                seed: job.seed,
                record,
                exact: exact_value,
                rel_error,
            });
        }
        let aggregates = aggregate_rows(&rows);
        sweeps.push((
            metric,
            SweepResult {
                rows,
                aggregates,
                n,
                exact_value,
                exact_wall_s,
                exact_matvecs,
            },
        ));
    }

    Ok(MetricExperimentResult {
        sweeps,
        train_accuracy,
        initial_accuracy,
    })
}

fn method_label(method: MetricMethod) -> &'static str {
    match method {
        MetricMethod::HutchPlusPlus => "hutchpp",
        MetricMethod::OneSidedReverse => "prop1",
        MetricMethod::OneSidedForward => "prop1-fwd",
    }
}

/// Runtime as a percentage of the exact computation, per aggregate cell.
pub fn runtime_percent(result: &SweepResult) -> Vec<(usize, f64)> {
    result
        .aggregates
        .iter()
        .map(|a| {
            let pct = if result.exact_wall_s > 0.0 {
                100.0 * a.wall_median / result.exact_wall_s
            } else {
                f64::NAN
            };
            (a.m, pct)
        })
        .collect()
}

/// Median relative error across one cell; convenience for reports.
pub fn median_error(result: &SweepResult, m: usize) -> Option<f64> {
    let errs: Vec<f64> = result
        .rows
        .iter()
        .filter(|r| r.m == m)
        .map(|r| r.rel_error)
        .collect();
    if errs.is_empty() {
        None
    } else {
        Some(percentile(&errs, 0.5))
    }
}
