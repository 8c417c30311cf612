//! Benchmark harness for matrix-free NTK statistics: named model presets,
//! estimator sweeps with exact baselines, CSV/SVG artifacts, MNIST loading
//! and the classifier training used by the metric study.

pub mod config;
pub mod csvout;
pub mod error;
pub mod metric;
pub mod mnist;
pub mod parallel;
pub mod presets;
pub mod svg;
pub mod sweep;
pub mod train;

pub use error::{HarnessError, Result};
pub use metric::{run_metric_experiment, DataSource, Metric, MetricExperimentResult, MetricSpec};
pub use mnist::{load_mnist, load_mnist_split, synthetic_blobs, MnistDataset, Split};
pub use presets::{preset, ModelData, ModelSpec, PRESET_NAMES};
pub use sweep::{
    run_trace_sweep, speedup_table, ExperimentSpec, SweepResult, TraceEstimator, SPEEDUP_LEVELS,
};
pub use train::{accuracy, train_mnist_mlp, TrainConfig};
