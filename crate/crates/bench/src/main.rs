//! ntk-bench: benchmark CLI for matrix-free NTK statistics.
//!
//! Subcommands: `trace`, `bench`, `norm`, `align`, `effrank`, `train-mnist`.
//! Every flag can also come from a `--config` file of `key = value` lines;
//! explicit flags override the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use ntk_bench::config::{self, ConfigMap};
use ntk_bench::csvout::{emit_csv, emit_speedup_csv, sweep_csv};
use ntk_bench::metric::{runtime_percent, DataSource, Metric, MetricSpec};
use ntk_bench::presets::{preset, PRESET_NAMES};
use ntk_bench::svg::emit_svg;
use ntk_bench::sweep::{speedup_table, ExperimentSpec, TraceEstimator, SPEEDUP_LEVELS};
use ntk_bench::train::TrainConfig;
use ntk_bench::{run_metric_experiment, run_trace_sweep, MetricExperimentResult};
use ntk_core::estimators::{MetricMethod, SKETCH_FRACTION_SIXTH};
use ntk_core::ProbeDistribution;

#[derive(Parser)]
#[command(
    name = "ntk-bench",
    version,
    about = "Matrix-free NTK statistics: randomized trace estimation benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep trace estimators against the exact n-pass trace
    Trace(SweepArgs),
    /// Full comparison: all estimators, speedup table, CSV and SVG artifacts
    Bench(SweepArgs),
    /// Estimate the squared Frobenius norm of the trained kernel
    Norm(MetricArgs),
    /// Alignment between the kernels before and after training
    Align(MetricArgs),
    /// Effective rank (participation ratio) of the trained kernel
    Effrank(MetricArgs),
    /// Train the MNIST classifier and report test accuracy
    TrainMnist(TrainArgs),
}

#[derive(Args, Clone)]
struct SweepArgs {
    /// Key = value config file mirroring these flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family: `mlp` (the deep-MLP benchmark) or `gru`
    #[arg(long)]
    model: Option<String>,
    /// Named preset: mlp-fig2, gru-fig3, mnist-fig4, mlp-tiny, gru-tiny,
    /// mnist-tiny, synth-lowrank, synth-powerlaw
    #[arg(long)]
    preset: Option<String>,
    /// Comma-separated sample budgets, e.g. 24,48,96
    #[arg(long)]
    m: Option<String>,
    /// Seeds per (estimator, budget) cell
    #[arg(long)]
    repeats: Option<usize>,
    /// Master seed; repeat seeds derive from it deterministically
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated estimators: hutchpp, hutchinson, rhutch, fhutch
    #[arg(long)]
    estimator: Option<String>,
    /// Probe distribution: rademacher or gaussian
    #[arg(long)]
    probes: Option<String>,
    /// Sketch fraction in (0,1); `third` and `sixth` are accepted presets
    #[arg(long)]
    split: Option<String>,
    /// Output directory for sweep.csv, speedup.csv and the SVG plot
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run the exact n-matvec baseline even above the dense cap
    #[arg(long)]
    exact: bool,
    /// Allow n-pass and dense oracles above the cap (same gate as --exact)
    #[arg(long)]
    allow_large_exact: bool,
    /// Disable probe orthogonalization in the one-sided estimators
    #[arg(long)]
    no_orthogonalize: bool,
    /// Zero the wall-time column so output bytes are reproducible
    #[arg(long)]
    no_timing: bool,
    /// Normalize relative error by the exact value instead of the estimate
    #[arg(long)]
    normalize_exact: bool,
    /// Worker threads for repeats (0 = all cores)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct MetricArgs {
    #[command(flatten)]
    sweep: SweepArgs,
    /// Metric estimator: hutchpp (robust) or prop1 (one-sided, experimental)
    #[arg(long)]
    method: Option<String>,
    /// AD mode for the prop1 method: reverse or forward
    #[arg(long)]
    ad_mode: Option<String>,
    /// Directory with the four MNIST IDX files
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use the synthetic blob dataset instead of MNIST files
    #[arg(long)]
    synthetic: bool,
    /// Training epochs for the classifier
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Minibatch size
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training examples to draw from the source
    #[arg(long)]
    train_examples: Option<usize>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Classifier preset: mnist-fig4 or mnist-tiny
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    train_examples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write initial/trained parameters (raw little-endian f64) here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Trace(args) => run_sweep_command(args, false),
        Command::Bench(args) => run_sweep_command(args, true),
        Command::Norm(args) => run_metric_command(args, Metric::Norm),
        Command::Align(args) => run_metric_command(args, Metric::Alignment),
        Command::Effrank(args) => run_metric_command(args, Metric::EffectiveRank),
        Command::TrainMnist(args) => run_train_command(args),
    }
}

fn file_map(path: &Option<PathBuf>) -> anyhow::Result<ConfigMap> {
    match path {
        Some(p) => config::load_config(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ConfigMap::new()),
    }
}

fn parse_split(token: &str) -> anyhow::Result<f64> {
    match token {
        "third" => Ok(1.0 / 3.0),
        "sixth" => Ok(SKETCH_FRACTION_SIXTH),
        other => other
            .parse::<f64>()
            .with_context(|| format!("--split expects a fraction in (0,1), got `{other}`")),
    }
}

fn parse_budgets(token: &str) -> anyhow::Result<Vec<usize>> {
    token
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("--m expects integers, got `{t}`"))
        })
        .collect()
}

/// Assembles the sweep spec from defaults, config file and flags (flags win).
fn resolve_sweep(args: &SweepArgs, all_estimators: bool) -> anyhow::Result<ExperimentSpec> {
    let map = file_map(&args.config)?;

    let preset_name = args
        .preset
        .clone()
        .or_else(|| map.get("preset").cloned())
        .or_else(|| {
            args.model
                .clone()
                .or_else(|| map.get("model").cloned())
                .map(|m| match m.as_str() {
                    "mlp" => "mlp-fig2".to_string(),
                    "gru" => "gru-fig3".to_string(),
                    other => other.to_string(),
                })
        })
        .unwrap_or_else(|| "mlp-tiny".to_string());
    let mut model =
        preset(&preset_name).with_context(|| format!("presets: {}", PRESET_NAMES.join(", ")))?;
    apply_model_overrides(&mut model, &map)?;

    let mut spec = ExperimentSpec::new(model);

    let estimator_tokens = args
        .estimator
        .clone()
        .or_else(|| map.get("estimator").cloned());
    spec.estimators = match estimator_tokens {
        Some(tokens) => tokens
            .split(',')
            .map(|t| {
                let t = t.trim();
                if t == "prop1" {
                    bail!(
                        "`prop1` estimates product traces; use it with the norm, \
                         align or effrank subcommands"
                    );
                }
                Ok(TraceEstimator::parse(t)?)
            })
            .collect::<anyhow::Result<Vec<_>>>()?,
        None if all_estimators => TraceEstimator::ALL.to_vec(),
        None => vec![TraceEstimator::HutchPlusPlus],
    };

    if let Some(m) = args.m.clone().or_else(|| map.get("m").cloned()) {
        spec.budgets = parse_budgets(&m)?;
    } else if all_estimators {
        spec.budgets = vec![24, 48, 96, 192, 384];
    }
    if let Some(r) = args.repeats.or(config::get_usize(&map, "repeats")?) {
        spec.repeats = r;
    }
    if let Some(s) = args.seed.or(config::get_u64(&map, "seed")?) {
        spec.master_seed = s;
    }
    if let Some(p) = args.probes.clone().or_else(|| map.get("probes").cloned()) {
        spec.distribution = ProbeDistribution::parse(&p).map_err(anyhow::Error::from)?;
    }
    if let Some(s) = args.split.clone().or_else(|| map.get("split").cloned()) {
        spec.split = Some(parse_split(&s)?);
    }
    spec.orthogonalize =
        !(args.no_orthogonalize || config::get_bool(&map, "no_orthogonalize")?.unwrap_or(false));
    spec.timing = !(args.no_timing || config::get_bool(&map, "no_timing")?.unwrap_or(false));
    spec.allow_large_exact = args.exact
        || args.allow_large_exact
        || config::get_bool(&map, "exact")?.unwrap_or(false)
        || config::get_bool(&map, "allow_large_exact")?.unwrap_or(false);
    spec.normalize_by_exact =
        args.normalize_exact || config::get_bool(&map, "normalize_exact")?.unwrap_or(false);
    if let Some(t) = args.threads.or(config::get_usize(&map, "threads")?) {
        spec.threads = t;
    }
    Ok(spec)
}

/// Model-dimension keys in the config file override the chosen preset, so a
/// file fully describes a custom model without code changes.
fn apply_model_overrides(model: &mut ntk_bench::ModelSpec, map: &ConfigMap) -> anyhow::Result<()> {
    use ntk_bench::ModelSpec;
    match model {
        ModelSpec::Mlp(c) => {
            if let Some(v) = config::get_usize(map, "input_dim")? {
                c.input_dim = v;
            }
            if let Some(v) = config::get_usize(map, "hidden_dim")? {
                c.hidden_dim = v;
            }
            if let Some(v) = config::get_usize(map, "num_layers")? {
                c.num_layers = v;
            }
            if let Some(v) = config::get_usize(map, "output_dim")? {
                c.output_dim = if v == 0 { None } else { Some(v) };
            }
            if let Some(v) = config::get_usize(map, "batch")? {
                c.batch = v;
            }
            if let Some(a) = map.get("activation") {
                c.activation = ntk_core::Activation::parse(a).map_err(anyhow::Error::from)?;
            }
        }
        ModelSpec::Gru(c) => {
            if let Some(v) = config::get_usize(map, "input_dim")? {
                c.input_dim = v;
            }
            if let Some(v) = config::get_usize(map, "hidden_dim")? {
                c.hidden_dim = v;
            }
            if let Some(v) = config::get_usize(map, "timesteps")? {
                c.timesteps = v;
            }
            if let Some(v) = config::get_usize(map, "batch")? {
                c.batch = v;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Serializes the resolved experiment back into the config-file format, so
/// an emitted `experiment.cfg` reproduces the run exactly.
fn experiment_cfg(spec: &ExperimentSpec) -> String {
    use ntk_bench::ModelSpec;
    let mut out = String::from("[model]\n");
    match &spec.model {
        ModelSpec::Mlp(c) => {
            out.push_str("model = mlp\n");
            out.push_str(&format!("input_dim = {}\n", c.input_dim));
            out.push_str(&format!("hidden_dim = {}\n", c.hidden_dim));
            out.push_str(&format!("num_layers = {}\n", c.num_layers));
            out.push_str(&format!("output_dim = {}\n", c.output_dim.unwrap_or(0)));
            out.push_str(&format!("activation = {}\n", c.activation.as_str()));
            out.push_str(&format!("batch = {}\n", c.batch));
        }
        ModelSpec::Gru(c) => {
            out.push_str("model = gru\n");
            out.push_str(&format!("input_dim = {}\n", c.input_dim));
            out.push_str(&format!("hidden_dim = {}\n", c.hidden_dim));
            out.push_str(&format!("timesteps = {}\n", c.timesteps));
            out.push_str(&format!("batch = {}\n", c.batch));
        }
        ModelSpec::SynthLowRank { dim, rank } => {
            out.push_str(&format!(
                "preset = synth-lowrank\n# n = {dim}, rank = {rank}\n"
            ));
        }
        ModelSpec::SynthPowerLaw { dim, exponent } => {
            out.push_str(&format!(
                "preset = synth-powerlaw\n# n = {dim}, exponent = {exponent}\n"
            ));
        }
    }
    out.push_str("\n[experiment]\n");
    out.push_str(&format!(
        "m = {}\n",
        spec.budgets
            .iter()
            .map(|m| m.to_string())
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("repeats = {}\n", spec.repeats));
    out.push_str(&format!("seed = {}\n", spec.master_seed));
    out.push_str(&format!(
        "estimator = {}\n",
        spec.estimators
            .iter()
            .map(|e| e.as_str())
            .collect::<Vec<_>>()
            .join(",")
    ));
    out.push_str(&format!("probes = {}\n", spec.distribution.as_str()));
    if let Some(split) = spec.split {
        out.push_str(&format!("split = {split}\n"));
    }
    if !spec.orthogonalize {
        out.push_str("no_orthogonalize = true\n");
    }
    if !spec.timing {
        out.push_str("no_timing = true\n");
    }
    if spec.allow_large_exact {
        out.push_str("allow_large_exact = true\n");
    }
    if spec.normalize_by_exact {
        out.push_str("normalize_exact = true\n");
    }
    out
}

fn out_dir(args: &SweepArgs, map: &ConfigMap) -> Option<PathBuf> {
    args.out
        .clone()
        .or_else(|| map.get("out").map(PathBuf::from))
}

fn run_sweep_command(args: SweepArgs, bench_mode: bool) -> anyhow::Result<()> {
    let map = file_map(&args.config)?;
    let spec = resolve_sweep(&args, bench_mode)?;
    let out = out_dir(&args, &map);
    // `--out -` streams the CSV to stdout; human-readable lines then go to
    // stderr so the data stays clean.
    let csv_to_stdout = out.as_deref() == Some(Path::new("-"));
    macro_rules! say {
        ($($arg:tt)*) => {
            if csv_to_stdout { eprintln!($($arg)*) } else { println!($($arg)*) }
        };
    }
    eprintln!(
        "model: {} | estimators: {} | budgets: {:?} | repeats: {}",
        spec.model.describe(),
        spec.estimators
            .iter()
            .map(|e| e.as_str())
            .collect::<Vec<_>>()
            .join(","),
        spec.budgets,
        spec.repeats
    );

    let result = run_trace_sweep(&spec)?;
    say!(
        "exact trace = {} ({} matvecs, {:.3}s)",
        result.exact_value,
        result.exact_matvecs,
        result.exact_wall_s
    );
    for agg in &result.aggregates {
        say!(
            "{:>10}  m={:<5} median rel err {:.3e}  [p25 {:.3e}, p75 {:.3e}]  wall {:.4}s",
            agg.estimator,
            agg.m,
            agg.err_median,
            agg.err_p25,
            agg.err_p75,
            agg.wall_median
        );
    }

    let table = speedup_table(&result, &SPEEDUP_LEVELS);
    if bench_mode {
        for row in &table {
            match (row.m, row.speedup) {
                (Some(m), Some(s)) => say!(
                    "{:>10}  reaches {:.0e} accuracy at m={m} with speedup {s:.1}x vs exact",
                    row.estimator,
                    row.accuracy
                ),
                _ => say!(
                    "{:>10}  never reaches {:.0e} within the swept budgets",
                    row.estimator,
                    row.accuracy
                ),
            }
        }
    }

    if csv_to_stdout {
        print!("{}", sweep_csv(&result, spec.timing));
    } else if let Some(dir) = out {
        emit_csv(&result, &dir.join("sweep.csv"), spec.timing)?;
        emit_speedup_csv(&table, result.exact_wall_s, &dir.join("speedup.csv"))?;
        emit_svg(
            &result,
            &dir.join("error_vs_runtime.svg"),
            &format!("trace estimation: {}", spec.model.describe()),
        )?;
        std::fs::write(dir.join("experiment.cfg"), experiment_cfg(&spec))?;
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn resolve_metric(
    args: &MetricArgs,
    metric: Metric,
) -> anyhow::Result<(MetricSpec, Option<PathBuf>)> {
    let map = file_map(&args.sweep.config)?;
    let preset_name = args
        .sweep
        .preset
        .clone()
        .or_else(|| map.get("preset").cloned())
        .unwrap_or_else(|| "mnist-tiny".to_string());
    let model = match preset_name.as_str() {
        "mnist-fig4" => ntk_bench::presets::mnist_benchmark_config(),
        "mnist-tiny" => ntk_bench::presets::mnist_tiny_config(),
        other => bail!(
            "metric experiments run on the classifier presets \
             (mnist-fig4, mnist-tiny); got `{other}`"
        ),
    };

    let mut spec = MetricSpec::new(model);
    let _ = metric;

    let synthetic = args.synthetic || config::get_bool(&map, "synthetic")?.unwrap_or(false);
    let data_dir = args
        .data
        .clone()
        .or_else(|| map.get("data").map(PathBuf::from));
    spec.data = match (synthetic, data_dir) {
        (true, _) | (false, None) => DataSource::Synthetic,
        (false, Some(dir)) => DataSource::Mnist { dir },
    };
    if spec.model.input_dim == 784 {
        if let DataSource::Synthetic = spec.data {
            eprintln!("note: no --data directory given; using the synthetic blob dataset");
        }
    }

    if let Some(m) = args.sweep.m.clone().or_else(|| map.get("m").cloned()) {
        spec.budgets = parse_budgets(&m)?;
    }
    if let Some(r) = args.sweep.repeats.or(config::get_usize(&map, "repeats")?) {
        spec.repeats = r;
    }
    if let Some(s) = args.sweep.seed.or(config::get_u64(&map, "seed")?) {
        spec.master_seed = s;
    }
    if let Some(p) = args
        .sweep
        .probes
        .clone()
        .or_else(|| map.get("probes").cloned())
    {
        spec.distribution = ProbeDistribution::parse(&p).map_err(anyhow::Error::from)?;
    }
    if let Some(s) = args
        .sweep
        .split
        .clone()
        .or_else(|| map.get("split").cloned())
    {
        spec.split = Some(parse_split(&s)?);
    }
    spec.timing = !(args.sweep.no_timing || config::get_bool(&map, "no_timing")?.unwrap_or(false));
    spec.allow_large_exact = args.sweep.exact
        || args.sweep.allow_large_exact
        || config::get_bool(&map, "exact")?.unwrap_or(false)
        || config::get_bool(&map, "allow_large_exact")?.unwrap_or(false);
    spec.normalize_by_exact =
        args.sweep.normalize_exact || config::get_bool(&map, "normalize_exact")?.unwrap_or(false);
    if let Some(t) = args.sweep.threads.or(config::get_usize(&map, "threads")?) {
        spec.threads = t;
    }

    // `--estimator` is accepted as an alias for `--method` on the metric
    // subcommands, so the shared flag vocabulary works everywhere.
    let method_token = args
        .method
        .clone()
        .or_else(|| map.get("method").cloned())
        .or_else(|| args.sweep.estimator.clone())
        .or_else(|| map.get("estimator").cloned())
        .unwrap_or_else(|| "hutchpp".to_string());
    let ad_mode = args
        .ad_mode
        .clone()
        .or_else(|| map.get("ad_mode").cloned())
        .unwrap_or_else(|| "reverse".to_string());
    spec.method = match (method_token.as_str(), ad_mode.as_str()) {
        ("hutchpp", _) => MetricMethod::HutchPlusPlus,
        ("prop1", "reverse") => MetricMethod::OneSidedReverse,
        ("prop1", "forward") => MetricMethod::OneSidedForward,
        (m, a) => bail!(
            "unknown metric method `{m}` / ad mode `{a}` \
             (expected hutchpp or prop1 with reverse|forward)"
        ),
    };

    if let Some(e) = args.epochs.or(config::get_usize(&map, "epochs")?) {
        spec.train.epochs = e;
    }
    if let Some(lr) = args.lr.or(config::get_f64(&map, "lr")?) {
        spec.train.lr = lr;
    }
    if let Some(b) = args.batch_size.or(config::get_usize(&map, "batch_size")?) {
        spec.train.batch_size = b;
    }
    if let Some(t) = args
        .train_examples
        .or(config::get_usize(&map, "train_examples")?)
    {
        spec.train_examples = t;
    }

    Ok((spec, out_dir(&args.sweep, &map)))
}

fn run_metric_command(args: MetricArgs, metric: Metric) -> anyhow::Result<()> {
    let (spec, out) = resolve_metric(&args, metric)?;
    let MetricExperimentResult {
        sweeps,
        train_accuracy,
        initial_accuracy,
    } = run_metric_experiment(&spec, &[metric])?;
    println!(
        "classifier accuracy: {:.3} trained vs {:.3} untrained",
        train_accuracy, initial_accuracy
    );
    for (metric, sweep) in &sweeps {
        println!(
            "exact {} = {} ({} matvecs, {:.3}s)",
            metric.as_str(),
            sweep.exact_value,
            sweep.exact_matvecs,
            sweep.exact_wall_s
        );
        for ((m, pct), agg) in runtime_percent(sweep).iter().zip(&sweep.aggregates) {
            println!(
                "  m={:<5} median rel err {:.3e}  [p25 {:.3e}, p75 {:.3e}]  runtime {:.1}% of exact",
                m, agg.err_median, agg.err_p25, agg.err_p75, pct
            );
        }
        if let Some(dir) = &out {
            emit_csv(
                sweep,
                &dir.join(format!("{}.csv", metric.as_str())),
                spec.timing,
            )?;
            emit_svg(
                sweep,
                &dir.join(format!("{}_error_vs_runtime.svg", metric.as_str())),
                &format!("{} estimation", metric.as_str()),
            )?;
        }
    }
    if let Some(dir) = out {
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

fn run_train_command(args: TrainArgs) -> anyhow::Result<()> {
    let map = file_map(&args.config)?;
    let preset_name = args
        .preset
        .clone()
        .or_else(|| map.get("preset").cloned())
        .unwrap_or_else(|| "mnist-tiny".to_string());
    let model = match preset_name.as_str() {
        "mnist-fig4" => ntk_bench::presets::mnist_benchmark_config(),
        "mnist-tiny" => ntk_bench::presets::mnist_tiny_config(),
        other => bail!("train-mnist expects mnist-fig4 or mnist-tiny, got `{other}`"),
    };

    let synthetic = args.synthetic || config::get_bool(&map, "synthetic")?.unwrap_or(false);
    let data_dir = args
        .data
        .clone()
        .or_else(|| map.get("data").map(PathBuf::from));
    let train_examples = args
        .train_examples
        .or(config::get_usize(&map, "train_examples")?)
        .unwrap_or(0);

    let (train_set, test_set) = match (synthetic, data_dir) {
        (false, Some(dir)) => {
            let train = ntk_bench::load_mnist_split(&dir, ntk_bench::Split::Train)?;
            let test = ntk_bench::load_mnist_split(&dir, ntk_bench::Split::Test)?;
            let train = if train_examples > 0 {
                train.take(train_examples)
            } else {
                train
            };
            (train, test.take(model.batch))
        }
        (false, None) => {
            bail!(
                "no dataset: pass --data <dir> with the IDX files \
                 (scripts/fetch_mnist.sh downloads them) or --synthetic"
            );
        }
        (true, _) => {
            let classes = model.output_dim.unwrap_or(10);
            let seed = args.seed.or(config::get_u64(&map, "seed")?).unwrap_or(0);
            let n_train = if train_examples > 0 {
                train_examples
            } else {
                600
            };
            ntk_bench::mnist::synthetic_blob_split(
                n_train,
                model.batch,
                model.input_dim,
                classes,
                seed,
            )
        }
    };

    let opts = TrainConfig {
        epochs: args
            .epochs
            .or(config::get_usize(&map, "epochs")?)
            .unwrap_or(3),
        lr: args.lr.or(config::get_f64(&map, "lr")?).unwrap_or(0.5),
        batch_size: args
            .batch_size
            .or(config::get_usize(&map, "batch_size")?)
            .unwrap_or(64),
        seed: args.seed.or(config::get_u64(&map, "seed")?).unwrap_or(0),
    };
    eprintln!(
        "training {} on {} examples ({} epochs, lr {}, batch {})",
        preset_name,
        train_set.len(),
        opts.epochs,
        opts.lr,
        opts.batch_size
    );
    let (initial, trained, report) = ntk_bench::train_mnist_mlp(&model, &train_set, &opts)?;
    let acc0 = ntk_bench::accuracy(&model, &initial, &test_set)?;
    let acc1 = ntk_bench::accuracy(&model, &trained, &test_set)?;
    println!("final minibatch loss: {:.6}", report.final_loss);
    println!("test accuracy: {:.4} (untrained {:.4})", acc1, acc0);

    if let Some(dir) = args
        .out
        .clone()
        .or_else(|| map.get("out").map(PathBuf::from))
    {
        std::fs::create_dir_all(&dir)?;
        write_params(&dir.join("params_initial.f64le"), &initial.data)?;
        write_params(&dir.join("params_trained.f64le"), &trained.data)?;
        let manifest: String = trained
            .manifest
            .entries
            .iter()
            .map(|e| format!("{} {:?} offset {}\n", e.name, e.shape, e.offset))
            .collect();
        std::fs::write(dir.join("params_manifest.txt"), manifest)?;
        println!("parameters written to {}", dir.display());
    }
    Ok(())
}

fn write_params(path: &Path, data: &[f64]) -> anyhow::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 8);
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
