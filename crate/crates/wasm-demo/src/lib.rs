//! Interactive browser demo for matrix-free NTK statistics.
//!
//! Three operations are exported to the page:
//! - [`trace_error_sweep_svg`]: sweep the sample budget for all four trace
//!   estimators on a demo model and plot median relative error (with
//!   interquartile bands) against matvec cost.
//! - [`estimate_trace_json`]: run a single estimator once and report the
//!   estimate next to the exact n-pass trace with its audited cost.
//! - [`kernel_drift_json`]: train a small classifier live and track how the
//!   kernel's alignment with initialization, effective rank and norm evolve,
//!   exact versus estimated.
//!
//! Everything is seeded; the same inputs reproduce the same pictures.

mod models;
mod plot;
mod study;

use wasm_bindgen::prelude::wasm_bindgen;

use ntk_core::estimators::{
    hutchinson_trace, hutchpp_trace, one_sided_trace, AdMode, EstimateRecord, EstimatorConfig,
};
use ntk_core::operator::{exact_trace, LinearOperator, NtkOperator};
use ntk_core::rng::derive_seed;
use ntk_core::{JacobianOps, ProbeDistribution};

use models::build_context;
use plot::{log_log_plot, Series};

const ESTIMATORS: [(&str, &str); 4] = [
    ("hutchpp", "#1f77b4"),
    ("hutchinson", "#ff7f0e"),
    ("rhutch", "#2ca02c"),
    ("fhutch", "#d62728"),
];

fn run_estimator(
    ctx: &ntk_core::JacobianContext,
    name: &str,
    cfg: &EstimatorConfig,
) -> Result<EstimateRecord, String> {
    let record = match name {
        "hutchpp" => {
            let op = NtkOperator::new(ctx);
            hutchpp_trace(&op, cfg).map_err(|e| e.to_string())?
        }
        "hutchinson" => {
            let op = NtkOperator::new(ctx);
            hutchinson_trace(&op, cfg).map_err(|e| e.to_string())?
        }
        "rhutch" => one_sided_trace(ctx, AdMode::Reverse, cfg).map_err(|e| e.to_string())?,
        "fhutch" => one_sided_trace(ctx, AdMode::Forward, cfg).map_err(|e| e.to_string())?,
        other => return Err(format!("unknown estimator `{other}`")),
    };
    Ok(record)
}

fn parse_probes(probes: &str) -> Result<ProbeDistribution, String> {
    ProbeDistribution::parse(probes).map_err(|e| e.to_string())
}

fn median_of(mut values: Vec<f64>, p: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let w = rank - lo as f64;
    values[lo] * (1.0 - w) + values[hi] * w
}

/// Budget sweep on a demo model (`mlp` or `gru`): median relative error
/// versus matvec cost for every estimator, as a standalone SVG string.
#[wasm_bindgen]
pub fn trace_error_sweep_svg(
    model: &str,
    budgets_csv: &str,
    repeats: u32,
    seed: u32,
    probes: &str,
    orthogonalize: bool,
) -> Result<String, String> {
    let distribution = parse_probes(probes)?;
    let budgets: Vec<usize> = budgets_csv
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| format!("bad budget `{t}`"))
        })
        .collect::<Result<_, _>>()?;
    if budgets.is_empty() || repeats == 0 {
        return Err("need at least one budget and one repeat".into());
    }
    let ctx = build_context(model, seed as u64)?;
    let op = NtkOperator::new(&ctx);
    let exact = exact_trace(&op).map_err(|e| e.to_string())?;

    let mut series = Vec::new();
    for (name, color) in ESTIMATORS {
        let mut points = Vec::new();
        for &m in &budgets {
            if name == "hutchpp" && m < 3 {
                continue;
            }
            let mut errs = Vec::new();
            let mut costs = Vec::new();
            for rep in 0..repeats {
                let run_seed = derive_seed(
                    derive_seed(seed as u64, m as u64),
                    rep as u64 + 1000 * est_tag(name),
                );
                let cfg = EstimatorConfig::new(m, run_seed)
                    .with_distribution(distribution)
                    .with_orthogonalize(orthogonalize);
                let rec = run_estimator(&ctx, name, &cfg)?;
                errs.push(((exact - rec.value) / rec.value).abs().max(1e-16));
                costs.push(rec.matvec_cost);
            }
            points.push((
                median_of(costs, 0.5),
                median_of(errs.clone(), 0.5),
                median_of(errs.clone(), 0.25),
                median_of(errs, 0.75),
            ));
        }
        series.push(Series {
            label: name.to_string(),
            color,
            points,
        });
    }
    let n = ctx.state_dim();
    log_log_plot(
        &format!("{model} demo (n = {n}): trace error vs cost, {repeats} seeds"),
        "matvec cost",
        "median relative error",
        &series,
    )
    .ok_or_else(|| "nothing to plot".into())
}

fn est_tag(name: &str) -> u64 {
    match name {
        "hutchpp" => 1,
        "hutchinson" => 2,
        "rhutch" => 3,
        _ => 4,
    }
}

/// One estimator run against the exact trace, as a JSON object.
#[wasm_bindgen]
pub fn estimate_trace_json(
    model: &str,
    estimator: &str,
    m: u32,
    seed: u32,
    probes: &str,
) -> Result<String, String> {
    let distribution = parse_probes(probes)?;
    let ctx = build_context(model, seed as u64)?;
    let op = NtkOperator::new(&ctx);
    let exact = exact_trace(&op).map_err(|e| e.to_string())?;
    let exact_matvecs = op.matvec_count();

    let ctx = build_context(model, seed as u64)?; // fresh counters
    let cfg = EstimatorConfig::new(m as usize, derive_seed(seed as u64, 99))
        .with_distribution(distribution);
    let rec = run_estimator(&ctx, estimator, &cfg)?;
    let rel = ((exact - rec.value) / rec.value).abs();
    Ok(format!(
        "{{\"model\":\"{model}\",\"estimator\":\"{estimator}\",\"n\":{},\"m\":{m},\
         \"estimate\":{},\"exact\":{},\"rel_error\":{},\"matvec_cost\":{},\
         \"jvp_calls\":{},\"vjp_calls\":{},\"exact_matvecs\":{}}}",
        ctx.state_dim(),
        rec.value,
        exact,
        rel,
        rec.matvec_cost,
        rec.jvp_calls,
        rec.vjp_calls,
        exact_matvecs,
    ))
}

/// Live training study: kernel alignment with initialization, effective
/// rank and squared norm at several checkpoints, exact versus estimated at
/// budget `m`. Returns a JSON array of checkpoint objects.
#[wasm_bindgen]
pub fn kernel_drift_json(
    steps: u32,
    checkpoints: u32,
    m: u32,
    seed: u32,
) -> Result<String, String> {
    let rows = study::kernel_drift(
        steps as usize,
        checkpoints as usize,
        m as usize,
        seed as u64,
    )?;
    let body: Vec<String> = rows
        .iter()
        .map(|c| {
            format!(
                "{{\"step\":{},\"loss\":{},\"align_exact\":{},\"align_est\":{},\
                 \"effrank_exact\":{},\"effrank_est\":{},\"norm_exact\":{},\"norm_est\":{}}}",
                c.step,
                if c.loss.is_nan() {
                    "null".to_string()
                } else {
                    c.loss.to_string()
                },
                c.align_exact,
                c.align_est,
                c.effrank_exact,
                c.effrank_est,
                c.norm_exact,
                c.norm_est,
            )
        })
        .collect();
    Ok(format!("[{}]", body.join(",")))
}
