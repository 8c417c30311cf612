//! CSV artifacts. One row per (estimator, m, seed); UTF-8, LF endings,
//! `.` decimal separator. Floats use Rust's shortest round-trip formatting,
//! so identical values always produce identical bytes.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::sweep::{SpeedupRow, SweepResult};

pub const CSV_HEADER: &str =
    "estimator,m,seed,estimate,exact,rel_error,matvec_cost,jvp_calls,vjp_calls,wall_time_s";

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x}")
    }
}

/// Renders the per-run rows. With `timing` off the wall-time column is
/// written as zero, making the bytes a pure function of spec and seed.
pub fn sweep_csv(result: &SweepResult, timing: bool) -> String {
    let mut out = String::with_capacity(64 * (result.rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in &result.rows {
        let wall = if timing { row.record.wall_time_s } else { 0.0 };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            row.estimator,
            row.m,
            row.seed,
            fmt_f64(row.record.value),
            fmt_f64(row.exact),
            fmt_f64(row.rel_error),
            fmt_f64(row.record.matvec_cost),
            row.record.jvp_calls,
            row.record.vjp_calls,
            fmt_f64(wall),
        ));
    }
    out
}

pub fn emit_csv(result: &SweepResult, path: &Path, timing: bool) -> Result<()> {
    if result.rows.is_empty() {
        return Err(HarnessError::Empty("sweep produced no rows".into()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, sweep_csv(result, timing))?;
    Ok(())
}

/// Summary of speedup-versus-accuracy: which budget first reaches each
/// accuracy level and the wall-time ratio against the exact baseline.
pub fn speedup_csv(rows: &[SpeedupRow], exact_wall_s: f64) -> String {
    let mut out = String::from("estimator,accuracy,m,median_wall_s,speedup_vs_exact\n");
    for r in rows {
        let (m, wall, speedup) = match (r.m, r.speedup) {
            (Some(m), Some(s)) => (m.to_string(), fmt_f64(exact_wall_s / s), fmt_f64(s)),
            (Some(m), None) => (m.to_string(), String::new(), String::new()),
            _ => (String::new(), String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.estimator,
            fmt_f64(r.accuracy),
            m,
            wall,
            speedup
        ));
    }
    out
}

pub fn emit_speedup_csv(rows: &[SpeedupRow], exact_wall_s: f64, path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(HarnessError::Empty("no speedup rows".into()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, speedup_csv(rows, exact_wall_s))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::ModelSpec;
    use crate::sweep::{run_trace_sweep, ExperimentSpec, TraceEstimator};

    fn tiny_result() -> SweepResult {
        let mut spec = ExperimentSpec::new(ModelSpec::SynthLowRank { dim: 16, rank: 2 });
        spec.estimators = vec![TraceEstimator::HutchPlusPlus];
        spec.budgets = vec![7];
        spec.repeats = 1;
        spec.threads = 1;
        run_trace_sweep(&spec).unwrap()
    }

    #[test]
    fn single_point_sweep_is_header_plus_one_row() {
        let csv = sweep_csv(&tiny_result(), false);
        let lines: Vec<&str> = csv.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("hutchpp,7,"));
        assert!(
            lines[1].ends_with(",0"),
            "timing off zeroes the wall column"
        );
    }

    #[test]
    fn empty_result_is_refused() {
        let mut result = tiny_result();
        result.rows.clear();
        let err = emit_csv(&result, Path::new("/tmp/should-not-exist.csv"), true);
        assert!(matches!(err, Err(HarnessError::Empty(_))));
    }

    #[test]
    fn csv_bytes_are_deterministic_without_timing() {
        let a = sweep_csv(&tiny_result(), false);
        let b = sweep_csv(&tiny_result(), false);
        assert_eq!(a.as_bytes(), b.as_bytes());
    }
}
