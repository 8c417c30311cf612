//! Static SVG plots: log-log error-versus-runtime curves with interquartile
//! bands, one curve per estimator. No script content, just shapes.

use std::path::Path;

use crate::error::{HarnessError, Result};
use crate::sweep::{SweepAggregate, SweepResult};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [(&str, &str); 6] = [
    ("hutchpp", "#1f77b4"),
    ("hutchinson", "#ff7f0e"),
    ("rhutch", "#2ca02c"),
    ("fhutch", "#d62728"),
    ("prop1", "#9467bd"),
    ("prop1-fwd", "#8c564b"),
];

fn color_for(estimator: &str) -> &'static str {
    PALETTE
        .iter()
        .find(|(name, _)| *name == estimator)
        .map(|(_, c)| *c)
        .unwrap_or("#7f7f7f")
}

struct LogAxis {
    min: f64,
    max: f64,
}

impl LogAxis {
    fn from_values(values: impl Iterator<Item = f64>) -> Option<LogAxis> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values.filter(|v| v.is_finite() && *v > 0.0) {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return None;
        }
        if min == max {
            min /= 10.0;
            max *= 10.0;
        }
        Some(LogAxis {
            min: min.log10().floor(),
            max: max.log10().ceil(),
        })
    }

    fn frac(&self, v: f64) -> f64 {
        let lv = v.max(1e-300).log10();
        ((lv - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Picks the x-coordinate of an aggregate: median wall time when the sweep
/// was timed, otherwise the matvec cost.
fn x_value(a: &SweepAggregate, use_cost: bool) -> f64 {
    if use_cost {
        a.cost_median
    } else {
        a.wall_median
    }
}

/// Renders the plot; `None` when there is nothing positive to draw.
pub fn error_vs_runtime_svg(result: &SweepResult, title: &str) -> Option<String> {
    if result.aggregates.is_empty() {
        return None;
    }
    // Fall back to cost on the x-axis when timing was disabled.
    let use_cost = result.aggregates.iter().all(|a| a.wall_median <= 0.0);
    let x_axis = LogAxis::from_values(result.aggregates.iter().map(|a| x_value(a, use_cost)))?;
    let y_axis = LogAxis::from_values(
        result
            .aggregates
            .iter()
            .flat_map(|a| [a.err_p25, a.err_median, a.err_p75].into_iter()),
    )?;

    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |v: f64| MARGIN_L + x_axis.frac(v) * plot_w;
    let sy = |v: f64| MARGIN_T + (1.0 - y_axis.frac(v)) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        MARGIN_L + plot_w / 2.0,
        xml_escape(title)
    ));

    // Gridlines and tick labels at decades.
    for decade in (x_axis.min as i64)..=(x_axis.max as i64) {
        let v = 10f64.powi(decade as i32);
        let x = sx(v);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{MARGIN_T}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{decade}</text>\n",
            MARGIN_T + plot_h + 18.0
        ));
    }
    for decade in (y_axis.min as i64)..=(y_axis.max as i64) {
        let v = 10f64.powi(decade as i32);
        let y = sy(v);
        svg.push_str(&format!(
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n",
            MARGIN_L + plot_w
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{decade}</text>\n",
            MARGIN_L - 8.0,
            y + 4.0
        ));
    }
    let x_label = if use_cost {
        "matvec cost"
    } else {
        "median wall time (s)"
    };
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n",
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">median relative error</text>\n",
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    ));

    // One band + line per estimator, points ordered by budget.
    let mut estimators: Vec<&str> = Vec::new();
    for a in &result.aggregates {
        if !estimators.contains(&a.estimator) {
            estimators.push(a.estimator);
        }
    }
    for (rank, est) in estimators.iter().enumerate() {
        let mut points: Vec<&SweepAggregate> = result
            .aggregates
            .iter()
            .filter(|a| a.estimator == *est)
            .collect();
        points.sort_by_key(|a| a.m);
        let color = color_for(est);

        let usable: Vec<&&SweepAggregate> = points
            .iter()
            .filter(|a| x_value(a, use_cost) > 0.0)
            .collect();
        if usable.len() >= 2 {
            let mut band = String::new();
            for a in &usable {
                band.push_str(&format!(
                    "{:.1},{:.1} ",
                    sx(x_value(a, use_cost)),
                    sy(a.err_p75.max(1e-300))
                ));
            }
            for a in usable.iter().rev() {
                band.push_str(&format!(
                    "{:.1},{:.1} ",
                    sx(x_value(a, use_cost)),
                    sy(a.err_p25.max(1e-300))
                ));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"none\"/>\n",
                band.trim_end()
            ));
        }

        let mut line = String::new();
        for a in &usable {
            line.push_str(&format!(
                "{:.1},{:.1} ",
                sx(x_value(a, use_cost)),
                sy(a.err_median.max(1e-300))
            ));
        }
        if !line.is_empty() {
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                line.trim_end()
            ));
        }
        for a in &usable {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x_value(a, use_cost)),
                sy(a.err_median.max(1e-300))
            ));
        }

        let ly = MARGIN_T + 16.0 * rank as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"12\" height=\"12\" fill=\"{color}\"/>\n",
            WIDTH - MARGIN_R + 16.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{est}</text>\n",
            WIDTH - MARGIN_R + 34.0,
            ly + 10.0
        ));
    }

    // Exact baseline marker when timing is available.
    if !use_cost && result.exact_wall_s > 0.0 {
        let x = sx(result.exact_wall_s);
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{MARGIN_T}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#444444\" stroke-dasharray=\"5,4\"/>\n",
            MARGIN_T + plot_h
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" fill=\"#444444\">exact</text>\n",
            x + 4.0,
            MARGIN_T + 12.0
        ));
    }

    svg.push_str("</svg>\n");
    Some(svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn emit_svg(result: &SweepResult, path: &Path, title: &str) -> Result<()> {
    let svg = error_vs_runtime_svg(result, title)
        .ok_or_else(|| HarnessError::Empty("sweep has no positive data to plot".into()))?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
