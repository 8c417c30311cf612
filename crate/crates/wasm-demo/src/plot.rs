//! Minimal SVG line plots for the demo page: log-log curves with
//! interquartile bands, no script content.

pub struct Series {
    pub label: String,
    pub color: &'static str,
    /// (x, median, p25, p75) points, x ascending.
    pub points: Vec<(f64, f64, f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 130.0;
const MT: f64 = 34.0;
const MB: f64 = 48.0;

fn log_bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite() && *v > 0.0) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return None;
    }
    if lo == hi {
        lo /= 10.0;
        hi *= 10.0;
    }
    Some((lo.log10().floor(), hi.log10().ceil()))
}

pub fn log_log_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
) -> Option<String> {
    let (x_lo, x_hi) = log_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)))?;
    let (y_lo, y_hi) = log_bounds(
        series
            .iter()
            .flat_map(|s| s.points.iter().flat_map(|p| [p.1, p.2, p.3].into_iter())),
    )?;
    let pw = W - ML - MR;
    let ph = H - MT - MB;
    let sx = |v: f64| ML + (v.max(1e-300).log10() - x_lo) / (x_hi - x_lo) * pw;
    let sy = |v: f64| MT + (1.0 - (v.max(1e-300).log10() - y_lo) / (y_hi - y_lo)) * ph;

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"#fcfcfc\"/>\n\
         <text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        ML + pw / 2.0,
        escape(title)
    );
    for d in (x_lo as i64)..=(x_hi as i64) {
        let x = sx(10f64.powi(d as i32));
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{MT}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#e3e3e3\"/>\n\
             <text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">1e{d}</text>\n",
            MT + ph,
            MT + ph + 16.0
        ));
    }
    for d in (y_lo as i64)..=(y_hi as i64) {
        let y = sy(10f64.powi(d as i32));
        svg.push_str(&format!(
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#e3e3e3\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">1e{d}</text>\n",
            ML + pw,
            ML - 6.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.0}\" y=\"{:.0}\" text-anchor=\"middle\">{}</text>\n",
        ML + pw / 2.0,
        H - 10.0,
        escape(x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{:.0}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.0})\">{}</text>\n",
        MT + ph / 2.0,
        MT + ph / 2.0,
        escape(y_label)
    ));

    for (rank, s) in series.iter().enumerate() {
        if s.points.len() >= 2 {
            let mut band = String::new();
            for &(x, _, _, p75) in &s.points {
                band.push_str(&format!("{:.1},{:.1} ", sx(x), sy(p75)));
            }
            for &(x, _, p25, _) in s.points.iter().rev() {
                band.push_str(&format!("{:.1},{:.1} ", sx(x), sy(p25)));
            }
            svg.push_str(&format!(
                "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.15\"/>\n",
                band.trim_end(),
                s.color
            ));
        }
        let line: String = s
            .points
            .iter()
            .map(|&(x, med, _, _)| format!("{:.1},{:.1} ", sx(x), sy(med)))
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            line.trim_end(),
            s.color
        ));
        for &(x, med, _, _) in &s.points {
            svg.push_str(&format!(
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{}\"/>\n",
                sx(x),
                sy(med),
                s.color
            ));
        }
        let ly = MT + 16.0 * rank as f64;
        svg.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{ly:.1}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
            W - MR + 14.0,
            s.color,
            W - MR + 32.0,
            ly + 10.0,
            escape(&s.label)
        ));
    }
    svg.push_str("</svg>\n");
    Some(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
