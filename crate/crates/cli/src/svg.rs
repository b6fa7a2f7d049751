//! Minimal standalone SVG line plots for loss trajectories.
//!
//! Hand-written markup, no plotting dependency. Output contains no
//! timestamps, so identical data renders identical bytes.

pub struct Series<'a> {
    pub label: &'a str,
    /// (x, y) points, already in data coordinates.
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 48.0;

/// Renders a line plot of the series. Returns the full SVG document.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
        ymin = 0.0;
        ymax = 1.0;
    }
    if (xmax - xmin).abs() < 1e-30 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-30 {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - xmin) / (xmax - xmin) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - ymin) / (ymax - ymin) * (H - 2.0 * MARGIN);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>\n",
        W / 2.0,
        escape(title)
    ));
    // Axes.
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
        W / 2.0,
        H - 10.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {})\">{}</text>\n",
        H / 2.0,
        H / 2.0,
        escape(y_label)
    ));
    // Extremal tick labels.
    for (v, x, y, anchor) in [
        (xmin, sx(xmin), H - MARGIN + 16.0, "middle"),
        (xmax, sx(xmax), H - MARGIN + 16.0, "middle"),
        (ymin, MARGIN - 6.0, sy(ymin) + 4.0, "end"),
        (ymax, MARGIN - 6.0, sy(ymax) + 4.0, "end"),
    ] {
        out.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{v:.4}</text>\n"
        ));
    }
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        let ly = MARGIN + 16.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            W - MARGIN - 110.0,
            W - MARGIN - 90.0
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            W - MARGIN - 84.0,
            ly + 4.0,
            escape(s.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
