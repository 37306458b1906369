//! Minimal static SVG charts.

use std::fmt::Write as _;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
            (l.min(v), h.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Line chart of named series over a shared x axis.
pub fn line_chart(title: &str, x: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let mut svg = header(title);
    let (x0, x1) = range(x.iter().copied());
    let (y0, y1) = range(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{t}\">{x0}</text><text x=\"{r}\" y=\"{t}\" text-anchor=\"end\">{x1}</text>\n\
         <text x=\"{l}\" y=\"{b}\" text-anchor=\"end\">{y0:.4}</text><text x=\"{l}\" y=\"{MARGIN}\" text-anchor=\"end\">{y1:.4}</text>",
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = HEIGHT - MARGIN + 16.0,
        l = MARGIN - 4.0,
    );
    for (i, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = x
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&xv, &yv)| format!("{:.2},{:.2}", px(xv), py(yv)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            pts.join(" "),
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * i as f64,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Horizontal bars for values in `[0, 1]`.
pub fn bar_chart(title: &str, bars: &[(&str, f64)]) -> String {
    let mut svg = header(title);
    let row = (HEIGHT - 2.0 * MARGIN) / bars.len().max(1) as f64;
    let full = WIDTH - 3.0 * MARGIN;
    for (i, (name, v)) in bars.iter().enumerate() {
        let y = MARGIN + row * i as f64;
        let w = v.clamp(0.0, 1.0) * full;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>\n\
             <rect x=\"{}\" y=\"{:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n\
             <text x=\"{:.2}\" y=\"{:.2}\">{v:.4}</text>",
            1.5 * MARGIN - 4.0,
            y + row * 0.6,
            escape(name),
            1.5 * MARGIN,
            y + row * 0.15,
            row * 0.7,
            COLORS[i % COLORS.len()],
            1.5 * MARGIN + w + 4.0,
            y + row * 0.6,
        );
    }
    svg.push_str("</svg>\n");
    svg
}
