//! Minimal self-contained SVG charts for grids and curves.

use std::fmt::Write;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// White-to-blue ramp on [0, 1].
fn ramp(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(255.0, 8.0), lerp(255.0, 69.0), lerp(255.0, 148.0))
}

/// Heatmap with one row per label in `rows` and one column per label in
/// `cols`; `None` cells are drawn grey and marked NA.
pub fn heatmap(title: &str, rows: &[String], cols: &[String], cells: &[Vec<Option<f64>>]) -> String {
    let cell = 28.0;
    let left = 8.0 + 7.0 * rows.iter().map(|r| r.len()).max().unwrap_or(4) as f64;
    let top = 40.0 + 6.0 * cols.iter().map(|c| c.len()).max().unwrap_or(4) as f64;
    let width = left + cell * cols.len() as f64 + 20.0;
    let height = top + cell * rows.len() as f64 + 20.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" {FONT}>"
    );
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"8\" y=\"18\" font-size=\"14\">{}</text>", escape(title));
    for (j, c) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text transform=\"translate({x:.1},{:.1}) rotate(-60)\">{}</text>",
            top - 4.0,
            escape(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            left - 4.0,
            y + cell * 0.65,
            escape(r)
        );
        for (j, v) in cells[i].iter().enumerate() {
            let x = left + cell * j as f64;
            let (fill, label) = match v {
                Some(p) => (ramp(*p), format!("{:.0}", 100.0 * p)),
                None => ("#bbbbbb".to_string(), "NA".to_string()),
            };
            let ink = if v.is_some_and(|p| p > 0.6) { "white" } else { "black" };
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"{fill}\" stroke=\"#dddddd\"/>"
            );
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"9\" fill=\"{ink}\">{label}</text>",
                x + cell / 2.0,
                y + cell * 0.62
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// One line of a chart; `band` is the half-width of the ribbon at each point.
pub struct Series {
    pub label: String,
    pub y: Vec<f64>,
    pub band: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Line chart over categorical x positions with optional ribbons.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, x: &[String], series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (l, r, t, b) = (80.0, 160.0, 40.0, 50.0);
    let pw = w - l - r;
    let ph = h - t - b;
    let values = series.iter().flat_map(|s| {
        s.y.iter()
            .zip(&s.band)
            .flat_map(|(y, e)| [y - e, y + e])
            .filter(|v| v.is_finite())
    });
    let (mut lo, mut hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo <= 0.0 {
        hi = lo + 1.0;
    }
    let n = x.len().max(1);
    let px = |i: usize| l + if n == 1 { pw / 2.0 } else { pw * i as f64 / (n - 1) as f64 };
    let py = |v: f64| t + ph * (1.0 - (v - lo) / (hi - lo));

    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" {FONT}>");
    let _ = writeln!(s, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{l}\" y=\"22\" font-size=\"14\">{}</text>", escape(title));
    let _ = writeln!(
        s,
        "<rect x=\"{l}\" y=\"{t}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444444\"/>"
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            l - 6.0,
            py(v) + 4.0,
            format_tick(v)
        );
    }
    for (i, label) in x.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            px(i),
            t + ph + 16.0,
            escape(label)
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
        l + pw / 2.0,
        h - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text transform=\"translate(16,{:.1}) rotate(-90)\" text-anchor=\"middle\">{}</text>",
        t + ph / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(usize, f64, f64)> = ser
            .y
            .iter()
            .zip(&ser.band)
            .enumerate()
            .filter(|(_, (y, _))| y.is_finite())
            .map(|(i, (y, e))| (i, *y, if e.is_finite() { *e } else { 0.0 }))
            .collect();
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper = pts.iter().map(|&(i, y, e)| format!("{:.1},{:.1}", px(i), py(y + e)));
            let lower = pts.iter().rev().map(|&(i, y, e)| format!("{:.1},{:.1}", px(i), py(y - e)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                s,
                "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
                poly.join(" ")
            );
        }
        let line: Vec<String> = pts.iter().map(|&(i, y, _)| format!("{:.1},{:.1}", px(i), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            line.join(" ")
        );
        let ly = t + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            l + pw + 10.0,
            l + pw + 30.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            l + pw + 36.0,
            ly + 4.0,
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}
