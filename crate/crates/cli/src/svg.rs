//! Minimal line-chart rendering: one panel per metric, one polyline per run.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 280.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

pub struct Panel<'a> {
    title: &'a str,
    series: Vec<(&'a str, Vec<(f64, f64)>)>,
}

impl<'a> Panel<'a> {
    pub fn new(title: &'a str, series: Vec<(&'a str, Vec<(f64, f64)>)>) -> Self {
        Panel { title, series }
    }
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let pts = panel.series.iter().flat_map(|(_, s)| s.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    (x0, x1, y0.min(0.0), y1)
}

pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL_H}" font-family="sans-serif" font-size="11">"#
    );
    for (k, panel) in panels.iter().enumerate() {
        let ox = k as f64 * PANEL_W;
        let (x0, x1, y0, y1) = bounds(panel);
        let (pw, ph) = (PANEL_W - 2.0 * MARGIN, PANEL_H - 2.0 * MARGIN);
        let px = |x: f64| ox + MARGIN + (x - x0) / (x1 - x0) * pw;
        let py = |y: f64| MARGIN + ph - (y - y0) / (y1 - y0) * ph;

        let _ = writeln!(
            s,
            r##"<rect x="{}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##,
            ox + MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
            ox + PANEL_W / 2.0,
            MARGIN - 16.0,
            panel.title
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#,
            ox + MARGIN - 4.0,
            MARGIN + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#,
            ox + MARGIN - 4.0,
            MARGIN + ph
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{x0}</text>"#, ox + MARGIN, MARGIN + ph + 14.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">epoch {x1}</text>"#,
            ox + MARGIN + pw,
            MARGIN + ph + 14.0
        );

        for (i, (name, pts)) in panel.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
            let ly = MARGIN + 14.0 + 14.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{name}</text>"#,
                ox + MARGIN + pw - 6.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
