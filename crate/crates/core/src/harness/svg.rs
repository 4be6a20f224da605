//! Minimal deterministic SVG charts: bars for the trained policy, a polyline
//! for the analytic target, one panel per run.

use std::fmt::Write;

pub struct Panel {
    pub label: String,
    pub bars: Vec<f64>,
    pub line: Vec<f64>,
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 140.0;
const MARGIN_LEFT: f64 = 48.0;
const MARGIN_RIGHT: f64 = 12.0;
const TITLE_HEIGHT: f64 = 36.0;
const PANEL_GAP: f64 = 28.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn chart(title: &str, panels: &[Panel]) -> String {
    let height = TITLE_HEIGHT + panels.len() as f64 * (PANEL_HEIGHT + PANEL_GAP) + 8.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN_LEFT}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        out,
        r##"<text x="{}" y="20" text-anchor="end"><tspan fill="#4c78a8">■ trained</tspan> <tspan fill="#e45756">— target</tspan></text>"##,
        WIDTH - MARGIN_RIGHT
    );
    for (k, panel) in panels.iter().enumerate() {
        let top = TITLE_HEIGHT + k as f64 * (PANEL_HEIGHT + PANEL_GAP) + 14.0;
        draw_panel(&mut out, panel, top);
    }
    out.push_str("</svg>\n");
    out
}

fn draw_panel(out: &mut String, panel: &Panel, top: f64) {
    let n = panel.bars.len().max(panel.line.len()).max(1);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let bottom = top + PANEL_HEIGHT;
    let peak = panel
        .bars
        .iter()
        .chain(&panel.line)
        .copied()
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-12);
    let x_of = |i: usize| MARGIN_LEFT + (i as f64 + 0.5) * plot_w / n as f64;
    let y_of = |v: f64| bottom - (v / peak) * PANEL_HEIGHT;

    let _ = writeln!(out, r#"<text x="{MARGIN_LEFT}" y="{:.1}">{}</text>"#, top - 4.0, escape(&panel.label));
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN_LEFT:.1},{top:.1} V{bottom:.1} H{:.1}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN_RIGHT
    );
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{peak:.3}</text>"#, MARGIN_LEFT - 4.0, top + 8.0);
    let _ = writeln!(out, r#"<text x="{:.1}" y="{bottom:.1}" text-anchor="end">0</text>"#, MARGIN_LEFT - 4.0);
    for tick in (0..n).step_by((n / 10).max(1)) {
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="9">{tick}</text>"#, x_of(tick), bottom + 11.0);
    }

    let bar_w = (plot_w / n as f64 * 0.8).max(0.5);
    for (i, &v) in panel.bars.iter().enumerate() {
        if !(v.is_finite() && v > 0.0) {
            continue;
        }
        let y = y_of(v);
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{y:.2}" width="{bar_w:.2}" height="{:.2}" fill="#4c78a8"/>"##,
            x_of(i) - bar_w / 2.0,
            bottom - y
        );
    }
    if !panel.line.is_empty() {
        let points: Vec<String> = panel
            .line
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), y_of(if v.is_finite() { v } else { 0.0 })))
            .collect();
        let _ = writeln!(
            out,
            r##"<polyline points="{}" fill="none" stroke="#e45756" stroke-width="1.5"/>"##,
            points.join(" ")
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let panels = vec![Panel { label: "β = 0.1 <x>".into(), bars: vec![0.2, 0.5, 0.3], line: vec![0.25, 0.5, 0.25] }];
        let a = chart("demo & test", &panels);
        assert_eq!(a, chart("demo & test", &panels));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("demo &amp; test") && a.contains("&lt;x&gt;"));
        assert_eq!(a.matches("<rect").count(), 4);
    }
}
