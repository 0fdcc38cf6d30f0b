//! Static SVG line chart of per-iteration trend rows: mean similarity on the
//! left panel, mean contradiction on the right.

use std::fmt::Write;

use cfinception::dvp::TrendRow;

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 44.0;

fn panel(svg: &mut String, x0: f64, title: &str, colour: &str, points: &[(usize, f64)]) {
    let (lo, hi) = points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, v)| (lo.min(v), hi.max(v)));
    // flat series still get a visible band
    let (lo, hi) = if hi - lo < 1e-9 { (lo - 0.05, hi + 0.05) } else { (lo, hi) };
    let first = points.first().map_or(1, |p| p.0) as f64;
    let last = points.last().map_or(1, |p| p.0) as f64;
    let span = (last - first).max(1.0);
    let px = |i: usize| x0 + MARGIN + (i as f64 - first) / span * (PANEL_W - 2.0 * MARGIN);
    let py = |v: f64| PANEL_H - MARGIN - (v - lo) / (hi - lo) * (PANEL_H - 2.0 * MARGIN);

    let _ = writeln!(svg, r#"<rect x="{x0}" y="0" width="{PANEL_W}" height="{PANEL_H}" fill="white" stroke="gray"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, x0 + PANEL_W / 2.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{hi:.3}</text>"#, x0 + 4.0, py(hi) + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="11">{lo:.3}</text>"#, x0 + 4.0, py(lo) + 4.0);
    let path: Vec<String> = points.iter().map(|&(i, v)| format!("{:.1},{:.1}", px(i), py(v))).collect();
    let _ = writeln!(svg, r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#, path.join(" "));
    for &(i, v) in points {
        let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, px(i), py(v));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{}" font-size="11" text-anchor="middle">{i}</text>"#,
            px(i),
            PANEL_H - MARGIN / 2.0
        );
    }
}

pub fn trend_svg(rows: &[TrendRow]) -> String {
    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{PANEL_H}" font-family="sans-serif" font-size="13">"#,
        2.0 * PANEL_W
    );
    svg.push('\n');
    let visual: Vec<(usize, f64)> = rows.iter().map(|r| (r.iteration, r.mean_visual)).collect();
    let contradiction: Vec<(usize, f64)> = rows.iter().map(|r| (r.iteration, r.mean_contradiction)).collect();
    panel(&mut svg, 0.0, "mean image-text similarity", "#1f77b4", &visual);
    panel(&mut svg, PANEL_W, "mean contradiction", "#d62728", &contradiction);
    svg.push_str("</svg>\n");
    svg
}
