//! Accuracy-vs-round figure as plain SVG text.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::metrics::MetricRow;
use crate::error::{Error, Result};

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// One curve per `(framework, arch)`: the cohort mean accuracy by round.
pub fn curves(rows: &[MetricRow]) -> Result<BTreeMap<(String, String), Vec<(usize, f64)>>> {
    let mut out: BTreeMap<(String, String), Vec<(usize, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.is_cohort_accuracy()) {
        out.entry((r.framework.clone(), r.arch.clone())).or_default().push((r.round, r.value));
    }
    if out.is_empty() {
        return Err(Error::Comparison("no cohort accuracy rows to plot".into()));
    }
    for points in out.values_mut() {
        points.sort_by_key(|p| p.0);
    }
    Ok(out)
}

pub fn plot_svg(rows: &[MetricRow]) -> Result<String> {
    let curves = curves(rows)?;
    let max_round = curves.values().flatten().map(|p| p.0).max().unwrap_or(1).max(1);
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let x = |r: usize| LEFT + pw * r as f64 / max_round as f64;
    let y = |v: f64| TOP + ph * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            y(v) + 4.0,
            y = y(v)
        )
        .unwrap();
    }
    let step = (max_round as f64 / 5.0).ceil().max(1.0) as usize;
    for r in (0..=max_round).step_by(step) {
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0,
            x = x(r)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">Communication round</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">Test accuracy</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    )
    .unwrap();

    for (k, ((framework, arch), points)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = points.iter().map(|&(r, v)| format!("{:.2},{:.2}", x(r), y(v))).collect();
        writeln!(
            s,
            r#"<polyline class="curve" data-framework="{framework}" data-arch="{arch}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        let ly = TOP + 10.0 + 20.0 * k as f64;
        let lx = LEFT + pw + 15.0;
        writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{framework} {arch}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
