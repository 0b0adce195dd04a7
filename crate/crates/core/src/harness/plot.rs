//! Pareto CSV and SVG output.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rust_decimal::prelude::ToPrimitive;
use serde::Serialize;

use super::RunReport;
use crate::cost::{pareto_frontier, ParetoPoint};
use crate::error::HarnessError;

/// (accuracy, mean cost per query) for a report; unscored reports score 0.
pub fn report_point(report: &RunReport) -> ParetoPoint {
    ParetoPoint::new(
        report.label.clone(),
        report.aggregate.accuracy.unwrap_or(0.0),
        report.aggregate.mean_cost_per_query.to_f64().unwrap_or(f64::NAN),
    )
}

#[derive(Serialize)]
struct Row<'a> {
    label: &'a str,
    score: f64,
    cost: f64,
    on_frontier: bool,
}

fn by_cost(points: &[ParetoPoint]) -> Vec<&ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(b.score.total_cmp(&a.score)));
    sorted
}

/// Rows sorted by cost: `label,score,cost,on_frontier`.
pub fn write_pareto_csv<W: Write>(points: &[ParetoPoint], out: W) -> Result<(), HarnessError> {
    let frontier = pareto_frontier(points);
    let mut w = csv::Writer::from_writer(out);
    for p in by_cost(points) {
        w.serialize(Row {
            label: &p.label,
            score: p.score,
            cost: p.cost,
            on_frontier: frontier.contains(p),
        })?;
    }
    w.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Scatter of score against cost with the frontier as a polyline.
pub fn render_svg(points: &[ParetoPoint]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5 * lo.abs().max(1e-6), hi + 0.5 * hi.abs().max(1e-6))
        } else {
            (lo, hi)
        }
    };
    let (c0, c1) = span(points.iter().map(|p| p.cost).collect());
    let (s0, s1) = span(points.iter().map(|p| p.score).collect());
    let x = |c: f64| PAD + (c - c0) / (c1 - c0) * (W - 2.0 * PAD);
    let y = |s: f64| H - PAD - (s - s0) / (s1 - s0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{b}" stroke="black"/>"#,
        b = H - PAD,
        r = W - PAD
    );
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">cost per query</text>"#, W / 2.0, H - 15.0);
    let _ = writeln!(svg, r#"<text x="15" y="{}" transform="rotate(-90 15 {})" text-anchor="middle">score</text>"#, H / 2.0, H / 2.0);
    let _ = writeln!(svg, r#"<text x="{PAD}" y="{}" text-anchor="start">{c0:.6}</text>"#, H - PAD + 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{c1:.6}</text>"#, W - PAD, H - PAD + 15.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{s0:.3}</text>"#, PAD - 5.0, H - PAD);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{s1:.3}</text>"#, PAD - 5.0, PAD + 4.0);

    let frontier = pareto_frontier(points);
    let line: Vec<String> = by_cost(&frontier).iter().map(|p| format!("{:.2},{:.2}", x(p.cost), y(p.score))).collect();
    if !line.is_empty() {
        let _ = writeln!(svg, r##"<polyline points="{}" fill="none" stroke="#d62728" stroke-width="2"/>"##, line.join(" "));
    }
    for p in points {
        let on = frontier.contains(p);
        let _ = writeln!(
            svg,
            r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"##,
            x(p.cost),
            y(p.score),
            if on { "#d62728" } else { "#1f77b4" },
            x(p.cost) + 6.0,
            y(p.score) - 6.0,
            escape(&p.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes `pareto.csv` and `pareto.svg` under `dir`; returns the frontier.
pub fn emit_pareto(points: &[ParetoPoint], dir: &Path) -> Result<Vec<ParetoPoint>, HarnessError> {
    std::fs::create_dir_all(dir)?;
    write_pareto_csv(points, std::fs::File::create(dir.join("pareto.csv"))?)?;
    std::fs::write(dir.join("pareto.svg"), render_svg(points))?;
    Ok(pareto_frontier(points))
}
