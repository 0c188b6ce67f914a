//! Merging evaluation CSVs and drawing grouped bar charts.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::eval::EvalRow;
use crate::perception::ScenarioId;

/// Rows ordered by scenario, then density, plus the scenarios that had no rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MergedGrid {
    pub rows: Vec<EvalRow>,
    pub missing: Vec<ScenarioId>,
    pub densities: Vec<f64>,
}

/// Merges rows from several CSVs. A (scenario, density) cell may appear only once.
pub fn merge(inputs: impl IntoIterator<Item = Vec<EvalRow>>) -> Result<MergedGrid> {
    let mut rows: Vec<(ScenarioId, EvalRow)> = Vec::new();
    for input in inputs {
        for row in input {
            let id: ScenarioId = row.scenario.parse()?;
            if rows.iter().any(|(s, r)| *s == id && r.density == row.density) {
                return Err(Error::Inconsistent(format!("{} at density {} appears twice", id, row.density)));
            }
            rows.push((id, row));
        }
    }
    rows.sort_by(|(a, x), (b, y)| a.cmp(b).then(x.density.total_cmp(&y.density)));
    let missing = ScenarioId::ALL.into_iter().filter(|id| !rows.iter().any(|(s, _)| s == id)).collect();
    let mut densities: Vec<f64> = rows.iter().map(|(_, r)| r.density).collect();
    densities.sort_by(f64::total_cmp);
    densities.dedup();
    Ok(MergedGrid { rows: rows.into_iter().map(|(_, r)| r).collect(), missing, densities })
}

/// A bar chart with one cluster per group and one bar per series.
#[derive(Debug, Clone)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub series: Vec<String>,
    /// (group label, one value per series)
    pub groups: Vec<(String, Vec<f64>)>,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let (bar_w, gap, left, top, plot_h) = (12.0, 18.0, 60.0, 40.0, 240.0);
        let n = self.series.len().max(1) as f64;
        let group_w = bar_w * n + gap;
        let width = left + group_w * self.groups.len() as f64 + 150.0;
        let height = top + plot_h + 90.0;
        let y_max = self
            .groups
            .iter()
            .flat_map(|(_, v)| v.iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0f64, f64::max);
        let y_max = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
        let y = |v: f64| top + plot_h - plot_h * (v / y_max);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" font-family="sans-serif" font-size="10">"#
        );
        let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(&self.title));
        let _ = writeln!(
            s,
            r#"<text transform="translate(14,{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            top + plot_h / 2.0,
            escape(&self.y_label)
        );
        for i in 0..=4 {
            let v = y_max * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{left}" x2="{:.1}" y1="{y:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
                width - 150.0,
                left - 4.0,
                y(v) + 3.0,
                y = y(v)
            );
        }
        for (g, (label, values)) in self.groups.iter().enumerate() {
            let x0 = left + gap / 2.0 + g as f64 * group_w;
            for (k, &v) in values.iter().enumerate() {
                let v = if v.is_finite() { v.max(0.0) } else { 0.0 };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{bar_w}" height="{:.1}" fill="{}"/>"#,
                    x0 + k as f64 * bar_w,
                    y(v),
                    plot_h * v / y_max,
                    PALETTE[k % PALETTE.len()]
                );
            }
            let cx = x0 + bar_w * n / 2.0;
            let _ = writeln!(
                s,
                r#"<text transform="translate({cx:.1},{:.1}) rotate(45)">{}</text>"#,
                top + plot_h + 12.0,
                escape(label)
            );
        }
        let lx = width - 140.0;
        for (k, name) in self.series.iter().enumerate() {
            let ly = top + 14.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{}"/><text x="{}" y="{}">{}</text>"#,
                PALETTE[k % PALETTE.len()],
                lx + 14.0,
                ly + 9.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

/// The four charts: distance, velocity, motion actions and queries.
/// Returns (file stem, chart) pairs.
pub fn figure_charts(grid: &MergedGrid) -> Vec<(&'static str, BarChart)> {
    let scenarios: Vec<String> = ScenarioId::ALL
        .into_iter()
        .filter(|id| !grid.missing.contains(id))
        .map(|id| id.to_string())
        .collect();
    let distance = BarChart {
        title: "Average distance covered".into(),
        y_label: "cells per episode".into(),
        series: scenarios.clone(),
        groups: grid
            .densities
            .iter()
            .map(|&d| {
                let values = scenarios
                    .iter()
                    .map(|s| {
                        grid.rows
                            .iter()
                            .find(|r| &r.scenario == s && r.density == d)
                            .map_or(f64::NAN, |r| r.mean_distance)
                    })
                    .collect();
                (format!("p={d}"), values)
            })
            .collect(),
    };
    let per_row = |title: &str, series: &[&str], pick: fn(&EvalRow) -> Vec<f64>| BarChart {
        title: title.into(),
        y_label: "fraction of steps".into(),
        series: series.iter().map(|s| s.to_string()).collect(),
        groups: grid.rows.iter().map(|r| (format!("{} p={}", r.scenario, r.density), pick(r))).collect(),
    };
    vec![
        ("distance", distance),
        ("velocity", per_row("Velocity distribution", &["v=0", "v=1", "v=2"], |r| vec![r.v0, r.v1, r.v2])),
        (
            "motion",
            per_row("Motion actions", &["accelerate", "decelerate", "do nothing", "change lane"], |r| {
                vec![r.acc, r.dec, r.nothing, r.lane]
            }),
        ),
        (
            "queries",
            per_row("Use of communications", &["no query", "g1", "g2", "g3", "g4"], |r| {
                vec![r.noquery, r.q_g1, r.q_g2, r.q_g3, r.q_g4]
            }),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(s: &str, d: f64) -> EvalRow {
        EvalRow {
            scenario: s.into(),
            density: d,
            episodes: 1,
            steps: 10,
            mean_distance: 10.0 * d,
            std_distance: 0.0,
            v0: 0.2,
            v1: 0.3,
            v2: 0.5,
            acc: 0.25,
            dec: 0.25,
            nothing: 0.25,
            lane: 0.25,
            noquery: 1.0,
            q_g1: 0.0,
            q_g2: 0.0,
            q_g3: 0.0,
            q_g4: 0.0,
            collisions: 0,
            unseen_rate: 0.0,
        }
    }

    #[test]
    fn merges_and_orders() {
        let grid = merge([vec![row("FV", 0.8), row("FV", 0.0)], vec![row("LV", 0.8), row("LV", 0.0)]]).unwrap();
        let order: Vec<_> = grid.rows.iter().map(|r| (r.scenario.as_str(), r.density)).collect();
        assert_eq!(order, [("LV", 0.0), ("LV", 0.8), ("FV", 0.0), ("FV", 0.8)]);
        assert_eq!(grid.missing, [ScenarioId::RC, ScenarioId::C1, ScenarioId::C2]);
        assert_eq!(grid.densities, [0.0, 0.8]);
        assert!(merge([vec![row("LV", 0.0)], vec![row("LV", 0.0)]]).is_err());
        assert!(merge([vec![row("XX", 0.0)]]).is_err());
    }

    #[test]
    fn charts_are_well_formed() {
        let grid = merge([vec![row("C1", 0.2), row("C2", 0.2), row("C2", 0.5)]]).unwrap();
        let charts = figure_charts(&grid);
        assert_eq!(charts.len(), 4);
        for (_, chart) in charts {
            let svg = chart.to_svg();
            let doc = roxmltree::Document::parse(&svg).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            let bars = doc.descendants().filter(|n| n.has_tag_name("rect")).count();
            assert_eq!(bars, chart.groups.len() * chart.series.len() + chart.series.len());
        }
    }
}
