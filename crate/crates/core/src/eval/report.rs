// SPDX-License-Identifier: Apache-2.0

//! Comparison tables and static bar charts.
//!
//! Table cells are copied verbatim from the source metrics; only the delta
//! columns are computed.

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const ABSENT: &str = "absent";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComparisonRow {
    pub label: String,
    /// `(metric, value)` in display order; values are kept as text.
    pub values: Vec<(String, String)>,
}

impl ComparisonRow {
    pub fn get(&self, metric: &str) -> Option<&str> {
        self.values.iter().find(|(k, _)| k == metric).map(|(_, v)| v.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ComparisonTable {
    pub columns: Vec<String>,
    /// `(label, cells)`; missing metrics hold [`ABSENT`].
    pub rows: Vec<(String, Vec<String>)>,
}

impl ComparisonTable {
    pub fn cell(&self, row: usize, column: &str) -> Option<&str> {
        let c = self.columns.iter().position(|k| k == column)?;
        self.rows.get(row).map(|(_, cells)| cells[c].as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (label, cells) in &self.rows {
            out.push_str(label);
            for c in cells {
                out.push(',');
                out.push_str(c);
            }
            out.push('\n');
        }
        out
    }
}

/// One row per run, the union of metrics as columns, and for each metric
/// in `delta_metrics` a `delta:<metric>` column holding the difference to
/// the first row. A single run gets no delta columns.
pub fn compare_runs(runs: &[ComparisonRow], delta_metrics: &[&str]) -> Result<ComparisonTable> {
    if runs.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let mut columns: Vec<String> = Vec::new();
    for r in runs {
        for (k, _) in &r.values {
            if !columns.contains(k) {
                columns.push(k.clone());
            }
        }
    }
    let deltas: Vec<&str> = if runs.len() > 1 { delta_metrics.to_vec() } else { Vec::new() };
    let base = &runs[0];
    let rows = runs
        .iter()
        .map(|r| {
            let mut cells: Vec<String> = columns
                .iter()
                .map(|c| r.get(c).unwrap_or(ABSENT).to_string())
                .collect();
            for m in &deltas {
                let parse = |row: &ComparisonRow| row.get(m).and_then(|v| v.parse::<f64>().ok());
                cells.push(match (parse(r), parse(base)) {
                    (Some(v), Some(b)) => format!("{:+.4}", v - b),
                    _ => ABSENT.to_string(),
                });
            }
            (r.label.clone(), cells)
        })
        .collect();
    columns.extend(deltas.iter().map(|m| format!("delta:{m}")));
    Ok(ComparisonTable { columns, rows })
}

const PALETTE: [&str; 4] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759"];

/// Grouped bars: one group per row, one bar per metric (values in [0, 1]).
pub fn accuracy_svg(runs: &[ComparisonRow], metrics: &[&str]) -> String {
    let bars: Vec<Vec<Option<f64>>> = runs
        .iter()
        .map(|r| metrics.iter().map(|m| r.get(m).and_then(|v| v.parse().ok())).collect())
        .collect();
    let labels: Vec<&str> = runs.iter().map(|r| r.label.as_str()).collect();
    bar_chart("Test accuracy", &labels, metrics, &bars, 1.0)
}

/// One bar per `(label, value)`.
pub fn energy_svg(title: &str, entries: &[(String, f64)]) -> String {
    let labels: Vec<&str> = entries.iter().map(|(l, _)| l.as_str()).collect();
    let bars: Vec<Vec<Option<f64>>> = entries.iter().map(|(_, v)| vec![Some(*v)]).collect();
    let max = entries.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    bar_chart(title, &labels, &[title], &bars, if max > 0.0 { max } else { 1.0 })
}

fn bar_chart(title: &str, groups: &[&str], series: &[&str], values: &[Vec<Option<f64>>], max: f64) -> String {
    let (left, top, plot_h, bar_w, gap) = (50.0, 40.0, 200.0, 18.0, 24.0);
    let group_w = bar_w * series.len() as f64 + gap;
    let width = left + group_w * groups.len().max(1) as f64 + 20.0;
    let height = top + plot_h + 60.0 + 16.0 * series.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{}</text>"#, escape(title));
    let base = top + plot_h;
    let _ = writeln!(s, r#"<line x1="{left}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#, width - 10.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{}</text>"#, top + 4.0, trim_num(max));
    for (g, label) in groups.iter().enumerate() {
        let x0 = left + g as f64 * group_w + gap / 2.0;
        for (k, v) in values[g].iter().enumerate() {
            let x = x0 + k as f64 * bar_w;
            match v {
                Some(v) => {
                    let h = (v / max).clamp(0.0, 1.0) * plot_h;
                    let _ = writeln!(
                        s,
                        r#"<rect x="{x}" y="{}" width="{}" height="{h}" fill="{}"/>"#,
                        base - h,
                        bar_w - 2.0,
                        PALETTE[k % PALETTE.len()]
                    );
                }
                None => {
                    let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="9">n/a</text>"#, base - 4.0);
                }
            }
        }
        let _ = writeln!(s, r#"<text x="{x0}" y="{}">{}</text>"#, base + 16.0, escape(label));
    }
    for (k, name) in series.iter().enumerate() {
        let y = base + 36.0 + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{left}" y="{}" width="10" height="10" fill="{}"/>"#, y - 9.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{y}">{}</text>"#, left + 14.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}

fn trim_num(v: f64) -> String {
    let t = format!("{v:.3}");
    t.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, kv: &[(&str, &str)]) -> ComparisonRow {
        ComparisonRow {
            label: label.into(),
            values: kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn two_rows_with_delta() {
        let t = compare_runs(
            &[
                row("vanilla", &[("conflict_acc", "0.25")]),
                row("debiased", &[("conflict_acc", "0.75"), ("overall_acc", "0.9")]),
            ],
            &["conflict_acc"],
        )
        .unwrap();
        assert_eq!(t.columns, ["conflict_acc", "overall_acc", "delta:conflict_acc"]);
        assert_eq!(t.cell(0, "overall_acc"), Some(ABSENT));
        assert_eq!(t.cell(1, "delta:conflict_acc"), Some("+0.5000"));
        assert_eq!(t.cell(1, "conflict_acc"), Some("0.75"));
    }

    #[test]
    fn single_row_has_no_delta() {
        let t = compare_runs(&[row("only", &[("a", "1")])], &["a"]).unwrap();
        assert_eq!(t.columns, ["a"]);
        assert!(compare_runs(&[], &[]).is_err());
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = accuracy_svg(&[row("x", &[("a", "0.5")])], &["a", "b"]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("n/a"));
    }
}
