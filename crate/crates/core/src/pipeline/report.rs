// SPDX-License-Identifier: Apache-2.0

//! The `report` stage: flat metrics file, comparison table and figures.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::stages::{trial_metrics_path, write};
use super::{Pipeline, Stage};
use crate::error::{Error, Result};
use crate::eval::{accuracy_svg, carbon_report, compare_runs, energy_svg, ComparisonRow, ComparisonTable, EnergyLedger, ABSENT};

/// `key=value` lines, sorted by key, under `report/`.
pub const METRICS_FILE: &str = "metrics.txt";

const ROLES: [&str; 3] = ["vanilla", "biased", "debiased"];
const ACCURACIES: [&str; 3] = ["overall_acc", "aligned_acc", "conflict_acc"];
const DELTAS: [&str; 2] = ["overall_acc", "conflict_acc"];

fn flatten(prefix: &str, value: &Value, out: &mut BTreeMap<String, String>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&join(k), v, out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&join(&i.to_string()), v, out);
            }
        }
        Value::Null => {
            out.insert(prefix.to_string(), ABSENT.to_string());
        }
        Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Per-trial values under `trial<i>.` and, for every numeric key present
/// in all trials, the mean under `mean.`.
fn metrics_lines(run_id: &str, trials: &[Value]) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("run_id".to_string(), run_id.to_string());
    out.insert("trials".to_string(), trials.len().to_string());
    let flat: Vec<BTreeMap<String, String>> = trials
        .iter()
        .map(|t| {
            let mut m = BTreeMap::new();
            flatten("", t, &mut m);
            m
        })
        .collect();
    for (i, m) in flat.iter().enumerate() {
        for (k, v) in m {
            out.insert(format!("trial{i}.{k}"), v.clone());
        }
    }
    if let Some(first) = flat.first() {
        for key in first.keys() {
            let values: Option<Vec<f64>> = flat.iter().map(|m| m.get(key)?.parse::<f64>().ok()).collect();
            if let Some(values) = values {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                out.insert(format!("mean.{key}"), format!("{mean:.6}"));
            }
        }
    }
    out
}

pub fn read_metrics_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, i + 1, "expected key=value"))?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn role_rows(metrics: &BTreeMap<String, String>) -> Vec<ComparisonRow> {
    ROLES
        .iter()
        .map(|role| ComparisonRow {
            label: role.to_string(),
            values: ACCURACIES
                .iter()
                .filter_map(|m| Some((m.to_string(), metrics.get(&format!("mean.{role}.{m}"))?.clone())))
                .collect(),
        })
        .collect()
}

pub(super) fn write_report(p: &Pipeline, out: &Path) -> Result<()> {
    let trials = p.config().eval.trials;
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let path = trial_metrics_path(p.run_dir(), t);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        values.push(serde_json::from_str::<Value>(&text).map_err(|e| Error::parse(&path, 0, e))?);
    }
    let metrics = metrics_lines(&p.record().run_id, &values);
    let text: String = metrics.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
    write(&out.join(METRICS_FILE), text.as_bytes())?;

    let rows = role_rows(&metrics);
    let table = compare_runs(&rows, &DELTAS)?;
    write(&out.join("comparison.csv"), table.to_csv().as_bytes())?;
    write(&out.join("accuracy.svg"), accuracy_svg(&rows, &ACCURACIES).as_bytes())?;

    let energy = &p.config().energy;
    let mut ledger = EnergyLedger::new(energy.carbon_intensity, p.record().energy_method.clone())?;
    let mut per_stage: BTreeMap<&str, f64> = BTreeMap::new();
    for rec in p.record().stages.values().filter(|r| r.stage != Stage::Report.as_str()) {
        ledger.push(rec.energy.clone());
        *per_stage.entry(rec.stage.as_str()).or_insert(0.0) += rec.energy.kwh();
    }
    let carbon = carbon_report(&ledger);
    let mut csv = format!("# method: {}, intensity {} g/kWh\n", ledger.method, ledger.intensity());
    csv.push_str(&carbon.to_csv(&ledger));
    write(&out.join("energy.csv"), csv.as_bytes())?;
    let bars: Vec<(String, f64)> = Stage::ALL
        .iter()
        .filter_map(|s| Some((s.as_str().to_string(), *per_stage.get(s.as_str())?)))
        .collect();
    write(&out.join("energy.svg"), energy_svg("Energy (kWh)", &bars).as_bytes())
}

/// One row per run directory from its `report/metrics.txt`, with deltas
/// against the first. Writes `comparison.csv` and `accuracy.svg` to
/// `out_dir`.
pub fn compare_run_dirs(run_dirs: &[PathBuf], out_dir: &Path) -> Result<ComparisonTable> {
    let mut rows = Vec::with_capacity(run_dirs.len());
    for dir in run_dirs {
        let metrics = read_metrics_file(&dir.join(Stage::Report.dir(0)).join(METRICS_FILE))?;
        let label = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        let mut values = Vec::new();
        for role in ROLES {
            for m in ACCURACIES {
                if let Some(v) = metrics.get(&format!("mean.{role}.{m}")) {
                    values.push((format!("{role}.{m}"), v.clone()));
                }
            }
        }
        rows.push(ComparisonRow { label, values });
    }
    let table = compare_runs(&rows, &["debiased.overall_acc", "debiased.conflict_acc"])?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write(&out_dir.join("comparison.csv"), table.to_csv().as_bytes())?;
    write(
        &out_dir.join("accuracy.svg"),
        accuracy_svg(&rows, &["debiased.overall_acc", "debiased.conflict_acc"]).as_bytes(),
    )?;
    Ok(table)
}
