// SPDX-License-Identifier: Apache-2.0

//! A complete run: synthetic data, biased and vanilla training, mining,
//! captioning, filtering, generation, debiased retraining and the report.
//! Rerunning with the same directory reuses every finished stage.
//!
//! ```bash
//! cargo run --release --example end_to_end -- configs/quick.toml runs/quick
//! ```

use std::path::PathBuf;

use biasamp::pipeline::{read_metrics_file, run_all, BackendRegistry, ExperimentConfig};

fn main() -> biasamp::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let run_dir = PathBuf::from(args.next().unwrap_or_else(|| "runs/example".into()));

    let record = run_all(config, &run_dir, BackendRegistry::default(), true)?;
    let cached = record.stages.values().filter(|s| s.status == biasamp::pipeline::StageStatus::Cached).count();
    println!("run {}: {} stages, {} cached", record.run_id, record.stages.len(), cached);

    let metrics = read_metrics_file(&run_dir.join("report").join("metrics.txt"))?;
    for key in ["overall_acc", "aligned_acc", "conflict_acc"] {
        let row: Vec<String> = ["vanilla", "biased", "debiased"]
            .iter()
            .map(|role| format!("{role} {}", metrics.get(&format!("mean.{role}.{key}")).map_or("-", String::as_str)))
            .collect();
        println!("{key}: {}", row.join(", "));
    }
    println!("report written to {}", run_dir.join("report").display());
    Ok(())
}
