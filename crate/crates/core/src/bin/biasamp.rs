// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biasamp::pipeline::{compare_run_dirs, run_all, BackendRegistry, ExperimentConfig, Pipeline, RunRecord, Stage, RUN_RECORD_FILE};
use clap::{Args, Parser, Subcommand};

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults to the snapshot in the run
    /// directory, then to the built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs/default")]
    run_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `--deterministic` or `--deterministic=false`.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Continue a non-empty run directory, skipping cached stages.
    #[arg(long, global = true)]
    resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic dataset (or import `dataset.manifest`).
    Synth,
    /// Train the CE baseline on the original data.
    TrainVanilla,
    /// Train the intentionally biased GCE classifier.
    TrainBiased,
    /// Rank train samples by loss under the biased model and keep the top K.
    Extract,
    /// Caption the extracted samples.
    Caption,
    /// Keep captions that mention a top-frequent word.
    Filter,
    /// Generate images from the filtered captions.
    Generate,
    /// Merge generated samples into the debiased training set.
    Assemble,
    /// Train the CE classifier on the debiased set.
    TrainDebiased,
    /// Score all three models and export embeddings.
    Evaluate,
    /// Write the run's report, or compare several run directories.
    Report {
        /// Other run directories to compare against this one.
        #[arg(long, num_args = 1..)]
        compare: Vec<PathBuf>,
        /// Where the comparison is written.
        #[arg(long, default_value = "comparison")]
        out: PathBuf,
    },
    /// Every stage for every trial, then the report.
    RunAll,
}

#[derive(Parser)]
#[command(name = "biasamp", version, about = "Bias-conflict amplification experiments")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

fn load_config(common: &Common) -> biasamp::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None if common.run_dir.join(RUN_RECORD_FILE).exists() => RunRecord::load(&common.run_dir)?.config,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(d) = common.deterministic {
        cfg.deterministic = d;
    }
    if let Some(t) = common.trials {
        cfg.eval.trials = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage_of(command: &Command) -> Option<Stage> {
    Some(match command {
        Command::Synth => Stage::Synth,
        Command::TrainVanilla => Stage::TrainVanilla,
        Command::TrainBiased => Stage::TrainBiased,
        Command::Extract => Stage::Extract,
        Command::Caption => Stage::Caption,
        Command::Filter => Stage::Filter,
        Command::Generate => Stage::Generate,
        Command::Assemble => Stage::Assemble,
        Command::TrainDebiased => Stage::TrainDebiased,
        Command::Evaluate => Stage::Evaluate,
        Command::Report { .. } => Stage::Report,
        Command::RunAll => return None,
    })
}

fn run(common: Common, command: Command) -> biasamp::Result<()> {
    if let Command::Report { compare, out } = &command {
        if !compare.is_empty() {
            let mut dirs = vec![common.run_dir.clone()];
            dirs.extend(compare.iter().cloned());
            let table = compare_run_dirs(&dirs, out)?;
            print!("{}", table.to_csv());
            return Ok(());
        }
    }
    let cfg = load_config(&common)?;
    let registry = BackendRegistry::default();
    match stage_of(&command) {
        None => {
            let record = run_all(cfg, &common.run_dir, registry, common.resume)?;
            print_metrics(&common.run_dir, &record);
        }
        Some(stage) => {
            let mut pipeline = Pipeline::open(cfg, &common.run_dir, registry)?;
            for outcome in pipeline.run_stage_all(stage)? {
                println!("{}\t{:?}", outcome.key, outcome.status);
            }
        }
    }
    Ok(())
}

fn print_metrics(run_dir: &Path, record: &RunRecord) {
    println!("run {} in {}", record.run_id, run_dir.display());
    let path = run_dir.join("report").join(biasamp::pipeline::METRICS_FILE);
    if let Ok(m) = biasamp::pipeline::read_metrics_file(&path) {
        for role in ["vanilla", "biased", "debiased"] {
            let get = |k: &str| m.get(&format!("mean.{role}.{k}")).map(String::as_str).unwrap_or("absent");
            println!("{role:>9}: overall {}  aligned {}  conflict {}", get("overall_acc"), get("aligned_acc"), get("conflict_acc"));
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Cli { common, command } = Cli::parse();
    match run(common, command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
