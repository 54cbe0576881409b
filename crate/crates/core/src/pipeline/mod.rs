// SPDX-License-Identifier: Apache-2.0

//! Experiment orchestration: stages, run directories, caching and resume.
//!
//! A run directory holds `run.json` plus one output directory per stage.
//! Per-trial stages live under `trial-<i>/`; `synth` and `report` are
//! shared by all trials. A stage is skipped as cached when its input hash
//! (config slice, trial seed, upstream output hashes) matches the last
//! completion and its output directory still hashes to what was recorded.

mod config;
mod record;
mod registry;
mod report;
mod stages;

pub use config::{
    CaptionSection, DatasetSection, EnergySection, EvalSection, ExperimentConfig, ExtractionSection, FilterSection,
    GenerationSection,
};
pub use record::{directory_hash, RunRecord, StageRecord, StageStatus, RUN_RECORD_FILE};
pub use registry::{BackendRegistry, CaptionerFactory, GeneratorFactory, CAPTION_ENV, GENERATE_ENV};
pub use report::{compare_run_dirs, read_metrics_file, METRICS_FILE};
pub use stages::{CaptionStats, ExtractionStats, FilterStats, GenerationStats, TrialMetrics};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::eval::EnergyEntry;
use crate::hashing::hash_parts;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Synth,
    TrainVanilla,
    TrainBiased,
    Extract,
    Caption,
    Filter,
    Generate,
    Assemble,
    TrainDebiased,
    Evaluate,
    Report,
}

impl Stage {
    /// Execution order of [`run_all`] within one trial.
    pub const ALL: [Stage; 11] = [
        Stage::Synth,
        Stage::TrainVanilla,
        Stage::TrainBiased,
        Stage::Extract,
        Stage::Caption,
        Stage::Filter,
        Stage::Generate,
        Stage::Assemble,
        Stage::TrainDebiased,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::TrainVanilla => "train-vanilla",
            Stage::TrainBiased => "train-biased",
            Stage::Extract => "extract",
            Stage::Caption => "caption",
            Stage::Filter => "filter",
            Stage::Generate => "generate",
            Stage::Assemble => "assemble",
            Stage::TrainDebiased => "train-debiased",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// `synth` and `report` run once per run; everything else per trial.
    pub fn per_trial(self) -> bool {
        !matches!(self, Stage::Synth | Stage::Report)
    }

    /// Stages whose outputs this stage reads.
    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            Synth => &[],
            TrainVanilla | TrainBiased => &[Synth],
            Extract => &[Synth, TrainBiased],
            Caption => &[Synth, Extract],
            Filter => &[Synth, Caption],
            Generate => &[Synth, Filter],
            Assemble => &[Synth, Extract, Generate],
            TrainDebiased => &[Assemble],
            Evaluate => &[
                Synth,
                TrainVanilla,
                TrainBiased,
                Extract,
                Caption,
                Filter,
                Generate,
                Assemble,
                TrainDebiased,
            ],
            Report => &[Evaluate],
        }
    }

    /// Output directory relative to the run directory.
    pub fn dir(self, trial: usize) -> PathBuf {
        let name = match self {
            Stage::Synth => "data",
            Stage::TrainVanilla => "vanilla",
            Stage::TrainBiased => "biased",
            Stage::TrainDebiased => "debiased",
            other => other.as_str(),
        };
        if self.per_trial() {
            PathBuf::from(format!("trial-{trial}")).join(name)
        } else {
            PathBuf::from(name)
        }
    }

    /// Key in [`RunRecord::stages`].
    pub fn key(self, trial: usize) -> String {
        if self.per_trial() {
            format!("trial-{trial}/{}", self.as_str())
        } else {
            self.as_str().to_string()
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown stage {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageOutcome {
    pub key: String,
    pub status: StageStatus,
}

/// One writer over one run directory.
pub struct Pipeline {
    config: ExperimentConfig,
    run_dir: PathBuf,
    registry: BackendRegistry,
    record: RunRecord,
}

impl Pipeline {
    /// Validate `config` against `registry` and load the existing record,
    /// if any. Nothing is computed.
    pub fn open(config: ExperimentConfig, run_dir: &Path, registry: BackendRegistry) -> Result<Self> {
        config.validate()?;
        registry.check(&config.caption.backend, &config.generation.backend)?;
        let mut record = if run_dir.join(RUN_RECORD_FILE).exists() {
            RunRecord::load(run_dir)?
        } else {
            RunRecord::new(config.clone())
        };
        let fresh = RunRecord::new(config.clone());
        record.run_id = fresh.run_id;
        record.config = fresh.config;
        record.energy_method = fresh.energy_method;
        Ok(Pipeline {
            config,
            run_dir: run_dir.to_path_buf(),
            registry,
            record,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn run_dir(&self) -> &Path {
        &self.run_dir
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn into_record(self) -> RunRecord {
        self.record
    }

    /// Run `stage` for every configured trial (once for shared stages).
    pub fn run_stage_all(&mut self, stage: Stage) -> Result<Vec<StageOutcome>> {
        if stage.per_trial() {
            (0..self.config.eval.trials).map(|t| self.run_stage(stage, t)).collect()
        } else {
            Ok(vec![self.run_stage(stage, 0)?])
        }
    }

    pub fn run_stage(&mut self, stage: Stage, trial: usize) -> Result<StageOutcome> {
        let trial = if stage.per_trial() { trial } else { 0 };
        let key = stage.key(trial);
        let input_hash = self.input_hash(stage, trial)?;
        let out_rel = stage.dir(trial);
        let out_dir = self.run_dir.join(&out_rel);

        if let Some(prev) = self.record.get(&key) {
            if prev.status.is_done() && prev.input_hash == input_hash && out_dir.is_dir() {
                if directory_hash(&out_dir)? == prev.output_hash {
                    log::info!("{key}: cached");
                    let rec = self.record.stages.get_mut(&key).expect("present");
                    rec.status = StageStatus::Cached;
                    self.record.save(&self.run_dir)?;
                    return Ok(StageOutcome {
                        key,
                        status: StageStatus::Cached,
                    });
                }
            }
        }

        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        }
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        log::info!("{key}: running");
        let start = Instant::now();
        let result = stages::execute(self, stage, trial, &out_dir);
        let wall_secs = start.elapsed().as_secs_f64();
        let energy = EnergyEntry::from_wall_clock(key.clone(), wall_secs, self.config.energy.device_watts)?;

        let mut rec = StageRecord {
            stage: stage.as_str().to_string(),
            trial: stage.per_trial().then_some(trial),
            status: StageStatus::Completed,
            input_hash,
            output_dir: out_rel.to_string_lossy().replace('\\', "/"),
            output_hash: String::new(),
            wall_secs,
            energy,
            error: None,
        };
        match result {
            Ok(()) => {
                rec.output_hash = directory_hash(&out_dir)?;
                self.record.stages.insert(key.clone(), rec);
                self.record.save(&self.run_dir)?;
                Ok(StageOutcome {
                    key,
                    status: StageStatus::Completed,
                })
            }
            Err(e) => {
                let message = e.to_string();
                rec.status = StageStatus::Failed;
                rec.error = Some(message.clone());
                self.record.stages.insert(key.clone(), rec);
                self.record.save(&self.run_dir)?;
                Err(Error::StageFailed { stage: key, message })
            }
        }
    }

    /// Completed record of `upstream` for `trial`, with its output intact.
    fn upstream_record(&self, stage: Stage, upstream: Stage, trial: usize) -> Result<&StageRecord> {
        let missing = || Error::MissingUpstream {
            stage: stage.as_str().to_string(),
            upstream: upstream.as_str().to_string(),
        };
        let rec = self.record.get(&upstream.key(trial)).ok_or_else(missing)?;
        if !rec.status.is_done() {
            return Err(missing());
        }
        let dir = self.run_dir.join(&rec.output_dir);
        if !dir.is_dir() || directory_hash(&dir)? != rec.output_hash {
            return Err(missing());
        }
        Ok(rec)
    }

    fn input_hash(&self, stage: Stage, trial: usize) -> Result<String> {
        let mut parts: Vec<Vec<u8>> = vec![stage.as_str().as_bytes().to_vec()];
        parts.push(stages::config_slice(&self.config, stage, trial)?.into_bytes());
        if stage == Stage::Report {
            for t in 0..self.config.eval.trials {
                let rec = self.upstream_record(stage, Stage::Evaluate, t)?;
                parts.push(rec.output_hash.clone().into_bytes());
            }
        } else {
            for &up in stage.upstream() {
                let rec = self.upstream_record(stage, up, trial)?;
                parts.push(rec.output_hash.clone().into_bytes());
            }
        }
        let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
        Ok(hash_parts(&refs))
    }

    pub(crate) fn registry(&self) -> &BackendRegistry {
        &self.registry
    }
}

/// Every stage for every trial, then the report.
///
/// A non-empty `run_dir` is refused unless `resume` is set, in which case
/// stages whose inputs are unchanged are skipped as cached.
pub fn run_all(config: ExperimentConfig, run_dir: &Path, registry: BackendRegistry, resume: bool) -> Result<RunRecord> {
    let mut pipeline = Pipeline::open(config, run_dir, registry)?;
    if !resume && run_dir.is_dir() {
        let mut entries = std::fs::read_dir(run_dir).map_err(|e| Error::io(run_dir, e))?;
        if entries.next().is_some() {
            return Err(Error::InvalidParameter(format!(
                "run directory {} is not empty; pass --resume to continue it",
                run_dir.display()
            )));
        }
    }
    pipeline.run_stage(Stage::Synth, 0)?;
    for trial in 0..pipeline.config.eval.trials {
        for stage in Stage::ALL.into_iter().filter(|s| s.per_trial()) {
            pipeline.run_stage(stage, trial)?;
        }
    }
    pipeline.run_stage(Stage::Report, 0)?;
    Ok(pipeline.into_record())
}
