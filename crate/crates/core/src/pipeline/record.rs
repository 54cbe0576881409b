// SPDX-License-Identifier: Apache-2.0

//! Persisted run state (`run.json`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::EnergyEntry;
use crate::hashing::{content_hash, file_hash, hash_parts};

pub const RUN_RECORD_FILE: &str = "run.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Completed,
    Cached,
    Failed,
}

impl StageStatus {
    pub fn is_done(self) -> bool {
        matches!(self, StageStatus::Completed | StageStatus::Cached)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub trial: Option<usize>,
    pub status: StageStatus,
    /// Hash of the stage's config slice and upstream output hashes.
    pub input_hash: String,
    /// Output directory, relative to the run directory.
    pub output_dir: String,
    pub output_hash: String,
    pub wall_secs: f64,
    pub energy: EnergyEntry,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    /// Keyed by `stage` or `trial-<i>/stage`.
    pub stages: BTreeMap<String, StageRecord>,
    pub energy_method: String,
}

impl RunRecord {
    pub fn new(config: ExperimentConfig) -> Self {
        let run_id = content_hash(config.to_toml().as_bytes())[..12].to_string();
        let energy_method = format!("wall-clock x {} W", config.energy.device_watts);
        RunRecord {
            run_id,
            config,
            stages: BTreeMap::new(),
            energy_method,
        }
    }

    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(RUN_RECORD_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(&path, 0, e))
    }

    /// Write via a temporary file so a crash never leaves a torn record.
    pub fn save(&self, run_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
        let path = run_dir.join(RUN_RECORD_FILE);
        let tmp = run_dir.join(format!("{RUN_RECORD_FILE}.tmp"));
        let text = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn get(&self, key: &str) -> Option<&StageRecord> {
        self.stages.get(key)
    }
}

fn walk(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            walk(&path, base, out)?;
        } else {
            out.push(path.strip_prefix(base).expect("under base").to_path_buf());
        }
    }
    Ok(())
}

/// Hash over every file below `dir` (relative path and content), in
/// sorted path order.
pub fn directory_hash(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut parts: Vec<Vec<u8>> = Vec::with_capacity(files.len() * 2);
    for f in &files {
        let rel = f.to_string_lossy().replace('\\', "/");
        parts.push(rel.into_bytes());
        parts.push(file_hash(&dir.join(f))?.into_bytes());
    }
    let refs: Vec<&[u8]> = parts.iter().map(Vec::as_slice).collect();
    Ok(hash_parts(&refs))
}
