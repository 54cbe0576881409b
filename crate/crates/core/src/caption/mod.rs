// SPDX-License-Identifier: Apache-2.0

//! Captioning of extracted bias-conflict candidates into a text corpus.

mod http;
mod oracle;

pub use http::{shapes_caption_handler, HttpCaptioner, CAPTION_PATH, DEFAULT_INSTRUCTION};
pub use oracle::{attribute_sentence, oracle_caption, OracleCaptioner, DISTRACTORS};

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::extract::{candidates_to_bytes, ConflictCandidateSet};
use crate::hashing::{content_hash, derive_seed};
use crate::pool::map_bounded;

pub const CORPUS_FORMAT: &str = "biasamp-corpus";
pub const DEFAULT_CAPTIONS_PER_SAMPLE: usize = 3;
pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub sample_id: String,
    /// 1-based.
    pub caption_index: usize,
    pub text: String,
}

impl CaptionRecord {
    /// `sample_id#index`, the key used for prompts and seeds downstream.
    pub fn key(&self) -> String {
        format!("{}#{}", self.sample_id, self.caption_index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionFailure {
    pub sample_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextCorpus {
    pub records: Vec<CaptionRecord>,
    pub captioner_id: String,
    pub seed: u64,
    pub m: usize,
    /// Content hash of the candidate set file the corpus was built from.
    pub created_from: String,
    pub failures: Vec<CaptionFailure>,
    /// Adapter retries spent while building; not persisted.
    pub retries: u64,
}

impl TextCorpus {
    pub fn sample_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.sample_id.as_str()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaptionerDescriptor {
    pub id: String,
    pub deterministic: bool,
}

/// Everything a captioner may look at for one image. Only the oracle
/// reads `class_name` and `bias_attr`; real backends see the image.
#[derive(Clone, Debug)]
pub struct CaptionRequest {
    pub sample_id: String,
    pub image_path: PathBuf,
    pub class_name: String,
    pub bias_attr: Option<String>,
    pub count: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Captioned {
    pub texts: Vec<String>,
    pub retries: u32,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum CaptionError {
    /// The backend cannot serve at all; the whole build aborts.
    #[error("captioner unavailable: {0}")]
    Unavailable(String),
    /// This sample failed; it is recorded and the build continues.
    #[error("{reason}")]
    Failed { reason: String, retries: u32 },
}

pub trait Captioner: Send + Sync {
    fn descriptor(&self) -> CaptionerDescriptor;

    /// Cheap reachability probe run once before any sample is captioned.
    fn check_available(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    /// Exactly `request.count` non-empty strings, or a failure.
    fn caption(&self, request: &CaptionRequest) -> std::result::Result<Captioned, CaptionError>;
}

/// Collapse whitespace runs (including newlines) to single spaces and trim.
pub fn normalize_caption(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Caption every candidate `m` times with per-sample seeds
/// `derive_seed(seed, sample_id)`, using up to `parallelism` concurrent
/// calls. Records come back sorted by `(sample_id, caption_index)`.
pub fn build_corpus(
    candidates: &ConflictCandidateSet,
    manifest: &DatasetManifest,
    captioner: &dyn Captioner,
    m: usize,
    seed: u64,
    parallelism: usize,
) -> Result<TextCorpus> {
    if m < 1 {
        return Err(Error::InvalidParameter("captions per sample must be at least 1".into()));
    }
    let desc = captioner.descriptor();
    let mut requests = Vec::with_capacity(candidates.len());
    for id in &candidates.sample_ids {
        let sample = manifest
            .get(id)
            .ok_or_else(|| Error::InvalidParameter(format!("candidate {id:?} not in manifest")))?;
        requests.push(CaptionRequest {
            sample_id: id.clone(),
            image_path: manifest.image_path(sample),
            class_name: manifest.class_names[sample.label].clone(),
            bias_attr: sample.bias_attr.clone(),
            count: m,
            seed: derive_seed(seed, id),
        });
    }
    let mut corpus = TextCorpus {
        records: Vec::new(),
        captioner_id: desc.id.clone(),
        seed,
        m,
        created_from: content_hash(&candidates_to_bytes(candidates)),
        failures: Vec::new(),
        retries: 0,
    };
    if requests.is_empty() {
        return Ok(corpus);
    }
    captioner.check_available().map_err(|message| Error::Backend {
        backend: desc.id.clone(),
        message,
    })?;

    let results = map_bounded(&requests, parallelism, |_, req| captioner.caption(req));
    for (req, result) in requests.iter().zip(results) {
        match result {
            Ok(out) => {
                corpus.retries += out.retries as u64;
                let texts: Vec<String> = out.texts.iter().map(|t| normalize_caption(t)).collect();
                if texts.len() != m || texts.iter().any(|t| t.is_empty()) {
                    corpus.failures.push(CaptionFailure {
                        sample_id: req.sample_id.clone(),
                        reason: format!("expected {m} non-empty captions, got {}", texts.len()),
                    });
                    continue;
                }
                for (i, text) in texts.into_iter().enumerate() {
                    corpus.records.push(CaptionRecord {
                        sample_id: req.sample_id.clone(),
                        caption_index: i + 1,
                        text,
                    });
                }
            }
            Err(CaptionError::Unavailable(message)) => {
                return Err(Error::Backend {
                    backend: desc.id,
                    message,
                })
            }
            Err(CaptionError::Failed { reason, retries }) => {
                corpus.retries += retries as u64;
                corpus.failures.push(CaptionFailure {
                    sample_id: req.sample_id.clone(),
                    reason,
                });
            }
        }
    }
    corpus.records.sort();
    corpus.failures.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    Ok(corpus)
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    format: String,
    version: u32,
    captioner_id: String,
    seed: u64,
    m: usize,
    candidate_set_hash: String,
    failures: Vec<CaptionFailure>,
}

pub fn corpus_to_bytes(corpus: &TextCorpus) -> Vec<u8> {
    let header = CorpusHeader {
        format: CORPUS_FORMAT.into(),
        version: 1,
        captioner_id: corpus.captioner_id.clone(),
        seed: corpus.seed,
        m: corpus.m,
        candidate_set_hash: corpus.created_from.clone(),
        failures: corpus.failures.clone(),
    };
    let mut out = serde_json::to_vec(&header).expect("serializable");
    out.push(b'\n');
    out.extend(records_to_bytes(&corpus.records));
    out
}

pub(crate) fn records_to_bytes(records: &[CaptionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serde_json::to_vec(r).expect("serializable"));
        out.push(b'\n');
    }
    out
}

pub fn write_corpus(corpus: &TextCorpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_bytes(corpus)).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<TextCorpus> {
    let (header, records): (CorpusHeader, _) = read_records(path, CORPUS_FORMAT)?;
    Ok(TextCorpus {
        records,
        captioner_id: header.captioner_id,
        seed: header.seed,
        m: header.m,
        created_from: header.candidate_set_hash,
        failures: header.failures,
        retries: 0,
    })
}

/// Header line plus one `CaptionRecord` per line; rejects duplicate keys.
pub(crate) fn read_records<H: serde::de::DeserializeOwned>(
    path: &Path,
    format: &str,
) -> Result<(H, Vec<CaptionRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let probe: serde_json::Value = serde_json::from_str(&first).map_err(|e| Error::parse(path, 1, e))?;
    if probe.get("format").and_then(|f| f.as_str()) != Some(format) {
        return Err(Error::parse(path, 1, format!("expected format {format:?}")));
    }
    let header: H = serde_json::from_value(probe).map_err(|e| Error::parse(path, 1, e))?;
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 2, e))?;
        if r.text.is_empty() {
            return Err(Error::parse(path, i + 2, "empty caption text"));
        }
        if !seen.insert((r.sample_id.clone(), r.caption_index)) {
            return Err(Error::parse(path, i + 2, format!("duplicate caption {}", r.key())));
        }
        records.push(r);
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_plan, SynthShapesSpec};

    struct Flaky;

    impl Captioner for Flaky {
        fn descriptor(&self) -> CaptionerDescriptor {
            CaptionerDescriptor {
                id: "flaky".into(),
                deterministic: true,
            }
        }

        fn caption(&self, req: &CaptionRequest) -> std::result::Result<Captioned, CaptionError> {
            if req.sample_id.ends_with('3') {
                return Err(CaptionError::Failed {
                    reason: "boom".into(),
                    retries: 0,
                });
            }
            let n = if req.sample_id.ends_with('5') { 2 } else { req.count };
            Ok(Captioned {
                texts: (0..n).map(|i| format!("  caption\n{i} ")).collect(),
                retries: 0,
            })
        }
    }

    fn candidates(ids: &[&str]) -> ConflictCandidateSet {
        ConflictCandidateSet {
            sample_ids: ids.iter().map(|s| s.to_string()).collect(),
            losses: vec![1.0; ids.len()],
            k: ids.len(),
            source_model: "m".into(),
        }
    }

    #[test]
    fn failures_are_recorded_and_counts_add_up() {
        let man = synth_plan(&SynthShapesSpec::new(2, 0.1, 20, 4, 1)).unwrap();
        let ids = ["train-00001", "train-00003", "train-00005", "train-00007"];
        let c = build_corpus(&candidates(&ids), &man, &Flaky, 3, 0, 2).unwrap();
        assert_eq!(c.records.len(), 6);
        assert_eq!(c.failures.len(), 2);
        assert_eq!(c.records[0].text, "caption 0");
        assert_eq!(c.sample_ids().len() + c.failures.len(), ids.len());
    }

    #[test]
    fn unknown_candidate_and_empty_set() {
        let man = synth_plan(&SynthShapesSpec::new(2, 0.1, 20, 4, 1)).unwrap();
        assert!(build_corpus(&candidates(&["nope"]), &man, &Flaky, 3, 0, 1).is_err());
        let c = build_corpus(&candidates(&[]), &man, &Flaky, 3, 0, 1).unwrap();
        assert!(c.records.is_empty() && c.failures.is_empty());
    }

    #[test]
    fn corpus_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let man = synth_plan(&SynthShapesSpec::new(2, 0.1, 20, 4, 1)).unwrap();
        let c = build_corpus(&candidates(&["train-00001", "train-00003"]), &man, &Flaky, 3, 9, 1).unwrap();
        let p = dir.path().join("corpus.jsonl");
        write_corpus(&c, &p).unwrap();
        assert_eq!(read_corpus(&p).unwrap(), c);
    }
}
