// SPDX-License-Identifier: Apache-2.0

//! Prompt-conditioned generation of new samples from filtered captions,
//! label assignment, and assembly of the debiased training set.

mod http;
mod oracle;

pub use http::{shapes_generate_handler, HttpGenerator, GENERATE_PATH};
pub use oracle::{oracle_generate, parse_prompt, OracleGenerator};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::caption::CaptionRecord;
use crate::dataset::{relative_path, AttributedSample, CompositionReport, DatasetManifest, Group, Split};
use crate::error::{Error, Result};
use crate::extract::ConflictCandidateSet;
use crate::filter::{filtered_to_bytes, tokenize, FilteredCorpus};
use crate::hashing::{content_hash, derive_seed_indexed};
use crate::pool::map_bounded;

pub const GENERATED_FORMAT: &str = "biasamp-generated";
pub const DEFAULT_GENERATION_SIZE: u32 = 64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorDescriptor {
    pub id: String,
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub image: RgbImage,
    pub retries: u32,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum GenerateError {
    #[error("generator unavailable: {0}")]
    Unavailable(String),
    #[error("{reason}")]
    Failed { reason: String, retries: u32 },
}

pub trait Generator: Send + Sync {
    fn descriptor(&self) -> GeneratorDescriptor;

    fn check_available(&self) -> std::result::Result<(), String> {
        Ok(())
    }

    fn generate(&self, prompt: &str, size: u32, seed: u64) -> std::result::Result<Generated, GenerateError>;
}

/// Words that identify each class, indexed by class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassVocab {
    pub classes: Vec<BTreeSet<String>>,
}

impl ClassVocab {
    /// Each class is identified by the tokens of its name.
    pub fn from_class_names(names: &[String]) -> ClassVocab {
        ClassVocab {
            classes: names.iter().map(|n| tokenize(n).into_iter().collect()).collect(),
        }
    }

    pub fn new(classes: Vec<BTreeSet<String>>) -> ClassVocab {
        ClassVocab {
            classes: classes
                .into_iter()
                .map(|set| set.into_iter().map(|w| w.to_lowercase()).collect())
                .collect(),
        }
    }

    pub fn all_words(&self) -> BTreeSet<String> {
        self.classes.iter().flatten().cloned().collect()
    }
}

/// The unique class whose vocabulary meets the prompt tokens; `None` when
/// no class or several classes match.
pub fn assign_label(prompt: &str, vocab: &ClassVocab) -> Option<usize> {
    let tokens: HashSet<String> = tokenize(prompt).into_iter().collect();
    let mut hits = vocab
        .classes
        .iter()
        .enumerate()
        .filter(|(_, words)| words.iter().any(|w| tokens.contains(w)))
        .map(|(c, _)| c);
    let first = hits.next()?;
    if hits.next().is_some() {
        return None;
    }
    Some(first)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GenerationTarget {
    /// As many images as there are bias-aligned training samples.
    #[default]
    Balance,
    Count(usize),
}

impl GenerationTarget {
    pub fn resolve(self, manifest: &DatasetManifest) -> usize {
        match self {
            GenerationTarget::Balance => manifest.composition().train_aligned,
            GenerationTarget::Count(n) => n,
        }
    }
}

impl fmt::Display for GenerationTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GenerationTarget::Balance => f.write_str("balance"),
            GenerationTarget::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for GenerationTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "balance" {
            return Ok(GenerationTarget::Balance);
        }
        s.parse()
            .map(GenerationTarget::Count)
            .map_err(|_| Error::InvalidParameter(format!("target must be \"balance\" or a count, got {s:?}")))
    }
}

impl Serialize for GenerationTarget {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GenerationTarget::Balance => s.serialize_str("balance"),
            GenerationTarget::Count(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for GenerationTarget {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(GenerationTarget::Count(n as usize)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CaptionKey {
    pub sample_id: String,
    pub caption_index: usize,
}

impl fmt::Display for CaptionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.sample_id, self.caption_index)
    }
}

impl FromStr for CaptionKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (id, idx) = s
            .rsplit_once('#')
            .ok_or_else(|| Error::InvalidParameter(format!("caption key {s:?} lacks '#'")))?;
        let caption_index = idx
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("caption key {s:?} has a bad index")))?;
        Ok(CaptionKey {
            sample_id: id.to_string(),
            caption_index,
        })
    }
}

impl Serialize for CaptionKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CaptionKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

impl From<&CaptionRecord> for CaptionKey {
    fn from(r: &CaptionRecord) -> Self {
        CaptionKey {
            sample_id: r.sample_id.clone(),
            caption_index: r.caption_index,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedSample {
    pub id: String,
    /// Relative to the generated set's root directory.
    pub image: PathBuf,
    pub label: usize,
    pub source: CaptionKey,
    pub prompt: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedSet {
    pub samples: Vec<GeneratedSample>,
    pub root: PathBuf,
    pub generator_id: String,
    /// Content hash of the serialized filtered corpus.
    pub source_corpus: String,
    pub size: u32,
    pub seed: u64,
    pub target: usize,
    pub skipped_no_label: usize,
    /// Not persisted.
    pub retries: u64,
}

impl GeneratedSet {
    pub fn per_label_counts(&self) -> BTreeMap<usize, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.label).or_insert(0) += 1;
        }
        out
    }

    /// Uses of each source caption.
    pub fn caption_usage(&self) -> BTreeMap<CaptionKey, usize> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.source.clone()).or_insert(0) += 1;
        }
        out
    }
}

/// Labelable kept captions in corpus order, and how many were skipped.
pub fn labelable_captions(corpus: &FilteredCorpus, vocab: &ClassVocab) -> (Vec<(CaptionRecord, usize)>, usize) {
    let mut out = Vec::new();
    let mut skipped = 0;
    for r in &corpus.kept {
        match assign_label(&r.text, vocab) {
            Some(label) => out.push((r.clone(), label)),
            None => skipped += 1,
        }
    }
    (out, skipped)
}

/// Generate exactly `target` images, cycling round-robin over the
/// labelable kept captions. Slot `i` uses caption `i mod L` in cycle
/// `i div L` with seed `derive_seed_indexed(seed, caption key, cycle)`.
/// Images are written to `out_dir/images/gen-NNNNNN.png`.
pub fn amplify(
    corpus: &FilteredCorpus,
    generator: &dyn Generator,
    vocab: &ClassVocab,
    target: usize,
    size: u32,
    seed: u64,
    parallelism: usize,
    out_dir: &Path,
) -> Result<GeneratedSet> {
    let (labelable, skipped_no_label) = labelable_captions(corpus, vocab);
    let desc = generator.descriptor();
    let mut set = GeneratedSet {
        samples: Vec::new(),
        root: out_dir.to_path_buf(),
        generator_id: desc.id.clone(),
        source_corpus: content_hash(&filtered_to_bytes(corpus)),
        size,
        seed,
        target,
        skipped_no_label,
        retries: 0,
    };
    if target == 0 {
        return Ok(set);
    }
    if labelable.is_empty() {
        return Err(Error::Empty("labelable captions"));
    }
    if size == 0 {
        return Err(Error::InvalidParameter("generation size must be positive".into()));
    }
    generator.check_available().map_err(|message| Error::Backend {
        backend: desc.id.clone(),
        message,
    })?;
    let images_dir = out_dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let slots: Vec<GeneratedSample> = (0..target)
        .map(|i| {
            let (record, label) = &labelable[i % labelable.len()];
            let cycle = (i / labelable.len()) as u64;
            let key = CaptionKey::from(record);
            let id = format!("gen-{i:06}");
            GeneratedSample {
                image: PathBuf::from("images").join(format!("{id}.png")),
                id,
                label: *label,
                seed: derive_seed_indexed(seed, &key.to_string(), cycle),
                source: key,
                prompt: record.text.clone(),
            }
        })
        .collect();

    let results = map_bounded(&slots, parallelism, |_, slot| -> std::result::Result<u32, GenerateError> {
        let out = generator.generate(&slot.prompt, size, slot.seed)?;
        let path = out_dir.join(&slot.image);
        out.image.save_with_format(&path, image::ImageFormat::Png).map_err(|e| GenerateError::Failed {
            reason: format!("writing {}: {e}", path.display()),
            retries: out.retries,
        })?;
        Ok(out.retries)
    });
    for (slot, result) in slots.iter().zip(results) {
        match result {
            Ok(retries) => set.retries += retries as u64,
            Err(GenerateError::Unavailable(message)) => {
                return Err(Error::Backend {
                    backend: desc.id,
                    message,
                })
            }
            Err(GenerateError::Failed { reason, .. }) => {
                return Err(Error::Backend {
                    backend: desc.id,
                    message: format!("{} (prompt {:?}): {reason}", slot.id, slot.prompt),
                })
            }
        }
    }
    set.samples = slots;
    Ok(set)
}

#[derive(Serialize, Deserialize)]
struct GeneratedHeader {
    format: String,
    version: u32,
    generator_id: String,
    source_filtered_hash: String,
    size: u32,
    seed: u64,
    target: usize,
    skipped_no_label: usize,
    per_label_counts: BTreeMap<usize, usize>,
}

pub fn generated_to_bytes(set: &GeneratedSet) -> Vec<u8> {
    let header = GeneratedHeader {
        format: GENERATED_FORMAT.into(),
        version: 1,
        generator_id: set.generator_id.clone(),
        source_filtered_hash: set.source_corpus.clone(),
        size: set.size,
        seed: set.seed,
        target: set.target,
        skipped_no_label: set.skipped_no_label,
        per_label_counts: set.per_label_counts(),
    };
    let mut out = serde_json::to_vec(&header).expect("serializable");
    out.push(b'\n');
    for s in &set.samples {
        out.extend(serde_json::to_vec(s).expect("serializable"));
        out.push(b'\n');
    }
    out
}

pub fn write_generated(set: &GeneratedSet, path: &Path) -> Result<()> {
    std::fs::write(path, generated_to_bytes(set)).map_err(|e| Error::io(path, e))
}

/// Read a generated-set file; image paths resolve against its directory.
pub fn read_generated(path: &Path) -> Result<GeneratedSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: GeneratedHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| Error::parse(path, 1, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    if header.format != GENERATED_FORMAT {
        return Err(Error::parse(path, 1, format!("unexpected format {:?}", header.format)));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        samples.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 2, e))?);
    }
    Ok(GeneratedSet {
        samples,
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        generator_id: header.generator_id,
        source_corpus: header.source_filtered_hash,
        size: header.size,
        seed: header.seed,
        target: header.target,
        skipped_no_label: header.skipped_no_label,
        retries: 0,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub original_manifest_hash: String,
    pub corpus_hash: String,
    pub generator_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DebiasedDataset {
    pub manifest: DatasetManifest,
    pub provenance: Provenance,
    pub composition: CompositionReport,
}

/// Suffix of oversampled copies of top-K samples.
pub const OVERSAMPLE_SUFFIX: &str = "~topk";

/// Union of `original` and the generated samples, with image paths
/// rewritten relative to `root`. Generated samples join the train split
/// with an unknown group. With `oversample`, every candidate is added a
/// second time under the id `{id}~topk`.
pub fn assemble_debiased(
    original: &DatasetManifest,
    generated: &GeneratedSet,
    root: &Path,
    oversample: Option<&ConflictCandidateSet>,
) -> Result<DebiasedDataset> {
    let mut manifest = original.rebased(root);
    if !manifest.name.ends_with("-debiased") {
        manifest.name = format!("{}-debiased", original.name);
    }
    let mut ids: HashSet<String> = manifest.samples.iter().map(|s| s.id.clone()).collect();
    let n = original.num_classes();

    if let Some(cands) = oversample {
        for id in &cands.sample_ids {
            let s = original
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("candidate {id:?} not in manifest")))?;
            let copy = AttributedSample {
                id: format!("{id}{OVERSAMPLE_SUFFIX}"),
                image: relative_path(&original.root.join(&s.image), root),
                ..s.clone()
            };
            if !ids.insert(copy.id.clone()) {
                return Err(Error::IdCollision(copy.id));
            }
            manifest.samples.push(copy);
        }
    }
    for g in &generated.samples {
        if g.label >= n {
            return Err(Error::LabelOutOfRange {
                id: g.id.clone(),
                label: g.label,
                num_classes: n,
            });
        }
        if !ids.insert(g.id.clone()) {
            return Err(Error::IdCollision(g.id.clone()));
        }
        manifest.samples.push(AttributedSample {
            id: g.id.clone(),
            image: relative_path(&generated.root.join(&g.image), root),
            label: g.label,
            bias_attr: None,
            group: Group::Unknown,
            split: Split::Train,
        });
    }
    let composition = manifest.composition();
    Ok(DebiasedDataset {
        provenance: Provenance {
            original_manifest_hash: original.content_hash()?,
            corpus_hash: generated.source_corpus.clone(),
            generator_id: generated.generator_id.clone(),
        },
        manifest,
        composition,
    })
}
