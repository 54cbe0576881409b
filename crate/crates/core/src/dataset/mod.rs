// SPDX-License-Identifier: Apache-2.0

//! Biased-dataset data model: attributed samples, manifests and
//! composition reports.
//!
//! Manifest files are line-delimited JSON. The first line is a header
//! (`format`, `version`, name, class vocabulary, bias attributes, the
//! class → dominant attribute map and the declared conflict ratio); every
//! following line is one sample. Image paths are stored relative to the
//! manifest's directory.

mod raster;
mod synth;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use raster::{load_raster, load_tensor, raster_to_tensor};
pub use synth::{conflict_count, synth_generate, synth_plan, SynthShapesSpec};

pub const MANIFEST_FORMAT: &str = "biasamp-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Aligned,
    Conflict,
    Unknown,
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Group::Aligned => "aligned",
            Group::Conflict => "conflict",
            Group::Unknown => "unknown",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributedSample {
    pub id: String,
    /// Image path relative to the manifest root.
    pub image: PathBuf,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias_attr: Option<String>,
    pub group: Group,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format: String,
    version: u32,
    name: String,
    class_names: Vec<String>,
    bias_attr_names: Vec<String>,
    dominant_attr_map: BTreeMap<usize, String>,
    declared_conflict_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub class_names: Vec<String>,
    pub bias_attr_names: Vec<String>,
    pub dominant_attr_map: BTreeMap<usize, String>,
    pub declared_conflict_ratio: f64,
    pub samples: Vec<AttributedSample>,
    /// Directory image paths are resolved against.
    pub root: PathBuf,
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    pub verify_images: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            verify_images: true,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    load_manifest_with(path, LoadOptions::default())
}

pub fn load_manifest_with(path: &Path, opts: LoadOptions) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header: ManifestHeader = match lines.next() {
        Some((_, line)) => {
            let line = line.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&line).map_err(|e| Error::parse(path, 1, e))?
        }
        None => return Err(Error::parse(path, 1, "missing header line")),
    };
    if header.format != MANIFEST_FORMAT {
        return Err(Error::parse(path, 1, format!("unexpected format {:?}", header.format)));
    }
    if header.version != MANIFEST_VERSION {
        return Err(Error::parse(path, 1, format!("unsupported version {}", header.version)));
    }

    let mut samples = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: AttributedSample =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, idx + 1, e))?;
        samples.push(sample);
    }

    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let manifest = DatasetManifest {
        name: header.name,
        class_names: header.class_names,
        bias_attr_names: header.bias_attr_names,
        dominant_attr_map: header.dominant_attr_map,
        declared_conflict_ratio: header.declared_conflict_ratio,
        samples,
        root,
    };
    manifest.validate()?;
    if opts.verify_images {
        manifest.verify_images()?;
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn image_path(&self, sample: &AttributedSample) -> PathBuf {
        self.root.join(&sample.image)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &AttributedSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn get(&self, id: &str) -> Option<&AttributedSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Index from id to position in `samples`.
    pub fn id_index(&self) -> BTreeMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }

    /// Group implied by a bias attribute for a class.
    pub fn expected_group(&self, label: usize, bias_attr: Option<&str>) -> Group {
        match (bias_attr, self.dominant_attr_map.get(&label)) {
            (None, _) => Group::Unknown,
            (Some(a), Some(dominant)) if a == dominant => Group::Aligned,
            (Some(_), _) => Group::Conflict,
        }
    }

    /// Check every structural invariant except image readability.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for name in &self.class_names {
            if !names.insert(name) {
                return Err(Error::DuplicateClass(name.clone()));
            }
        }
        if !(0.0..=1.0).contains(&self.declared_conflict_ratio) {
            return Err(Error::InvalidManifest(format!(
                "declared conflict ratio {} outside [0, 1]",
                self.declared_conflict_ratio
            )));
        }
        let n = self.num_classes();
        if let Some((&label, _)) = self.dominant_attr_map.iter().find(|(&l, _)| l >= n) {
            return Err(Error::InvalidManifest(format!(
                "dominant attribute for class {label} but only {n} classes"
            )));
        }

        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
            if s.label >= n {
                return Err(Error::LabelOutOfRange {
                    id: s.id.clone(),
                    label: s.label,
                    num_classes: n,
                });
            }
            if let Some(attr) = &s.bias_attr {
                if !self.bias_attr_names.is_empty() && !self.bias_attr_names.contains(attr) {
                    return Err(Error::InvalidSample {
                        id: s.id.clone(),
                        message: format!("unknown bias attribute {attr:?}"),
                    });
                }
            }
            let expected = self.expected_group(s.label, s.bias_attr.as_deref());
            if s.group != expected {
                return Err(Error::InvalidSample {
                    id: s.id.clone(),
                    message: format!("group {} but attributes imply {}", s.group, expected),
                });
            }
        }

        let train_all_known = self
            .split(Split::Train)
            .all(|s| s.group != Group::Unknown);
        if train_all_known {
            let report = self.composition();
            let grouped = report.train_aligned + report.train_conflict;
            if grouped > 0 {
                let expected = self.declared_conflict_ratio * grouped as f64;
                if (report.train_conflict as f64 - expected).abs() > 1.0 + 1e-9 {
                    return Err(Error::InvalidManifest(format!(
                        "realized conflict count {} differs from declared ratio {} \
                         ({expected:.2} of {grouped}) by more than one sample",
                        report.train_conflict, self.declared_conflict_ratio
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn verify_images(&self) -> Result<()> {
        for s in &self.samples {
            let path = self.image_path(s);
            let ok = std::fs::metadata(&path).map(|m| m.is_file()).unwrap_or(false);
            if !ok {
                return Err(Error::UnreadableImage {
                    id: s.id.clone(),
                    path,
                });
            }
        }
        Ok(())
    }

    pub fn write_manifest(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Serialized manifest file contents.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ManifestHeader {
            format: MANIFEST_FORMAT.to_string(),
            version: MANIFEST_VERSION,
            name: self.name.clone(),
            class_names: self.class_names.clone(),
            bias_attr_names: self.bias_attr_names.clone(),
            dominant_attr_map: self.dominant_attr_map.clone(),
            declared_conflict_ratio: self.declared_conflict_ratio,
        };
        let mut out = BufWriter::new(Vec::new());
        let to_err = |e: serde_json::Error| Error::InvalidManifest(e.to_string());
        serde_json::to_writer(&mut out, &header).map_err(to_err)?;
        out.write_all(b"\n").expect("vec write");
        for s in &self.samples {
            serde_json::to_writer(&mut out, s).map_err(to_err)?;
            out.write_all(b"\n").expect("vec write");
        }
        Ok(out.into_inner().expect("vec flush"))
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(crate::hashing::content_hash(&self.to_bytes()?))
    }

    /// The same manifest with image paths rewritten relative to `new_root`.
    pub fn rebased(&self, new_root: &Path) -> DatasetManifest {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.image = relative_path(&self.root.join(&s.image), new_root);
        }
        out.root = new_root.to_path_buf();
        out
    }

    pub fn composition(&self) -> CompositionReport {
        let mut report = CompositionReport {
            per_class: vec![ClassCounts::default(); self.num_classes()],
            ..Default::default()
        };
        for s in &self.samples {
            let cell = report.per_class[s.label].cell_mut(s.split);
            match s.group {
                Group::Aligned => cell.aligned += 1,
                Group::Conflict => cell.conflict += 1,
                Group::Unknown => cell.unknown += 1,
            }
            if s.split == Split::Train {
                match s.group {
                    Group::Aligned => report.train_aligned += 1,
                    Group::Conflict => report.train_conflict += 1,
                    Group::Unknown => report.train_unknown += 1,
                }
            } else {
                match s.group {
                    Group::Aligned => report.test_aligned += 1,
                    Group::Conflict => report.test_conflict += 1,
                    Group::Unknown => report.test_unknown += 1,
                }
            }
            report.total += 1;
        }
        let grouped = report.train_aligned + report.train_conflict;
        report.realized_conflict_ratio = if grouped == 0 {
            if report.train_unknown == 0 {
                Some(0.0)
            } else {
                None
            }
        } else {
            Some(report.train_conflict as f64 / grouped as f64)
        };
        report
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub aligned: usize,
    pub conflict: usize,
    pub unknown: usize,
}

impl GroupCounts {
    pub fn total(&self) -> usize {
        self.aligned + self.conflict + self.unknown
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub train: GroupCounts,
    pub test: GroupCounts,
}

impl ClassCounts {
    fn cell_mut(&mut self, split: Split) -> &mut GroupCounts {
        match split {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
        }
    }
}

/// Per-class, per-group counts and the realized train conflict ratio.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub per_class: Vec<ClassCounts>,
    pub train_aligned: usize,
    pub train_conflict: usize,
    pub train_unknown: usize,
    pub test_aligned: usize,
    pub test_conflict: usize,
    pub test_unknown: usize,
    pub total: usize,
    /// conflict / (conflict + aligned) over the train split; `None` when
    /// every train sample has an unknown group.
    pub realized_conflict_ratio: Option<f64>,
}

pub fn validate_composition(manifest: &DatasetManifest) -> CompositionReport {
    manifest.composition()
}

/// Path of `target` relative to `base`, walking up with `..` as needed.
pub fn relative_path(target: &Path, base: &Path) -> PathBuf {
    let (target_n, base_n) = (normalize(target), normalize(base));
    let t: Vec<Component> = target_n.components().collect();
    let b: Vec<Component> = base_n.components().collect();
    if t.first() != b.first() && (target.is_absolute() || base.is_absolute()) {
        return target.to_path_buf();
    }
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out
}

fn normalize(path: &Path) -> PathBuf {
    let mut out = PathBuf::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push("..");
                }
            }
            other => out.push(other.as_os_str()),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, label: usize, attr: Option<&str>, group: Group, split: Split) -> AttributedSample {
        AttributedSample {
            id: id.into(),
            image: PathBuf::from(format!("images/{id}.png")),
            label,
            bias_attr: attr.map(String::from),
            group,
            split,
        }
    }

    fn tiny() -> DatasetManifest {
        DatasetManifest {
            name: "tiny".into(),
            class_names: vec!["circle".into(), "square".into()],
            bias_attr_names: vec!["red".into(), "blue".into()],
            dominant_attr_map: [(0, "red".into()), (1, "blue".into())].into(),
            declared_conflict_ratio: 0.5,
            samples: vec![
                sample("s0", 0, Some("red"), Group::Aligned, Split::Train),
                sample("s1", 1, Some("red"), Group::Conflict, Split::Train),
                sample("s2", 1, Some("blue"), Group::Aligned, Split::Test),
                sample("s3", 0, None, Group::Unknown, Split::Test),
            ],
            root: PathBuf::from("."),
        }
    }

    #[test]
    fn valid_manifest_passes() {
        tiny().validate().unwrap();
    }

    #[test]
    fn duplicate_id_is_named() {
        let mut m = tiny();
        m.samples[1].id = "s0".into();
        match m.validate() {
            Err(Error::DuplicateId(id)) => assert_eq!(id, "s0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_out_of_range() {
        let mut m = tiny();
        m.samples[2].label = 5;
        assert!(matches!(m.validate(), Err(Error::LabelOutOfRange { label: 5, .. })));
    }

    #[test]
    fn group_must_match_attributes() {
        let mut m = tiny();
        m.samples[0].group = Group::Conflict;
        assert!(matches!(m.validate(), Err(Error::InvalidSample { .. })));
        let mut m = tiny();
        m.samples[3].group = Group::Aligned;
        assert!(m.validate().is_err());
    }

    #[test]
    fn ratio_mismatch_rejected() {
        let mut m = tiny();
        m.declared_conflict_ratio = 0.0;
        // 1 conflict of 2 vs 0 expected: off by exactly one, still accepted.
        m.validate().unwrap();
        m.samples.push(sample("s4", 1, Some("red"), Group::Conflict, Split::Train));
        assert!(matches!(m.validate(), Err(Error::InvalidManifest(_))));
    }

    #[test]
    fn composition_counts() {
        let r = tiny().composition();
        assert_eq!(r.total, 4);
        assert_eq!((r.train_aligned, r.train_conflict), (1, 1));
        assert_eq!((r.test_aligned, r.test_unknown), (1, 1));
        assert_eq!(r.realized_conflict_ratio, Some(0.5));
        let sum: usize = r.per_class.iter().map(|c| c.train.total() + c.test.total()).sum();
        assert_eq!(sum, 4);
    }

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_path(Path::new("/a/b/c.png"), Path::new("/a/d")),
            PathBuf::from("../b/c.png")
        );
        assert_eq!(
            relative_path(Path::new("run/data/x.png"), Path::new("run/trial-0")),
            PathBuf::from("../data/x.png")
        );
        assert_eq!(
            relative_path(Path::new("./run/data/x.png"), Path::new("run/data")),
            PathBuf::from("x.png")
        );
    }
}
