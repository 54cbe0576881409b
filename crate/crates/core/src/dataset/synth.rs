// SPDX-License-Identifier: Apache-2.0

//! Deterministic synthetic biased dataset: one colored shape per image,
//! with shape as the intrinsic attribute and color as the bias attribute.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributedSample, DatasetManifest, Group, Split};
use crate::error::{Error, Result};
use crate::hashing::derive_seed;
use crate::shapes::{self, Shape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthShapesSpec {
    pub num_classes: usize,
    pub shape_vocab: Vec<String>,
    pub color_vocab: Vec<String>,
    pub conflict_ratio: f64,
    pub train_count: usize,
    pub test_count: usize,
    pub image_size: u32,
    pub seed: u64,
}

impl Default for SynthShapesSpec {
    fn default() -> Self {
        SynthShapesSpec::new(4, 0.01, 2000, 400, 0)
    }
}

impl SynthShapesSpec {
    /// `num_classes` shapes and colors taken from the front of the
    /// built-in vocabularies.
    pub fn new(num_classes: usize, conflict_ratio: f64, train_count: usize, test_count: usize, seed: u64) -> Self {
        SynthShapesSpec {
            num_classes,
            shape_vocab: Shape::ALL.iter().take(num_classes).map(|s| s.name().to_string()).collect(),
            color_vocab: shapes::PALETTE.iter().take(num_classes).map(|(n, _)| n.to_string()).collect(),
            conflict_ratio,
            train_count,
            test_count,
            image_size: 32,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes {} < 2", self.num_classes));
        }
        if self.shape_vocab.len() != self.num_classes {
            return bad(format!(
                "shape_vocab has {} entries for {} classes",
                self.shape_vocab.len(),
                self.num_classes
            ));
        }
        if self.color_vocab.len() < self.num_classes {
            return bad(format!(
                "color_vocab has {} entries, need at least {}",
                self.color_vocab.len(),
                self.num_classes
            ));
        }
        if !(0.0..=0.5).contains(&self.conflict_ratio) {
            return bad(format!("conflict ratio {} outside [0, 0.5]", self.conflict_ratio));
        }
        if self.train_count == 0 {
            return bad("train_count must be positive".into());
        }
        if self.image_size < 8 {
            return bad(format!("image_size {} < 8", self.image_size));
        }
        for s in &self.shape_vocab {
            if Shape::from_name(s).is_none() {
                return bad(format!("unknown shape {s:?}"));
            }
        }
        for c in &self.color_vocab {
            if !shapes::is_color(c) {
                return bad(format!("unknown color {c:?}"));
            }
        }
        let mut seen = std::collections::HashSet::new();
        if !self.color_vocab.iter().all(|c| seen.insert(c)) {
            return bad("duplicate color in color_vocab".into());
        }
        Ok(())
    }
}

/// Number of conflict samples: round-half-up of `ratio · n`, at least one
/// whenever the ratio is positive.
pub fn conflict_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 || n == 0 {
        return 0;
    }
    let rounded = (ratio * n as f64 + 0.5 + 1e-9).floor() as usize;
    rounded.clamp(1, n)
}

/// The manifest `synth_generate` would write, without rendering images.
pub fn synth_plan(spec: &SynthShapesSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let n_classes = spec.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, "synth-plan"));
    let dominant: BTreeMap<usize, String> = (0..n_classes)
        .map(|c| (c, spec.color_vocab[c].clone()))
        .collect();
    let off_colors = |label: usize| -> Vec<&String> {
        spec.color_vocab.iter().filter(|c| **c != dominant[&label]).collect()
    };

    let mut labels: Vec<usize> = (0..spec.train_count).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut order: Vec<usize> = (0..spec.train_count).collect();
    order.shuffle(&mut rng);
    let n_conflict = conflict_count(spec.conflict_ratio, spec.train_count);
    let mut is_conflict = vec![false; spec.train_count];
    for &i in &order[..n_conflict] {
        is_conflict[i] = true;
    }

    let mut samples = Vec::with_capacity(spec.train_count + spec.test_count);
    for (i, &label) in labels.iter().enumerate() {
        let id = format!("train-{i:05}");
        let (attr, group) = if is_conflict[i] {
            let pool = off_colors(label);
            (pool[rng.random_range(0..pool.len())].clone(), Group::Conflict)
        } else {
            (dominant[&label].clone(), Group::Aligned)
        };
        samples.push(AttributedSample {
            image: PathBuf::from(format!("images/{id}.png")),
            id,
            label,
            bias_attr: Some(attr),
            group,
            split: Split::Train,
        });
    }

    let mut test = Vec::with_capacity(spec.test_count);
    for label in 0..n_classes {
        let k = spec.test_count / n_classes + usize::from(label < spec.test_count % n_classes);
        for j in 0..k {
            // Alternate so each class is split evenly between the groups.
            if j % 2 == 0 {
                test.push((label, dominant[&label].clone(), Group::Aligned));
            } else {
                let pool = off_colors(label);
                test.push((label, pool[rng.random_range(0..pool.len())].clone(), Group::Conflict));
            }
        }
    }
    test.shuffle(&mut rng);
    for (i, (label, attr, group)) in test.into_iter().enumerate() {
        let id = format!("test-{i:05}");
        samples.push(AttributedSample {
            image: PathBuf::from(format!("images/{id}.png")),
            id,
            label,
            bias_attr: Some(attr),
            group,
            split: Split::Test,
        });
    }

    let manifest = DatasetManifest {
        name: format!("synth-shapes-n{}-r{}-s{}", n_classes, spec.conflict_ratio, spec.seed),
        class_names: spec.shape_vocab.clone(),
        bias_attr_names: spec.color_vocab.clone(),
        dominant_attr_map: dominant,
        declared_conflict_ratio: spec.conflict_ratio,
        samples,
        root: PathBuf::from("."),
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Render one planned sample. The image depends only on the run seed and
/// the sample's id and attributes.
pub fn render_sample(spec: &SynthShapesSpec, manifest: &DatasetManifest, sample: &AttributedSample) -> image::RgbImage {
    let shape = Shape::from_name(&manifest.class_names[sample.label]).expect("validated shape");
    let color = sample.bias_attr.as_deref().and_then(shapes::color_rgb).expect("validated color");
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &sample.id));
    shapes::render(spec.image_size, shape, color, &mut rng)
}

/// Plan, render and write the dataset under `out_dir` (`manifest.jsonl`
/// plus `images/`).
pub fn synth_generate(spec: &SynthShapesSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let mut manifest = synth_plan(spec)?;
    manifest.root = out_dir.to_path_buf();
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    for sample in &manifest.samples {
        let img = render_sample(spec, &manifest, sample);
        let path = manifest.image_path(sample);
        img.save(&path)
            .map_err(|e| Error::Domain(format!("write {}: {e}", path.display())))?;
    }
    manifest.write_manifest(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}
