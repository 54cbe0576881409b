// SPDX-License-Identifier: Apache-2.0

//! Group-aware evaluation, embedding export, and energy/carbon accounting.

mod energy;
mod report;

pub use energy::{carbon_report, CarbonReport, EnergyEntry, EnergyLedger, Grams, DEFAULT_CARBON_INTENSITY};
pub use report::{accuracy_svg, compare_runs, energy_svg, ComparisonRow, ComparisonTable, ABSENT};

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Group, Split};
use crate::error::{Error, Result};
use crate::gce::{model_hash, TensorSet, TrainedModel};
use crate::nn::Network;
use crate::pool::map_bounded;

/// Accuracies on one split. Counts are kept so that every fraction is an
/// exact ratio of integers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub overall_acc: f64,
    pub aligned_acc: Option<f64>,
    pub conflict_acc: Option<f64>,
    /// `None` for classes absent from the split.
    pub per_class_acc: Vec<Option<f64>>,
    pub n_test: usize,
    pub n_correct: usize,
    pub n_aligned: usize,
    pub aligned_correct: usize,
    pub n_conflict: usize,
    pub conflict_correct: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Score `network` on `data`, whose ids must belong to `manifest`.
pub fn evaluate_tensors(network: &Network, data: &TensorSet, manifest: &DatasetManifest, parallelism: usize) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let index = manifest.id_index();
    let groups: Vec<Group> = data
        .ids
        .iter()
        .map(|id| {
            index
                .get(id.as_str())
                .map(|&i| manifest.samples[i].group)
                .ok_or_else(|| Error::InvalidParameter(format!("sample {id:?} not in manifest")))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let predictions = map_bounded(&rows, parallelism, |_, &i| network.predict(&data.inputs[i]));

    let n = manifest.num_classes();
    let mut per_class = vec![(0usize, 0usize); n];
    let mut m = EvalMetrics {
        overall_acc: 0.0,
        aligned_acc: None,
        conflict_acc: None,
        per_class_acc: Vec::new(),
        n_test: data.len(),
        n_correct: 0,
        n_aligned: 0,
        aligned_correct: 0,
        n_conflict: 0,
        conflict_correct: 0,
    };
    for ((&pred, &label), group) in predictions.iter().zip(&data.labels).zip(&groups) {
        let ok = usize::from(pred == label);
        m.n_correct += ok;
        per_class[label].0 += ok;
        per_class[label].1 += 1;
        match group {
            Group::Aligned => {
                m.n_aligned += 1;
                m.aligned_correct += ok;
            }
            Group::Conflict => {
                m.n_conflict += 1;
                m.conflict_correct += ok;
            }
            Group::Unknown => {}
        }
    }
    m.overall_acc = m.n_correct as f64 / m.n_test as f64;
    m.aligned_acc = ratio(m.aligned_correct, m.n_aligned);
    m.conflict_acc = ratio(m.conflict_correct, m.n_conflict);
    m.per_class_acc = per_class.into_iter().map(|(c, t)| ratio(c, t)).collect();
    Ok(m)
}

pub fn evaluate(model: &TrainedModel, manifest: &DatasetManifest, split: Split) -> Result<EvalMetrics> {
    if manifest.split(split).next().is_none() {
        return Err(Error::Empty(match split {
            Split::Test => "test split",
            Split::Train => "train split",
        }));
    }
    let data = TensorSet::load(manifest, split, model.input_size())?;
    evaluate_tensors(&model.network, &data, manifest, 1)
}

pub const EMBEDDINGS_FORMAT: &str = "biasamp-embeddings";
pub const PENULTIMATE: &str = "penultimate";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: usize,
    pub group: Group,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingHeader {
    pub format: String,
    pub version: u32,
    pub width: usize,
    pub layer: String,
    pub model_hash: String,
}

/// Penultimate activations of every sample in `split`.
pub fn embeddings(model: &TrainedModel, manifest: &DatasetManifest, split: Split, layer: &str) -> Result<(EmbeddingHeader, Vec<EmbeddingRecord>)> {
    if layer != PENULTIMATE {
        return Err(Error::InvalidParameter(format!("layer {layer:?} not found; only {PENULTIMATE:?} is exported")));
    }
    let width = model
        .network
        .feature_width()
        .ok_or_else(|| Error::InvalidParameter(format!("{} has no penultimate layer", model.network.arch.id())))?;
    let data = TensorSet::load(manifest, split, model.input_size())?;
    let index = manifest.id_index();
    let records = data
        .ids
        .iter()
        .zip(&data.inputs)
        .zip(&data.labels)
        .map(|((id, x), &label)| EmbeddingRecord {
            id: id.clone(),
            label,
            group: manifest.samples[index[id.as_str()]].group,
            features: model.network.features(x).expect("network has features"),
        })
        .collect();
    let header = EmbeddingHeader {
        format: EMBEDDINGS_FORMAT.into(),
        version: 1,
        width,
        layer: layer.into(),
        model_hash: model_hash(model),
    };
    Ok((header, records))
}

pub fn export_embeddings(model: &TrainedModel, manifest: &DatasetManifest, split: Split, layer: &str, path: &Path) -> Result<(EmbeddingHeader, Vec<EmbeddingRecord>)> {
    let (header, records) = embeddings(model, manifest, split, layer)?;
    let mut out = serde_json::to_vec(&header).expect("serializable");
    out.push(b'\n');
    for r in &records {
        out.extend(serde_json::to_vec(r).expect("serializable"));
        out.push(b'\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))?;
    Ok((header, records))
}

pub fn read_embeddings(path: &Path) -> Result<(EmbeddingHeader, Vec<EmbeddingRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: EmbeddingHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| Error::parse(path, 1, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let r: EmbeddingRecord = serde_json::from_str(&line.map_err(|e| Error::io(path, e))?).map_err(|e| Error::parse(path, i + 2, e))?;
        if r.features.len() != header.width {
            return Err(Error::parse(path, i + 2, format!("width {} != header {}", r.features.len(), header.width)));
        }
        records.push(r);
    }
    Ok((header, records))
}

/// Mean pairwise Euclidean distance between per-class centroids of the
/// selected records, after scaling each vector to unit length. `None` when
/// fewer than two classes are present.
pub fn mean_centroid_distance(records: &[EmbeddingRecord], select: impl Fn(&EmbeddingRecord) -> bool) -> Option<f64> {
    let mut sums: std::collections::BTreeMap<usize, (Vec<f64>, usize)> = Default::default();
    for r in records.iter().filter(|r| select(r)) {
        let norm = r.features.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { 1.0 / norm } else { 0.0 };
        let entry = sums.entry(r.label).or_insert_with(|| (vec![0.0; r.features.len()], 0));
        for (s, v) in entry.0.iter_mut().zip(&r.features) {
            *s += v * scale;
        }
        entry.1 += 1;
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_values()
        .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
        .collect();
    if centroids.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            total += centroids[i]
                .iter()
                .zip(&centroids[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}
