// SPDX-License-Identifier: Apache-2.0

//! Top-K high-loss selection of bias-conflict candidates.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetManifest, Group};
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 100;
pub const CANDIDATES_FORMAT: &str = "biasamp-candidates";

/// Losses sorted descending, ties broken by id ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct LossRanking {
    entries: Vec<(String, f64)>,
}

impl LossRanking {
    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_order(a: &(String, f64), b: &(String, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

fn check_entries(losses: &[(String, f64)]) -> Result<()> {
    let mut seen = HashSet::with_capacity(losses.len());
    for (id, loss) in losses {
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                id: id.clone(),
                value: *loss,
            });
        }
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

pub fn rank(losses: &[(String, f64)]) -> Result<LossRanking> {
    check_entries(losses)?;
    let mut entries = losses.to_vec();
    entries.sort_by(rank_order);
    Ok(LossRanking { entries })
}

/// Top-`k` entries by partial selection; equal to `rank(losses)` truncated
/// to `k` but without sorting the tail.
pub fn select_topk(losses: &[(String, f64)], k: usize) -> Result<Vec<(String, f64)>> {
    if k < 1 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    check_entries(losses)?;
    let mut entries = losses.to_vec();
    if k < entries.len() {
        entries.select_nth_unstable_by(k - 1, rank_order);
        entries.truncate(k);
    }
    entries.sort_by(rank_order);
    Ok(entries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConflictCandidateSet {
    pub sample_ids: Vec<String>,
    pub losses: Vec<f64>,
    pub k: usize,
    /// Content hash of the checkpoint whose losses produced the ranking.
    pub source_model: String,
}

impl ConflictCandidateSet {
    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }
}

/// First `min(k, n)` entries of the ranking.
pub fn extract_topk(ranking: &LossRanking, k: usize, source_model: &str) -> Result<ConflictCandidateSet> {
    if k < 1 {
        return Err(Error::InvalidParameter("K must be at least 1".into()));
    }
    let top = &ranking.entries[..k.min(ranking.len())];
    Ok(ConflictCandidateSet {
        sample_ids: top.iter().map(|(id, _)| id.clone()).collect(),
        losses: top.iter().map(|(_, l)| *l).collect(),
        k,
        source_model: source_model.to_string(),
    })
}

/// Top-`k` with per-class quotas (`k / N`, remainder to the lowest class
/// indices). Slots a class cannot fill go to the best remaining entries
/// globally. Output keeps ranking order.
pub fn extract_topk_balanced(
    ranking: &LossRanking,
    k: usize,
    labels: &HashMap<String, usize>,
    num_classes: usize,
    source_model: &str,
) -> Result<ConflictCandidateSet> {
    if k < 1 || num_classes == 0 {
        return Err(Error::InvalidParameter("K and class count must be at least 1".into()));
    }
    let mut quota: Vec<usize> = (0..num_classes)
        .map(|c| k / num_classes + usize::from(c < k % num_classes))
        .collect();
    let mut chosen = vec![false; ranking.len()];
    let mut taken = 0;
    for (i, (id, _)) in ranking.entries.iter().enumerate() {
        let label = *labels
            .get(id)
            .ok_or_else(|| Error::InvalidParameter(format!("no label for {id:?}")))?;
        if label < num_classes && quota[label] > 0 {
            quota[label] -= 1;
            chosen[i] = true;
            taken += 1;
        }
    }
    for c in chosen.iter_mut() {
        if taken >= k {
            break;
        }
        if !*c {
            *c = true;
            taken += 1;
        }
    }
    let picked: Vec<&(String, f64)> = ranking
        .entries
        .iter()
        .zip(&chosen)
        .filter_map(|(e, &c)| c.then_some(e))
        .collect();
    Ok(ConflictCandidateSet {
        sample_ids: picked.iter().map(|(id, _)| id.clone()).collect(),
        losses: picked.iter().map(|(_, l)| *l).collect(),
        k,
        source_model: source_model.to_string(),
    })
}

/// Fraction of candidates whose true group is conflict; `None` when any
/// candidate's group is unknown (or the set is empty).
pub fn extraction_purity(candidates: &ConflictCandidateSet, manifest: &DatasetManifest) -> Result<Option<f64>> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let index = manifest.id_index();
    let mut conflict = 0usize;
    for id in &candidates.sample_ids {
        let i = *index
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidParameter(format!("candidate {id:?} not in manifest")))?;
        match manifest.samples[i].group {
            Group::Conflict => conflict += 1,
            Group::Aligned => {}
            Group::Unknown => return Ok(None),
        }
    }
    Ok(Some(conflict as f64 / candidates.len() as f64))
}

#[derive(Serialize, Deserialize)]
struct CandidateHeader {
    format: String,
    version: u32,
    k: usize,
    source_checkpoint_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CandidateLine {
    id: String,
    loss: f64,
}

pub fn candidates_to_bytes(set: &ConflictCandidateSet) -> Vec<u8> {
    let mut out = serde_json::to_vec(&CandidateHeader {
        format: CANDIDATES_FORMAT.into(),
        version: 1,
        k: set.k,
        source_checkpoint_hash: set.source_model.clone(),
    })
    .expect("serializable");
    out.push(b'\n');
    for (id, loss) in set.sample_ids.iter().zip(&set.losses) {
        out.extend(
            serde_json::to_vec(&CandidateLine {
                id: id.clone(),
                loss: *loss,
            })
            .expect("serializable"),
        );
        out.push(b'\n');
    }
    out
}

pub fn write_candidates(set: &ConflictCandidateSet, path: &Path) -> Result<()> {
    std::fs::write(path, candidates_to_bytes(set)).map_err(|e| Error::io(path, e))
}

pub fn read_candidates(path: &Path) -> Result<ConflictCandidateSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header: CandidateHeader = match lines.next() {
        Some(l) => serde_json::from_str(&l.map_err(|e| Error::io(path, e))?).map_err(|e| Error::parse(path, 1, e))?,
        None => return Err(Error::parse(path, 1, "missing header")),
    };
    if header.format != CANDIDATES_FORMAT {
        return Err(Error::parse(path, 1, format!("unexpected format {:?}", header.format)));
    }
    let mut set = ConflictCandidateSet {
        sample_ids: Vec::new(),
        losses: Vec::new(),
        k: header.k,
        source_model: header.source_checkpoint_hash,
    };
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CandidateLine = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 2, e))?;
        set.sample_ids.push(entry.id);
        set.losses.push(entry.loss);
    }
    Ok(set)
}

/// Count of candidates per class label.
pub fn per_class_counts(candidates: &ConflictCandidateSet, manifest: &DatasetManifest) -> BTreeMap<usize, usize> {
    let index = manifest.id_index();
    let mut out = BTreeMap::new();
    for id in &candidates.sample_ids {
        if let Some(&i) = index.get(id.as_str()) {
            *out.entry(manifest.samples[i].label).or_insert(0) += 1;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(v: &[(&str, f64)]) -> Vec<(String, f64)> {
        v.iter().map(|(a, b)| (a.to_string(), *b)).collect()
    }

    #[test]
    fn ranks_descending() {
        let r = rank(&l(&[("a", 0.1), ("b", 5.0), ("c", 0.3), ("d", 2.2)])).unwrap();
        let ids: Vec<&str> = r.entries().iter().map(|(i, _)| i.as_str()).collect();
        assert_eq!(ids, ["b", "d", "c", "a"]);
        let top = extract_topk(&r, 2, "h").unwrap();
        assert_eq!(top.sample_ids, ["b", "d"]);
        assert_eq!(extract_topk(&r, 10, "h").unwrap().len(), 4);
    }

    #[test]
    fn ties_break_by_id() {
        let r = rank(&l(&[("b", 1.0), ("a", 1.0)])).unwrap();
        assert_eq!(r.entries()[0].0, "a");
    }

    #[test]
    fn rejects_non_finite_and_bad_k() {
        match rank(&l(&[("a", 1.0), ("x", f64::NAN)])) {
            Err(Error::NonFiniteLoss { id, .. }) => assert_eq!(id, "x"),
            other => panic!("{other:?}"),
        }
        assert!(rank(&l(&[("a", f64::INFINITY)])).is_err());
        let r = rank(&l(&[("a", 1.0)])).unwrap();
        assert!(extract_topk(&r, 0, "h").is_err());
        assert!(select_topk(&l(&[("a", 1.0)]), 0).is_err());
    }

    #[test]
    fn balanced_quota() {
        let r = rank(&l(&[("a", 9.0), ("b", 8.0), ("c", 7.0), ("d", 1.0)])).unwrap();
        let labels: HashMap<String, usize> = [("a", 0), ("b", 0), ("c", 0), ("d", 1)]
            .iter()
            .map(|(i, c)| (i.to_string(), *c))
            .collect();
        let s = extract_topk_balanced(&r, 2, &labels, 2, "h").unwrap();
        assert_eq!(s.sample_ids, ["a", "d"]);
        // Class 1 has one sample, so its spare slot falls back to the global order.
        let s = extract_topk_balanced(&r, 4, &labels, 2, "h").unwrap();
        assert_eq!(s.sample_ids, ["a", "b", "c", "d"]);
    }
}
