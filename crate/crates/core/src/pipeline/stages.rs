// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::ExperimentConfig;
use super::{report, Pipeline, Stage};
use crate::caption::{build_corpus, read_corpus, write_corpus};
use crate::dataset::{load_manifest, synth_generate, DatasetManifest, Group, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_embeddings, mean_centroid_distance, EvalMetrics, PENULTIMATE};
use crate::extract::{
    extract_topk, extract_topk_balanced, extraction_purity, rank, read_candidates, write_candidates,
    ConflictCandidateSet,
};
use crate::filter::{filter_corpus, frequency_table, read_filtered, write_filtered, FilteredCorpus};
use crate::gce::{
    load_checkpoint, model_hash, per_sample_losses, save_checkpoint, train, trial_seed, write_training_log,
    ModelRole,
};
use crate::generate::{amplify, assemble_debiased, read_generated, write_generated};
use crate::hashing::file_hash;

pub(super) const MANIFEST: &str = "manifest.jsonl";
const CHECKPOINT: &str = "model.ckpt";
const TRAIN_LOG: &str = "train_log.jsonl";
const CANDIDATES: &str = "candidates.jsonl";
const RANKING: &str = "ranking.tsv";
const CORPUS: &str = "corpus.jsonl";
const FILTERED: &str = "filtered.jsonl";
const FREQUENCY: &str = "frequency.tsv";
const GENERATED: &str = "generated.jsonl";
pub(super) const TRIAL_METRICS: &str = "metrics.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub k: usize,
    pub selected: usize,
    pub purity: Option<f64>,
    /// Purity of the top-n of the full loss ranking, keyed by n.
    pub purity_at: BTreeMap<usize, Option<f64>>,
    pub per_class: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptionStats {
    pub samples: usize,
    pub records: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub enabled: bool,
    pub kept: usize,
    pub dropped: usize,
    pub top_f_words: Vec<String>,
    pub class_words_in_top_f: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub target: usize,
    pub generated: usize,
    pub skipped_no_label: usize,
    pub per_label: BTreeMap<usize, usize>,
}

/// Contents of `trial-<i>/evaluate/metrics.json`. Holds no timings, so
/// identical deterministic runs write identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub trial: usize,
    pub seed: u64,
    /// Test-split metrics per model role.
    pub vanilla: EvalMetrics,
    pub biased: EvalMetrics,
    pub debiased: EvalMetrics,
    /// The biased model on the original train split.
    pub biased_train: EvalMetrics,
    pub extraction: ExtractionStats,
    pub caption: CaptionStats,
    pub filter: FilterStats,
    pub generation: GenerationStats,
    /// Mean distance between per-class centroids of unit-normalized
    /// penultimate features, keyed e.g. `debiased.all` or `biased.conflict`.
    pub centroid_distance: BTreeMap<String, Option<f64>>,
}

/// The part of the config a stage's output depends on, as canonical JSON.
pub(super) fn config_slice(cfg: &ExperimentConfig, stage: Stage, trial: usize) -> Result<String> {
    let seed = trial_seed(cfg.seed, trial);
    let value = match stage {
        Stage::Synth => match (&cfg.dataset.synth, &cfg.dataset.manifest) {
            (Some(spec), _) => json!({ "synth": spec, "seed": cfg.seed }),
            (None, Some(path)) => json!({ "manifest": file_hash(path)? }),
            (None, None) => return Err(Error::Config("no dataset".into())),
        },
        Stage::TrainVanilla => json!(cfg.trial_classifier(&cfg.vanilla_config(), trial)),
        Stage::TrainBiased => json!(cfg.trial_classifier(&cfg.biased, trial)),
        Stage::TrainDebiased => json!(cfg.trial_classifier(&cfg.debiased, trial)),
        Stage::Extract => json!({ "extraction": cfg.extraction, "q": cfg.biased.q }),
        Stage::Caption => json!({ "backend": cfg.caption.backend, "m": cfg.caption.m, "seed": seed }),
        Stage::Filter => json!({ "filter": cfg.filter, "class_vocab": cfg.generation.class_vocab }),
        Stage::Generate => json!({
            "backend": cfg.generation.backend,
            "target": cfg.generation.target,
            "size": cfg.generation.size,
            "class_vocab": cfg.generation.class_vocab,
            "seed": seed,
        }),
        Stage::Assemble => json!({ "oversample_topk": cfg.generation.oversample_topk }),
        Stage::Evaluate => json!({
            "export_embeddings": cfg.eval.export_embeddings,
            "purity_at": cfg.eval.purity_at,
            "trial": trial,
            "seed": seed,
        }),
        Stage::Report => json!({ "trials": cfg.eval.trials, "energy": cfg.energy }),
    };
    Ok(value.to_string())
}

pub(super) fn execute(p: &Pipeline, stage: Stage, trial: usize, out: &Path) -> Result<()> {
    let cfg = p.config();
    let at = |s: Stage| p.run_dir().join(s.dir(trial));
    let dataset = || load_manifest(&p.run_dir().join(Stage::Synth.dir(0)).join(MANIFEST));
    let seed = trial_seed(cfg.seed, trial);
    match stage {
        Stage::Synth => synth(cfg, out),
        Stage::TrainVanilla => fit(&dataset()?, cfg, &cfg.vanilla_config(), trial, ModelRole::Vanilla, out),
        Stage::TrainBiased => fit(&dataset()?, cfg, &cfg.biased, trial, ModelRole::Biased, out),
        Stage::TrainDebiased => {
            let manifest = load_manifest(&at(Stage::Assemble).join(MANIFEST))?;
            fit(&manifest, cfg, &cfg.debiased, trial, ModelRole::Debiased, out)
        }
        Stage::Extract => {
            let manifest = dataset()?;
            let model = load_checkpoint(&at(Stage::TrainBiased).join(CHECKPOINT))?;
            let scores = per_sample_losses(&model, &manifest, cfg.extraction.ranking_loss, cfg.biased.q)?;
            if !scores.failures.is_empty() {
                log::warn!("{} sample(s) could not be scored", scores.failures.len());
                let text: String = scores.failures.iter().map(|(id, r)| format!("{id}\t{r}\n")).collect();
                write(&out.join("unscored.tsv"), text.as_bytes())?;
            }
            let ranking = rank(&scores.entries)?;
            let text: String = ranking.entries().iter().map(|(id, l)| format!("{id}\t{l}\n")).collect();
            write(&out.join(RANKING), text.as_bytes())?;
            let source = model_hash(&model);
            let set = if cfg.extraction.per_class_balance {
                let labels: HashMap<String, usize> =
                    manifest.split(Split::Train).map(|s| (s.id.clone(), s.label)).collect();
                extract_topk_balanced(&ranking, cfg.extraction.k, &labels, manifest.num_classes(), &source)?
            } else {
                extract_topk(&ranking, cfg.extraction.k, &source)?
            };
            write_candidates(&set, &out.join(CANDIDATES))
        }
        Stage::Caption => {
            let manifest = dataset()?;
            let candidates = read_candidates(&at(Stage::Extract).join(CANDIDATES))?;
            let captioner = p.registry().captioner(&cfg.caption.backend)?;
            let corpus = build_corpus(
                &candidates,
                &manifest,
                captioner.as_ref(),
                cfg.caption.m,
                seed,
                cfg.caption.parallelism,
            )?;
            if !corpus.failures.is_empty() {
                log::warn!("{} sample(s) could not be captioned", corpus.failures.len());
            }
            write_corpus(&corpus, &out.join(CORPUS))
        }
        Stage::Filter => {
            let manifest = dataset()?;
            let corpus = read_corpus(&at(Stage::Caption).join(CORPUS))?;
            let spec = cfg.filter_spec(&manifest.class_names);
            write(&out.join(FREQUENCY), frequency_table(&corpus.records, &spec.stop_words).to_report().as_bytes())?;
            let filtered = if cfg.filter.enabled {
                filter_corpus(&corpus, &spec)?
            } else {
                FilteredCorpus::passthrough(&corpus)
            };
            write_filtered(&filtered, &out.join(FILTERED))
        }
        Stage::Generate => {
            let manifest = dataset()?;
            let filtered = read_filtered(&at(Stage::Filter).join(FILTERED))?;
            let generator = p.registry().generator(&cfg.generation.backend)?;
            let set = amplify(
                &filtered,
                generator.as_ref(),
                &cfg.class_vocab(&manifest.class_names),
                cfg.generation.target.resolve(&manifest),
                cfg.generation.size,
                seed,
                cfg.generation.parallelism,
                out,
            )?;
            write_generated(&set, &out.join(GENERATED))
        }
        Stage::Assemble => {
            let manifest = dataset()?;
            let generated = read_generated(&at(Stage::Generate).join(GENERATED))?;
            let oversample = if cfg.generation.oversample_topk {
                Some(read_candidates(&at(Stage::Extract).join(CANDIDATES))?)
            } else {
                None
            };
            let root = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
            let deb = assemble_debiased(&manifest, &generated, &root, oversample.as_ref())?;
            deb.manifest.write_manifest(&out.join(MANIFEST))?;
            write_json(&out.join("provenance.json"), &deb.provenance)?;
            write_json(&out.join("composition.json"), &deb.composition)
        }
        Stage::Evaluate => {
            let metrics = evaluate_trial(p, trial, out)?;
            write_json(&out.join(TRIAL_METRICS), &metrics)
        }
        Stage::Report => report::write_report(p, out),
    }
}

fn synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    match (&cfg.dataset.synth, &cfg.dataset.manifest) {
        (Some(spec), _) => {
            let spec = crate::dataset::SynthShapesSpec {
                seed: cfg.seed,
                ..spec.clone()
            };
            synth_generate(&spec, out)?;
            Ok(())
        }
        (None, Some(path)) => {
            // An existing dataset is referenced in place, not copied.
            let m = load_manifest(path)?;
            let root = std::path::absolute(out).map_err(|e| Error::io(out, e))?;
            m.rebased(&root).write_manifest(&out.join(MANIFEST))
        }
        (None, None) => Err(Error::Config("no dataset".into())),
    }
}

fn fit(
    manifest: &DatasetManifest,
    cfg: &ExperimentConfig,
    base: &crate::gce::ClassifierConfig,
    trial: usize,
    role: ModelRole,
    out: &Path,
) -> Result<()> {
    let mut model = train(manifest, &cfg.trial_classifier(base, trial), role)?;
    save_checkpoint(&mut model, &out.join(CHECKPOINT))?;
    write_training_log(&model, &out.join(TRAIN_LOG))
}

fn evaluate_trial(p: &Pipeline, trial: usize, out: &Path) -> Result<TrialMetrics> {
    let cfg = p.config();
    let at = |s: Stage| p.run_dir().join(s.dir(trial));
    let manifest = load_manifest(&p.run_dir().join(Stage::Synth.dir(0)).join(MANIFEST))?;
    let vanilla = load_checkpoint(&at(Stage::TrainVanilla).join(CHECKPOINT))?;
    let biased = load_checkpoint(&at(Stage::TrainBiased).join(CHECKPOINT))?;
    let debiased = load_checkpoint(&at(Stage::TrainDebiased).join(CHECKPOINT))?;

    let candidates = read_candidates(&at(Stage::Extract).join(CANDIDATES))?;
    let ranking = read_ranking(&at(Stage::Extract).join(RANKING))?;
    let mut purity_at = BTreeMap::new();
    for &n in &cfg.eval.purity_at {
        let prefix = ConflictCandidateSet {
            sample_ids: ranking.iter().take(n).cloned().collect(),
            losses: Vec::new(),
            k: n,
            source_model: candidates.source_model.clone(),
        };
        purity_at.insert(n, extraction_purity(&prefix, &manifest)?);
    }
    let extraction = ExtractionStats {
        k: candidates.k,
        selected: candidates.len(),
        purity: extraction_purity(&candidates, &manifest)?,
        purity_at,
        per_class: crate::extract::per_class_counts(&candidates, &manifest),
    };

    let corpus = read_corpus(&at(Stage::Caption).join(CORPUS))?;
    let filtered = read_filtered(&at(Stage::Filter).join(FILTERED))?;
    let generated = read_generated(&at(Stage::Generate).join(GENERATED))?;

    let mut centroid_distance = BTreeMap::new();
    if cfg.eval.export_embeddings {
        for (name, model) in [("biased", &biased), ("debiased", &debiased)] {
            let path = out.join(format!("embeddings-{name}.jsonl"));
            let (_, records) = export_embeddings(model, &manifest, Split::Test, PENULTIMATE, &path)?;
            centroid_distance.insert(format!("{name}.all"), mean_centroid_distance(&records, |_| true));
            centroid_distance.insert(
                format!("{name}.conflict"),
                mean_centroid_distance(&records, |r| r.group == Group::Conflict),
            );
        }
    }

    Ok(TrialMetrics {
        trial,
        seed: trial_seed(cfg.seed, trial),
        vanilla: evaluate(&vanilla, &manifest, Split::Test)?,
        biased: evaluate(&biased, &manifest, Split::Test)?,
        debiased: evaluate(&debiased, &manifest, Split::Test)?,
        biased_train: evaluate(&biased, &manifest, Split::Train)?,
        extraction,
        caption: CaptionStats {
            samples: corpus.sample_ids().len(),
            records: corpus.records.len(),
            failures: corpus.failures.len(),
        },
        filter: FilterStats {
            enabled: filtered.enabled,
            kept: filtered.kept.len(),
            dropped: filtered.dropped.len(),
            top_f_words: filtered.top_f_words.clone(),
            class_words_in_top_f: filtered.class_words_in_top_f.clone(),
        },
        generation: GenerationStats {
            target: generated.target,
            generated: generated.samples.len(),
            skipped_no_label: generated.skipped_no_label,
            per_label: generated.per_label_counts(),
        },
        centroid_distance,
    })
}

fn read_ranking(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split('\t').next())
        .filter(|id| !id.is_empty())
        .map(str::to_string)
        .collect())
}

pub(super) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(super) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    write(path, &bytes)
}

pub(super) fn trial_metrics_path(run_dir: &Path, trial: usize) -> PathBuf {
    run_dir.join(Stage::Evaluate.dir(trial)).join(TRIAL_METRICS)
}
