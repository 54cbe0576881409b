// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SynthShapesSpec;
use crate::error::{Error, Result};
use crate::extract::DEFAULT_K;
use crate::filter::{default_stop_words, FilterSpec, WordBudget};
use crate::gce::{ClassifierConfig, LossMode};
use crate::generate::{ClassVocab, GenerationTarget, DEFAULT_GENERATION_SIZE};

/// One experiment, as read from a TOML file.
///
/// The global `seed` drives everything: the synthetic dataset, and for
/// trial `i` the training, captioning and generation seeds (`seed + i`).
/// The `seed` fields inside sub-sections are overwritten with it, and so
/// is every classifier's `deterministic` flag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub dataset: DatasetSection,
    pub biased: ClassifierConfig,
    /// Baseline arm; defaults to the `debiased` settings.
    pub vanilla: Option<ClassifierConfig>,
    pub extraction: ExtractionSection,
    pub caption: CaptionSection,
    pub filter: FilterSection,
    pub generation: GenerationSection,
    pub debiased: ClassifierConfig,
    pub eval: EvalSection,
    pub energy: EnergySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            deterministic: true,
            dataset: DatasetSection::default(),
            biased: ClassifierConfig::desk_scale(LossMode::Gce),
            vanilla: None,
            extraction: ExtractionSection::default(),
            caption: CaptionSection::default(),
            filter: FilterSection::default(),
            generation: GenerationSection::default(),
            debiased: ClassifierConfig::desk_scale(LossMode::Ce),
            eval: EvalSection::default(),
            energy: EnergySection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub synth: Option<SynthShapesSpec>,
    /// Path to an existing manifest, relative to the config file.
    pub manifest: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            synth: Some(SynthShapesSpec::default()),
            manifest: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub k: usize,
    pub ranking_loss: LossMode,
    pub per_class_balance: bool,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        ExtractionSection {
            k: DEFAULT_K,
            ranking_loss: LossMode::Ce,
            per_class_balance: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaptionSection {
    pub backend: String,
    pub m: usize,
    pub parallelism: usize,
}

impl Default for CaptionSection {
    fn default() -> Self {
        CaptionSection {
            backend: "oracle".into(),
            m: crate::caption::DEFAULT_CAPTIONS_PER_SAMPLE,
            parallelism: crate::caption::DEFAULT_PARALLELISM,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub enabled: bool,
    pub f: WordBudget,
    /// Replaces the bundled list when set.
    pub stop_words: Option<Vec<String>>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            enabled: true,
            f: WordBudget::Auto,
            stop_words: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub backend: String,
    pub target: GenerationTarget,
    pub size: u32,
    pub parallelism: usize,
    /// Add the extracted top-K samples to the debiased set a second time.
    pub oversample_topk: bool,
    /// Class name to label words; defaults to the tokens of each name.
    pub class_vocab: Option<BTreeMap<String, Vec<String>>>,
}

impl Default for GenerationSection {
    fn default() -> Self {
        GenerationSection {
            backend: "oracle".into(),
            target: GenerationTarget::Balance,
            size: DEFAULT_GENERATION_SIZE,
            parallelism: 4,
            oversample_topk: false,
            class_vocab: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub trials: usize,
    pub export_embeddings: bool,
    /// Extra prefix sizes at which extraction purity is reported.
    pub purity_at: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            trials: 3,
            export_embeddings: true,
            purity_at: vec![20],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergySection {
    /// Assumed constant power draw while a stage runs.
    pub device_watts: f64,
    /// g CO₂eq per kWh.
    pub carbon_intensity: f64,
}

impl Default for EnergySection {
    fn default() -> Self {
        EnergySection {
            device_watts: 15.0,
            carbon_intensity: crate::eval::DEFAULT_CARBON_INTENSITY,
        }
    }
}

impl ExperimentConfig {
    /// Parse TOML; a relative `dataset.manifest` is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(m) = &cfg.dataset.manifest {
            if m.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.dataset.manifest = Some(base.join(m));
            }
        }
        Ok(cfg)
    }

    /// Parse TOML layered over [`ExperimentConfig::default`], so a partial
    /// `[biased]` table still trains with GCE and desk-scale settings.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut base = toml::Table::try_from(ExperimentConfig::default()).expect("default config serializes");
        if user.contains_key("dataset") {
            base.remove("dataset");
        }
        let vanilla = user.remove("vanilla");
        merge_tables(&mut base, user);
        // A partial [vanilla] table is layered over the resolved [debiased] one.
        if let Some(v) = vanilla {
            let mut table = base.get("debiased").cloned().unwrap_or(toml::Value::Table(Default::default()));
            match (&mut table, v) {
                (toml::Value::Table(t), toml::Value::Table(o)) => merge_tables(t, o),
                (_, other) => table = other,
            }
            base.insert("vanilla".into(), table);
        }
        let cfg: ExperimentConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (&self.dataset.synth, &self.dataset.manifest) {
            (Some(spec), None) => spec.validate()?,
            (None, Some(_)) => {}
            _ => return bad("dataset needs exactly one of `synth` or `manifest`".into()),
        }
        for (name, c) in [("biased", &self.biased), ("debiased", &self.debiased)]
            .into_iter()
            .chain(self.vanilla.as_ref().map(|c| ("vanilla", c)))
        {
            c.validate().map_err(|e| Error::Config(format!("[{name}] {e}")))?;
        }
        if self.extraction.k < 1 {
            return bad("extraction.k must be at least 1".into());
        }
        if self.caption.m < 1 {
            return bad("caption.m must be at least 1".into());
        }
        if self.eval.trials < 1 {
            return bad("eval.trials must be at least 1".into());
        }
        if self.generation.size == 0 {
            return bad("generation.size must be positive".into());
        }
        if let WordBudget::Fixed(0) = self.filter.f {
            return bad("filter.f must be at least 1".into());
        }
        if !(self.energy.device_watts >= 0.0 && self.energy.carbon_intensity >= 0.0) {
            return bad("energy values must be non-negative".into());
        }
        Ok(())
    }

    pub fn vanilla_config(&self) -> ClassifierConfig {
        self.vanilla.clone().unwrap_or_else(|| self.debiased.clone())
    }

    /// Classifier settings with the run's trial seed and determinism flag.
    pub fn trial_classifier(&self, base: &ClassifierConfig, trial: usize) -> ClassifierConfig {
        ClassifierConfig {
            seed: crate::gce::trial_seed(self.seed, trial),
            deterministic: self.deterministic,
            ..base.clone()
        }
    }

    pub fn filter_spec(&self, class_names: &[String]) -> FilterSpec {
        FilterSpec {
            stop_words: match &self.filter.stop_words {
                Some(words) => words.iter().map(|w| w.to_lowercase()).collect(),
                None => default_stop_words(),
            },
            f: self.filter.f,
            num_classes: class_names.len(),
            class_vocab: Some(self.class_vocab(class_names).all_words()),
        }
    }

    pub fn class_vocab(&self, class_names: &[String]) -> ClassVocab {
        match &self.generation.class_vocab {
            None => ClassVocab::from_class_names(class_names),
            Some(map) => ClassVocab::new(
                class_names
                    .iter()
                    .map(|name| match map.get(name) {
                        Some(words) => words.iter().cloned().collect(),
                        None => crate::filter::tokenize(name).into_iter().collect::<BTreeSet<_>>(),
                    })
                    .collect(),
            ),
        }
    }
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c = ExperimentConfig::from_toml(
            r#"
            seed = 5
            [dataset.synth]
            num_classes = 3
            shape_vocab = ["circle", "square", "triangle"]
            color_vocab = ["red", "green", "blue"]
            conflict_ratio = 0.05
            train_count = 300
            test_count = 60
            [filter]
            f = 4
            [generation]
            target = 10
            "#,
        )
        .unwrap();
        assert_eq!(c.seed, 5);
        assert_eq!(c.filter.f, WordBudget::Fixed(4));
        assert_eq!(c.generation.target, GenerationTarget::Count(10));
        assert_eq!(c.extraction.k, 100);
        assert_eq!(c.biased.loss_mode, LossMode::Gce);
    }

    #[test]
    fn rejects_bad_sections() {
        assert!(ExperimentConfig::from_toml("[extraction]\nk = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[caption]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[biased]\nepochs = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[dataset]\nmanifest = \"m.jsonl\"\n").is_ok());
    }

    #[test]
    fn partial_classifier_sections_keep_their_role_defaults() {
        let c = ExperimentConfig::from_toml("[biased]\nepochs = 3\n[debiased]\nepochs = 4\n").unwrap();
        assert_eq!((c.biased.epochs, c.biased.loss_mode), (3, LossMode::Gce));
        assert_eq!((c.debiased.epochs, c.debiased.loss_mode), (4, LossMode::Ce));
        assert_eq!(c.biased.input_size, 16);
        let c = ExperimentConfig::from_toml("[debiased]\nepochs = 4\n[vanilla]\nbase_lr = 0.01\n").unwrap();
        let v = c.vanilla.unwrap();
        assert_eq!((v.epochs, v.base_lr), (4, 0.01));
    }
}
