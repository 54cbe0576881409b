// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{check_q, logit_grad, loss_value, LossMode};
use crate::dataset::{load_tensor, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::hashing::derive_seed_indexed;
use crate::nn::{argmax, softmax, Architecture, Network, CHANNELS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub factor: f64,
    pub every_n_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    RandomCrop,
    HorizontalFlip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub architecture: String,
    pub input_size: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub lr_decay: LrDecay,
    pub loss_mode: LossMode,
    pub q: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Start from `init_checkpoint` instead of a random initialization.
    pub pretrained: bool,
    pub init_checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub augmentations: Vec<Augmentation>,
    pub deterministic: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            architecture: "tiny-cnn".into(),
            input_size: 32,
            epochs: 50,
            batch_size: 64,
            base_lr: 0.01,
            lr_decay: LrDecay {
                factor: 0.1,
                every_n_epochs: 20,
            },
            loss_mode: LossMode::Ce,
            q: 0.7,
            momentum: 0.9,
            weight_decay: 0.0,
            pretrained: false,
            init_checkpoint: None,
            seed: 0,
            augmentations: Vec::new(),
            deterministic: false,
        }
    }
}

impl ClassifierConfig {
    /// Settings for the synthetic shapes dataset on a laptop CPU.
    pub fn desk_scale(loss_mode: LossMode) -> Self {
        ClassifierConfig {
            input_size: 16,
            epochs: 10,
            batch_size: 32,
            base_lr: 0.05,
            lr_decay: LrDecay {
                factor: 0.5,
                every_n_epochs: 20,
            },
            loss_mode,
            deterministic: true,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        let arch: Architecture = self.architecture.parse()?;
        arch.check_input_size(self.input_size as usize)?;
        check_q(self.q)?;
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.base_lr > 0.0) {
            return bad(format!("base_lr {} must be positive", self.base_lr));
        }
        if !(self.lr_decay.factor > 0.0 && self.lr_decay.factor <= 1.0) {
            return bad(format!("lr decay factor {} outside (0, 1]", self.lr_decay.factor));
        }
        if self.lr_decay.every_n_epochs < 1 {
            return bad("lr decay interval must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.pretrained && self.init_checkpoint.is_none() {
            return bad("pretrained requires init_checkpoint".into());
        }
        Ok(())
    }

    /// Step-decayed learning rate for a zero-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay.every_n_epochs) as i32;
        self.base_lr * self.lr_decay.factor.powi(steps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    Biased,
    Debiased,
    Vanilla,
}

impl ModelRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelRole::Biased => "biased",
            ModelRole::Debiased => "debiased",
            ModelRole::Vanilla => "vanilla",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub network: Network,
    pub config: ClassifierConfig,
    pub history: Vec<EpochRecord>,
    pub role: ModelRole,
    pub weights_ref: Option<PathBuf>,
}

impl TrainedModel {
    pub fn input_size(&self) -> u32 {
        self.network.input_size as u32
    }
}

/// Decoded images of one split, in manifest order.
#[derive(Clone, Debug, Default)]
pub struct TensorSet {
    pub ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl TensorSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Decode every image of `split`, collecting failures per id.
    pub fn load(manifest: &DatasetManifest, split: Split, input_size: u32) -> Result<TensorSet> {
        let (set, failures) = Self::load_partial(manifest, split, input_size);
        if failures.is_empty() {
            Ok(set)
        } else {
            Err(Error::Decode(failures))
        }
    }

    /// Like [`TensorSet::load`] but skips undecodable images.
    pub fn load_partial(manifest: &DatasetManifest, split: Split, input_size: u32) -> (TensorSet, Vec<(String, String)>) {
        let mut set = TensorSet::default();
        let mut failures = Vec::new();
        for s in manifest.split(split) {
            match load_tensor(&manifest.image_path(s), input_size) {
                Ok(x) => {
                    set.ids.push(s.id.clone());
                    set.inputs.push(x);
                    set.labels.push(s.label);
                }
                Err(e) => failures.push((s.id.clone(), e.to_string())),
            }
        }
        (set, failures)
    }
}

pub fn train(manifest: &DatasetManifest, config: &ClassifierConfig, role: ModelRole) -> Result<TrainedModel> {
    config.validate()?;
    if manifest.split(Split::Train).next().is_none() {
        return Err(Error::Empty("train split"));
    }
    let data = TensorSet::load(manifest, Split::Train, config.input_size)?;
    train_on(&data, manifest.num_classes(), config, role)
}

/// Minibatch momentum SGD over in-memory tensors.
///
/// Batch order is a pure function of `(seed, epoch)` and gradients are
/// summed sequentially in batch order, so a fixed seed reproduces the
/// same weights bit for bit.
pub fn train_on(data: &TensorSet, num_classes: usize, config: &ClassifierConfig, role: ModelRole) -> Result<TrainedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Empty("train split"));
    }
    let arch: Architecture = config.architecture.parse()?;
    let side = config.input_size as usize;
    let mut network = if config.pretrained {
        let path = config.init_checkpoint.as_ref().expect("validated");
        let init = super::checkpoint::load_checkpoint(path)?;
        if init.network.arch != arch || init.network.input_size != side || init.network.num_classes != num_classes {
            return Err(Error::Checkpoint {
                path: path.clone(),
                message: "initial checkpoint does not match the configured network".into(),
            });
        }
        init.network
    } else {
        Network::new(arch, side, num_classes, config.seed)?
    };
    if let Some(bad) = data.inputs.iter().position(|x| x.len() != network.input_len()) {
        return Err(Error::InvalidParameter(format!(
            "sample {:?} has {} values, network expects {}",
            data.ids[bad],
            data.inputs[bad].len(),
            network.input_len()
        )));
    }

    let mut velocity = network.zero_grads();
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed_indexed(config.seed, "epoch-order", epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let mut grads = network.zero_grads();
            for &i in batch {
                let augmented;
                let x: &[f64] = if config.augmentations.is_empty() {
                    &data.inputs[i]
                } else {
                    let mut aug_rng =
                        ChaCha8Rng::seed_from_u64(derive_seed_indexed(config.seed, &data.ids[i], epoch as u64));
                    augmented = augment(&data.inputs[i], side, &config.augmentations, &mut aug_rng);
                    &augmented
                };
                let y = data.labels[i];
                let (logits, cache) = network.forward(x);
                let probs = softmax(&logits);
                loss_sum += loss_value(config.loss_mode, &probs, y, config.q);
                if argmax(&logits) == y {
                    correct += 1;
                }
                let dlogits = logit_grad(config.loss_mode, &probs, y, config.q);
                network.backward(&cache, &dlogits, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            for ((p, g), v) in network.params.iter_mut().zip(&grads.0).zip(&mut velocity.0) {
                for ((w, gw), vw) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vw = config.momentum * *vw + gw + config.weight_decay * *w;
                    *w -= lr * *vw;
                }
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / data.len() as f64,
            train_acc: correct as f64 / data.len() as f64,
            lr,
        };
        log::debug!(
            "{} epoch {}: loss {:.4} acc {:.3} lr {} ({:.1}s)",
            role.as_str(),
            epoch,
            record.mean_loss,
            record.train_acc,
            lr,
            started.elapsed().as_secs_f64()
        );
        if !record.mean_loss.is_finite() {
            return Err(Error::Domain(format!("training diverged at epoch {epoch}")));
        }
        history.push(record);
    }

    Ok(TrainedModel {
        network,
        config: config.clone(),
        history,
        role,
        weights_ref: None,
    })
}

fn augment(x: &[f64], side: usize, augs: &[Augmentation], rng: &mut impl Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    let plane = side * side;
    for aug in augs {
        match aug {
            Augmentation::HorizontalFlip => {
                if rng.random_bool(0.5) {
                    let src = out.clone();
                    for c in 0..CHANNELS {
                        for y in 0..side {
                            for x in 0..side {
                                out[c * plane + y * side + x] = src[c * plane + y * side + (side - 1 - x)];
                            }
                        }
                    }
                }
            }
            Augmentation::RandomCrop => {
                // Pad by side/8 with the edge value, then crop back.
                let pad = (side / 8).max(1) as i64;
                let dx = rng.random_range(-pad..=pad) as isize;
                let dy = rng.random_range(-pad..=pad) as isize;
                let src = out.clone();
                let clamp = |v: isize| v.clamp(0, side as isize - 1) as usize;
                for c in 0..CHANNELS {
                    for y in 0..side {
                        for x in 0..side {
                            let sy = clamp(y as isize + dy);
                            let sx = clamp(x as isize + dx);
                            out[c * plane + y * side + x] = src[c * plane + sy * side + sx];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Per-sample losses over the train split.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossScores {
    pub entries: Vec<(String, f64)>,
    /// Samples that could not be scored, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Score every train sample in evaluation mode (no augmentation, no
/// parameter updates).
pub fn per_sample_losses(model: &TrainedModel, manifest: &DatasetManifest, mode: LossMode, q: f64) -> Result<LossScores> {
    check_q(q)?;
    let (data, failures) = TensorSet::load_partial(manifest, Split::Train, model.input_size());
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = data.ids.iter().find(|id| !seen.insert(id.as_str())) {
        return Err(Error::IdCollision(dup.clone()));
    }
    Ok(LossScores {
        entries: score_tensors(&model.network, &data, mode, q),
        failures,
    })
}

pub fn score_tensors(network: &Network, data: &TensorSet, mode: LossMode, q: f64) -> Vec<(String, f64)> {
    data.ids
        .iter()
        .zip(&data.inputs)
        .zip(&data.labels)
        .map(|((id, x), &y)| {
            let probs = softmax(&network.logits(x));
            (id.clone(), loss_value(mode, &probs, y, q))
        })
        .collect()
}

/// Seed for the i-th of several independent trials.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed.wrapping_add(trial as u64)
}
