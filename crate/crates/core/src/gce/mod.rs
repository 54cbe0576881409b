// SPDX-License-Identifier: Apache-2.0

//! Generalized cross-entropy, its gradient-scaling identity, and the
//! training loop for biased, debiased and vanilla classifiers.

mod checkpoint;
mod gradcheck;
mod loss;
mod train;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, model_hash, save_checkpoint, write_training_log};
pub use gradcheck::{gce_grad_check, GradCheckReport, GradRoute};
pub use loss::{ce_loss, check_q, gce_loss, logit_grad, loss_value, LossMode, PROB_FLOOR};
pub use train::{
    per_sample_losses, score_tensors, train, train_on, trial_seed, Augmentation, ClassifierConfig, EpochRecord,
    LossScores, LrDecay, ModelRole, TensorSet, TrainedModel,
};
