//! Focal-loss training with L2 decay, gradient clipping, plateau
//! learning-rate scheduling, early stopping, and deterministic seeding.

pub mod loss;
mod optim;
mod run;

pub use loss::{focal_loss_batch, focal_loss_sample, l2_penalty, total_loss, AlphaAppliesTo};
pub use optim::{
    adam_step, clip_grad_norm, AdamState, EarlyStopping, EpochOutcome, PlateauScheduler,
    SchedulerConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPS, IMPROVEMENT_EPS,
};
pub use run::{evaluate_clips, train, EvalOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss at epoch {epoch}, batch {batch} ({detail})")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Focal class weight; which class it multiplies is set by
    /// `alpha_applies_to` (default: the majority/negative class).
    pub alpha: f64,
    /// Focal focusing exponent.
    pub gamma: f64,
    pub learning_rate: f64,
    /// L2 weight-decay coefficient λ.
    pub weight_decay: f64,
    pub max_epochs: usize,
    /// Early stopping: epochs without validation-loss improvement.
    pub patience: usize,
    pub clip_max_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scheduler: SchedulerConfig,
    pub alpha_applies_to: AlphaAppliesTo,
    /// Whether dataset assembly adds horizontally flipped copies of the
    /// training clips (applied by callers before `train`, never inside).
    pub augment_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.1,
            gamma: 0.0,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            max_epochs: 100,
            patience: 10,
            clip_max_norm: 1.0,
            batch_size: 16,
            seed: 3407,
            scheduler: SchedulerConfig::default(),
            alpha_applies_to: AlphaAppliesTo::Negative,
            augment_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(TrainError::Invalid(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if self.gamma < 0.0 {
            return Err(TrainError::Invalid(format!("gamma {} negative", self.gamma)));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Invalid("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Invalid("weight_decay must be non-negative".into()));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(TrainError::Invalid(
                "max_epochs, patience and batch_size must be positive".into(),
            ));
        }
        if self.clip_max_norm <= 0.0 {
            return Err(TrainError::Invalid("clip_max_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Mean total (focal + L2) loss over the epoch's training batches.
    pub train_loss: f64,
    /// Mean focal loss on the validation set (no L2 term).
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRow>,
    pub stop_epoch: usize,
    pub stop_reason: Option<StopReason>,
}

impl TrainHistory {
    pub(crate) fn push(&mut self, epoch: usize, train: f64, val: f64, acc: f64, lr: f64) {
        self.epochs.push(EpochRow {
            epoch,
            train_loss: train,
            val_loss: val,
            val_accuracy: acc,
            learning_rate: lr,
        });
    }

    pub(crate) fn stop(&mut self, epoch: usize, reason: StopReason) {
        self.stop_epoch = epoch;
        self.stop_reason = Some(reason);
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.epochs.iter().map(|r| r.val_loss).fold(None, |acc, v| {
            Some(match acc {
                Some(a) if a <= v => a,
                _ => v,
            })
        })
    }

    /// CSV rendering: epoch, train_loss, val_loss, val_acc, lr.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.val_accuracy, r.learning_rate
            ));
        }
        out
    }
}
