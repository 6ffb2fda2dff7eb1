//! Adam with bias correction, global-norm gradient clipping, and the
//! plateau learning-rate scheduler.

use indexmap::IndexMap;

use crate::autodiff::Tensor;
use crate::model::ParameterStore;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Loss-improvement threshold shared by the scheduler and early stopping;
/// changes smaller than this do not count as progress.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update applied in place. Gradients must be
/// finite; the step counter is shared across all tensors.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &IndexMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
) -> Result<(), String> {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - ADAM_BETA1.powf(t);
    let bc2 = 1.0 - ADAM_BETA2.powf(t);
    for (name, grad) in grads {
        if !grad.all_finite() {
            return Err(format!("non-finite gradient for {name}"));
        }
        if !params.contains(name) {
            return Err(format!("unknown parameter {name}"));
        }
        let p = params.get_mut(name);
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Scales all gradients by max_norm/‖g‖ when the global L2 norm exceeds
/// max_norm; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut IndexMap<String, Tensor>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let mut sum_sq = 0.0;
    for g in grads.values() {
        sum_sq += g.data().iter().map(|v| v * v).sum::<f64>();
    }
    let norm = sum_sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience_epochs: usize,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig { factor: 0.1, patience_epochs: 5, min_lr: 1e-6 }
    }
}

/// Early-stopping bookkeeping over validation losses.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    strikes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EpochOutcome {
    Improved,
    Stalled,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, strikes: 0 }
    }

    /// Observes one epoch's validation loss. Returns `Stop` once the loss
    /// has failed to improve by more than IMPROVEMENT_EPS for `patience`
    /// consecutive epochs.
    pub fn observe(&mut self, val_loss: f64) -> EpochOutcome {
        if val_loss < self.best - IMPROVEMENT_EPS {
            self.best = val_loss;
            self.strikes = 0;
            EpochOutcome::Improved
        } else {
            self.strikes += 1;
            if self.strikes >= self.patience {
                EpochOutcome::Stop
            } else {
                EpochOutcome::Stalled
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

/// Reduce-on-plateau state: when the best validation loss has not improved
/// by more than IMPROVEMENT_EPS for `patience_epochs` consecutive epochs,
/// the learning rate is multiplied by `factor` (floored at `min_lr`) and
/// the stall counter resets.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    config: SchedulerConfig,
    best: f64,
    stalled: usize,
}

impl PlateauScheduler {
    pub fn new(config: SchedulerConfig) -> Self {
        PlateauScheduler { config, best: f64::INFINITY, stalled: 0 }
    }

    /// Observes one epoch's validation loss and returns the learning rate
    /// to use next.
    pub fn observe(&mut self, val_loss: f64, current_lr: f64) -> f64 {
        if val_loss < self.best - IMPROVEMENT_EPS {
            self.best = val_loss;
            self.stalled = 0;
            return current_lr;
        }
        self.stalled += 1;
        if self.stalled >= self.config.patience_epochs {
            self.stalled = 0;
            return (current_lr * self.config.factor).max(self.config.min_lr);
        }
        current_lr
    }
}
