//! The training loop: seeded shuffling, mini-batches, focal + L2 loss,
//! backward, gradient clipping, Adam, plateau scheduling, and early
//! stopping on validation loss.

use indexmap::IndexMap;

use super::loss::{build_focal_loss, build_total_loss, focal_loss_batch};
use super::optim::{
    adam_step, clip_grad_norm, AdamState, EarlyStopping, EpochOutcome, PlateauScheduler,
};
use super::{StopReason, TrainConfig, TrainError, TrainHistory};
use crate::autodiff::{Graph, GraphError, Mode, Tensor};
use crate::model::{
    build_batch, commit_bn_stats, init_params, ModelConfig, ModelError, ParameterStore, PartGraph,
};
use crate::pose::{Label, SkeletonClip};
use crate::seed::mix2;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Predictions and mean focal loss of a clip set in eval mode.
pub struct EvalOutcome {
    pub probabilities: Vec<[f64; 2]>,
    pub predictions: Vec<Label>,
    pub mean_focal: f64,
    pub accuracy: f64,
}

/// Evaluates clips in eval mode, chunked to the training batch size.
pub fn evaluate_clips(
    store: &ParameterStore,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    clips: &[SkeletonClip],
) -> Result<EvalOutcome, TrainError> {
    if clips.is_empty() {
        return Err(TrainError::Invalid("cannot evaluate an empty clip set".into()));
    }
    let graph = PartGraph::parts(mcfg.gcn_self_loops);
    let mut probabilities = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(tcfg.batch_size.max(1)) {
        let refs: Vec<&SkeletonClip> = chunk.iter().collect();
        let mut g = Graph::new();
        let fwd = build_batch(&mut g, store, mcfg, &graph, &refs, Mode::Eval, 0)?;
        let probs = g.value(fwd.probs);
        for i in 0..chunk.len() {
            probabilities.push([probs.get(i, 0), probs.get(i, 1)]);
        }
    }
    let labels: Vec<Label> = clips.iter().map(|c| c.label).collect();
    let predictions: Vec<Label> = probabilities
        .iter()
        .map(|p| if p[1] > p[0] { Label::Dystonia } else { Label::Chorea })
        .collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let mean_focal = focal_loss_batch(
        &probabilities,
        &labels,
        tcfg.alpha,
        tcfg.gamma,
        tcfg.alpha_applies_to,
    );
    Ok(EvalOutcome {
        probabilities,
        predictions,
        mean_focal,
        accuracy: correct as f64 / clips.len() as f64,
    })
}

/// Mini-batch index ranges over a shuffled order. A trailing batch of one
/// clip would break train-mode batch norm, so it merges into the previous
/// batch.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let bs = batch_size.max(1);
    let mut ranges = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + bs).min(n);
        ranges.push((start, end));
        start = end;
    }
    if ranges.len() > 1 {
        let (ls, le) = *ranges.last().unwrap();
        if le - ls == 1 {
            ranges.pop();
            ranges.last_mut().unwrap().1 = le;
        }
    }
    ranges
}

/// Trains from a fresh initialization and returns the parameters of the
/// best-validation epoch together with the per-epoch history. Identical
/// seeds and data reproduce the history bit for bit.
pub fn train(
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    train_set: &[SkeletonClip],
    val_set: &[SkeletonClip],
) -> Result<(ParameterStore, TrainHistory), TrainError> {
    tcfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Invalid("train and validation sets must be nonempty".into()));
    }
    let part_graph = PartGraph::parts(mcfg.gcn_self_loops);
    let mut store = init_params(mcfg, tcfg.seed)?;
    let mut adam = AdamState::new();
    let mut scheduler = PlateauScheduler::new(tcfg.scheduler);
    let mut lr = tcfg.learning_rate;

    let mut history = TrainHistory::default();
    let mut stopper = EarlyStopping::new(tcfg.patience);
    let mut best_params = store.clone();

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tcfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix2(tcfg.seed, epoch as u64, 0));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for (bi, &(s, e)) in batch_ranges(order.len(), tcfg.batch_size).iter().enumerate() {
            let idx = &order[s..e];
            let refs: Vec<&SkeletonClip> = idx.iter().map(|&i| &train_set[i]).collect();
            let labels: Vec<Label> = refs.iter().map(|c| c.label).collect();
            let dropout_seed = mix2(tcfg.seed, epoch as u64, 1_000 + bi as u64);

            let mut g = Graph::new();
            let step = (|| -> Result<f64, TrainError> {
                let fwd = build_batch(&mut g, &store, mcfg, &part_graph, &refs, Mode::Train, dropout_seed)?;
                let focal = build_focal_loss(
                    &mut g,
                    fwd.probs,
                    &labels,
                    tcfg.alpha,
                    tcfg.gamma,
                    tcfg.alpha_applies_to,
                )
                .map_err(ModelError::Graph)?;
                let total = build_total_loss(&mut g, focal, &fwd.param_nodes, tcfg.weight_decay)
                    .map_err(ModelError::Graph)?;
                let loss_value = g.value(total).get(0, 0);
                g.backward(total).map_err(ModelError::Graph)?;

                let mut grads: IndexMap<String, Tensor> = IndexMap::new();
                for (name, &node) in &fwd.param_nodes {
                    if let Some(grad) = g.grad(node) {
                        grads.insert(name.clone(), grad.clone());
                    }
                }
                clip_grad_norm(&mut grads, tcfg.clip_max_norm);
                adam_step(&mut store, &grads, &mut adam, lr).map_err(TrainError::Invalid)?;
                commit_bn_stats(&g, &fwd, &mut store);
                Ok(loss_value)
            })();
            let loss_value = step.map_err(|e| match e {
                TrainError::Model(ModelError::Graph(GraphError::NonFinite { op })) => {
                    TrainError::NonFinite { epoch, batch: bi, detail: format!("op {op}") }
                }
                other => other,
            })?;
            epoch_loss += loss_value * idx.len() as f64;
        }
        epoch_loss /= order.len() as f64;

        let val = evaluate_clips(&store, mcfg, tcfg, val_set)?;
        if !val.mean_focal.is_finite() {
            return Err(TrainError::NonFinite { epoch, batch: usize::MAX, detail: "validation loss".into() });
        }
        history.push(epoch, epoch_loss, val.mean_focal, val.accuracy, lr);

        match stopper.observe(val.mean_focal) {
            EpochOutcome::Improved => best_params = store.clone(),
            EpochOutcome::Stalled => {}
            EpochOutcome::Stop => {
                history.stop(epoch, StopReason::EarlyStopped);
                return Ok((best_params, history));
            }
        }
        lr = scheduler.observe(val.mean_focal, lr);
    }
    history.stop(tcfg.max_epochs, StopReason::MaxEpochs);
    Ok((best_params, history))
}
