//! Stratified k-fold cross-validation with bootstrap confidence intervals
//! and significance against chance. Folds are independent: each derives
//! its RNG streams from (seed, fold index) and they may train in parallel
//! without changing any result.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{confusion, metrics, ConfusionMatrix, Metrics, METRIC_NAMES};
use super::stats::{bootstrap_ci, t_test_vs_chance};
use super::EvalError;
use crate::model::ModelConfig;
use crate::pose::{
    bootstrap_oversample, flip_horizontal, largest_remainder, Label, SkeletonClip,
};
use crate::seed::mix;
use crate::train::{evaluate_clips, train, TrainConfig};

pub const DEFAULT_N_BOOT: usize = 1000;
pub const CHANCE_BASELINE: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_eval: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub degenerate_t: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CvReport {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub summary: Vec<MetricSummary>,
}

impl CvReport {
    pub fn fold_values(&self, metric: &str) -> Vec<f64> {
        self.folds.iter().map(|f| f.metrics.by_name(metric)).collect()
    }

    /// Plain-text table: Metric, Value, 95% CI, p-value.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14}{:>8}  {:>18}  {:>10}\n", "Metric", "Value", "95% CI", "p-value"));
        for s in &self.summary {
            out.push_str(&format!(
                "{:<14}{:>8.3}  ({:>6.3}, {:>6.3})  {:>10.4}\n",
                s.metric, s.mean, s.ci_low, s.ci_high, s.p_value
            ));
        }
        out
    }
}

/// Stratified fold assignment at clip level: per class, shuffled clips are
/// dealt into folds sized by largest remainder, so every fold's class
/// count deviates from the global proportion by at most one clip.
pub fn stratified_folds(clips: &[SkeletonClip], k: usize, seed: u64) -> Vec<Vec<usize>> {
    let ratios = vec![1.0 / k as f64; k];
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for class in Label::BOTH {
        let mut idx: Vec<usize> = clips
            .iter()
            .enumerate()
            .filter(|(_, c)| c.label == class)
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 10 + class.index() as u64));
        idx.shuffle(&mut rng);
        let counts = largest_remainder(idx.len(), &ratios);
        let mut cursor = 0;
        for (fold, &n) in folds.iter_mut().zip(&counts) {
            fold.extend_from_slice(&idx[cursor..cursor + n]);
            cursor += n;
        }
    }
    folds
}

/// Trains one model per fold (on the other k-1 folds, with flip
/// augmentation and minority oversampling applied to that training
/// portion only) and evaluates it on the held-out fold.
pub fn cross_validate(
    clips: &[SkeletonClip],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<CvReport, EvalError> {
    if k < 2 {
        return Err(EvalError::Invalid(format!("k = {k} must be at least 2")));
    }
    for class in Label::BOTH {
        let n = clips.iter().filter(|c| c.label == class).count();
        if n < k {
            return Err(EvalError::Invalid(format!(
                "class {class:?} has {n} clips, fewer than k = {k}"
            )));
        }
    }
    let folds = stratified_folds(clips, k, seed);

    let fold_reports: Vec<Result<FoldReport, EvalError>> = (0..k)
        .into_par_iter()
        .map(|fi| {
            let held_out: Vec<SkeletonClip> =
                folds[fi].iter().map(|&i| clips[i].clone()).collect();
            let pool: Vec<SkeletonClip> = (0..k)
                .filter(|&fj| fj != fi)
                .flat_map(|fj| folds[fj].iter().map(|&i| clips[i].clone()))
                .collect();

            // Inner split reserving ~10% per class (at least one clip
            // where the class allows) as the early-stopping monitor.
            let (mut train_set, val_raw) = inner_split(pool, mix(seed, 1_000 + fi as u64));
            if tcfg.augment_flip {
                let flipped: Vec<SkeletonClip> = train_set.iter().map(flip_horizontal).collect();
                train_set.extend(flipped);
            }
            let train_set = bootstrap_oversample(train_set, mix(seed, 2_000 + fi as u64))?;
            // Tiny pools can leave the monitor single-class; it is then
            // used as-is rather than oversampled.
            let val_set = if val_raw.is_empty() {
                train_set.clone()
            } else if Label::BOTH.iter().all(|&l| val_raw.iter().any(|c| c.label == l)) {
                bootstrap_oversample(val_raw, mix(seed, 3_000 + fi as u64))?
            } else {
                val_raw
            };

            let fold_tcfg = TrainConfig { seed: mix(seed, fi as u64), ..tcfg.clone() };
            let (params, _history) = train(mcfg, &fold_tcfg, &train_set, &val_set)?;

            let outcome = evaluate_clips(&params, mcfg, &fold_tcfg, &held_out)?;
            let labels: Vec<Label> = held_out.iter().map(|c| c.label).collect();
            let cm = confusion(&outcome.predictions, &labels)?;
            Ok(FoldReport { fold: fi, n_eval: held_out.len(), confusion: cm, metrics: metrics(&cm)? })
        })
        .collect();
    let folds: Vec<FoldReport> = fold_reports.into_iter().collect::<Result<_, _>>()?;

    let summary = summarize_folds(&folds, seed);
    Ok(CvReport { k, seed, folds, summary })
}

/// Splits a fold's training pool into train and validation parts: per
/// class, round(10%) but at least one clip goes to validation, except
/// that a single-clip class stays entirely in training.
fn inner_split(pool: Vec<SkeletonClip>, seed: u64) -> (Vec<SkeletonClip>, Vec<SkeletonClip>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut pool: Vec<Option<SkeletonClip>> = pool.into_iter().map(Some).collect();
    for class in Label::BOTH {
        let mut idx: Vec<usize> = pool
            .iter()
            .enumerate()
            .filter(|(_, c)| c.as_ref().is_some_and(|c| c.label == class))
            .map(|(i, _)| i)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, class.index() as u64));
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_val = if n >= 2 { ((n as f64 * 0.1).round() as usize).max(1) } else { 0 };
        for (pos, &i) in idx.iter().enumerate() {
            let clip = pool[i].take().expect("each index drawn once");
            if pos < n_val {
                val.push(clip);
            } else {
                train.push(clip);
            }
        }
    }
    (train, val)
}

/// Bootstrap CI and t-test against chance for every metric over the
/// per-fold values.
pub fn summarize_folds(folds: &[FoldReport], seed: u64) -> Vec<MetricSummary> {
    METRIC_NAMES
        .iter()
        .enumerate()
        .map(|(mi, name)| {
            let values: Vec<f64> = folds.iter().map(|f| f.metrics.by_name(name)).collect();
            let ci = bootstrap_ci(&values, DEFAULT_N_BOOT, mix(seed, 4_000 + mi as u64));
            let t = t_test_vs_chance(&values, CHANCE_BASELINE);
            MetricSummary {
                metric: name.to_string(),
                mean: ci.mean,
                ci_low: ci.low,
                ci_high: ci.high,
                p_value: t.p_value,
                degenerate_t: t.degenerate,
            }
        })
        .collect()
}
