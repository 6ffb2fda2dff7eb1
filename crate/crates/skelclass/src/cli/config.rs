//! The flat run configuration: one JSON object covering model, training,
//! data, synthesis, visualization, and sweep options. Unknown keys are
//! rejected; every field has a documented default and command-line
//! overrides win over the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::model::ModelConfig;
use crate::train::{AlphaAppliesTo, SchedulerConfig, TrainConfig};
use crate::viz::VizConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,

    // Model widths and switches.
    pub n_part: usize,
    pub n_graph_out: usize,
    pub n_rnn: usize,
    pub n_rnn_out: usize,
    pub n_spatial_out: usize,
    pub n_head_hidden: usize,
    pub n_heads: usize,
    pub dropout_p: f64,
    pub gcn_self_loops: bool,
    pub gcn_init_const: f64,
    pub leaky_slope: f64,

    // Training.
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_max_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub scheduler_factor: f64,
    pub scheduler_patience: usize,
    pub scheduler_min_lr: f64,
    pub alpha_applies_to: AlphaAppliesTo,
    pub augment_flip: bool,
    pub group_by_video: bool,

    // Data preparation.
    pub confidence_threshold: f64,
    pub target_fps: u32,
    pub window_length: usize,
    pub window_stride: usize,
    pub split_train: f64,
    pub split_val: f64,
    pub split_test: f64,

    // Synthetic data generation.
    pub synth_n_per_class: usize,
    pub synth_frames: usize,
    pub synth_fps: u32,
    pub synth_width: u32,
    pub synth_height: u32,

    // Visualization.
    pub gaussian_sigma: f64,
    pub temporal_window: usize,
    pub clamp_low: f64,
    pub clamp_high: f64,
    pub image_size: usize,
    pub spatial_row_only: bool,

    // Cross-validation, grid search, frame-rate sweep.
    pub cv_folds: usize,
    pub grid_alpha: Vec<f64>,
    pub grid_gamma: Vec<f64>,
    pub grid_learning_rate: Vec<f64>,
    pub grid_weight_decay: Vec<f64>,
    pub grid_n_part: Vec<usize>,
    pub grid_n_rnn: Vec<usize>,
    pub sweep_fps: Vec<u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let v = VizConfig::default();
        RunConfig {
            format_version: 1,
            n_part: m.n_part,
            n_graph_out: m.n_graph_out,
            n_rnn: m.n_rnn,
            n_rnn_out: m.n_rnn_out,
            n_spatial_out: m.n_spatial_out,
            n_head_hidden: m.n_head_hidden,
            n_heads: m.n_heads,
            dropout_p: m.dropout_p,
            gcn_self_loops: m.gcn_self_loops,
            gcn_init_const: m.gcn_init_const,
            leaky_slope: m.leaky_slope,
            alpha: t.alpha,
            gamma: t.gamma,
            learning_rate: t.learning_rate,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            clip_max_norm: t.clip_max_norm,
            batch_size: t.batch_size,
            seed: t.seed,
            scheduler_factor: t.scheduler.factor,
            scheduler_patience: t.scheduler.patience_epochs,
            scheduler_min_lr: t.scheduler.min_lr,
            alpha_applies_to: t.alpha_applies_to,
            augment_flip: t.augment_flip,
            group_by_video: true,
            confidence_threshold: 0.05,
            target_fps: 15,
            window_length: 75,
            window_stride: 75,
            split_train: 0.8,
            split_val: 0.1,
            split_test: 0.1,
            synth_n_per_class: 100,
            synth_frames: 250,
            synth_fps: 25,
            synth_width: 1280,
            synth_height: 720,
            gaussian_sigma: v.gaussian_sigma,
            temporal_window: v.temporal_window,
            clamp_low: v.clamp_percentiles.0,
            clamp_high: v.clamp_percentiles.1,
            image_size: v.image_size,
            spatial_row_only: v.row_only_aggregation,
            cv_folds: 5,
            grid_alpha: vec![0.1, 0.5, 0.9],
            grid_gamma: vec![0.0, 1.0, 2.0, 3.0, 5.0],
            grid_learning_rate: vec![1e-3, 1e-4],
            grid_weight_decay: vec![1e-3, 1e-4, 1e-5],
            grid_n_part: vec![],
            grid_n_rnn: vec![],
            sweep_fps: vec![5, 10, 15, 20, 25],
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        if config.format_version != 1 {
            return Err(CliError::Config(format!(
                "unsupported format_version {}",
                config.format_version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.viz_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let ratio_sum = self.split_train + self.split_val + self.split_test;
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return Err(CliError::Config(format!("split ratios sum to {ratio_sum}, expected 1")));
        }
        if self.target_fps == 0 || self.synth_fps == 0 {
            return Err(CliError::Config("frame rates must be positive".into()));
        }
        if self.window_length == 0 || self.window_stride == 0 {
            return Err(CliError::Config("window length and stride must be positive".into()));
        }
        if self.cv_folds < 2 {
            return Err(CliError::Config("cv_folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_part: self.n_part,
            n_graph_out: self.n_graph_out,
            n_rnn: self.n_rnn,
            n_rnn_out: self.n_rnn_out,
            n_spatial_out: self.n_spatial_out,
            n_head_hidden: self.n_head_hidden,
            n_heads: self.n_heads,
            dropout_p: self.dropout_p,
            gcn_self_loops: self.gcn_self_loops,
            gcn_init_const: self.gcn_init_const,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_max_norm: self.clip_max_norm,
            batch_size: self.batch_size,
            seed: self.seed,
            scheduler: SchedulerConfig {
                factor: self.scheduler_factor,
                patience_epochs: self.scheduler_patience,
                min_lr: self.scheduler_min_lr,
            },
            alpha_applies_to: self.alpha_applies_to,
            augment_flip: self.augment_flip,
        }
    }

    pub fn viz_config(&self) -> VizConfig {
        VizConfig {
            gaussian_sigma: self.gaussian_sigma,
            temporal_window: self.temporal_window,
            clamp_percentiles: (self.clamp_low, self.clamp_high),
            image_size: self.image_size,
            row_only_aggregation: self.spatial_row_only,
        }
    }

    pub fn split_ratios(&self) -> (f64, f64, f64) {
        (self.split_train, self.split_val, self.split_test)
    }
}
