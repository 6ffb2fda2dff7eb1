//! The classifier architecture: per-part encoders feeding self-attention
//! and a graph convolution over five body parts (spatial path), a four
//! layer bidirectional LSTM stack with frame self-attention (temporal
//! path), and multi-head attention fusion into a two-class softmax.

mod forward;
mod params;

pub use forward::{
    build_batch, commit_bn_stats, extract_records, gcn_forward, lstm_cell, model_forward,
    model_forward_batch, multi_head_attention, self_attention, BatchForward, HeadProjection,
    BN_EPS, BN_MOMENTUM, NUM_LSTM_LAYERS,
};
pub use params::{init_params, load_checkpoint, save_checkpoint, ParamKind, ParameterStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{GraphError, Tensor};
use crate::pose::{Label, N_PARTS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Network widths and switches. `n_graph_out` and `n_rnn_out` default to
/// the tuned 16 and 15; `n_spatial_out` is the spatial head width and is
/// chosen so the fused width (n_spatial_out + n_rnn_out) divides the head
/// count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
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
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_part: 64,
            n_graph_out: 16,
            n_rnn: 32,
            n_rnn_out: 15,
            n_spatial_out: 17,
            n_head_hidden: 16,
            n_heads: 4,
            dropout_p: 0.2,
            gcn_self_loops: false,
            gcn_init_const: 0.01,
            leaky_slope: 0.01,
        }
    }
}

impl ModelConfig {
    /// The reduced configuration used by the full-model gradient check.
    pub fn tiny() -> Self {
        ModelConfig { n_part: 8, n_rnn: 8, n_heads: 2, dropout_p: 0.0, ..Default::default() }
    }

    /// Width of the fused per-frame feature (spatial ++ temporal).
    pub fn fused_width(&self) -> usize {
        self.n_spatial_out + self.n_rnn_out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let widths = [
            self.n_part,
            self.n_graph_out,
            self.n_rnn,
            self.n_rnn_out,
            self.n_spatial_out,
            self.n_head_hidden,
            self.n_heads,
        ];
        if widths.iter().any(|&w| w == 0) {
            return Err(ModelError::Config("all widths must be at least 1".into()));
        }
        if self.fused_width() % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "fused width {} not divisible by {} heads",
                self.fused_width(),
                self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(ModelError::Config(format!("dropout_p {} outside [0,1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Adjacency over the five body parts and its degree-normalized
/// propagation matrix D̃^{-1/2} Ã D̃^{-1/2}, with Ã = A + I when
/// self-loops are enabled and Ã = A otherwise.
#[derive(Clone, Debug, PartialEq)]
pub struct PartGraph {
    pub adjacency: Tensor,
    pub propagation: Tensor,
    pub self_loops: bool,
}

impl PartGraph {
    pub fn new(adjacency: Tensor, self_loops: bool) -> Result<PartGraph, ModelError> {
        let n = adjacency.rows();
        if adjacency.cols() != n {
            return Err(ModelError::Config("adjacency must be square".into()));
        }
        for i in 0..n {
            if adjacency.get(i, i) != 0.0 {
                return Err(ModelError::Config("adjacency diagonal must be zero".into()));
            }
            for j in 0..n {
                let v = adjacency.get(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(ModelError::Config("adjacency must be binary".into()));
                }
                if v != adjacency.get(j, i) {
                    return Err(ModelError::Config("adjacency must be symmetric".into()));
                }
            }
        }
        let mut tilde = adjacency.clone();
        if self_loops {
            for i in 0..n {
                tilde.set(i, i, 1.0);
            }
        }
        let mut degree = vec![0.0; n];
        for i in 0..n {
            degree[i] = tilde.row(i).iter().sum();
            if degree[i] == 0.0 {
                return Err(ModelError::Config(format!(
                    "node {i} is isolated (zero degree with self_loops={self_loops})"
                )));
            }
        }
        let mut propagation = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = tilde.get(i, j);
                if v != 0.0 {
                    propagation.set(i, j, v / (degree[i] * degree[j]).sqrt());
                }
            }
        }
        Ok(PartGraph { adjacency, propagation, self_loops })
    }

    /// Complete graph on `n` nodes — the default body-part topology.
    pub fn complete(n: usize, self_loops: bool) -> PartGraph {
        let mut a = Tensor::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    a.set(i, j, 1.0);
                }
            }
        }
        PartGraph::new(a, self_loops).expect("complete graph has no isolated nodes")
    }

    pub fn parts(self_loops: bool) -> PartGraph {
        PartGraph::complete(N_PARTS, self_loops)
    }
}

/// Attention emitted for one clip: the frame-averaged 5x5 spatial matrix
/// (per-frame matrices retained for rendering), the 75x75 temporal matrix,
/// and the prediction.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub spatial: Tensor,
    pub spatial_per_frame: Vec<Tensor>,
    pub temporal: Tensor,
    pub probabilities: [f64; 2],
    pub predicted: Label,
}
