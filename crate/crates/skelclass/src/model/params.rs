//! Named parameter tensors, their initialization, and checkpoint I/O.
//!
//! Weight sharing is structural: both arms read the same `spatial.enc.arm`
//! tensors and both legs `spatial.enc.leg`, so mutating the shared tensor
//! changes both sides. Parameter kind is derived from the name's last
//! component, which keeps the checkpoint format a plain name→tensor map.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::autodiff::Tensor;
use crate::model::forward::NUM_LSTM_LAYERS;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrix; receives Kaiming initialization and L2 decay.
    Weight,
    Bias,
    BnScale,
    BnShift,
    /// Batch-norm running statistic; not trainable.
    RunningStat,
}

impl ParamKind {
    pub fn from_name(name: &str) -> ParamKind {
        match name.rsplit('.').next().unwrap_or("") {
            "w" | "wx" | "wh" => ParamKind::Weight,
            "b" => ParamKind::Bias,
            "gamma" => ParamKind::BnScale,
            "beta" => ParamKind::BnShift,
            "running_mean" | "running_var" => ParamKind::RunningStat,
            other => panic!("unknown parameter suffix: {other}"),
        }
    }

    pub fn trainable(self) -> bool {
        self != ParamKind::RunningStat
    }

    /// Whether the L2 penalty applies (weights only; biases and batch-norm
    /// scale/shift are excluded).
    pub fn decayed(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        ParamKind::from_name(&name); // validates the suffix
        self.tensors.insert(name, tensor);
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn kind(&self, name: &str) -> ParamKind {
        ParamKind::from_name(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries in trainable tensors.
    pub fn trainable_len(&self) -> usize {
        self.iter()
            .filter(|(n, _)| ParamKind::from_name(n).trainable())
            .map(|(_, t)| t.len())
            .sum()
    }
}

fn kaiming(rng: &mut ChaCha8Rng, fan_in: usize, rows: usize, cols: usize) -> Tensor {
    let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid stddev");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Creates all model parameters: Kaiming-initialized weights, the GCN
/// weight filled with a small constant, zero biases, and batch-norm
/// scale 1 / shift 0 with zero-mean unit-variance running statistics.
/// Identical seeds produce identical stores.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ParameterStore, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParameterStore::new();

    let fc = |store: &mut ParameterStore, rng: &mut ChaCha8Rng, prefix: &str, i: usize, o: usize| {
        store.insert(format!("{prefix}.w"), kaiming(rng, i, i, o));
        store.insert(format!("{prefix}.b"), Tensor::zeros(1, o));
    };
    let bn = |store: &mut ParameterStore, prefix: &str, width: usize| {
        store.insert(format!("{prefix}.gamma"), Tensor::filled(1, width, 1.0));
        store.insert(format!("{prefix}.beta"), Tensor::zeros(1, width));
        store.insert(format!("{prefix}.running_mean"), Tensor::zeros(1, width));
        store.insert(format!("{prefix}.running_var"), Tensor::filled(1, width, 1.0));
    };

    // Part encoders: one archetype per unique part shape; arms share one
    // set of tensors, legs another.
    for (arch, input) in [("arm", 6), ("leg", 12), ("torso", 14)] {
        for layer in 1..=3 {
            let i = if layer == 1 { input } else { config.n_part };
            fc(&mut store, &mut rng, &format!("spatial.enc.{arch}.fc{layer}"), i, config.n_part);
            bn(&mut store, &format!("spatial.enc.{arch}.bn{layer}"), config.n_part);
        }
    }
    for proj in ["q", "k", "v"] {
        store.insert(
            format!("spatial.attn.{proj}.w"),
            kaiming(&mut rng, config.n_part, config.n_part, config.n_part),
        );
    }
    store.insert(
        "spatial.gcn.w",
        Tensor::filled(config.n_part, config.n_graph_out, config.gcn_init_const),
    );
    fc(&mut store, &mut rng, "spatial.fc1", config.n_graph_out, config.n_spatial_out);
    bn(&mut store, "spatial.bn1", config.n_spatial_out);
    fc(&mut store, &mut rng, "spatial.fc2", config.n_spatial_out, config.n_spatial_out);
    bn(&mut store, "spatial.bn2", config.n_spatial_out);

    let hidden = config.n_rnn;
    for layer in 0..NUM_LSTM_LAYERS {
        let input = if layer == 0 { 50 } else { 2 * hidden };
        for dir in ["fwd", "bwd"] {
            let prefix = format!("temporal.lstm{layer}.{dir}");
            store.insert(format!("{prefix}.wx"), kaiming(&mut rng, input, input, 4 * hidden));
            store.insert(format!("{prefix}.wh"), kaiming(&mut rng, hidden, hidden, 4 * hidden));
            store.insert(format!("{prefix}.b"), Tensor::zeros(1, 4 * hidden));
        }
    }
    let d_t = 2 * hidden;
    for proj in ["q", "k", "v"] {
        store.insert(format!("temporal.attn.{proj}.w"), kaiming(&mut rng, d_t, d_t, d_t));
    }
    fc(&mut store, &mut rng, "temporal.fc1", d_t, config.n_rnn_out);
    bn(&mut store, "temporal.bn1", config.n_rnn_out);
    fc(&mut store, &mut rng, "temporal.fc2", config.n_rnn_out, config.n_rnn_out);
    bn(&mut store, "temporal.bn2", config.n_rnn_out);
    fc(&mut store, &mut rng, "temporal.fc3", config.n_rnn_out, config.n_rnn_out);
    bn(&mut store, "temporal.bn3", config.n_rnn_out);

    let d = config.fused_width();
    let d_head = d / config.n_heads;
    for h in 0..config.n_heads {
        for proj in ["q", "k", "v"] {
            store.insert(format!("fusion.head{h}.{proj}.w"), kaiming(&mut rng, d, d, d_head));
        }
    }
    store.insert("fusion.out.w", kaiming(&mut rng, d, d, d));

    fc(&mut store, &mut rng, "head.fc1", d, config.n_head_hidden);
    bn(&mut store, "head.bn1", config.n_head_hidden);
    fc(&mut store, &mut rng, "head.fc2", config.n_head_hidden, 2);

    Ok(store)
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    tensors: IndexMap<String, TensorRecord>,
}

/// Writes the checkpoint as a single JSON document; byte-stable for
/// identical parameters (tensor order is insertion order).
pub fn save_checkpoint(
    store: &ParameterStore,
    config: &ModelConfig,
    path: &Path,
) -> Result<(), ModelError> {
    let tensors = store
        .iter()
        .map(|(name, t)| {
            (name.clone(), TensorRecord { shape: t.shape(), data: t.data().to_vec() })
        })
        .collect();
    let doc = Checkpoint { format_version: CHECKPOINT_FORMAT_VERSION, config: config.clone(), tensors };
    let json = serde_json::to_string(&doc).expect("checkpoint serializes");
    fs::write(path, json)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, ModelConfig), ModelError> {
    let json = fs::read_to_string(path)?;
    let doc: Checkpoint =
        serde_json::from_str(&json).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if doc.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported format_version {}",
            doc.format_version
        )));
    }
    let mut store = ParameterStore::new();
    for (name, rec) in doc.tensors {
        if rec.shape[0] * rec.shape[1] != rec.data.len() {
            return Err(ModelError::Checkpoint(format!("tensor {name} shape/data mismatch")));
        }
        store.insert(name, Tensor::from_vec(rec.shape[0], rec.shape[1], rec.data));
    }
    Ok((store, doc.config))
}
