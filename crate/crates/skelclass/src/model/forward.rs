//! Batched forward construction of the full network on a [`Graph`].
//!
//! Frames are processed as rows of large matrices: the spatial path works
//! clip-major (row b·75+t), the LSTM time-major (row t·B+b) so each time
//! step is a contiguous row slice, and a row permutation joins the two at
//! the fusion stage. Attention over parts or frames runs as one blocked
//! attention node per projection set, which keeps the recorded graph small.

use indexmap::IndexMap;

use super::{AttentionRecord, ModelConfig, ModelError, ParameterStore, PartGraph};
use crate::autodiff::{Graph, Mode, NodeId, Tensor};
use crate::pose::{Label, PartitionedSkeleton, SkeletonClip, CLIP_FRAMES, N_PARTS};
use crate::seed::mix;

/// The temporal path stacks this many bidirectional LSTM layers.
pub const NUM_LSTM_LAYERS: usize = 4;

/// Handles into a built batch forward pass.
pub struct BatchForward {
    pub batch: usize,
    /// (B, 2) class probabilities.
    pub probs: NodeId,
    pub logits: NodeId,
    /// Blocked 5-token attention node; weights rows are (clip, frame, part).
    pub spatial_attn: NodeId,
    /// Blocked 75-token attention node; weights rows are (clip, frame).
    pub temporal_attn: NodeId,
    /// One blocked attention node per fusion head.
    pub fusion_attn: Vec<NodeId>,
    /// Post-LSTM, pre-attention hidden sequence, clip-major (B·75, 2H).
    pub temporal_hidden: NodeId,
    /// (B·75, n_spatial_out) clip-major per-frame spatial features.
    pub spatial_features: NodeId,
    /// (B·75, n_rnn_out) clip-major per-frame temporal features.
    pub temporal_features: NodeId,
    /// Encoder outputs per part slot (torso, r_arm, l_arm, r_leg, l_leg).
    pub part_features: [NodeId; N_PARTS],
    /// Train-mode batch-norm nodes keyed by parameter prefix, for the
    /// running-statistics commit.
    pub bn_nodes: Vec<(String, NodeId)>,
    /// Leaf node of every trainable parameter.
    pub param_nodes: IndexMap<String, NodeId>,
}

struct Builder<'a> {
    g: &'a mut Graph,
    store: &'a ParameterStore,
    cfg: &'a ModelConfig,
    mode: Mode,
    dropout_seed: u64,
    dropout_site: u64,
    params: IndexMap<String, NodeId>,
    bn_nodes: Vec<(String, NodeId)>,
}

impl<'a> Builder<'a> {
    fn param(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.params.get(name) {
            return id;
        }
        let id = self.g.leaf(self.store.get(name).clone(), true);
        self.params.insert(name.to_string(), id);
        id
    }

    /// FC layer followed by batch norm and leaky ReLU.
    fn dense_block(&mut self, fc: &str, bn: &str, x: NodeId) -> Result<NodeId, ModelError> {
        let w = self.param(&format!("{fc}.w"));
        let b = self.param(&format!("{fc}.b"));
        let pre = self.g.matmul(x, w)?;
        let pre = self.g.add_bias(pre, b)?;
        let normed = self.batch_norm(bn, pre)?;
        Ok(self.g.leaky_relu(normed, self.cfg.leaky_slope)?)
    }

    fn batch_norm(&mut self, prefix: &str, x: NodeId) -> Result<NodeId, ModelError> {
        let gamma = self.param(&format!("{prefix}.gamma"));
        let beta = self.param(&format!("{prefix}.beta"));
        let mean = self.store.get(&format!("{prefix}.running_mean"));
        let var = self.store.get(&format!("{prefix}.running_var"));
        let node = self.g.batch_norm(x, gamma, beta, (mean, var), self.mode, BN_EPS)?;
        if self.mode == Mode::Train {
            self.bn_nodes.push((prefix.to_string(), node));
        }
        Ok(node)
    }

    fn dropout(&mut self, x: NodeId) -> Result<NodeId, ModelError> {
        let site = self.dropout_site;
        self.dropout_site += 1;
        Ok(self.g.dropout(x, self.cfg.dropout_p, self.mode, mix(self.dropout_seed, site))?)
    }

    fn attention_projected(
        &mut self,
        prefix: &str,
        x: NodeId,
        block: usize,
    ) -> Result<NodeId, ModelError> {
        let wq = self.param(&format!("{prefix}.q.w"));
        let wk = self.param(&format!("{prefix}.k.w"));
        let wv = self.param(&format!("{prefix}.v.w"));
        let q = self.g.matmul(x, wq)?;
        let k = self.g.matmul(x, wk)?;
        let v = self.g.matmul(x, wv)?;
        Ok(self.g.attention(q, k, v, block, block)?)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Builds the full network over a batch of clips. Returns handles to the
/// probability output, recorded attention nodes, and parameter leaves.
pub fn build_batch(
    g: &mut Graph,
    store: &ParameterStore,
    cfg: &ModelConfig,
    graph: &PartGraph,
    clips: &[&SkeletonClip],
    mode: Mode,
    dropout_seed: u64,
) -> Result<BatchForward, ModelError> {
    cfg.validate()?;
    if clips.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let b = clips.len();
    let frames = CLIP_FRAMES;
    let bf = b * frames;
    let partitions: Vec<PartitionedSkeleton> =
        clips.iter().map(|c| crate::pose::partition_parts(c)).collect();

    let mut builder = Builder {
        g,
        store,
        cfg,
        mode,
        dropout_seed,
        dropout_site: 0,
        params: IndexMap::new(),
        bn_nodes: Vec::new(),
    };

    // ---- spatial path ----------------------------------------------------
    // Per-part inputs, clip-major rows (b·75 + t), columns 2·k_p.
    let mut part_inputs = Vec::with_capacity(N_PARTS);
    for p in 0..N_PARTS {
        let width = 2 * partitions[0].part_sizes[p];
        let mut x = Tensor::zeros(bf, width);
        for (bi, parts) in partitions.iter().enumerate() {
            let block = &parts.blocks[p];
            for t in 0..frames {
                for r in 0..width {
                    x.set(bi * frames + t, r, block.get(r, t));
                }
            }
        }
        part_inputs.push(builder.g.constant(x));
    }

    // Arms share one encoder, legs another; both sides run stacked through
    // the shared tensors (part order: torso, r_arm, l_arm, r_leg, l_leg).
    let torso_feat = encode_part(&mut builder, "torso", part_inputs[0])?;
    let arms = builder.g.concat_rows(&[part_inputs[1], part_inputs[2]])?;
    let arm_feat = encode_part(&mut builder, "arm", arms)?;
    let right_arm = builder.g.slice_rows(arm_feat, 0, bf)?;
    let left_arm = builder.g.slice_rows(arm_feat, bf, bf)?;
    let legs = builder.g.concat_rows(&[part_inputs[3], part_inputs[4]])?;
    let leg_feat = encode_part(&mut builder, "leg", legs)?;
    let right_leg = builder.g.slice_rows(leg_feat, 0, bf)?;
    let left_leg = builder.g.slice_rows(leg_feat, bf, bf)?;

    let part_features = [torso_feat, right_arm, left_arm, right_leg, left_leg];

    // Interleave part features into per-frame token blocks: row f·5 + p.
    let part_major =
        builder.g.concat_rows(&[torso_feat, right_arm, left_arm, right_leg, left_leg])?;
    let mut perm = Vec::with_capacity(bf * N_PARTS);
    for f in 0..bf {
        for p in 0..N_PARTS {
            perm.push((p * bf + f) as u32);
        }
    }
    let tokens = builder.g.permute_rows(part_major, perm)?;

    let spatial_attn = builder.attention_projected("spatial.attn", tokens, N_PARTS)?;
    let att_dropped = builder.dropout(spatial_attn)?;

    // GCN over the 5 parts of every frame, then max aggregation.
    let propagated = builder.g.block_left_mul(&graph.propagation, att_dropped)?;
    let gcn_w = builder.param("spatial.gcn.w");
    let gcn_lin = builder.g.matmul(propagated, gcn_w)?;
    let gcn_out = builder.g.leaky_relu(gcn_lin, cfg.leaky_slope)?;
    let aggregated = builder.g.block_rows_max(gcn_out, N_PARTS)?;

    let s1 = builder.dense_block("spatial.fc1", "spatial.bn1", aggregated)?;
    let spatial_features = builder.dense_block("spatial.fc2", "spatial.bn2", s1)?;

    // ---- temporal path ---------------------------------------------------
    // Time-major input (t·B + b) so each step is a contiguous row slice.
    let mut temporal_in = Tensor::zeros(bf, 50);
    for (bi, clip) in clips.iter().enumerate() {
        for t in 0..frames {
            for r in 0..50 {
                temporal_in.set(t * b + bi, r, clip.matrix.get(r, t));
            }
        }
    }
    let mut x = builder.g.constant(temporal_in);
    for layer in 0..NUM_LSTM_LAYERS {
        let fwd = lstm_direction(&mut builder, layer, "fwd", x, b, false)?;
        let bwd = lstm_direction(&mut builder, layer, "bwd", x, b, true)?;
        x = builder.g.concat_cols(&[fwd, bwd])?;
    }
    // Switch to clip-major for frame attention and fusion.
    let mut cm = Vec::with_capacity(bf);
    for bi in 0..b {
        for t in 0..frames {
            cm.push((t * b + bi) as u32);
        }
    }
    let temporal_hidden = builder.g.permute_rows(x, cm)?;

    let temporal_attn = builder.attention_projected("temporal.attn", temporal_hidden, frames)?;
    let t_dropped = builder.dropout(temporal_attn)?;

    let t1 = builder.dense_block("temporal.fc1", "temporal.bn1", t_dropped)?;
    let t2 = builder.dense_block("temporal.fc2", "temporal.bn2", t1)?;
    // Residual joins the last two FC layers, added before the activation.
    let w3 = builder.param("temporal.fc3.w");
    let b3 = builder.param("temporal.fc3.b");
    let pre3 = builder.g.matmul(t2, w3)?;
    let pre3 = builder.g.add_bias(pre3, b3)?;
    let pre3 = builder.batch_norm("temporal.bn3", pre3)?;
    let res = builder.g.add(pre3, t1)?;
    let temporal_features = builder.g.leaky_relu(res, cfg.leaky_slope)?;

    // ---- fusion and head ---------------------------------------------
    let fused = builder.g.concat_cols(&[spatial_features, temporal_features])?;
    let mut head_outputs = Vec::with_capacity(cfg.n_heads);
    let mut fusion_attn = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let att = builder.attention_projected(&format!("fusion.head{h}"), fused, frames)?;
        fusion_attn.push(att);
        head_outputs.push(att);
    }
    let concat = builder.g.concat_cols(&head_outputs)?;
    let out_w = builder.param("fusion.out.w");
    let projected = builder.g.matmul(concat, out_w)?;
    let residual = builder.g.add(projected, fused)?;
    let fused_out = builder.dropout(residual)?;

    let pooled = builder.g.block_rows_mean(fused_out, frames)?;
    let h1 = builder.dense_block("head.fc1", "head.bn1", pooled)?;
    let h1 = builder.dropout(h1)?;
    let w2 = builder.param("head.fc2.w");
    let b2 = builder.param("head.fc2.b");
    let logits = builder.g.matmul(h1, w2)?;
    let logits = builder.g.add_bias(logits, b2)?;
    let probs = builder.g.row_softmax(logits)?;

    Ok(BatchForward {
        batch: b,
        probs,
        logits,
        spatial_attn,
        temporal_attn,
        fusion_attn,
        temporal_hidden,
        spatial_features,
        temporal_features,
        part_features,
        bn_nodes: builder.bn_nodes,
        param_nodes: builder.params,
    })
}

fn encode_part(builder: &mut Builder, arch: &str, x: NodeId) -> Result<NodeId, ModelError> {
    let mut h = x;
    for layer in 1..=3 {
        h = builder.dense_block(
            &format!("spatial.enc.{arch}.fc{layer}"),
            &format!("spatial.enc.{arch}.bn{layer}"),
            h,
        )?;
    }
    Ok(h)
}

/// Runs one LSTM direction over a time-major layer input (75·B, in).
/// Input projections for all steps are one matmul; the recurrent part
/// walks the 75 steps. Hidden and cell states start at zero.
fn lstm_direction(
    builder: &mut Builder,
    layer: usize,
    dir: &str,
    x: NodeId,
    batch: usize,
    reversed: bool,
) -> Result<NodeId, ModelError> {
    let hidden = builder.cfg.n_rnn;
    let prefix = format!("temporal.lstm{layer}.{dir}");
    let wx = builder.param(&format!("{prefix}.wx"));
    let wh = builder.param(&format!("{prefix}.wh"));
    let bias = builder.param(&format!("{prefix}.b"));

    let pre_all = builder.g.matmul(x, wx)?;
    let pre_all = builder.g.add_bias(pre_all, bias)?;

    let mut h = builder.g.constant(Tensor::zeros(batch, hidden));
    let mut c = builder.g.constant(Tensor::zeros(batch, hidden));
    let mut outputs: Vec<Option<NodeId>> = vec![None; CLIP_FRAMES];
    let steps: Vec<usize> = if reversed {
        (0..CLIP_FRAMES).rev().collect()
    } else {
        (0..CLIP_FRAMES).collect()
    };
    for t in steps {
        let x_pre = builder.g.slice_rows(pre_all, t * batch, batch)?;
        let rec = builder.g.matmul(h, wh)?;
        let gates = builder.g.add(x_pre, rec)?;
        let (new_h, new_c) = cell_from_gates(builder.g, gates, c, hidden)?;
        h = new_h;
        c = new_c;
        outputs[t] = Some(h);
    }
    let ordered: Vec<NodeId> = outputs.into_iter().map(|o| o.expect("all steps run")).collect();
    Ok(builder.g.concat_rows(&ordered)?)
}

/// The gate nonlinearity of one LSTM step. `gates` holds the four
/// pre-activations [input, forget, candidate, output] side by side.
fn cell_from_gates(
    g: &mut Graph,
    gates: NodeId,
    c_prev: NodeId,
    hidden: usize,
) -> Result<(NodeId, NodeId), ModelError> {
    let i_pre = g.slice_cols(gates, 0, hidden)?;
    let f_pre = g.slice_cols(gates, hidden, hidden)?;
    let g_pre = g.slice_cols(gates, 2 * hidden, hidden)?;
    let o_pre = g.slice_cols(gates, 3 * hidden, hidden)?;
    let i = g.sigmoid(i_pre)?;
    let f = g.sigmoid(f_pre)?;
    let cand = g.tanh(g_pre)?;
    let o = g.sigmoid(o_pre)?;
    let keep = g.elementwise_mul(f, c_prev)?;
    let write = g.elementwise_mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.tanh(c)?;
    let h = g.elementwise_mul(o, c_act)?;
    Ok((h, c))
}

/// One LSTM step from explicit inputs: gates = x·Wx + h·Wh + b.
pub fn lstm_cell(
    g: &mut Graph,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    wx: NodeId,
    wh: NodeId,
    bias: NodeId,
) -> Result<(NodeId, NodeId), ModelError> {
    let hidden = g.value(h_prev).cols();
    let xw = g.matmul(x_t, wx)?;
    let hw = g.matmul(h_prev, wh)?;
    let sum = g.add(xw, hw)?;
    let gates = g.add_bias(sum, bias)?;
    cell_from_gates(g, gates, c_prev, hidden)
}

/// Single-block self-attention over the rows of x with learned q/k/v
/// projections. Weights are recorded on the returned node
/// (`g.attention_weights`).
pub fn self_attention(
    g: &mut Graph,
    x: NodeId,
    wq: NodeId,
    wk: NodeId,
    wv: NodeId,
) -> Result<NodeId, ModelError> {
    let tokens = g.value(x).rows();
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    Ok(g.attention(q, k, v, tokens, tokens)?)
}

pub struct HeadProjection {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
}

/// Multi-head attention with output projection and residual addition.
/// Head width must divide the input width. Returns the output node and
/// the per-head attention nodes.
pub fn multi_head_attention(
    g: &mut Graph,
    x: NodeId,
    heads: &[HeadProjection],
    out_w: NodeId,
) -> Result<(NodeId, Vec<NodeId>), ModelError> {
    let d = g.value(x).cols();
    if heads.is_empty() || d % heads.len() != 0 {
        return Err(ModelError::Config(format!(
            "width {d} not divisible by {} heads",
            heads.len()
        )));
    }
    let tokens = g.value(x).rows();
    let mut outs = Vec::with_capacity(heads.len());
    for h in heads {
        let q = g.matmul(x, h.wq)?;
        let k = g.matmul(x, h.wk)?;
        let v = g.matmul(x, h.wv)?;
        outs.push(g.attention(q, k, v, tokens, tokens)?);
    }
    let concat = g.concat_cols(&outs)?;
    let projected = g.matmul(concat, out_w)?;
    let residual = g.add(projected, x)?;
    Ok((residual, outs))
}

/// Graph convolution σ(P·H·W) with P the graph's normalized propagation
/// matrix; H has one row per node.
pub fn gcn_forward(
    g: &mut Graph,
    h: NodeId,
    graph: &PartGraph,
    w: NodeId,
    leaky_slope: f64,
) -> Result<NodeId, ModelError> {
    if g.value(h).rows() != graph.propagation.rows() {
        return Err(ModelError::Config(format!(
            "{} feature rows for a {}-node graph",
            g.value(h).rows(),
            graph.propagation.rows()
        )));
    }
    let propagated = g.block_left_mul(&graph.propagation, h)?;
    let lin = g.matmul(propagated, w)?;
    Ok(g.leaky_relu(lin, leaky_slope)?)
}

/// Pulls per-clip attention records out of a completed forward pass.
pub fn extract_records(g: &Graph, fwd: &BatchForward) -> Vec<AttentionRecord> {
    let probs = g.value(fwd.probs);
    let spatial_w = g.attention_weights(fwd.spatial_attn).expect("spatial attention node");
    let temporal_w = g.attention_weights(fwd.temporal_attn).expect("temporal attention node");
    let frames = CLIP_FRAMES;

    (0..fwd.batch)
        .map(|bi| {
            let mut per_frame = Vec::with_capacity(frames);
            let mut mean = Tensor::zeros(N_PARTS, N_PARTS);
            for t in 0..frames {
                let mut m = Tensor::zeros(N_PARTS, N_PARTS);
                for p in 0..N_PARTS {
                    let row = spatial_w.row(((bi * frames + t) * N_PARTS) + p);
                    for (j, &w) in row.iter().enumerate() {
                        m.set(p, j, w);
                        let acc = mean.get(p, j) + w / frames as f64;
                        mean.set(p, j, acc);
                    }
                }
                per_frame.push(m);
            }
            let mut temporal = Tensor::zeros(frames, frames);
            for t in 0..frames {
                temporal.row_mut(t).copy_from_slice(temporal_w.row(bi * frames + t));
            }
            let p = [probs.get(bi, 0), probs.get(bi, 1)];
            let predicted = if p[1] > p[0] { Label::Dystonia } else { Label::Chorea };
            AttentionRecord {
                spatial: mean,
                spatial_per_frame: per_frame,
                temporal,
                probabilities: p,
                predicted,
            }
        })
        .collect()
}

/// Evaluates a batch of clips and returns per-clip attention records.
/// Eval mode is a pure function of (clips, params).
pub fn model_forward_batch(
    store: &ParameterStore,
    cfg: &ModelConfig,
    clips: &[&SkeletonClip],
    mode: Mode,
    dropout_seed: u64,
) -> Result<Vec<AttentionRecord>, ModelError> {
    let graph = PartGraph::parts(cfg.gcn_self_loops);
    let mut g = Graph::new();
    let fwd = build_batch(&mut g, store, cfg, &graph, clips, mode, dropout_seed)?;
    Ok(extract_records(&g, &fwd))
}

/// Runs one clip through the model.
pub fn model_forward(
    store: &ParameterStore,
    cfg: &ModelConfig,
    clip: &SkeletonClip,
    mode: Mode,
    dropout_seed: u64,
) -> Result<AttentionRecord, ModelError> {
    Ok(model_forward_batch(store, cfg, &[clip], mode, dropout_seed)?
        .into_iter()
        .next()
        .expect("one record per clip"))
}

/// Applies momentum updates of batch-norm running statistics recorded by
/// a train-mode forward pass.
pub fn commit_bn_stats(g: &Graph, fwd: &BatchForward, store: &mut ParameterStore) {
    for (prefix, node) in &fwd.bn_nodes {
        let (mean, var) = g.batch_stats(*node).expect("train-mode bn node");
        let rm = store.get_mut(&format!("{prefix}.running_mean"));
        for (r, &m) in rm.data_mut().iter_mut().zip(mean) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
        }
        let rv = store.get_mut(&format!("{prefix}.running_var"));
        for (r, &v) in rv.data_mut().iter_mut().zip(var) {
            *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
        }
    }
}

/// Test hook: runs one LSTM direction over a time-major input tensor
/// using the named layer's weights from the store.
#[cfg(test)]
pub(crate) fn run_lstm_direction(
    store: &ParameterStore,
    cfg: &ModelConfig,
    layer: usize,
    dir: &str,
    input: Tensor,
    batch: usize,
    reversed: bool,
) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let mut builder = Builder {
        g: &mut g,
        store,
        cfg,
        mode: Mode::Eval,
        dropout_seed: 0,
        dropout_site: 0,
        params: IndexMap::new(),
        bn_nodes: Vec::new(),
    };
    let x = builder.g.constant(input);
    let out = lstm_direction(&mut builder, layer, dir, x, batch, reversed)?;
    Ok(g.value(out).clone())
}
