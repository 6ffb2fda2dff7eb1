//! Focal loss and the L2-regularized total loss, as plain evaluations and
//! as graph compositions (the two are cross-checked in tests).

use indexmap::IndexMap;

use crate::autodiff::{Graph, NodeId, Result as GraphResult, Tensor};
use crate::model::ParamKind;
use crate::pose::Label;
use serde::{Deserialize, Serialize};

pub const P_CLAMP_MIN: f64 = 1e-12;

/// Which class the focal weight α multiplies. The paper's tuning applies
/// α to the majority (negative, chorea) class; the textbook reading
/// applies it to the positive class. Both are exposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaAppliesTo {
    Positive,
    Negative,
}

impl AlphaAppliesTo {
    /// The α_t factor for a sample of the given class.
    pub fn factor(self, alpha: f64, label: Label) -> f64 {
        match (self, label) {
            (AlphaAppliesTo::Positive, Label::Dystonia) => alpha,
            (AlphaAppliesTo::Positive, Label::Chorea) => 1.0 - alpha,
            (AlphaAppliesTo::Negative, Label::Chorea) => alpha,
            (AlphaAppliesTo::Negative, Label::Dystonia) => 1.0 - alpha,
        }
    }
}

/// Focal loss of one sample: -α_t (1-p_t)^γ ln(p_t), with p_t the
/// probability assigned to the true class, clamped to [1e-12, 1].
pub fn focal_loss_sample(
    probabilities: [f64; 2],
    label: Label,
    alpha: f64,
    gamma: f64,
    convention: AlphaAppliesTo,
) -> f64 {
    let p_t = probabilities[label.index()].clamp(P_CLAMP_MIN, 1.0);
    let a_t = convention.factor(alpha, label);
    -a_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// Mean focal loss over a batch.
pub fn focal_loss_batch(
    probabilities: &[[f64; 2]],
    labels: &[Label],
    alpha: f64,
    gamma: f64,
    convention: AlphaAppliesTo,
) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| focal_loss_sample(p, y, alpha, gamma, convention))
        .sum();
    total / labels.len() as f64
}

/// L2 penalty (λ/2)·Σ w² over weight tensors only (biases and batch-norm
/// scale/shift excluded). Gradient of the penalty w.r.t. w is λ·w.
pub fn l2_penalty(weights: impl Iterator<Item = impl AsRef<[f64]>>, lambda: f64) -> f64 {
    let sum_sq: f64 = weights
        .map(|w| w.as_ref().iter().map(|v| v * v).sum::<f64>())
        .sum();
    0.5 * lambda * sum_sq
}

/// Total loss = focal + (λ/2)·Σ w².
pub fn total_loss(focal: f64, weights: impl Iterator<Item = impl AsRef<[f64]>>, lambda: f64) -> f64 {
    focal + l2_penalty(weights, lambda)
}

/// Graph composition of the mean focal loss from a (B, 2) probability
/// node. α_t enters as a per-sample constant from the labels.
pub fn build_focal_loss(
    g: &mut Graph,
    probs: NodeId,
    labels: &[Label],
    alpha: f64,
    gamma: f64,
    convention: AlphaAppliesTo,
) -> GraphResult<NodeId> {
    let cols: Vec<u32> = labels.iter().map(|l| l.index() as u32).collect();
    let p_t = g.take_per_row(probs, cols)?;
    let p_t = g.clamp(p_t, P_CLAMP_MIN, 1.0)?;
    let one_minus = g.affine(p_t, -1.0, 1.0)?;
    let focus = g.pow_scalar(one_minus, gamma)?;
    let log_p = g.log(p_t)?;
    let weighted = g.elementwise_mul(focus, log_p)?;
    let alpha_t = Tensor::from_vec(
        labels.len(),
        1,
        labels.iter().map(|&l| convention.factor(alpha, l)).collect(),
    );
    let alpha_node = g.constant(alpha_t);
    let scaled = g.elementwise_mul(weighted, alpha_node)?;
    let mean = g.mean_over_axis(scaled, 0)?;
    g.scale(mean, -1.0)
}

/// Graph composition of the L2 penalty over the decayed parameter leaves.
/// Returns None when λ = 0 or no decayed parameters exist.
pub fn build_l2_penalty(
    g: &mut Graph,
    param_nodes: &IndexMap<String, NodeId>,
    lambda: f64,
) -> GraphResult<Option<NodeId>> {
    if lambda == 0.0 {
        return Ok(None);
    }
    let mut acc: Option<NodeId> = None;
    for (name, &node) in param_nodes {
        if !ParamKind::from_name(name).decayed() {
            continue;
        }
        let sq = g.elementwise_mul(node, node)?;
        let sum = g.sum_all(sq)?;
        acc = Some(match acc {
            Some(a) => g.add(a, sum)?,
            None => sum,
        });
    }
    match acc {
        Some(a) => Ok(Some(g.scale(a, 0.5 * lambda)?)),
        None => Ok(None),
    }
}

/// focal + optional penalty.
pub fn build_total_loss(
    g: &mut Graph,
    focal: NodeId,
    param_nodes: &IndexMap<String, NodeId>,
    lambda: f64,
) -> GraphResult<NodeId> {
    match build_l2_penalty(g, param_nodes, lambda)? {
        Some(p) => g.add(focal, p),
        None => Ok(focal),
    }
}
