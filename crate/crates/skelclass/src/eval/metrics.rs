//! Confusion counts and the derived classification metrics. Dystonia is
//! the positive class throughout.

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::pose::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_pos: u64,
    pub true_neg: u64,
    pub false_pos: u64,
    pub false_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.true_neg + self.false_pos + self.false_neg
    }
}

/// Tallies predictions against labels.
pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::Invalid(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (Label::Dystonia, Label::Dystonia) => cm.true_pos += 1,
            (Label::Chorea, Label::Chorea) => cm.true_neg += 1,
            (Label::Dystonia, Label::Chorea) => cm.false_pos += 1,
            (Label::Chorea, Label::Dystonia) => cm.false_neg += 1,
        }
    }
    Ok(cm)
}

/// Point metrics with 0/0 denominators reported as 0 plus a warning flag
/// (a silent NaN would poison fold aggregates).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub zero_division: ZeroDivisionFlags,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDivisionFlags {
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
    pub f1: bool,
}

pub const METRIC_NAMES: [&str; 6] =
    ["accuracy", "f1", "sensitivity", "specificity", "precision", "recall"];

impl Metrics {
    pub fn by_name(&self, name: &str) -> f64 {
        match name {
            "accuracy" => self.accuracy,
            "sensitivity" => self.sensitivity,
            "specificity" => self.specificity,
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            other => panic!("unknown metric {other}"),
        }
    }
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::Invalid("empty confusion matrix".into()));
    }
    let mut flags = ZeroDivisionFlags::default();
    let accuracy = (cm.true_pos + cm.true_neg) as f64 / cm.total() as f64;
    let sensitivity = ratio(cm.true_pos, cm.true_pos + cm.false_neg, &mut flags.sensitivity);
    let specificity = ratio(cm.true_neg, cm.true_neg + cm.false_pos, &mut flags.specificity);
    let precision = ratio(cm.true_pos, cm.true_pos + cm.false_pos, &mut flags.precision);
    let recall = sensitivity;
    let f1 = if precision + recall == 0.0 {
        flags.f1 = true;
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics { accuracy, sensitivity, specificity, precision, recall, f1, zero_division: flags })
}
