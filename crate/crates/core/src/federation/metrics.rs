use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Unweighted mean of per-class F1; a class with no predictions and no
/// support scores 0.
pub fn macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> Result<f64> {
    check(pred, truth)?;
    if classes == 0 {
        return Err(Error::InvalidArgument("macro_f1 needs at least one class".into()));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fnc = vec![0usize; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidArgument(format!("label {} outside {classes} classes", p.max(t))));
        }
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fnc[t] += 1;
        }
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fnc[c];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .sum();
    Ok(total / classes as f64)
}

fn check(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("metrics", format!("{} predictions, {} labels", pred.len(), truth.len())));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("cannot score an empty split".into()));
    }
    Ok(())
}

/// One evaluation of the global model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub round: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Largest aggregation deviation norm among the round's aggregations.
    pub deviation_norm: f64,
    /// Mean `||s·ξ^B A||_F` over the round's noisy `B` releases.
    pub mean_linear_b: f64,
    /// Mean `||s·B ξ^A||_F` over the round's noisy `A` releases.
    pub mean_linear_a: f64,
    pub epsilon_spent: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub rows: Vec<MetricRow>,
}

impl MetricLog {
    pub fn last(&self) -> Option<&MetricRow> {
        self.rows.last()
    }
}
