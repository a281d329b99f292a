//! Per-class split-conformal false-positive control.
//!
//! Each class gets the budget `ε = c / (K · unit)` and predicts `k` iff
//! `p̂_k > t_k` with `t_k = Q(1 − ε; {p̂_k(x_i) : k ∉ y_i} ∪ {∞})`.

use crate::error::{Error, Result};
use crate::quantile_tree::{QuantileTree, ABOVE_ALL, BELOW_ALL};
use crate::set_functions::{LabelSet, Sample};

fn per_class_level(target: f64, num_classes: usize, unit_cost: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::InvalidInput(format!(
            "target cost {target} must be positive"
        )));
    }
    if !(unit_cost > 0.0) {
        return Err(Error::InvalidInput(format!(
            "unit cost {unit_cost} must be positive"
        )));
    }
    let epsilon = target / (num_classes as f64 * unit_cost);
    Ok(1.0 - epsilon)
}

/// Batch thresholds from a calibration set. `unit_cost` is the normalized
/// cost of one false positive.
pub fn classwise_thresholds(
    calibration: &[Sample],
    target: f64,
    unit_cost: f64,
) -> Result<Vec<f64>> {
    let first = calibration.first().ok_or(Error::NoCalibrationData)?;
    let k = first.num_classes();
    let level = per_class_level(target, k, unit_cost)?;
    let mut thresholds = Vec::with_capacity(k);
    for class in 0..k {
        let mut scores: Vec<f64> = calibration
            .iter()
            .filter(|s| !s.labels.contains(class))
            .map(|s| s.probs[class])
            .collect();
        scores.push(ABOVE_ALL);
        scores.sort_unstable_by(f64::total_cmp);
        let rank = level * scores.len() as f64;
        if rank <= 0.0 {
            thresholds.push(BELOW_ALL);
            continue;
        }
        let idx = (rank.ceil() as usize).clamp(1, scores.len());
        thresholds.push(scores[idx - 1]);
    }
    Ok(thresholds)
}

pub fn classwise_predict(probs: &[f64], thresholds: &[f64]) -> LabelSet {
    probs
        .iter()
        .zip(thresholds)
        .enumerate()
        .filter(|(_, (p, t))| *p > *t)
        .map(|(k, _)| k)
        .collect()
}

/// Online variant: one unit-weight tree of negative scores per class.
#[derive(Debug, Clone)]
pub struct ClassWise {
    trees: Vec<QuantileTree>,
    level: f64,
    n_seen: usize,
}

impl ClassWise {
    pub fn new(num_classes: usize, target: f64, unit_cost: f64) -> Result<Self> {
        let level = per_class_level(target, num_classes, unit_cost)?;
        let mut trees = Vec::with_capacity(num_classes);
        for _ in 0..num_classes {
            let mut t = QuantileTree::new();
            t.insert(ABOVE_ALL, 1.0)?;
            trees.push(t);
        }
        Ok(ClassWise {
            trees,
            level,
            n_seen: 0,
        })
    }

    pub fn n_seen(&self) -> usize {
        self.n_seen
    }

    pub fn observe(&mut self, sample: &Sample) -> Result<()> {
        if sample.num_classes() != self.trees.len() {
            return Err(Error::LengthMismatch {
                expected: self.trees.len(),
                got: sample.num_classes(),
            });
        }
        for (class, tree) in self.trees.iter_mut().enumerate() {
            if !sample.labels.contains(class) {
                tree.insert(sample.probs[class], 1.0)?;
            }
        }
        self.n_seen += 1;
        Ok(())
    }

    pub fn thresholds(&self) -> Result<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| Ok(t.query_quantile(self.level.min(1.0))?))
            .collect()
    }

    pub fn predict(&self, probs: &[f64]) -> Result<LabelSet> {
        Ok(classwise_predict(probs, &self.thresholds()?))
    }
}
