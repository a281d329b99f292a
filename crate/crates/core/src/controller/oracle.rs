//! Reference thresholds by direct search over candidate proxy costs.
//!
//! These evaluate the defining `sup` expressions literally from the sample
//! records, without the tree, in `O(MN)` per candidate and a binary search
//! over the `O(MN)` candidates. They are the baseline the tree is checked
//! and benchmarked against.

use crate::quantile_tree::{ABOVE_ALL, BELOW_ALL};

use super::SampleRecord;

/// Sorted, de-duplicated candidate thresholds plus [`ABOVE_ALL`].
fn candidates(records: &[SampleRecord]) -> Vec<f64> {
    let mut c: Vec<f64> = records
        .iter()
        .flat_map(|r| r.proxy_costs.iter().copied())
        .collect();
    c.push(ABOVE_ALL);
    c.sort_unstable_by(f64::total_cmp);
    c.dedup();
    c
}

/// Largest candidate satisfying a downward-closed predicate, else [`BELOW_ALL`].
fn largest_feasible(candidates: &[f64], feasible: impl Fn(f64) -> bool) -> f64 {
    // feasible(candidates[i]) is true for a prefix of i
    let count = candidates.partition_point(|&t| feasible(t));
    if count == 0 {
        BELOW_ALL
    } else {
        candidates[count - 1]
    }
}

/// `sup{ t : (C_max + Σ_i C⁺(t; Z_i)) / (N+1) ≤ c }` by direct search.
pub fn oracle_threshold_expected(records: &[SampleRecord], target: f64, cost_bound: f64) -> f64 {
    let n = records.len() as f64;
    let cands = candidates(records);
    largest_feasible(&cands, |t| {
        let total: f64 = records.iter().map(|r| r.max_cost_below(t)).sum();
        (cost_bound + total) / (n + 1.0) <= target
    })
}

/// `sup{ t : Σ_i 1{C⁺(t; Z_i) ≤ c} / (N+1) ≥ 1 − δ }` by direct search.
pub fn oracle_threshold_violation(records: &[SampleRecord], target: f64, delta: f64) -> f64 {
    let n = records.len() as f64;
    let cands = candidates(records);
    largest_feasible(&cands, |t| {
        let ok = records
            .iter()
            .filter(|r| r.max_cost_below(t) <= target)
            .count() as f64;
        ok / (n + 1.0) >= 1.0 - delta
    })
}

/// `Σ_i max{c⁺_{i,j} : ĉ_{i,j} ≤ t}`: the tree's un-normalized CDF at `t`,
/// recomputed from the records.
pub fn cumulative_max_cost(records: &[SampleRecord], t: f64) -> f64 {
    records
        .iter()
        .map(|r| {
            r.proxy_costs
                .iter()
                .zip(&r.max_costs)
                .filter(|(c_hat, _)| **c_hat <= t)
                .map(|(_, m)| *m)
                .fold(0.0, f64::max)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdAgreement {
    Match,
    /// The queried level equals a stored cumulative weight, where the exact
    /// threshold is the successor of the quantile. Counted, not failed.
    Boundary,
    Mismatch,
}

/// Classifies a tree threshold against the oracle one.
///
/// `cumulative_at` gives the un-normalized CDF at a threshold and `level` is
/// the un-normalized quantile level that was queried.
pub fn compare_thresholds(
    tree: f64,
    oracle: f64,
    level: f64,
    cumulative_at: impl Fn(f64) -> f64,
) -> ThresholdAgreement {
    if tree == oracle {
        return ThresholdAgreement::Match;
    }
    let at = if tree == BELOW_ALL {
        0.0
    } else {
        cumulative_at(tree)
    };
    if (at - level).abs() <= 1e-9 * level.abs().max(1.0) {
        ThresholdAgreement::Boundary
    } else {
        ThresholdAgreement::Mismatch
    }
}
