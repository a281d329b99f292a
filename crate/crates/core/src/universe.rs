//! Candidate families of prediction sets.
//!
//! The full power set is practical for small `K`; otherwise the candidates
//! are a nested chain `∅ = S_0 ⊂ S_1 ⊂ … ⊂ S_K` built by adding one class at
//! a time in a greedy order. All argsorts break ties by ascending class index.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::set_functions::{LabelSet, Objective, Proxy};

/// Largest class count for which the full power set may be enumerated.
pub const FULL_UNIVERSE_MAX_CLASSES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UniverseKind {
    Full,
    Prob,
    Value,
    RatioAdditive,
    RatioGeneral,
}

impl UniverseKind {
    pub fn name(self) -> &'static str {
        match self {
            UniverseKind::Full => "full",
            UniverseKind::Prob => "prob",
            UniverseKind::Value => "value",
            UniverseKind::RatioAdditive => "ratio-additive",
            UniverseKind::RatioGeneral => "ratio-general",
        }
    }

    pub fn is_chain(self) -> bool {
        self != UniverseKind::Full
    }
}

impl fmt::Display for UniverseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UniverseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(UniverseKind::Full),
            "prob" => Ok(UniverseKind::Prob),
            "value" => Ok(UniverseKind::Value),
            "ratio-additive" => Ok(UniverseKind::RatioAdditive),
            "ratio-general" => Ok(UniverseKind::RatioGeneral),
            other => Err(Error::InvalidInput(format!("unknown universe `{other}`"))),
        }
    }
}

/// Ordered candidate sets; the empty set always comes first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UniverseSeq {
    pub kind: UniverseKind,
    pub sets: Vec<LabelSet>,
}

impl UniverseSeq {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    fn chain(kind: UniverseKind, order: &[usize]) -> Self {
        let mut sets = Vec::with_capacity(order.len() + 1);
        let mut current = LabelSet::EMPTY;
        sets.push(current);
        for &k in order {
            current = current.with(k);
            sets.push(current);
        }
        UniverseSeq { kind, sets }
    }

    /// The greedy order that produced a chain.
    pub fn order(&self) -> Vec<usize> {
        self.sets
            .windows(2)
            .map(|w| {
                w[1].difference(w[0])
                    .iter()
                    .next()
                    .expect("chain adds one class per step")
            })
            .collect()
    }
}

/// Indices sorted by descending `score`, ties by ascending index.
fn argsort_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Ordering key for a marginal value/cost ratio. A non-positive marginal cost
/// counts as an infinite ratio; infinite ratios rank first, among themselves
/// by descending marginal value.
#[derive(Debug, Clone, Copy)]
struct RatioKey {
    free: bool,
    score: f64,
}

impl RatioKey {
    fn new(value: f64, cost: f64) -> Self {
        if cost <= 0.0 {
            RatioKey {
                free: true,
                score: value,
            }
        } else {
            RatioKey {
                free: false,
                score: value / cost,
            }
        }
    }

    /// `Less` means `self` ranks ahead of `other`.
    fn rank(&self, other: &RatioKey) -> Ordering {
        other
            .free
            .cmp(&self.free)
            .then(other.score.total_cmp(&self.score))
    }
}

/// All `2^K` subsets sorted by ascending proxy cost (stable, so `∅` leads).
pub fn full_universe(probs: &[f64], cost: &Proxy) -> Result<UniverseSeq> {
    let k = probs.len();
    if k > FULL_UNIVERSE_MAX_CLASSES {
        return Err(Error::TooManyClasses {
            count: k,
            limit: FULL_UNIVERSE_MAX_CLASSES,
        });
    }
    let bound = cost.bind(probs)?;
    let mut scored: Vec<(f64, LabelSet)> = (0u64..(1u64 << k))
        .map(LabelSet::from_bits)
        .map(|s| (bound.eval(s), s))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    if scored[0].1 != LabelSet::EMPTY {
        // a set with negative proxy cost would violate the cost proxy's range
        return Err(Error::MissingEmptySet);
    }
    Ok(UniverseSeq {
        kind: UniverseKind::Full,
        sets: scored.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Classes added by descending predicted probability.
pub fn greedy_prob(probs: &[f64]) -> UniverseSeq {
    UniverseSeq::chain(UniverseKind::Prob, &argsort_desc(probs))
}

/// Classes added by descending expected value `p_k · v_k`.
pub fn greedy_value(probs: &[f64], values: &[f64]) -> Result<UniverseSeq> {
    if values.len() != probs.len() {
        return Err(Error::LengthMismatch {
            expected: probs.len(),
            got: values.len(),
        });
    }
    if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidInput(format!("class value {v} must be >= 0")));
    }
    let scores: Vec<f64> = probs.iter().zip(values).map(|(p, v)| p * v).collect();
    Ok(UniverseSeq::chain(
        UniverseKind::Value,
        &argsort_desc(&scores),
    ))
}

/// Classes added by descending `p_k · v_k / Ĉ_k`.
pub fn greedy_ratio_additive(
    probs: &[f64],
    values: &[f64],
    marginal_costs: &[f64],
) -> Result<UniverseSeq> {
    for len in [values.len(), marginal_costs.len()] {
        if len != probs.len() {
            return Err(Error::LengthMismatch {
                expected: probs.len(),
                got: len,
            });
        }
    }
    let keys: Vec<RatioKey> = (0..probs.len())
        .map(|k| RatioKey::new(probs[k] * values[k], marginal_costs[k]))
        .collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| keys[a].rank(&keys[b]).then(a.cmp(&b)));
    Ok(UniverseSeq::chain(UniverseKind::RatioAdditive, &order))
}

/// At each step adds the class maximizing marginal proxy value over marginal
/// proxy cost given the current set.
pub fn greedy_ratio_general(probs: &[f64], value: &Proxy, cost: &Proxy) -> Result<UniverseSeq> {
    let v = value.bind(probs)?;
    let c = cost.bind(probs)?;
    let k = probs.len();
    let mut current = LabelSet::EMPTY;
    let mut order = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best: Option<(usize, RatioKey)> = None;
        for class in (0..k).filter(|&j| !current.contains(j)) {
            let key = RatioKey::new(v.marginal(class, current)?, c.marginal(class, current)?);
            // strict improvement only, so ties keep the lower index
            if best.is_none_or(|(_, b)| key.rank(&b) == Ordering::Less) {
                best = Some((class, key));
            }
        }
        let (class, _) = best.expect("at least one class remains");
        order.push(class);
        current = current.with(class);
    }
    Ok(UniverseSeq::chain(UniverseKind::RatioGeneral, &order))
}

/// Builds the universe of `kind` for one probability vector.
pub fn build_universe(
    kind: UniverseKind,
    probs: &[f64],
    objective: &Objective,
) -> Result<UniverseSeq> {
    match kind {
        UniverseKind::Full => full_universe(probs, &objective.cost),
        UniverseKind::Prob => Ok(greedy_prob(probs)),
        UniverseKind::Value => {
            let f = objective.value.function();
            if !f.is_additive() {
                return Err(Error::Unsupported(format!(
                    "the value-ordered universe needs an additive value, got `{}`",
                    f.kind()
                )));
            }
            let values: Vec<f64> = (0..probs.len()).map(|k| f.class_term(k)).collect();
            greedy_value(probs, &values)
        }
        UniverseKind::RatioAdditive => {
            if !(objective.value.is_additive() && objective.cost.is_additive()) {
                return Err(Error::Unsupported(
                    "the additive ratio universe needs analytic value and cost proxies".into(),
                ));
            }
            let f = objective.value.function();
            let values: Vec<f64> = (0..probs.len()).map(|k| f.class_term(k)).collect();
            let costs = objective
                .cost
                .bind(probs)?
                .class_marginals()
                .expect("analytic proxies expose class marginals");
            greedy_ratio_additive(probs, &values, &costs)
        }
        UniverseKind::RatioGeneral => {
            greedy_ratio_general(probs, &objective.value, &objective.cost)
        }
    }
}

/// The ratio universe, using the closed form when both proxies are additive.
pub fn ratio_kind_for(objective: &Objective) -> UniverseKind {
    if objective.value.is_additive() && objective.cost.is_additive() {
        UniverseKind::RatioAdditive
    } else {
        UniverseKind::RatioGeneral
    }
}
