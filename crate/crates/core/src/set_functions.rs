//! Label sets, monotone value/cost set functions and their proxies.
//!
//! All set functions are normalized so that their largest achievable value is
//! exactly 100: the raw value is divided by `f([K]; y*)`, where `y*` is the
//! most favorable label set, and multiplied by 100.

use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported class count; a [`LabelSet`] is one machine word.
pub const MAX_CLASSES: usize = 64;

/// Upper end of the normalized value/cost range.
pub const NORMALIZED_MAX: f64 = 100.0;

/// Default number of label draws for Monte-Carlo proxies.
pub const DEFAULT_MC_SAMPLES: usize = 100;

/// A subset of `{0, .., K-1}` stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(u64);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);

    pub fn full(num_classes: usize) -> Self {
        assert!(num_classes <= MAX_CLASSES);
        if num_classes == MAX_CLASSES {
            LabelSet(u64::MAX)
        } else {
            LabelSet((1u64 << num_classes) - 1)
        }
    }

    pub fn singleton(class: usize) -> Self {
        LabelSet(1u64 << class)
    }

    pub const fn from_bits(bits: u64) -> Self {
        LabelSet(bits)
    }

    pub const fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, class: usize) -> bool {
        class < MAX_CLASSES && self.0 & (1u64 << class) != 0
    }

    #[must_use]
    pub fn with(self, class: usize) -> Self {
        LabelSet(self.0 | (1u64 << class))
    }

    #[must_use]
    pub fn without(self, class: usize) -> Self {
        LabelSet(self.0 & !(1u64 << class))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[must_use]
    pub fn intersection(self, other: LabelSet) -> Self {
        LabelSet(self.0 & other.0)
    }

    #[must_use]
    pub fn union(self, other: LabelSet) -> Self {
        LabelSet(self.0 | other.0)
    }

    /// Elements of `self` not in `other`.
    #[must_use]
    pub fn difference(self, other: LabelSet) -> Self {
        LabelSet(self.0 & !other.0)
    }

    pub fn is_subset_of(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Classes in ascending order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let k = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(k)
            }
        })
    }
}

impl FromIterator<usize> for LabelSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        iter.into_iter().fold(LabelSet::EMPTY, LabelSet::with)
    }
}

impl fmt::Debug for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, k) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{k}")?;
        }
        f.write_str("}")
    }
}

/// A predicted probability vector paired with the true label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub probs: Vec<f64>,
    pub labels: LabelSet,
}

impl Sample {
    pub fn new(probs: Vec<f64>, labels: LabelSet) -> Result<Self> {
        validate_probs(&probs)?;
        if !labels.is_subset_of(LabelSet::full(probs.len())) {
            return Err(Error::InvalidInput(format!(
                "labels {labels} outside of {} classes",
                probs.len()
            )));
        }
        Ok(Sample { probs, labels })
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

pub(crate) fn validate_probs(probs: &[f64]) -> Result<()> {
    if probs.len() > MAX_CLASSES {
        return Err(Error::TooManyClasses {
            count: probs.len(),
            limit: MAX_CLASSES,
        });
    }
    if let Some((k, p)) = probs
        .iter()
        .enumerate()
        .find(|(_, p)| !(0.0..=1.0).contains(*p))
    {
        return Err(Error::InvalidInput(format!(
            "probability {p} for class {k} outside [0, 1]"
        )));
    }
    Ok(())
}

// --- raw set functions ------------------------------------------------------

/// Number of true positives `|S ∩ y|`.
pub fn value_tp(set: LabelSet, labels: LabelSet) -> f64 {
    set.intersection(labels).len() as f64
}

/// Number of false positives `|S \ y|`.
pub fn cost_fp(set: LabelSet, labels: LabelSet) -> f64 {
    set.difference(labels).len() as f64
}

/// Class-weighted true positives.
pub fn value_tpc(set: LabelSet, labels: LabelSet, weights: &[f64]) -> f64 {
    set.intersection(labels).iter().map(|k| weights[k]).sum()
}

/// Class-weighted false positives.
pub fn cost_fpc(set: LabelSet, labels: LabelSet, weights: &[f64]) -> f64 {
    set.difference(labels).iter().map(|k| weights[k]).sum()
}

/// Non-additive value `Π_{k∈S∩y} (k+5)/10 + Σ_{k∈S∩y} (k−5)²`.
pub fn value_gen(set: LabelSet, labels: LabelSet) -> f64 {
    let hits = set.intersection(labels);
    let product: f64 = hits.iter().map(|k| (k as f64 + 5.0) / 10.0).product();
    let squares: f64 = hits.iter().map(|k| (k as f64 - 5.0).powi(2)).sum();
    product + squares
}

/// Largest class count for which the general value stays monotone.
pub const GEN_MAX_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetFunctionKind {
    Tp,
    Fp,
    Tpc,
    Fpc,
    Gen,
}

impl SetFunctionKind {
    pub fn name(self) -> &'static str {
        match self {
            SetFunctionKind::Tp => "tp",
            SetFunctionKind::Fp => "fp",
            SetFunctionKind::Tpc => "tpc",
            SetFunctionKind::Fpc => "fpc",
            SetFunctionKind::Gen => "gen",
        }
    }

    pub fn is_additive(self) -> bool {
        !matches!(self, SetFunctionKind::Gen)
    }

    /// Whether the function counts positives that are absent from `y`.
    pub fn counts_negatives(self) -> bool {
        matches!(self, SetFunctionKind::Fp | SetFunctionKind::Fpc)
    }

    fn is_weighted(self) -> bool {
        matches!(self, SetFunctionKind::Tpc | SetFunctionKind::Fpc)
    }
}

impl fmt::Display for SetFunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SetFunctionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tp" => Ok(SetFunctionKind::Tp),
            "fp" => Ok(SetFunctionKind::Fp),
            "tpc" => Ok(SetFunctionKind::Tpc),
            "fpc" => Ok(SetFunctionKind::Fpc),
            "gen" => Ok(SetFunctionKind::Gen),
            other => Err(Error::InvalidInput(format!(
                "unknown set function `{other}`"
            ))),
        }
    }
}

/// A monotone set function normalized to `[0, 100]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SetFunction {
    kind: SetFunctionKind,
    weights: Vec<f64>,
    scale: f64,
}

impl SetFunction {
    /// `weights` is required for the weighted kinds and ignored otherwise.
    pub fn new(kind: SetFunctionKind, num_classes: usize, weights: Option<&[f64]>) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidInput("at least one class is required".into()));
        }
        if num_classes > MAX_CLASSES {
            return Err(Error::TooManyClasses {
                count: num_classes,
                limit: MAX_CLASSES,
            });
        }
        let weights = if kind.is_weighted() {
            let w = weights.ok_or_else(|| {
                Error::InvalidInput(format!("set function `{kind}` needs class weights"))
            })?;
            if w.len() != num_classes {
                return Err(Error::LengthMismatch {
                    expected: num_classes,
                    got: w.len(),
                });
            }
            if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                return Err(Error::InvalidInput(format!(
                    "class weight {bad} must be finite and >= 0"
                )));
            }
            w.to_vec()
        } else {
            vec![1.0; num_classes]
        };
        if kind == SetFunctionKind::Gen && num_classes > GEN_MAX_CLASSES {
            return Err(Error::Unsupported(format!(
                "the general value function is defined for at most {GEN_MAX_CLASSES} classes"
            )));
        }
        let mut f = SetFunction {
            kind,
            weights,
            scale: 1.0,
        };
        let full = LabelSet::full(num_classes);
        let best_labels = if kind.counts_negatives() {
            LabelSet::EMPTY
        } else {
            full
        };
        let max_raw = f.raw(full, best_labels);
        if !(max_raw > 0.0) {
            return Err(Error::InvalidInput(format!(
                "set function `{kind}` is identically zero"
            )));
        }
        f.scale = NORMALIZED_MAX / max_raw;
        Ok(f)
    }

    pub fn kind(&self) -> SetFunctionKind {
        self.kind
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    /// Multiplier turning raw values into the normalized range.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_additive(&self) -> bool {
        self.kind.is_additive()
    }

    /// Normalized upper bound (`C_max` / `V_max`).
    pub fn bound(&self) -> f64 {
        NORMALIZED_MAX
    }

    /// Un-normalized value.
    pub fn raw(&self, set: LabelSet, labels: LabelSet) -> f64 {
        match self.kind {
            SetFunctionKind::Tp => value_tp(set, labels),
            SetFunctionKind::Fp => cost_fp(set, labels),
            SetFunctionKind::Tpc => value_tpc(set, labels, &self.weights),
            SetFunctionKind::Fpc => cost_fpc(set, labels, &self.weights),
            SetFunctionKind::Gen => value_gen(set, labels),
        }
    }

    /// Normalized value in `[0, 100]`.
    pub fn eval(&self, set: LabelSet, labels: LabelSet) -> f64 {
        self.raw(set, labels) * self.scale
    }

    /// Normalized contribution of class `k` when it counts (additive kinds).
    pub fn class_term(&self, k: usize) -> f64 {
        self.weights[k] * self.scale
    }
}

// --- proxies ----------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ProxyMethod {
    /// Closed form from the predicted probabilities (additive kinds only).
    Analytic,
    /// Mean over label sets drawn class-independently from the probabilities.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Estimates a set function from predicted probabilities alone.
#[derive(Debug, Clone)]
pub struct Proxy {
    function: SetFunction,
    uniforms: Option<Arc<[f64]>>,
    samples: usize,
}

impl Proxy {
    pub fn new(function: SetFunction, method: ProxyMethod) -> Result<Self> {
        match method {
            ProxyMethod::Analytic => Self::analytic(function),
            ProxyMethod::MonteCarlo { samples, seed } => Self::monte_carlo(function, samples, seed),
        }
    }

    pub fn analytic(function: SetFunction) -> Result<Self> {
        if !function.is_additive() {
            return Err(Error::NoAnalyticProxy(function.kind().name()));
        }
        Ok(Proxy {
            function,
            uniforms: None,
            samples: 0,
        })
    }

    /// The uniform draws are fixed by `seed`, so the proxy is a deterministic
    /// function of the probabilities and common across candidate sets.
    pub fn monte_carlo(function: SetFunction, samples: usize, seed: u64) -> Result<Self> {
        if samples == 0 {
            return Err(Error::InvalidInput(
                "Monte-Carlo proxy needs at least one sample".into(),
            ));
        }
        let k = function.num_classes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let uniforms: Vec<f64> = (0..samples * k).map(|_| rng.random::<f64>()).collect();
        Ok(Proxy {
            function,
            uniforms: Some(uniforms.into()),
            samples,
        })
    }

    /// Analytic when the function allows it, Monte-Carlo otherwise.
    pub fn preferred(function: SetFunction, mc_samples: usize, seed: u64) -> Result<Self> {
        if function.is_additive() {
            Self::analytic(function)
        } else {
            Self::monte_carlo(function, mc_samples, seed)
        }
    }

    pub fn function(&self) -> &SetFunction {
        &self.function
    }

    pub fn is_analytic(&self) -> bool {
        self.uniforms.is_none()
    }

    /// Additive with a per-class closed form, so marginals do not depend on `S`.
    pub fn is_additive(&self) -> bool {
        self.is_analytic()
    }

    /// Precomputes what is needed to evaluate many sets for one instance.
    pub fn bind<'a>(&'a self, probs: &'a [f64]) -> Result<BoundProxy<'a>> {
        if probs.len() != self.function.num_classes() {
            return Err(Error::LengthMismatch {
                expected: self.function.num_classes(),
                got: probs.len(),
            });
        }
        let inner = match &self.uniforms {
            None => {
                let f = &self.function;
                let terms = probs
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| {
                        let chance = if f.kind().counts_negatives() {
                            1.0 - p
                        } else {
                            p
                        };
                        chance * f.weights[k]
                    })
                    .collect();
                Bound::Additive(terms)
            }
            Some(uniforms) => {
                let k = probs.len();
                let draws = uniforms
                    .chunks_exact(k)
                    .map(|row| {
                        row.iter()
                            .zip(probs)
                            .enumerate()
                            .filter(|(_, (u, p))| *u < *p)
                            .map(|(c, _)| c)
                            .collect()
                    })
                    .collect();
                Bound::Sampled(draws)
            }
        };
        debug_assert!(
            self.samples == 0 || matches!(inner, Bound::Sampled(ref d) if d.len() == self.samples)
        );
        Ok(BoundProxy { proxy: self, inner })
    }

    /// Proxy value of `set` for one probability vector.
    pub fn eval(&self, set: LabelSet, probs: &[f64]) -> Result<f64> {
        Ok(self.bind(probs)?.eval(set))
    }

    /// `proxy(S ∪ {k}) − proxy(S)`.
    pub fn marginal(&self, class: usize, set: LabelSet, probs: &[f64]) -> Result<f64> {
        self.bind(probs)?.marginal(class, set)
    }
}

#[derive(Debug, Clone)]
enum Bound {
    /// Raw per-class terms; the proxy of `S` is their sum times the scale.
    Additive(Vec<f64>),
    Sampled(Vec<LabelSet>),
}

/// A [`Proxy`] specialized to one probability vector.
#[derive(Debug, Clone)]
pub struct BoundProxy<'a> {
    proxy: &'a Proxy,
    inner: Bound,
}

impl BoundProxy<'_> {
    pub fn eval(&self, set: LabelSet) -> f64 {
        let f = &self.proxy.function;
        match &self.inner {
            Bound::Additive(terms) => set.iter().map(|k| terms[k]).sum::<f64>() * f.scale,
            Bound::Sampled(draws) => {
                let total: f64 = draws.iter().map(|y| f.eval(set, *y)).sum();
                total / draws.len() as f64
            }
        }
    }

    pub fn marginal(&self, class: usize, set: LabelSet) -> Result<f64> {
        if set.contains(class) {
            return Err(Error::ClassInSet(class));
        }
        if class >= self.proxy.function.num_classes() {
            return Err(Error::InvalidInput(format!("class {class} out of range")));
        }
        Ok(match &self.inner {
            Bound::Additive(terms) => terms[class] * self.proxy.function.scale,
            Bound::Sampled(_) => self.eval(set.with(class)) - self.eval(set),
        })
    }

    /// Per-class marginals, available for analytic (additive) proxies.
    pub fn class_marginals(&self) -> Option<Vec<f64>> {
        match &self.inner {
            Bound::Additive(terms) => Some(
                terms
                    .iter()
                    .map(|t| t * self.proxy.function.scale)
                    .collect(),
            ),
            Bound::Sampled(_) => None,
        }
    }
}

/// Monte-Carlo estimate of `E_{y ~ probs}[f(S; y)]` with classes drawn
/// independently; deterministic given `seed`.
pub fn monte_carlo_estimate(
    set: LabelSet,
    probs: &[f64],
    function: &SetFunction,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    Proxy::monte_carlo(function.clone(), samples, seed)?.eval(set, probs)
}

/// Value and cost proxies used together by a controller.
#[derive(Debug, Clone)]
pub struct Objective {
    pub value: Proxy,
    pub cost: Proxy,
}

impl Objective {
    pub fn new(value: Proxy, cost: Proxy) -> Result<Self> {
        let (kv, kc) = (
            value.function().num_classes(),
            cost.function().num_classes(),
        );
        if kv != kc {
            return Err(Error::LengthMismatch {
                expected: kc,
                got: kv,
            });
        }
        Ok(Objective { value, cost })
    }

    pub fn num_classes(&self) -> usize {
        self.cost.function().num_classes()
    }

    /// Normalized `C_max`.
    pub fn cost_bound(&self) -> f64 {
        self.cost.function().bound()
    }
}

/// Reads a `class_index,weight` CSV into a dense weight vector.
pub fn read_weights_csv<R: Read>(reader: R) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut pairs: Vec<(usize, f64)> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let record = record.map_err(|e| Error::Data {
            line,
            message: e.to_string(),
        })?;
        let field = |j: usize| {
            record.get(j).ok_or_else(|| Error::Data {
                line,
                message: "expected `class_index,weight`".into(),
            })
        };
        let class: usize = field(0)?.parse().map_err(|_| Error::Data {
            line,
            message: format!("bad class index `{}`", &record[0]),
        })?;
        let weight: f64 = field(1)?.parse().map_err(|_| Error::Data {
            line,
            message: format!("bad weight `{}`", &record[1]),
        })?;
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Data {
                line,
                message: format!("weight {weight} must be finite and >= 0"),
            });
        }
        pairs.push((class, weight));
    }
    let k = pairs.len();
    let mut weights = vec![f64::NAN; k];
    for (class, w) in pairs {
        if class >= k || !weights[class].is_nan() {
            return Err(Error::InvalidInput(format!(
                "class indices must be a permutation of 0..{k}, saw {class} twice or out of range"
            )));
        }
        weights[class] = w;
    }
    Ok(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(classes: &[usize]) -> LabelSet {
        classes.iter().copied().collect()
    }

    fn bit_loop(s: LabelSet, y: LabelSet, k: usize, w: &[f64], negatives: bool) -> f64 {
        let mut acc = 0.0;
        for c in 0..k {
            let in_s = (s.bits() >> c) & 1 == 1;
            let in_y = (y.bits() >> c) & 1 == 1;
            if in_s && (in_y != negatives) {
                acc += w[c];
            }
        }
        acc
    }

    #[test]
    fn label_set_basics() {
        let s = set(&[0, 2, 5]);
        assert_eq!(s.len(), 3);
        assert!(s.contains(2) && !s.contains(1));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 2, 5]);
        assert_eq!(s.to_string(), "{0,2,5}");
        assert_eq!(LabelSet::full(64).len(), 64);
        assert_eq!(LabelSet::full(3), set(&[0, 1, 2]));
        assert!(s.without(2).is_subset_of(s));
    }

    #[test]
    fn raw_examples() {
        assert_eq!(value_tp(set(&[0, 2]), set(&[2])), 1.0);
        assert_eq!(value_tp(LabelSet::EMPTY, set(&[1, 2])), 0.0);
        assert_eq!(cost_fp(set(&[0, 2]), set(&[2])), 1.0);
        assert_eq!(cost_fp(set(&[1, 3]), set(&[1, 3])), 0.0);
        assert_eq!(cost_fpc(set(&[0, 1]), set(&[0]), &[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(value_tpc(set(&[0, 1]), set(&[0]), &[1.0, 2.0, 3.0]), 1.0);
    }

    #[test]
    fn general_value_examples() {
        assert_eq!(value_gen(set(&[3]), LabelSet::EMPTY), 1.0);
        assert!((value_gen(set(&[9]), set(&[9])) - 17.4).abs() < 1e-12);
        assert!((value_gen(set(&[0, 9]), set(&[0, 9, 4])) - 41.7).abs() < 1e-12);
    }

    #[test]
    fn normalization_reaches_exactly_100() {
        let w = [10.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let full = LabelSet::full(10);
        for kind in [
            SetFunctionKind::Tp,
            SetFunctionKind::Tpc,
            SetFunctionKind::Gen,
        ] {
            let f = SetFunction::new(kind, 10, Some(&w)).unwrap();
            assert!((f.eval(full, full) - 100.0).abs() < 1e-12, "{kind}");
        }
        for kind in [SetFunctionKind::Fp, SetFunctionKind::Fpc] {
            let f = SetFunction::new(kind, 10, Some(&w)).unwrap();
            assert!(
                (f.eval(full, LabelSet::EMPTY) - 100.0).abs() < 1e-12,
                "{kind}"
            );
        }
    }

    #[test]
    fn weighted_kinds_validate_weights() {
        assert!(SetFunction::new(SetFunctionKind::Fpc, 3, None).is_err());
        assert!(matches!(
            SetFunction::new(SetFunctionKind::Fpc, 3, Some(&[1.0, 2.0])),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(SetFunction::new(SetFunctionKind::Fpc, 2, Some(&[1.0, -2.0])).is_err());
        assert!(SetFunction::new(SetFunctionKind::Gen, 11, None).is_err());
    }

    #[test]
    fn general_value_is_monotone_for_ten_classes() {
        // exhaustive over S ∩ y ⊆ [10]
        for bits in 0u64..1024 {
            let s = LabelSet::from_bits(bits);
            for k in 0..10 {
                if !s.contains(k) {
                    let gain =
                        value_gen(s.with(k), LabelSet::full(10)) - value_gen(s, LabelSet::full(10));
                    assert!(gain >= 0.0, "adding {k} to {s} loses {gain}");
                }
            }
        }
    }

    #[test]
    fn monotone_and_bounded_exhaustive_k8() {
        let w = [3.0, 0.5, 1.0, 7.0, 2.0, 0.0, 4.0, 1.5];
        for kind in [
            SetFunctionKind::Tp,
            SetFunctionKind::Fp,
            SetFunctionKind::Tpc,
            SetFunctionKind::Fpc,
            SetFunctionKind::Gen,
        ] {
            let f = SetFunction::new(kind, 8, Some(&w)).unwrap();
            for ybits in (0u64..256).step_by(7) {
                let y = LabelSet::from_bits(ybits);
                for sbits in 0u64..256 {
                    let s = LabelSet::from_bits(sbits);
                    let v = f.eval(s, y);
                    assert!((0.0..=100.0 + 1e-9).contains(&v));
                    for k in 0..8 {
                        if !s.contains(k) {
                            assert!(f.eval(s.with(k), y) >= v, "{kind} not monotone");
                        }
                    }
                    if f.is_additive() {
                        let parts: f64 = s.iter().map(|k| f.eval(LabelSet::singleton(k), y)).sum();
                        assert!((parts - v).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn analytic_cost_proxy_examples() {
        let f = SetFunction::new(SetFunctionKind::Fp, 4, None).unwrap();
        let p = Proxy::analytic(f).unwrap();
        let probs = [0.9, 0.2, 0.5, 1.0];
        assert_eq!(p.eval(LabelSet::EMPTY, &probs).unwrap(), 0.0);
        let expected = ((1.0 - 0.9) + (1.0 - 0.5)) * 25.0;
        assert!((p.eval(set(&[0, 2]), &probs).unwrap() - expected).abs() < 1e-12);
        assert_eq!(p.eval(LabelSet::full(4), &[1.0; 4]).unwrap(), 0.0);
        assert!((p.marginal(1, set(&[0]), &probs).unwrap() - 0.8 * 25.0).abs() < 1e-12);
        assert!(matches!(
            p.marginal(0, set(&[0]), &probs),
            Err(Error::ClassInSet(0))
        ));
        assert!(matches!(
            p.eval(LabelSet::EMPTY, &[0.5]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn general_value_needs_monte_carlo() {
        let f = SetFunction::new(SetFunctionKind::Gen, 10, None).unwrap();
        assert!(matches!(
            Proxy::analytic(f.clone()),
            Err(Error::NoAnalyticProxy("gen"))
        ));
        assert!(!Proxy::preferred(f, 10, 1).unwrap().is_analytic());
    }

    #[test]
    fn monte_carlo_degenerate_probabilities() {
        let f = SetFunction::new(SetFunctionKind::Fp, 5, None).unwrap();
        let s = set(&[0, 1, 3]);
        let zero = monte_carlo_estimate(s, &[0.0; 5], &f, 50, 3).unwrap();
        assert_eq!(zero, f.eval(s, LabelSet::EMPTY));
        let one = monte_carlo_estimate(s, &[1.0; 5], &f, 50, 3).unwrap();
        assert_eq!(one, 0.0);
    }

    #[test]
    fn monte_carlo_converges_to_expectation() {
        // K=3, p=0.5: E[FP(S={0,1,2})] = 1.5 raw; binomial std per draw = sqrt(0.75)
        let f = SetFunction::new(SetFunctionKind::Fp, 3, None).unwrap();
        let n = 20_000;
        let est =
            monte_carlo_estimate(LabelSet::full(3), &[0.5; 3], &f, n, 99).unwrap() / f.scale();
        let sigma = 0.75f64.sqrt() / (n as f64).sqrt();
        assert!((est - 1.5).abs() <= 3.0 * sigma, "estimate {est}");
        let w = [1.0, 4.0, 2.0, 0.5];
        let g = SetFunction::new(SetFunctionKind::Fpc, 4, Some(&w)).unwrap();
        let probs = [0.2, 0.7, 0.4, 0.9];
        for seed in 0..4 {
            let est = monte_carlo_estimate(LabelSet::full(4), &probs, &g, n, seed).unwrap();
            let exact = Proxy::analytic(g.clone())
                .unwrap()
                .eval(LabelSet::full(4), &probs)
                .unwrap();
            let var: f64 = (0..4)
                .map(|k| (w[k] * g.scale()).powi(2) * probs[k] * (1.0 - probs[k]))
                .sum();
            assert!((est - exact).abs() <= 4.0 * var.sqrt() / (n as f64).sqrt());
        }
    }

    #[test]
    fn monte_carlo_marginals_match_differences() {
        let f = SetFunction::new(SetFunctionKind::Gen, 10, None).unwrap();
        let p = Proxy::monte_carlo(f, 64, 5).unwrap();
        let probs: Vec<f64> = (0..10).map(|k| 0.05 + 0.09 * k as f64).collect();
        let bound = p.bind(&probs).unwrap();
        let s = set(&[1, 4, 7]);
        for k in [0, 2, 9] {
            let m = bound.marginal(k, s).unwrap();
            assert_eq!(m, bound.eval(s.with(k)) - bound.eval(s));
            assert!(m >= 0.0);
        }
    }

    #[test]
    fn weights_csv_round_trip() {
        let text = "class_index,weight\n1,1\n0,10\n2,2.5\n";
        assert_eq!(
            read_weights_csv(text.as_bytes()).unwrap(),
            vec![10.0, 1.0, 2.5]
        );
        assert!(read_weights_csv("class_index,weight\n0,1\n0,2\n".as_bytes()).is_err());
        assert!(matches!(
            read_weights_csv("class_index,weight\n0,x\n".as_bytes()),
            Err(Error::Data { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn counts_match_bit_loop(s in any::<u16>(), y in any::<u16>(), w in proptest::collection::vec(0.0f64..10.0, 16)) {
            let (s, y) = (LabelSet::from_bits(u64::from(s)), LabelSet::from_bits(u64::from(y)));
            let ones = vec![1.0; 16];
            prop_assert_eq!(value_tp(s, y), bit_loop(s, y, 16, &ones, false));
            prop_assert_eq!(cost_fp(s, y), bit_loop(s, y, 16, &ones, true));
            prop_assert!((value_tpc(s, y, &w) - bit_loop(s, y, 16, &w, false)).abs() < 1e-9);
            prop_assert!((cost_fpc(s, y, &w) - bit_loop(s, y, 16, &w, true)).abs() < 1e-9);
        }

        #[test]
        fn analytic_proxy_matches_loop(s in any::<u16>(), probs in proptest::collection::vec(0.0f64..=1.0, 16),
                                       w in proptest::collection::vec(0.0f64..10.0, 16)) {
            let s = LabelSet::from_bits(u64::from(s));
            let f = SetFunction::new(SetFunctionKind::Fpc, 16, Some(&w)).unwrap();
            prop_assume!(f.scale().is_finite());
            let proxy = Proxy::analytic(f.clone()).unwrap();
            let mut expected = 0.0;
            for k in 0..16 {
                if s.contains(k) { expected += (1.0 - probs[k]) * w[k]; }
            }
            prop_assert!((proxy.eval(s, &probs).unwrap() - expected * f.scale()).abs() < 1e-9);
            for k in 0..16 {
                if !s.contains(k) {
                    prop_assert!(proxy.marginal(k, s, &probs).unwrap() >= 0.0);
                }
            }
        }
    }
}
