//! Online conformal cost control.
//!
//! Every calibration sample contributes a step function
//! `C⁺(t) = max{C(S) : S ∈ U(x), Ĉ(S) < t}`. In expected-cost mode the steps
//! are written into a [`QuantileTree`] as point masses `(ĉ_j, c⁺_j − c⁺_{j−1})`
//! so the threshold
//!
//! ```text
//! T_c = sup{ t : (C_max + Σ_i C⁺(t; Z_i)) / (N + 1) ≤ c }
//! ```
//!
//! becomes a weighted quantile at level `((N+1)c − C_max) / W`. In violation
//! mode each sample contributes a unit mass at the first proxy cost where its
//! `C⁺` exceeds `c`, and `T_{c,δ}` is the quantile at `((N+1)δ − 1) / N`.
//!
//! When the queried level lands exactly on a stored cumulative weight the
//! exact threshold is the next stored value; the tree answer is returned
//! unchanged, which tightens `≤ c` to `< c` in that case.

mod classwise;
mod oracle;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use classwise::{classwise_predict, classwise_thresholds, ClassWise};
pub use oracle::{
    compare_thresholds, cumulative_max_cost, oracle_threshold_expected, oracle_threshold_violation,
    ThresholdAgreement,
};

use crate::error::{Error, Result};
use crate::quantile_tree::{QuantileTree, ABOVE_ALL, BELOW_ALL};
use crate::set_functions::{LabelSet, Objective, Sample};
use crate::universe::{build_universe, UniverseKind, UniverseSeq};

/// Calibration points observed before the first prediction.
pub const DEFAULT_BURN_IN: usize = 1000;

/// Per-sample view of the candidate chain sorted by proxy cost.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// `ĉ_j`, non-decreasing.
    pub proxy_costs: Vec<f64>,
    /// True cost `C(S_j)` of each candidate.
    pub costs: Vec<f64>,
    /// Running maximum `c⁺_j` of the true costs.
    pub max_costs: Vec<f64>,
    /// `c⁺_j − c⁺_{j−1}` (zero for `j = 0`), un-normalized.
    pub weights: Vec<f64>,
}

impl SampleRecord {
    pub fn len(&self) -> usize {
        self.proxy_costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proxy_costs.is_empty()
    }

    /// `C⁺(t)` evaluated directly: the largest true cost among candidates
    /// with proxy cost strictly below `t` (0 when there are none).
    pub fn max_cost_below(&self, t: f64) -> f64 {
        self.proxy_costs
            .iter()
            .zip(&self.costs)
            .filter(|(c_hat, _)| **c_hat < t)
            .map(|(_, c)| *c)
            .fold(0.0, f64::max)
    }

    /// Smallest candidate proxy cost at which `C⁺` exceeds `target`, or
    /// [`ABOVE_ALL`] if no candidate's cost ever does.
    pub fn violation_point(&self, target: f64) -> f64 {
        self.proxy_costs
            .iter()
            .zip(&self.max_costs)
            .find(|(_, m)| **m > target)
            .map_or(ABOVE_ALL, |(c_hat, _)| *c_hat)
    }
}

impl SampleRecord {
    /// Record for a chain given its proxy costs and true costs. The first
    /// entry must be `∅` (both costs 0) and proxy costs must not decrease.
    pub fn from_costs(proxy_costs: Vec<f64>, costs: Vec<f64>) -> Result<Self> {
        if proxy_costs.len() != costs.len() {
            return Err(Error::LengthMismatch {
                expected: proxy_costs.len(),
                got: costs.len(),
            });
        }
        if proxy_costs.first() != Some(&0.0) || costs[0] != 0.0 {
            return Err(Error::MissingEmptySet);
        }
        if let Some(j) = (1..proxy_costs.len()).find(|&j| !(proxy_costs[j] >= proxy_costs[j - 1])) {
            return Err(Error::UnsortedUniverse(j));
        }
        let mut max_costs = Vec::with_capacity(costs.len());
        let mut weights = Vec::with_capacity(costs.len());
        let mut running = 0.0f64;
        for &c in &costs {
            if !(c.is_finite() && c >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "cost {c} must be finite and non-negative"
                )));
            }
            let next = running.max(c);
            weights.push(next - running);
            running = next;
            max_costs.push(running);
        }
        Ok(SampleRecord {
            proxy_costs,
            costs,
            max_costs,
            weights,
        })
    }
}

/// Builds the record for one labelled sample.
///
/// Requires the universe to start with `∅` and be sorted by proxy cost.
pub fn max_cost_curve(
    universe: &UniverseSeq,
    sample: &Sample,
    objective: &Objective,
) -> Result<SampleRecord> {
    if universe.sets.first() != Some(&LabelSet::EMPTY) {
        return Err(Error::MissingEmptySet);
    }
    let cost_fn = objective.cost.function();
    let proxy = objective.cost.bind(&sample.probs)?;
    let proxy_costs = universe.sets.iter().map(|&s| proxy.eval(s)).collect();
    let costs = universe
        .sets
        .iter()
        .map(|&s| cost_fn.eval(s, sample.labels))
        .collect();
    SampleRecord::from_costs(proxy_costs, costs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ControlMode {
    /// Bound `E[C(Ŝ)] ≤ c`.
    Expected,
    /// Bound `P{C(Ŝ) > c} ≤ δ`.
    Violation { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    #[serde(flatten)]
    pub mode: ControlMode,
    /// Target cost `c` on the normalized scale.
    pub target: f64,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Keep only the most recent `window` samples.
    #[serde(default)]
    pub window: Option<usize>,
    /// `C_max`.
    #[serde(default = "default_cost_bound")]
    pub cost_bound: f64,
}

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

fn default_cost_bound() -> f64 {
    crate::set_functions::NORMALIZED_MAX
}

impl ControllerConfig {
    pub fn expected(target: f64) -> Self {
        ControllerConfig {
            mode: ControlMode::Expected,
            target,
            burn_in: DEFAULT_BURN_IN,
            window: None,
            cost_bound: default_cost_bound(),
        }
    }

    pub fn violation(target: f64, delta: f64) -> Self {
        ControllerConfig {
            mode: ControlMode::Violation { delta },
            ..Self::expected(target)
        }
    }

    #[must_use]
    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    #[must_use]
    pub fn with_window(mut self, window: Option<usize>) -> Self {
        self.window = window;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cost_bound.is_finite() && self.cost_bound > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cost bound {} must be positive",
                self.cost_bound
            )));
        }
        if !(self.target > 0.0 && self.target <= self.cost_bound) {
            return Err(Error::InvalidInput(format!(
                "target cost {} must lie in (0, {}]",
                self.target, self.cost_bound
            )));
        }
        if let ControlMode::Violation { delta } = self.mode {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "delta {delta} must lie in (0, 1)"
                )));
            }
        }
        if self.window == Some(0) {
            return Err(Error::InvalidInput(
                "window must hold at least one sample".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a prediction request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Prediction {
    /// Still calibrating; no set is emitted.
    BurnIn,
    Set {
        set: LabelSet,
        threshold: f64,
    },
}

impl Prediction {
    pub fn set(&self) -> Option<LabelSet> {
        match self {
            Prediction::BurnIn => None,
            Prediction::Set { set, .. } => Some(*set),
        }
    }
}

/// Tree plus the per-sample masses needed to delete a sample again.
#[derive(Debug, Clone)]
pub struct ControllerState {
    config: ControllerConfig,
    tree: QuantileTree,
    records: BTreeMap<u64, Box<[(f64, f64)]>>,
    next_id: u64,
}

impl ControllerState {
    pub fn new(config: ControllerConfig) -> Result<Self> {
        config.validate()?;
        Ok(ControllerState {
            config,
            tree: QuantileTree::new(),
            records: BTreeMap::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn tree(&self) -> &QuantileTree {
        &self.tree
    }

    /// Number of live calibration samples `N`.
    pub fn n_seen(&self) -> usize {
        self.records.len()
    }

    /// True once enough samples are in for predictions to be emitted.
    pub fn is_calibrated(&self) -> bool {
        self.n_seen() >= self.config.burn_in.max(1)
    }

    /// Masses a record contributes to the tree in the configured mode.
    pub fn masses(&self, record: &SampleRecord) -> Vec<(f64, f64)> {
        match self.config.mode {
            ControlMode::Expected => record
                .proxy_costs
                .iter()
                .zip(&record.weights)
                .filter(|(_, w)| **w > 0.0)
                .map(|(v, w)| (*v, *w))
                .collect(),
            ControlMode::Violation { .. } => {
                vec![(record.violation_point(self.config.target), 1.0)]
            }
        }
    }

    /// Adds a calibration record; returns its id.
    pub fn observe_record(&mut self, record: &SampleRecord) -> Result<u64> {
        let masses = self.masses(record);
        for &(v, w) in &masses {
            self.tree.insert(v, w)?;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.records.insert(id, masses.into_boxed_slice());
        if let Some(window) = self.config.window {
            while self.records.len() > window {
                let oldest = *self.records.keys().next().expect("non-empty");
                self.forget(oldest)?;
            }
        }
        Ok(id)
    }

    pub fn observe(
        &mut self,
        sample: &Sample,
        universe: &UniverseSeq,
        objective: &Objective,
    ) -> Result<u64> {
        let record = max_cost_curve(universe, sample, objective)?;
        self.observe_record(&record)
    }

    /// Removes a previously observed sample. Returns `false` for unknown ids.
    pub fn forget(&mut self, id: u64) -> Result<bool> {
        let Some(masses) = self.records.remove(&id) else {
            return Ok(false);
        };
        for &(v, w) in masses.iter() {
            self.tree.delete(v, w)?;
        }
        Ok(true)
    }

    /// Ids of live samples, oldest first.
    pub fn live_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.keys().copied()
    }

    /// The current proxy-cost threshold `T_c` or `T_{c,δ}`.
    ///
    /// [`BELOW_ALL`] means nothing but `∅` may be predicted; [`ABOVE_ALL`]
    /// means every candidate is admissible.
    pub fn threshold(&self) -> Result<f64> {
        let n = self.n_seen();
        if n == 0 {
            return Err(Error::NoCalibrationData);
        }
        let n = n as f64;
        match self.config.mode {
            ControlMode::Expected => {
                let budget = (n + 1.0) * self.config.target - self.config.cost_bound;
                if budget <= 0.0 {
                    return Ok(BELOW_ALL);
                }
                let total = self.tree.total_weight();
                if self.tree.is_empty() || budget > total {
                    return Ok(ABOVE_ALL);
                }
                Ok(self.tree.query_quantile(budget / total)?)
            }
            ControlMode::Violation { delta } => {
                let level = (n + 1.0) * delta - 1.0;
                if level <= 0.0 {
                    return Ok(BELOW_ALL);
                }
                let total = self.tree.total_weight();
                if level > total {
                    return Ok(ABOVE_ALL);
                }
                Ok(self.tree.query_quantile(level / total)?)
            }
        }
    }

    pub fn predict(
        &self,
        probs: &[f64],
        universe: &UniverseSeq,
        objective: &Objective,
    ) -> Result<Prediction> {
        if !self.is_calibrated() {
            return Ok(Prediction::BurnIn);
        }
        let threshold = self.threshold()?;
        let set = select_set(universe, probs, objective, threshold)?;
        Ok(Prediction::Set { set, threshold })
    }

    /// Audit snapshot: scalar fields as `#` comments, then live tree pairs.
    pub fn snapshot_csv(&self) -> String {
        let mut out = String::new();
        let mode = match self.config.mode {
            ControlMode::Expected => "expected".to_string(),
            ControlMode::Violation { delta } => format!("violation(delta={delta})"),
        };
        let _ = writeln!(out, "# mode={mode}");
        let _ = writeln!(out, "# target={}", self.config.target);
        let _ = writeln!(out, "# cost_bound={}", self.config.cost_bound);
        let _ = writeln!(out, "# burn_in={}", self.config.burn_in);
        let _ = writeln!(
            out,
            "# window={}",
            self.config.window.map_or("none".into(), |w| w.to_string())
        );
        let _ = writeln!(out, "# n_seen={}", self.n_seen());
        let _ = writeln!(out, "# total_weight={:?}", self.tree.total_weight());
        match self.threshold() {
            Ok(t) => {
                let _ = writeln!(out, "# threshold={t:?}");
            }
            Err(_) => out.push_str("# threshold=none\n"),
        }
        out.push_str("value,weight\n");
        for (v, w) in self.tree.iter() {
            let _ = writeln!(out, "{v:?},{w:?}");
        }
        out
    }
}

/// Value-maximizing admissible set: `argmax { V̂(S) : S ∈ U, Ĉ(S) < threshold }`,
/// ties to the smaller proxy cost, then the earlier candidate. `∅` when
/// nothing is admissible.
pub fn select_set(
    universe: &UniverseSeq,
    probs: &[f64],
    objective: &Objective,
    threshold: f64,
) -> Result<LabelSet> {
    let cost = objective.cost.bind(probs)?;
    let value = objective.value.bind(probs)?;
    let mut best: Option<(f64, f64, LabelSet)> = None;
    for &set in &universe.sets {
        let c_hat = cost.eval(set);
        if !(c_hat < threshold) {
            continue;
        }
        let v_hat = value.eval(set);
        let better = match best {
            None => true,
            Some((bv, bc, _)) => v_hat > bv || (v_hat == bv && c_hat < bc),
        };
        if better {
            best = Some((v_hat, c_hat, set));
        }
    }
    Ok(best.map_or(LabelSet::EMPTY, |(_, _, s)| s))
}

/// Result of one predict-then-observe step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub prediction: Prediction,
    /// True cost of the emitted set, if one was emitted.
    pub cost: Option<f64>,
    /// True value of the emitted set, if one was emitted.
    pub value: Option<f64>,
    pub id: u64,
}

/// A controller bound to an objective and a universe construction.
#[derive(Debug, Clone)]
pub struct OnlineController {
    state: ControllerState,
    objective: Objective,
    universe: UniverseKind,
}

impl OnlineController {
    pub fn new(
        config: ControllerConfig,
        objective: Objective,
        universe: UniverseKind,
    ) -> Result<Self> {
        Ok(OnlineController {
            state: ControllerState::new(config)?,
            objective,
            universe,
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn objective(&self) -> &Objective {
        &self.objective
    }

    pub fn universe_kind(&self) -> UniverseKind {
        self.universe
    }

    pub fn universe(&self, probs: &[f64]) -> Result<UniverseSeq> {
        self.check_len(probs.len())?;
        build_universe(self.universe, probs, &self.objective)
    }

    fn check_len(&self, k: usize) -> Result<()> {
        let expected = self.objective.num_classes();
        if k != expected {
            return Err(Error::LengthMismatch { expected, got: k });
        }
        Ok(())
    }

    pub fn record(&self, sample: &Sample) -> Result<SampleRecord> {
        let universe = self.universe(&sample.probs)?;
        max_cost_curve(&universe, sample, &self.objective)
    }

    pub fn predict(&self, probs: &[f64]) -> Result<Prediction> {
        if !self.state.is_calibrated() {
            return Ok(Prediction::BurnIn);
        }
        let universe = self.universe(probs)?;
        self.state.predict(probs, &universe, &self.objective)
    }

    pub fn observe(&mut self, sample: &Sample) -> Result<u64> {
        let universe = self.universe(&sample.probs)?;
        self.state.observe(sample, &universe, &self.objective)
    }

    pub fn forget(&mut self, id: u64) -> Result<bool> {
        self.state.forget(id)
    }

    pub fn threshold(&self) -> Result<f64> {
        self.state.threshold()
    }

    /// Predicts for `sample.probs`, then reveals the labels and calibrates.
    pub fn step(&mut self, sample: &Sample) -> Result<StepOutcome> {
        let universe = self.universe(&sample.probs)?;
        let prediction = if self.state.is_calibrated() {
            self.state
                .predict(&sample.probs, &universe, &self.objective)?
        } else {
            Prediction::BurnIn
        };
        let (cost, value) = match prediction.set() {
            Some(set) => (
                Some(self.objective.cost.function().eval(set, sample.labels)),
                Some(self.objective.value.function().eval(set, sample.labels)),
            ),
            None => (None, None),
        };
        let id = self.state.observe(sample, &universe, &self.objective)?;
        Ok(StepOutcome {
            prediction,
            cost,
            value,
            id,
        })
    }
}
