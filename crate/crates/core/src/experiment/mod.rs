//! Experiment harness: seeded runs over a cost-target grid, tree against
//! direct-search threshold checks, and per-update timing.

mod bench;
mod oracle_check;
mod run;

use serde::{Deserialize, Serialize};

pub use bench::{bench, BenchConfig, BenchReport, BenchRow, BenchStatus};
pub use oracle_check::{oracle_check, OracleCheckReport, OracleMismatch};
pub use run::{
    check_guarantees, log_csv, metrics_csv, run, GuaranteeCheck, LogEntry, MetricsRow, RunOutput,
};

use crate::controller::{ControlMode, ControllerConfig};
use crate::error::{Error, Result};
use crate::set_functions::{
    Objective, Proxy, Sample, SetFunction, SetFunctionKind, DEFAULT_MC_SAMPLES, NORMALIZED_MAX,
};
use crate::synth::default_class_weights;
use crate::universe::{ratio_kind_for, UniverseKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    #[default]
    Expected,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The tree-backed conformal controller.
    #[default]
    Controller,
    /// Per-class thresholds with the budget split evenly (false positives only).
    #[serde(alias = "class_wise")]
    Classwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_targets")]
    pub cost_targets: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Candidate family; the ratio chain when absent.
    #[serde(default)]
    pub universe: Option<UniverseKind>,
    #[serde(default = "default_value")]
    pub value: SetFunctionKind,
    #[serde(default = "default_cost")]
    pub cost: SetFunctionKind,
    /// Class weights for weighted kinds; `w_k = k` with class 0 as `K` when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub mc_seed: u64,
    /// Seed `s` uses rows `[s · n_test, (s+1) · n_test)` of the stream.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default)]
    pub window: Option<usize>,
    /// Threshold comparisons per target in an oracle check.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Record wall-clock update times; off gives byte-identical output.
    #[serde(default = "default_timing")]
    pub timing: bool,
}

fn default_targets() -> Vec<f64> {
    (1..=10).map(|i| 5.0 * i as f64).collect()
}

fn default_delta() -> f64 {
    0.1
}

pub(crate) fn default_value() -> SetFunctionKind {
    SetFunctionKind::Tp
}

pub(crate) fn default_cost() -> SetFunctionKind {
    SetFunctionKind::Fp
}

pub(crate) fn default_mc_samples() -> usize {
    DEFAULT_MC_SAMPLES
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn default_n_test() -> usize {
    3000
}

fn default_burn_in() -> usize {
    1000
}

fn default_checkpoints() -> usize {
    10
}

fn default_timing() -> bool {
    true
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: RunMode::default(),
            method: Method::default(),
            cost_targets: default_targets(),
            delta: default_delta(),
            universe: None,
            value: default_value(),
            cost: default_cost(),
            weights: None,
            mc_samples: default_mc_samples(),
            mc_seed: 0,
            seeds: default_seeds(),
            n_test: default_n_test(),
            burn_in: default_burn_in(),
            window: None,
            checkpoints: default_checkpoints(),
            timing: default_timing(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(Error::InvalidInput(m));
        if self.cost_targets.is_empty() {
            return invalid("at least one cost target is required".into());
        }
        if let Some(c) = self
            .cost_targets
            .iter()
            .find(|c| !(**c > 0.0 && **c <= NORMALIZED_MAX))
        {
            return invalid(format!("cost target {c} must lie in (0, {NORMALIZED_MAX}]"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta {} must lie in (0, 1)", self.delta));
        }
        if self.seeds.is_empty() {
            return invalid("at least one seed is required".into());
        }
        if self.burn_in >= self.n_test {
            return invalid(format!(
                "burn-in {} must be below n_test {}",
                self.burn_in, self.n_test
            ));
        }
        if self.mc_samples == 0 {
            return invalid("mc_samples must be positive".into());
        }
        if self.window == Some(0) {
            return invalid("window must hold at least one sample".into());
        }
        if self.method == Method::Classwise {
            if self.cost != SetFunctionKind::Fp {
                return Err(Error::Unsupported(
                    "the per-class baseline controls the false-positive cost only".into(),
                ));
            }
            if self.mode != RunMode::Expected {
                return Err(Error::Unsupported(
                    "the per-class baseline controls expected cost only".into(),
                ));
            }
        }
        Ok(())
    }

    /// Value and cost proxies for `num_classes` classes.
    pub fn objective(&self, num_classes: usize) -> Result<Objective> {
        build_objective(
            num_classes,
            self.value,
            self.cost,
            self.weights.as_deref(),
            self.mc_samples,
            self.mc_seed,
        )
    }

    pub fn universe_kind(&self, objective: &Objective) -> UniverseKind {
        self.universe.unwrap_or_else(|| ratio_kind_for(objective))
    }

    pub fn controller_config(&self, target: f64, cost_bound: f64) -> ControllerConfig {
        ControllerConfig {
            mode: match self.mode {
                RunMode::Expected => ControlMode::Expected,
                RunMode::Violation => ControlMode::Violation { delta: self.delta },
            },
            target,
            burn_in: self.burn_in,
            window: self.window,
            cost_bound,
        }
    }

    /// The contiguous slice of the stream assigned to `seed`.
    pub fn chunk<'a>(&self, samples: &'a [Sample], seed: u64) -> Result<&'a [Sample]> {
        let start = usize::try_from(seed)
            .ok()
            .and_then(|s| s.checked_mul(self.n_test))
            .filter(|start| start + self.n_test <= samples.len());
        match start {
            Some(start) => Ok(&samples[start..start + self.n_test]),
            None => Err(Error::Data {
                line: samples.len() as u64 + 1,
                message: format!(
                    "stream has {} rows; seed {seed} needs rows {}..{}",
                    samples.len(),
                    seed.saturating_mul(self.n_test as u64),
                    seed.saturating_add(1).saturating_mul(self.n_test as u64)
                ),
            }),
        }
    }
}

/// Value and cost proxies: analytic when additive, Monte-Carlo otherwise.
/// Weighted kinds use `weights`, or `w_k = k` with class 0 as `K` when absent.
pub fn build_objective(
    num_classes: usize,
    value: SetFunctionKind,
    cost: SetFunctionKind,
    weights: Option<&[f64]>,
    mc_samples: usize,
    mc_seed: u64,
) -> Result<Objective> {
    let weights = weights.map_or_else(|| default_class_weights(num_classes), <[f64]>::to_vec);
    let build = |kind: SetFunctionKind, seed: u64| -> Result<Proxy> {
        let w = matches!(kind, SetFunctionKind::Tpc | SetFunctionKind::Fpc)
            .then_some(weights.as_slice());
        Proxy::preferred(SetFunction::new(kind, num_classes, w)?, mc_samples, seed)
    };
    Objective::new(
        build(value, mc_seed)?,
        build(cost, mc_seed.wrapping_add(1))?,
    )
}

/// Common class count of a stream.
pub(crate) fn stream_classes(samples: &[Sample]) -> Result<usize> {
    let k = samples
        .first()
        .ok_or(Error::NoCalibrationData)?
        .num_classes();
    if let Some(i) = samples.iter().position(|s| s.num_classes() != k) {
        return Err(Error::Data {
            line: i as u64 + 2,
            message: format!("expected {k} classes, found {}", samples[i].num_classes()),
        });
    }
    Ok(k)
}
