use serde::{Deserialize, Serialize};

use super::{stream_classes, Method, RunConfig};
use crate::controller::{
    compare_thresholds, cumulative_max_cost, oracle_threshold_expected, oracle_threshold_violation,
    ControlMode, ControllerState, OnlineController, SampleRecord, ThresholdAgreement,
};
use crate::error::{Error, Result};
use crate::set_functions::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMismatch {
    pub target: f64,
    pub n_seen: usize,
    pub tree: f64,
    pub oracle: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub checks: usize,
    pub matches: usize,
    /// Exact cumulative-weight hits; counted, not failed.
    pub boundary: usize,
    pub mismatches: Vec<OracleMismatch>,
}

impl OracleCheckReport {
    pub fn is_clean(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Evenly spaced 1-based sample counts, ending at `n`.
fn checkpoints(n: usize, count: usize) -> Vec<usize> {
    let count = count.max(1);
    let mut cps: Vec<usize> = (1..=count)
        .map(|i| (i * n).div_ceil(count).max(1))
        .collect();
    cps.dedup();
    cps
}

/// Classifies a tree threshold against the direct search over `live`.
pub(crate) fn agreement(
    state: &ControllerState,
    live: &[SampleRecord],
) -> Result<(ThresholdAgreement, f64, f64)> {
    let cfg = state.config();
    let tree = state.threshold()?;
    let n = live.len() as f64;
    let (oracle, a) = match cfg.mode {
        ControlMode::Expected => {
            let oracle = oracle_threshold_expected(live, cfg.target, cfg.cost_bound);
            let level = (n + 1.0) * cfg.target - cfg.cost_bound;
            (
                oracle,
                compare_thresholds(tree, oracle, level, |t| cumulative_max_cost(live, t)),
            )
        }
        ControlMode::Violation { delta } => {
            let oracle = oracle_threshold_violation(live, cfg.target, delta);
            let level = (n + 1.0) * delta - 1.0;
            let count = |t: f64| {
                live.iter()
                    .filter(|r| r.violation_point(cfg.target) <= t)
                    .count() as f64
            };
            (oracle, compare_thresholds(tree, oracle, level, count))
        }
    };
    Ok((a, tree, oracle))
}

/// Runs the tree and the direct search side by side on the first `n_test`
/// rows of the stream, comparing thresholds at evenly spaced checkpoints.
pub fn oracle_check(config: &RunConfig, samples: &[Sample]) -> Result<OracleCheckReport> {
    config.validate()?;
    if config.method != Method::Controller {
        return Err(Error::Unsupported(
            "oracle checks apply to the conformal controller".into(),
        ));
    }
    let k = stream_classes(samples)?;
    let n = samples.len().min(config.n_test);
    let stream = &samples[..n];
    let cps = checkpoints(n, config.checkpoints);
    let mut report = OracleCheckReport::default();
    for &target in &config.cost_targets {
        let objective = config.objective(k)?;
        let cc = config
            .controller_config(target, objective.cost_bound())
            .with_burn_in(1);
        let universe = config.universe_kind(&objective);
        let mut controller = OnlineController::new(cc, objective, universe)?;
        let mut records = Vec::with_capacity(n);
        let mut next = 0;
        for (i, sample) in stream.iter().enumerate() {
            let record = controller.record(sample)?;
            controller.observe(sample)?;
            records.push(record);
            if cps.get(next) != Some(&(i + 1)) {
                continue;
            }
            next += 1;
            let start = config.window.map_or(0, |w| records.len().saturating_sub(w));
            let (a, tree, oracle) = agreement(controller.state(), &records[start..])?;
            report.checks += 1;
            match a {
                ThresholdAgreement::Match => report.matches += 1,
                ThresholdAgreement::Boundary => report.boundary += 1,
                ThresholdAgreement::Mismatch => report.mismatches.push(OracleMismatch {
                    target,
                    n_seen: records.len() - start,
                    tree,
                    oracle,
                }),
            }
        }
    }
    Ok(report)
}
