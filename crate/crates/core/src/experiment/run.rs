use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{stream_classes, Method, RunConfig, RunMode};
use crate::controller::{ClassWise, OnlineController};
use crate::error::Result;
use crate::set_functions::{LabelSet, Sample};

/// One emitted prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seed: u64,
    pub target: f64,
    /// Position within the seed's slice.
    pub step: usize,
    pub set: LabelSet,
    pub cost: f64,
    pub value: f64,
    /// Proxy-cost threshold in force; absent for the per-class baseline.
    pub threshold: Option<f64>,
}

/// Per-seed metrics, or the `mean` / `std` across seeds of each column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Seed number, `mean` or `std`.
    pub seed: String,
    pub target: f64,
    pub n_predictions: f64,
    pub mean_value: f64,
    /// Mean of `C(Ŝ) − c`.
    pub excess_cost: f64,
    /// Mean of `1{C(Ŝ) > c}`.
    pub violation_frequency: f64,
    pub mean_update_us: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    /// Per-seed rows by (seed, target), then aggregate rows by target.
    pub rows: Vec<MetricsRow>,
    pub log: Vec<LogEntry>,
}

enum Runner {
    Controller(Box<OnlineController>),
    Classwise(ClassWise, crate::set_functions::Objective),
}

/// Set, cost, value and threshold of one emitted prediction.
type Emitted = (LabelSet, f64, f64, Option<f64>);

impl Runner {
    /// Predicts if calibrated, then observes; returns the emitted entry.
    fn step(&mut self, sample: &Sample, burn_in: usize) -> Result<Option<Emitted>> {
        match self {
            Runner::Controller(c) => {
                let out = c.step(sample)?;
                Ok(match out.prediction {
                    crate::controller::Prediction::BurnIn => None,
                    crate::controller::Prediction::Set { set, threshold } => Some((
                        set,
                        out.cost.unwrap_or(0.0),
                        out.value.unwrap_or(0.0),
                        Some(threshold),
                    )),
                })
            }
            Runner::Classwise(cw, objective) => {
                let emitted = if cw.n_seen() >= burn_in.max(1) {
                    let set = cw.predict(&sample.probs)?;
                    Some((
                        set,
                        objective.cost.function().eval(set, sample.labels),
                        objective.value.function().eval(set, sample.labels),
                        None,
                    ))
                } else {
                    None
                };
                cw.observe(sample)?;
                Ok(emitted)
            }
        }
    }
}

fn run_one(
    config: &RunConfig,
    samples: &[Sample],
    k: usize,
    seed: u64,
    target: f64,
) -> Result<(MetricsRow, Vec<LogEntry>)> {
    let chunk = config.chunk(samples, seed)?;
    let objective = config.objective(k)?;
    let mut runner = match config.method {
        Method::Controller => {
            let cc = config.controller_config(target, objective.cost_bound());
            let universe = config.universe_kind(&objective);
            Runner::Controller(Box::new(OnlineController::new(cc, objective, universe)?))
        }
        Method::Classwise => {
            let unit = objective.cost.function().class_term(0);
            Runner::Classwise(ClassWise::new(k, target, unit)?, objective)
        }
    };
    let mut log = Vec::with_capacity(config.n_test - config.burn_in);
    let mut elapsed = 0.0f64;
    for (step, sample) in chunk.iter().enumerate() {
        let started = config.timing.then(Instant::now);
        let emitted = runner.step(sample, config.burn_in)?;
        if let (Some(t0), Some(_)) = (started, emitted) {
            elapsed += t0.elapsed().as_secs_f64();
        }
        if let Some((set, cost, value, threshold)) = emitted {
            log.push(LogEntry {
                seed,
                target,
                step,
                set,
                cost,
                value,
                threshold,
            });
        }
    }
    let n = log.len() as f64;
    let mean = |f: &dyn Fn(&LogEntry) -> f64| {
        if n > 0.0 {
            log.iter().map(f).sum::<f64>() / n
        } else {
            0.0
        }
    };
    let row = MetricsRow {
        seed: seed.to_string(),
        target,
        n_predictions: n,
        mean_value: mean(&|e| e.value),
        excess_cost: mean(&|e| e.cost - target),
        violation_frequency: mean(&|e| f64::from(u8::from(e.cost > target))),
        mean_update_us: if n > 0.0 { elapsed / n * 1e6 } else { 0.0 },
    };
    Ok((row, log))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn aggregate(rows: &[MetricsRow], targets: &[f64]) -> Vec<MetricsRow> {
    let mut out = Vec::with_capacity(2 * targets.len());
    for &target in targets {
        let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.target == target).collect();
        let col =
            |f: fn(&MetricsRow) -> f64| mean_std(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
        let cols = [
            col(|r| r.n_predictions),
            col(|r| r.mean_value),
            col(|r| r.excess_cost),
            col(|r| r.violation_frequency),
            col(|r| r.mean_update_us),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            let g = |i: usize| if pick == 0 { cols[i].0 } else { cols[i].1 };
            out.push(MetricsRow {
                seed: label.to_string(),
                target,
                n_predictions: g(0),
                mean_value: g(1),
                excess_cost: g(2),
                violation_frequency: g(3),
                mean_update_us: g(4),
            });
        }
    }
    out
}

/// Streams every (seed, target) pair through a fresh controller.
pub fn run(config: &RunConfig, samples: &[Sample]) -> Result<RunOutput> {
    config.validate()?;
    let k = stream_classes(samples)?;
    let mut seeds = config.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let mut targets = config.cost_targets.clone();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    for &s in &seeds {
        config.chunk(samples, s)?;
    }
    let jobs: Vec<(u64, f64)> = seeds
        .iter()
        .flat_map(|&s| targets.iter().map(move |&c| (s, c)))
        .collect();
    let results: Vec<(MetricsRow, Vec<LogEntry>)> = jobs
        .par_iter()
        .map(|&(seed, target)| run_one(config, samples, k, seed, target))
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(results.len() + 2 * targets.len());
    let mut log = Vec::new();
    for (row, entries) in results {
        rows.push(row);
        log.extend(entries);
    }
    let agg = aggregate(&rows, &targets);
    rows.extend(agg);
    Ok(RunOutput { rows, log })
}

pub const METRICS_HEADER: &str =
    "seed,target,n_predictions,mean_value,excess_cost,violation_frequency,mean_update_us";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.seed,
            r.target,
            r.n_predictions,
            r.mean_value,
            r.excess_cost,
            r.violation_frequency,
            r.mean_update_us
        );
    }
    out
}

pub const LOG_HEADER: &str = "seed,target,step,set_bits,cost,value,threshold";

/// Per-prediction log; the set is written as its class bitmask.
pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from(LOG_HEADER);
    out.push('\n');
    for e in log {
        let threshold = e.threshold.map_or(String::new(), |t| format!("{t:?}"));
        let _ = writeln!(
            out,
            "{},{},{},{},{:?},{:?},{}",
            e.seed,
            e.target,
            e.step,
            e.set.bits(),
            e.cost,
            e.value,
            threshold
        );
    }
    out
}

/// One-sided check of the finite-sample guarantee at one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeCheck {
    pub target: f64,
    /// Pooled excess cost, or violation frequency minus `δ`.
    pub statistic: f64,
    /// Three standard errors.
    pub bound: f64,
    pub passed: bool,
}

/// Pools every seed's predictions per target and checks
/// `mean(C) − c ≤ 3·SE` (expected mode) or `freq − δ ≤ 3·SE` (violation).
pub fn check_guarantees(config: &RunConfig, output: &RunOutput) -> Vec<GuaranteeCheck> {
    let mut targets = config.cost_targets.clone();
    targets.sort_by(f64::total_cmp);
    targets.dedup();
    targets
        .into_iter()
        .map(|target| {
            let entries: Vec<&LogEntry> =
                output.log.iter().filter(|e| e.target == target).collect();
            let n = entries.len() as f64;
            let (statistic, se) = match config.mode {
                RunMode::Expected => {
                    let xs: Vec<f64> = entries.iter().map(|e| e.cost - target).collect();
                    let (m, sd) = mean_std(&xs);
                    (m, sd / n.sqrt())
                }
                RunMode::Violation => {
                    let freq = entries.iter().filter(|e| e.cost > target).count() as f64 / n;
                    let d = config.delta;
                    (freq - d, (d * (1.0 - d) / n).sqrt())
                }
            };
            let bound = 3.0 * se;
            GuaranteeCheck {
                target,
                statistic,
                bound,
                passed: n > 0.0 && statistic <= bound,
            }
        })
        .collect()
}
