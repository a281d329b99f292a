use std::fmt::Write as _;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::controller::{
    max_cost_curve, oracle_threshold_expected, select_set, ControllerConfig, ControllerState,
    SampleRecord,
};
use crate::error::{Error, Result};
use crate::set_functions::{Objective, Proxy, Sample, SetFunction, SetFunctionKind};
use crate::synth::{Generator, GeneratorConfig};
use crate::universe::{build_universe, UniverseKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_grid")]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_target")]
    pub target: f64,
    /// Timed tree updates per grid point.
    #[serde(default = "default_updates")]
    pub updates: usize,
    /// Timed direct-search updates per grid point.
    #[serde(default = "default_oracle_updates")]
    pub oracle_updates: usize,
    /// Wall-clock allowance for the direct search at one grid point.
    #[serde(default = "default_budget")]
    pub oracle_budget_secs: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_grid() -> Vec<usize> {
    vec![1_000, 10_000, 100_000, 1_000_000]
}

fn default_classes() -> usize {
    10
}

fn default_target() -> f64 {
    20.0
}

fn default_updates() -> usize {
    2000
}

fn default_oracle_updates() -> usize {
    5
}

fn default_budget() -> f64 {
    10.0
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_grid: default_grid(),
            num_classes: default_classes(),
            target: default_target(),
            updates: default_updates(),
            oracle_updates: default_oracle_updates(),
            oracle_budget_secs: default_budget(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchStatus {
    Ok,
    /// Exceeded the wall-clock budget.
    Dnf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: String,
    pub n: usize,
    /// Mean microseconds per update; absent when the budget ran out.
    pub per_update_us: Option<f64>,
    pub updates: usize,
    pub status: BenchStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of log time against log N.
    pub tree_exponent: Option<f64>,
    pub oracle_exponent: Option<f64>,
    pub oracle_dnf: bool,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,per_update_us,updates,status\n");
        for r in &self.rows {
            let t = r.per_update_us.map_or(String::new(), |t| format!("{t:.3}"));
            let status = match r.status {
                BenchStatus::Ok => "ok",
                BenchStatus::Dnf => "dnf",
            };
            let _ = writeln!(out, "{},{},{},{},{}", r.method, r.n, t, r.updates, status);
        }
        out
    }
}

/// Slope of `ln y` on `ln x`; `None` with fewer than two points.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn objective(k: usize) -> Result<Objective> {
    let v = Proxy::analytic(SetFunction::new(SetFunctionKind::Tp, k, None)?)?;
    let c = Proxy::analytic(SetFunction::new(SetFunctionKind::Fp, k, None)?)?;
    Objective::new(v, c)
}

fn record_for(sample: &Sample, objective: &Objective) -> Result<SampleRecord> {
    let u = build_universe(UniverseKind::RatioAdditive, &sample.probs, objective)?;
    max_cost_curve(&u, sample, objective)
}

/// Per-update cost of threshold + prediction + insertion, for the tree and
/// for direct search, at each calibration size in the grid.
pub fn bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.n_grid.is_empty() || config.n_grid.contains(&0) {
        return Err(Error::InvalidInput("grid sizes must be positive".into()));
    }
    if config.updates == 0 {
        return Err(Error::InvalidInput(
            "at least one timed update is required".into(),
        ));
    }
    let objective = objective(config.num_classes)?;
    let mut grid = config.n_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let budget = Duration::from_secs_f64(config.oracle_budget_secs.max(0.0));
    let mut rows = Vec::new();
    let mut oracle_dnf = false;
    for &n in &grid {
        let mut gen = Generator::new(GeneratorConfig::new(
            config.num_classes,
            0,
            config.seed ^ n as u64,
        ))?;
        let mut records: Vec<SampleRecord> = Vec::with_capacity(n + config.oracle_updates);
        let cc = ControllerConfig::expected(config.target).with_burn_in(1);
        let mut state = ControllerState::new(cc)?;
        for _ in 0..n {
            let r = record_for(&gen.next_sample(), &objective)?;
            state.observe_record(&r)?;
            if !oracle_dnf {
                records.push(r);
            }
        }
        let fresh: Vec<Sample> = (0..config.updates.max(config.oracle_updates))
            .map(|_| gen.next_sample())
            .collect();

        let started = Instant::now();
        for sample in &fresh[..config.updates] {
            let u = build_universe(UniverseKind::RatioAdditive, &sample.probs, &objective)?;
            let t = state.threshold()?;
            std::hint::black_box(select_set(&u, &sample.probs, &objective, t)?);
            let r = max_cost_curve(&u, sample, &objective)?;
            state.observe_record(&r)?;
        }
        rows.push(BenchRow {
            method: "tree".into(),
            n,
            per_update_us: Some(started.elapsed().as_secs_f64() * 1e6 / config.updates as f64),
            updates: config.updates,
            status: BenchStatus::Ok,
        });
        drop(state);

        if oracle_dnf {
            rows.push(BenchRow {
                method: "oracle".into(),
                n,
                per_update_us: None,
                updates: 0,
                status: BenchStatus::Dnf,
            });
            continue;
        }
        let started = Instant::now();
        let mut done = 0;
        for sample in &fresh[..config.oracle_updates] {
            if started.elapsed() > budget {
                break;
            }
            let u = build_universe(UniverseKind::RatioAdditive, &sample.probs, &objective)?;
            let t = oracle_threshold_expected(&records, config.target, objective.cost_bound());
            std::hint::black_box(select_set(&u, &sample.probs, &objective, t)?);
            records.push(max_cost_curve(&u, sample, &objective)?);
            done += 1;
        }
        let elapsed = started.elapsed();
        if elapsed > budget || done < config.oracle_updates {
            oracle_dnf = true;
            rows.push(BenchRow {
                method: "oracle".into(),
                n,
                per_update_us: None,
                updates: done,
                status: BenchStatus::Dnf,
            });
        } else {
            rows.push(BenchRow {
                method: "oracle".into(),
                n,
                per_update_us: Some(elapsed.as_secs_f64() * 1e6 / done.max(1) as f64),
                updates: done,
                status: BenchStatus::Ok,
            });
        }
    }
    let fit = |method: &str| {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.per_update_us.map(|t| (r.n as f64, t)))
            .collect();
        log_log_slope(&pts)
    };
    Ok(BenchReport {
        tree_exponent: fit("tree"),
        oracle_exponent: fit("oracle"),
        oracle_dnf,
        rows,
    })
}
