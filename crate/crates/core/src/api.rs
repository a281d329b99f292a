//! JSON wire types shared by the service and its client.

use serde::{Deserialize, Serialize};

use crate::controller::{ControllerConfig, OnlineController, Prediction, StepOutcome};
use crate::error::{Error, Result};
use crate::experiment::{
    build_objective, default_cost, default_mc_samples, default_value, BenchConfig, GuaranteeCheck,
    LogEntry, MetricsRow, RunConfig,
};
use crate::set_functions::{LabelSet, Sample, SetFunctionKind};
use crate::universe::UniverseKind;

/// A sample with labels as a list of class indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleJson {
    pub probs: Vec<f64>,
    #[serde(default)]
    pub labels: Vec<usize>,
}

impl SampleJson {
    pub fn into_sample(self) -> Result<Sample> {
        let k = self.probs.len();
        if let Some(&bad) = self.labels.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidInput(format!(
                "label {bad} outside of {k} classes"
            )));
        }
        Sample::new(self.probs, self.labels.into_iter().collect())
    }
}

impl From<&Sample> for SampleJson {
    fn from(s: &Sample) -> Self {
        SampleJson {
            probs: s.probs.clone(),
            labels: s.labels.iter().collect(),
        }
    }
}

pub fn label_list(set: LabelSet) -> Vec<usize> {
    set.iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionRequest {
    pub num_classes: usize,
    #[serde(flatten)]
    pub controller: ControllerConfig,
    #[serde(default = "default_value")]
    pub value: SetFunctionKind,
    #[serde(default = "default_cost")]
    pub cost: SetFunctionKind,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Ratio chain when absent.
    #[serde(default)]
    pub universe: Option<UniverseKind>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub mc_seed: u64,
}

impl CreateSessionRequest {
    pub fn new(num_classes: usize, controller: ControllerConfig) -> Self {
        CreateSessionRequest {
            num_classes,
            controller,
            value: default_value(),
            cost: default_cost(),
            weights: None,
            universe: None,
            mc_samples: default_mc_samples(),
            mc_seed: 0,
        }
    }

    pub fn build(&self) -> Result<OnlineController> {
        let objective = build_objective(
            self.num_classes,
            self.value,
            self.cost,
            self.weights.as_deref(),
            self.mc_samples,
            self.mc_seed,
        )?;
        let controller = ControllerConfig {
            cost_bound: objective.cost_bound(),
            ..self.controller.clone()
        };
        let universe = self
            .universe
            .unwrap_or_else(|| crate::universe::ratio_kind_for(&objective));
        OnlineController::new(controller, objective, universe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub num_classes: usize,
    pub universe: UniverseKind,
    pub n_seen: usize,
    pub calibrated: bool,
    pub config: ControllerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveRequest {
    pub samples: Vec<SampleJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserveResponse {
    pub ids: Vec<u64>,
    pub n_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub prediction: Prediction,
    /// Predicted classes; absent during burn-in.
    pub labels: Option<Vec<usize>>,
    pub n_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub outcome: StepOutcome,
    pub labels: Option<Vec<usize>>,
    pub n_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResponse {
    /// Absent before the first observation.
    pub threshold: Option<f64>,
    pub n_seen: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetResponse {
    pub removed: bool,
    pub n_seen: usize,
}

/// A configuration plus a stream in CSV text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamRequest {
    pub config: RunConfig,
    pub stream: String,
    /// Return the per-prediction log with a run.
    #[serde(default)]
    pub include_log: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResponse {
    pub rows: Vec<MetricsRow>,
    pub checks: Vec<GuaranteeCheck>,
    #[serde(default)]
    pub log: Option<Vec<LogEntry>>,
}

pub type BenchRequest = BenchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    /// Bad request or configuration.
    Config,
    /// Malformed stream data.
    Data,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: ErrorKind,
    pub message: String,
    #[serde(default)]
    pub line: Option<u64>,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> Self {
        let (kind, line) = match e {
            Error::Data { line, .. } => (ErrorKind::Data, Some(*line)),
            Error::Io(_) | Error::Tree(_) => (ErrorKind::Internal, None),
            _ => (ErrorKind::Config, None),
        };
        ErrorBody {
            kind,
            message: e.to_string(),
            line,
        }
    }
}
