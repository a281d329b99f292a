//! Value-maximizing multi-label prediction sets with online conformal cost
//! control, built on an exact weighted-quantile search tree.

// `!(x > 0.0)` style guards reject NaN along with the out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod api;
pub mod controller;
pub mod error;
pub mod experiment;
pub mod quantile_tree;
pub mod set_functions;
pub mod stream;
pub mod synth;
pub mod universe;

pub use controller::{
    max_cost_curve, select_set, ClassWise, ControlMode, ControllerConfig, ControllerState,
    OnlineController, Prediction, SampleRecord,
};
pub use error::{Error, Result};
pub use quantile_tree::{QuantileTree, TreeError, ABOVE_ALL, BELOW_ALL};
pub use set_functions::{
    LabelSet, Objective, Proxy, ProxyMethod, Sample, SetFunction, SetFunctionKind,
};
pub use universe::{build_universe, UniverseKind, UniverseSeq};
