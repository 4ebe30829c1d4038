//! Asynchronous distributed policy-gradient methods on exactly solvable
//! tabular MDPs.
//!
//! The crate simulates `n` agents with heterogeneous per-step computation
//! times and a communication cost on a virtual clock, and runs the
//! normalized-momentum policy-gradient loop on top of several gradient
//! aggregation protocols: Rennala (first `M` gradients from anyone),
//! Malenia (harmonic-mean stopping rule for heterogeneous environments),
//! synchronized waves, and a greedy per-arrival stream.

pub mod aggregate;
pub mod constants;
pub mod estimator;
pub mod harness;
pub mod mdp;
pub mod nigt;
pub mod simtime;
pub mod stream;
pub mod vector;

pub use estimator::{ExactGradientReport, GradientEstimate};
pub use nigt::{MethodConfig, MethodKind, RunRecord};
pub use mdp::{MdpSpec, PolicyParams, Trajectory};
pub use aggregate::{AggregationContext, AggregationResult, Environments};
pub use constants::{GlobalParams, PredictKind, Schedule, SmoothnessConstants};
pub use simtime::{Clock, SimEvent, TimeModel};
pub use harness::{RunConfig, SuiteOptions};
