//! Normalized momentum with extrapolation (NIGT) on top of an aggregation
//! backend, plus the vanilla policy-gradient and greedy-stream baselines.
//!
//! Row `t` of a [`RunRecord`] describes iterate `θ_t` at the virtual time it
//! became available; row 0 is `θ_0` at time 0. A run of `T` iterations
//! performs `T` aggregations (one with `M_init` for `d_0`, then `T−1` with
//! `M`) and produces rows `0..=T`. For the greedy baseline every arriving
//! gradient is one iteration.

use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{
    aggregate_malenia, aggregate_rennala, aggregate_sync, AggregateError, AggregationContext, AggregationResult,
    Environments, GreedyStream,
};
use crate::constants::Schedule;
use crate::estimator::{self, EstimatorError};
use crate::mdp::{MdpError, PolicyParams};
use crate::simtime::{format_trace, TimeModel};
use crate::stream::{self, tag};
use crate::vector;

#[derive(Debug, Error, PartialEq)]
pub enum NigtError {
    #[error("eta must lie in (0, 1], got {0}")]
    Eta(f64),
    #[error("alpha must be positive and finite, got {0}")]
    Alpha(f64),
    #[error("gradient has a non-finite entry")]
    NonFiniteGradient,
    #[error("vector length {found} does not match parameter dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub theta_prev: PolicyParams,
    pub theta_curr: PolicyParams,
    pub d: Vec<f64>,
    pub t: u64,
}

impl OptimizerState {
    pub fn new(theta0: PolicyParams) -> Self {
        let d = vec![0.0; theta0.dim()];
        Self { theta_prev: theta0.clone(), theta_curr: theta0, d, t: 0 }
    }
}

fn check_eta(eta: f64) -> Result<(), NigtError> {
    if eta > 0.0 && eta <= 1.0 {
        Ok(())
    } else {
        Err(NigtError::Eta(eta))
    }
}

/// `θ̃_t = θ_t + (1−η)/η·(θ_t − θ_{t−1})`.
pub fn nigt_extrapolate(state: &OptimizerState, eta: f64) -> Result<PolicyParams, NigtError> {
    check_eta(eta)?;
    let c = (1.0 - eta) / eta;
    let mut out = state.theta_curr.clone();
    for ((o, cur), prev) in out.theta.iter_mut().zip(&state.theta_curr.theta).zip(&state.theta_prev.theta) {
        *o += c * (cur - prev);
    }
    Ok(out)
}

/// Momentum average followed by a step of length exactly `α` along `d`
/// (no step when `d = 0`).
pub fn nigt_update(state: &OptimizerState, g: &[f64], eta: f64, alpha: f64) -> Result<OptimizerState, NigtError> {
    check_eta(eta)?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(NigtError::Alpha(alpha));
    }
    if g.len() != state.d.len() {
        return Err(NigtError::Dimension { expected: state.d.len(), found: g.len() });
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(NigtError::NonFiniteGradient);
    }
    let d: Vec<f64> = state.d.iter().zip(g).map(|(d, g)| (1.0 - eta) * d + eta * g).collect();
    let norm = vector::norm(&d);
    let mut next = state.theta_curr.clone();
    if norm > 0.0 {
        vector::axpy(alpha / norm, &d, &mut next.theta);
    }
    Ok(OptimizerState { theta_prev: state.theta_curr.clone(), theta_curr: next, d, t: state.t + 1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    RennalaNigt,
    MaleniaNigt,
    SyncNigt,
    GreedyNigt,
    VanillaPg,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::RennalaNigt, MethodKind::MaleniaNigt, MethodKind::SyncNigt, MethodKind::GreedyNigt, MethodKind::VanillaPg];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodKind::RennalaNigt => "rennala-nigt",
            MethodKind::MaleniaNigt => "malenia-nigt",
            MethodKind::SyncNigt => "sync-nigt",
            MethodKind::GreedyNigt => "greedy-nigt",
            MethodKind::VanillaPg => "vanilla-pg",
        }
    }
}

impl std::str::FromStr for MethodKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        MethodKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown method {s:?}"))
    }
}

/// Explicit optimizer hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub eta: f64,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
    pub m_init: usize,
    /// Gradients per synchronized round; defaults to `n·⌈M/n⌉`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_batch: Option<usize>,
}

impl From<Schedule> for Hyper {
    fn from(s: Schedule) -> Self {
        Self { eta: s.eta, alpha: s.alpha, horizon: s.horizon, m: s.m, m_init: s.m_init, sync_batch: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// Exact `J(θ_t) ≥ j`.
    J(f64),
    /// Exact `‖∇J(θ_t)‖ ≤ grad_norm`.
    GradNorm(f64),
}

impl Target {
    pub fn reached(self, row: &Row) -> bool {
        match self {
            Target::J(j) => row.j_true >= j,
            Target::GradNorm(g) => row.grad_norm_true <= g,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    /// End the run at the first row meeting `target`.
    #[serde(default)]
    pub stop_at_target: bool,
    /// End the run at the first row past this virtual time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_virtual_time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodConfig {
    pub kind: MethodKind,
    pub envs: Environments,
    pub time: TimeModel,
    pub hyper: Hyper,
    pub iterations: usize,
    pub seed: u64,
    /// Defaults to the all-zero (uniform) policy.
    pub theta0: Option<PolicyParams>,
    pub stop: StopRule,
    pub trace: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub iteration: u64,
    pub virtual_time: f64,
    pub grad_norm_true: f64,
    #[serde(rename = "J_true")]
    pub j_true: f64,
    pub samples_cum: u64,
    pub comms_cum: u64,
    pub eta: f64,
    pub alpha: f64,
}

pub const CSV_HEADER: &str = "iteration,virtual_time,grad_norm_true,J_true,samples_cum,comms_cum,eta,alpha";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Budget,
    Target,
    VirtualTime,
    Observer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: MethodKind,
    pub iterations: u64,
    pub best_grad_norm: f64,
    /// Index drawn uniformly from `0..T` (the iterates `θ_0..θ_{T−1}`).
    pub sampled_iterate: u64,
    pub sampled_grad_norm: f64,
    pub total_time: f64,
    pub total_samples: u64,
    pub total_comms: u64,
    pub final_j: f64,
    pub final_grad_norm: f64,
    pub j_star: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<Target>,
    pub time_to_target: Option<f64>,
    pub stop_reason: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<Row>,
    pub summary: Summary,
    /// `θ_t` for every row.
    pub thetas: Vec<Vec<f64>>,
    /// Event trace, when requested.
    pub trace: Option<String>,
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.iteration, r.virtual_time, r.grad_norm_true, r.j_true, r.samples_cum, r.comms_cum, r.eta, r.alpha
            );
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary).expect("summary serializes")
    }
}

/// Exact `(J, ‖∇J‖)` of the (mixture) objective.
pub fn exact_metrics(envs: &Environments, theta: &PolicyParams) -> Result<(f64, f64), NigtError> {
    let specs = envs.specs();
    let mut j = 0.0;
    let mut grad = vec![0.0; theta.dim()];
    for spec in specs {
        let (ji, gi) = estimator::exact_j_and_grad_infinite(spec, theta)?;
        j += ji;
        vector::axpy(1.0, &gi, &mut grad);
    }
    let n = specs.len() as f64;
    Ok((j / n, vector::norm(&grad) / n))
}

/// Optimal value of the (mixture) objective, as an upper reference for `J`.
pub fn reference_optimum(envs: &Environments) -> f64 {
    let specs = envs.specs();
    specs.iter().map(estimator::optimal_return).sum::<f64>() / specs.len() as f64
}

struct Recorder<'a, O> {
    config: &'a MethodConfig,
    rows: Vec<Row>,
    thetas: Vec<Vec<f64>>,
    samples: u64,
    eta_col: f64,
    time_to_target: Option<f64>,
    observer: O,
}

impl<O: FnMut(&Row) -> ControlFlow<()>> Recorder<'_, O> {
    /// Logs `θ_t` and reports why the run must end, if it must.
    fn push(&mut self, ctx: &AggregationContext, theta: &PolicyParams) -> Result<Option<StopReason>, NigtError> {
        let (j, g) = exact_metrics(&self.config.envs, theta)?;
        let row = Row {
            iteration: self.rows.len() as u64,
            virtual_time: ctx.now(),
            grad_norm_true: g,
            j_true: j,
            samples_cum: self.samples,
            comms_cum: ctx.comms(),
            eta: self.eta_col,
            alpha: self.config.hyper.alpha,
        };
        let stop = &self.config.stop;
        let hit = stop.target.is_some_and(|t| t.reached(&row));
        if hit && self.time_to_target.is_none() {
            self.time_to_target = Some(row.virtual_time);
        }
        let observed = (self.observer)(&row);
        let reason = if hit && stop.stop_at_target {
            Some(StopReason::Target)
        } else if stop.max_virtual_time.is_some_and(|limit| row.virtual_time > limit) {
            Some(StopReason::VirtualTime)
        } else if observed.is_break() {
            Some(StopReason::Observer)
        } else if self.rows.len() >= self.config.iterations {
            Some(StopReason::Budget)
        } else {
            None
        };
        self.rows.push(row);
        self.thetas.push(theta.theta.clone());
        Ok(reason)
    }
}

fn round_up_to(x: usize, n: usize) -> usize {
    x.div_ceil(n) * n
}

/// Runs one method; see [`run_method_observed`].
pub fn run_method(config: &MethodConfig) -> Result<RunRecord, NigtError> {
    run_method_observed(config, |_| ControlFlow::Continue(()))
}

/// Runs one method, calling `observer` on every row; a `Break` ends the run
/// after that row.
pub fn run_method_observed<O>(config: &MethodConfig, observer: O) -> Result<RunRecord, NigtError>
where
    O: FnMut(&Row) -> ControlFlow<()>,
{
    let h = &config.hyper;
    if config.kind == MethodKind::RennalaNigt && config.envs.is_heterogeneous() {
        return Err(NigtError::Config("rennala-nigt needs a homogeneous environment; use malenia-nigt".into()));
    }
    if h.m == 0 || h.m_init == 0 {
        return Err(NigtError::Config("batch sizes m and m_init must be at least 1".into()));
    }
    check_eta(h.eta)?;
    if !(h.alpha > 0.0 && h.alpha.is_finite()) {
        return Err(NigtError::Alpha(h.alpha));
    }
    let spec0 = config.envs.first();
    let theta0 = match &config.theta0 {
        Some(t) => {
            t.check_matches(spec0)?;
            t.clone()
        }
        None => PolicyParams::zeros_for(spec0),
    };
    let mut ctx = AggregationContext::new(config.envs.clone(), config.time.clone(), config.seed)?;
    if config.trace {
        ctx = ctx.with_trace();
    }
    let n = ctx.n_agents();
    let sync_batch = h.sync_batch.unwrap_or_else(|| round_up_to(h.m, n));
    if matches!(config.kind, MethodKind::SyncNigt | MethodKind::VanillaPg) && !sync_batch.is_multiple_of(n) {
        return Err(AggregateError::BatchNotMultiple { batch: sync_batch, agents: n }.into());
    }
    let eta_col = if config.kind == MethodKind::VanillaPg { 1.0 } else { h.eta };
    let mut rec = Recorder {
        config,
        rows: Vec::new(),
        thetas: Vec::new(),
        samples: 0,
        eta_col,
        time_to_target: None,
        observer,
    };

    let mut reason = rec.push(&ctx, &theta0)?;
    let mut state = OptimizerState::new(theta0);
    let aggregate = |ctx: &mut AggregationContext, theta: &PolicyParams, init: bool| -> Result<AggregationResult, NigtError> {
        let m = if init { h.m_init } else { h.m };
        let out = match config.kind {
            MethodKind::RennalaNigt => aggregate_rennala(ctx, theta, m, h.horizon)?,
            MethodKind::MaleniaNigt => aggregate_malenia(ctx, theta, m, h.horizon)?,
            MethodKind::SyncNigt if init => aggregate_sync(ctx, theta, round_up_to(m, n), h.horizon)?,
            MethodKind::SyncNigt | MethodKind::VanillaPg => aggregate_sync(ctx, theta, sync_batch, h.horizon)?,
            MethodKind::GreedyNigt => unreachable!("greedy runs on its own stream"),
        };
        Ok(out)
    };

    match config.kind {
        MethodKind::VanillaPg => {
            while reason.is_none() {
                let r = aggregate(&mut ctx, &state.theta_curr, false)?;
                rec.samples += r.total_samples as u64;
                let mut next = state.theta_curr.clone();
                vector::axpy(h.alpha, &r.gradient, &mut next.theta);
                state = OptimizerState { theta_prev: state.theta_curr, theta_curr: next, d: r.gradient, t: state.t + 1 };
                reason = rec.push(&ctx, &state.theta_curr)?;
            }
        }
        MethodKind::GreedyNigt => {
            let mut stream = GreedyStream::start(&mut ctx, &state.theta_curr, h.horizon)?;
            while reason.is_none() {
                let provided = if state.t == 0 { Ok(state.theta_curr.clone()) } else { nigt_extrapolate(&state, h.eta) };
                let provided = provided?;
                let arrival = stream.next_arrival(&mut ctx, || provided)?;
                rec.samples += 1;
                let eta = if state.t == 0 { 1.0 } else { h.eta };
                state = nigt_update(&state, &arrival.gradient, eta, h.alpha)?;
                reason = rec.push(&ctx, &state.theta_curr)?;
            }
        }
        _ => {
            while reason.is_none() {
                let (point, eta) = if state.t == 0 {
                    (state.theta_curr.clone(), 1.0)
                } else {
                    (nigt_extrapolate(&state, h.eta)?, h.eta)
                };
                let r = aggregate(&mut ctx, &point, state.t == 0)?;
                rec.samples += r.total_samples as u64;
                state = nigt_update(&state, &r.gradient, eta, h.alpha)?;
                reason = rec.push(&ctx, &state.theta_curr)?;
            }
        }
    }

    let stop_reason = reason.expect("loop exits only with a reason");
    let rows = rec.rows;
    let t = rows.len() as u64 - 1;
    let sampled_iterate = if t == 0 {
        0
    } else {
        stream::stream(config.seed, tag::ITERATE_PICK, &[]).random_range(0..t)
    };
    let last = rows.last().expect("row 0 always exists");
    let summary = Summary {
        method: config.kind,
        iterations: t,
        best_grad_norm: rows.iter().map(|r| r.grad_norm_true).fold(f64::INFINITY, f64::min),
        sampled_iterate,
        sampled_grad_norm: rows[sampled_iterate as usize].grad_norm_true,
        total_time: last.virtual_time,
        total_samples: last.samples_cum,
        total_comms: last.comms_cum,
        final_j: last.j_true,
        final_grad_norm: last.grad_norm_true,
        j_star: reference_optimum(&config.envs),
        target: config.stop.target,
        time_to_target: rec.time_to_target,
        stop_reason,
    };
    let trace = ctx.trace().map(format_trace);
    Ok(RunRecord { rows, summary, thetas: rec.thetas, trace })
}
