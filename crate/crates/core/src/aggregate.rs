//! Gradient aggregation protocols on the virtual clock.
//!
//! Job `k` of agent `i` in aggregation round `r` always draws its trajectory
//! from the stream `(seed, TRAJECTORY, r, i, k)`, so which gradients a round
//! accepts is decided by timing alone and never by their values.

use std::ops::ControlFlow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::accumulate_gh;
use crate::mdp::{self, MdpError, MdpSpec, PolicyParams};
use crate::simtime::{EventKind, EventLoop, SimError, SimEvent, TimeModel, COORDINATOR};
use crate::stream::{self, tag};
use crate::vector::pairwise_sum;

/// Jobs per round above which trajectories are rolled out in parallel.
const PARALLEL_JOBS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("rennala aggregation needs a homogeneous environment")]
    HeterogeneousRennala,
    #[error("sync batch {batch} is not a multiple of the agent count {agents}")]
    BatchNotMultiple { batch: usize, agents: usize },
    #[error("heterogeneous context has {found} environments for {expected} agents")]
    EnvironmentCount { expected: usize, found: usize },
    #[error("environments disagree on state/action counts or discount")]
    EnvironmentShape,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Environments {
    Homogeneous(MdpSpec),
    /// One environment per agent.
    Heterogeneous(Vec<MdpSpec>),
}

impl Environments {
    pub fn for_agent(&self, agent: usize) -> &MdpSpec {
        match self {
            Environments::Homogeneous(spec) => spec,
            Environments::Heterogeneous(specs) => &specs[agent],
        }
    }

    pub fn is_heterogeneous(&self) -> bool {
        matches!(self, Environments::Heterogeneous(_))
    }

    pub fn specs(&self) -> &[MdpSpec] {
        match self {
            Environments::Homogeneous(spec) => std::slice::from_ref(spec),
            Environments::Heterogeneous(specs) => specs,
        }
    }

    pub fn first(&self) -> &MdpSpec {
        self.for_agent(0)
    }
}

/// Output of one aggregation round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationResult {
    pub gradient: Vec<f64>,
    /// Virtual seconds from broadcast start to reduce end.
    pub elapsed: f64,
    pub samples_per_agent: Vec<usize>,
    pub total_samples: usize,
    pub round: u64,
}

/// Environments, time model and the persistent virtual clock of a run.
#[derive(Debug)]
pub struct AggregationContext {
    envs: Environments,
    time: TimeModel,
    seed: u64,
    round: u64,
    comms: u64,
    events: EventLoop,
}

impl AggregationContext {
    pub fn new(envs: Environments, time: TimeModel, seed: u64) -> Result<Self, AggregateError> {
        let time = time.validate()?;
        let n = time.n_agents();
        if let Environments::Heterogeneous(specs) = &envs {
            if specs.len() != n {
                return Err(AggregateError::EnvironmentCount { expected: n, found: specs.len() });
            }
            let first = &specs[0];
            let same = specs
                .iter()
                .all(|s| s.n_states == first.n_states && s.n_actions == first.n_actions && s.gamma == first.gamma);
            if !same {
                return Err(AggregateError::EnvironmentShape);
            }
        }
        Ok(Self { envs, time, seed, round: 0, comms: 0, events: EventLoop::new() })
    }

    /// Records every processed event for [`crate::simtime::format_trace`].
    pub fn with_trace(mut self) -> Self {
        self.events = EventLoop::with_trace();
        self
    }

    pub fn envs(&self) -> &Environments {
        &self.envs
    }

    pub fn time_model(&self) -> &TimeModel {
        &self.time
    }

    pub fn n_agents(&self) -> usize {
        self.time.n_agents()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now(&self) -> f64 {
        self.events.now()
    }

    /// Index the next aggregation round will use.
    pub fn round(&self) -> u64 {
        self.round
    }

    /// Vector transfers counted so far.
    pub fn comms(&self) -> u64 {
        self.comms
    }

    pub fn trace(&self) -> Option<&[SimEvent]> {
        self.events.trace()
    }

    fn begin(&mut self, theta: &PolicyParams, horizon: usize) -> Result<u64, AggregateError> {
        if horizon == 0 {
            return Err(AggregateError::ZeroHorizon);
        }
        theta.check_matches(self.envs.first())?;
        let r = self.round;
        self.round += 1;
        Ok(r)
    }

    fn duration(&self, round: u64, agent: usize, job: u64, horizon: usize) -> Result<f64, SimError> {
        self.time.job_duration(self.seed, round as usize, agent, job, horizon)
    }

    /// Runs `handler` on the context's queue. The queue is moved out so the
    /// handler can borrow the rest of the context.
    fn drive<F>(&mut self, mut handler: F) -> Result<(), AggregateError>
    where
        F: FnMut(&Self, &SimEvent, &mut EventLoop) -> Result<ControlFlow<()>, SimError>,
    {
        let mut events = std::mem::take(&mut self.events);
        let out = events.run(|e, q| handler(self, e, q), |_| false);
        self.events = events;
        out?;
        Ok(())
    }

    /// Rolls out the listed `(agent, job)` pairs of `round` and returns their
    /// g_H vectors in list order.
    fn gradients(&self, theta: &PolicyParams, round: u64, jobs: &[(usize, u64)], horizon: usize) -> Vec<Vec<f64>> {
        let table = mdp::policy_table(theta);
        let one = |&(agent, k): &(usize, u64)| {
            let spec = self.envs.for_agent(agent);
            let mut rng = stream::stream(self.seed, tag::TRAJECTORY, &[round, agent as u64, k]);
            let traj = mdp::rollout(spec, &table, horizon, &mut rng);
            let mut g = vec![0.0; theta.dim()];
            accumulate_gh(&traj, &table, spec.n_actions, spec.gamma, 1.0, &mut g);
            g
        };
        if jobs.len() > PARALLEL_JOBS {
            jobs.par_iter().map(one).collect()
        } else {
            jobs.iter().map(one).collect()
        }
    }
}

fn mean_of(items: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = items.len() as f64;
    pairwise_sum(items, dim).into_iter().map(|x| x / n).collect()
}

/// `(1/n Σ 1/M_i)^{-1} ≥ M/n`, i.e. `n² ≥ M·Σ 1/M_i`, with the harmonic mean
/// taken as 0 while some `M_i = 0`.
pub fn malenia_should_exit(counts: &[usize], m: usize) -> bool {
    if counts.contains(&0) {
        return false;
    }
    let n = counts.len() as u128;
    // exact: n²·Π M_i ≥ M·Σ_i Π_{j≠i} M_j
    let exact = (|| {
        let mut prod: u128 = 1;
        for &c in counts {
            prod = prod.checked_mul(c as u128)?;
        }
        let mut sum: u128 = 0;
        for &c in counts {
            sum = sum.checked_add(prod / c as u128)?;
        }
        Some(n.checked_mul(n)?.checked_mul(prod)? >= (m as u128).checked_mul(sum)?)
    })();
    exact.unwrap_or_else(|| {
        let inv: f64 = counts.iter().map(|&c| 1.0 / c as f64).sum();
        (n * n) as f64 >= m as f64 * inv
    })
}

/// First `m` completed gradients from any agent at a fixed θ.
pub fn aggregate_rennala(
    ctx: &mut AggregationContext,
    theta: &PolicyParams,
    m: usize,
    horizon: usize,
) -> Result<AggregationResult, AggregateError> {
    if m == 0 {
        return Err(AggregateError::ZeroBatch);
    }
    if ctx.envs.is_heterogeneous() {
        return Err(AggregateError::HeterogeneousRennala);
    }
    let round = ctx.begin(theta, horizon)?;
    let n = ctx.n_agents();
    let kappa = ctx.time.kappa_max();
    let t0 = ctx.now();
    let mut counts = vec![0usize; n];
    let mut accepted: Vec<(usize, u64)> = Vec::with_capacity(m);
    ctx.events.schedule(t0 + kappa, COORDINATOR, EventKind::BroadcastDone)?;
    ctx.drive(|c, e, q| {
        match e.kind {
            EventKind::BroadcastDone => {
                for i in 0..n {
                    q.schedule(e.time + c.duration(round, i, 0, horizon)?, i, EventKind::GradientComplete)?;
                }
            }
            EventKind::GradientComplete => {
                let i = e.agent;
                accepted.push((i, counts[i] as u64));
                counts[i] += 1;
                if accepted.len() == m {
                    // stop all calculations; in-flight work is never reused
                    q.clear_pending();
                    q.schedule(e.time + kappa, COORDINATOR, EventKind::ReduceDone)?;
                } else {
                    q.schedule(e.time + c.duration(round, i, counts[i] as u64, horizon)?, i, EventKind::GradientComplete)?;
                }
            }
            EventKind::ReduceDone => return Ok(ControlFlow::Break(())),
            EventKind::Delivered => unreachable!("no deliveries in a collective round"),
        }
        Ok(ControlFlow::Continue(()))
    })?;
    ctx.comms += 2;
    let grads = ctx.gradients(theta, round, &accepted, horizon);
    Ok(AggregationResult {
        gradient: mean_of(&grads, theta.dim()),
        elapsed: ctx.now() - t0,
        samples_per_agent: counts,
        total_samples: m,
        round,
    })
}

/// Collects until the harmonic mean of per-agent counts reaches `m/n`; returns
/// the mean over agents of per-agent sample means.
pub fn aggregate_malenia(
    ctx: &mut AggregationContext,
    theta: &PolicyParams,
    m: usize,
    horizon: usize,
) -> Result<AggregationResult, AggregateError> {
    if m == 0 {
        return Err(AggregateError::ZeroBatch);
    }
    let round = ctx.begin(theta, horizon)?;
    let n = ctx.n_agents();
    let kappa = ctx.time.kappa_max();
    let t0 = ctx.now();
    let mut counts = vec![0usize; n];
    ctx.events.schedule(t0 + kappa, COORDINATOR, EventKind::BroadcastDone)?;
    ctx.drive(|c, e, q| {
        match e.kind {
            EventKind::BroadcastDone => {
                for i in 0..n {
                    q.schedule(e.time + c.duration(round, i, 0, horizon)?, i, EventKind::GradientComplete)?;
                }
            }
            EventKind::GradientComplete => {
                let i = e.agent;
                counts[i] += 1;
                if malenia_should_exit(&counts, m) {
                    q.clear_pending();
                    q.schedule(e.time + kappa, COORDINATOR, EventKind::ReduceDone)?;
                } else {
                    q.schedule(e.time + c.duration(round, i, counts[i] as u64, horizon)?, i, EventKind::GradientComplete)?;
                }
            }
            EventKind::ReduceDone => return Ok(ControlFlow::Break(())),
            EventKind::Delivered => unreachable!("no deliveries in a collective round"),
        }
        Ok(ControlFlow::Continue(()))
    })?;
    ctx.comms += 2;
    let dim = theta.dim();
    let jobs: Vec<(usize, u64)> = counts.iter().enumerate().flat_map(|(i, &c)| (0..c as u64).map(move |k| (i, k))).collect();
    let grads = ctx.gradients(theta, round, &jobs, horizon);
    let mut per_agent = Vec::with_capacity(n);
    let mut offset = 0;
    for &c in &counts {
        per_agent.push(mean_of(&grads[offset..offset + c], dim));
        offset += c;
    }
    Ok(AggregationResult {
        gradient: mean_of(&per_agent, dim),
        elapsed: ctx.now() - t0,
        total_samples: counts.iter().sum(),
        samples_per_agent: counts,
        round,
    })
}

/// `batch/n` lockstep waves of one gradient per agent.
pub fn aggregate_sync(
    ctx: &mut AggregationContext,
    theta: &PolicyParams,
    batch: usize,
    horizon: usize,
) -> Result<AggregationResult, AggregateError> {
    let n = ctx.n_agents();
    if batch == 0 {
        return Err(AggregateError::ZeroBatch);
    }
    if !batch.is_multiple_of(n) {
        return Err(AggregateError::BatchNotMultiple { batch, agents: n });
    }
    let round = ctx.begin(theta, horizon)?;
    let waves = (batch / n) as u64;
    let kappa = ctx.time.kappa_max();
    let t0 = ctx.now();
    let mut wave = 0u64;
    let mut done = 0usize;
    ctx.events.schedule(t0 + kappa, COORDINATOR, EventKind::BroadcastDone)?;
    ctx.drive(|c, e, q| {
        match e.kind {
            EventKind::BroadcastDone => {
                for i in 0..n {
                    q.schedule(e.time + c.duration(round, i, 0, horizon)?, i, EventKind::GradientComplete)?;
                }
            }
            EventKind::GradientComplete => {
                done += 1;
                if done == n {
                    done = 0;
                    wave += 1;
                    if wave == waves {
                        q.schedule(e.time + kappa, COORDINATOR, EventKind::ReduceDone)?;
                    } else {
                        for i in 0..n {
                            q.schedule(e.time + c.duration(round, i, wave, horizon)?, i, EventKind::GradientComplete)?;
                        }
                    }
                }
            }
            EventKind::ReduceDone => return Ok(ControlFlow::Break(())),
            EventKind::Delivered => unreachable!("no deliveries in a collective round"),
        }
        Ok(ControlFlow::Continue(()))
    })?;
    ctx.comms += 2;
    let jobs: Vec<(usize, u64)> = (0..waves).flat_map(|w| (0..n).map(move |i| (i, w))).collect();
    let grads = ctx.gradients(theta, round, &jobs, horizon);
    Ok(AggregationResult {
        gradient: mean_of(&grads, theta.dim()),
        elapsed: ctx.now() - t0,
        samples_per_agent: vec![waves as usize; n],
        total_samples: batch,
        round,
    })
}

/// A single gradient delivered to the server.
#[derive(Clone, Debug, PartialEq)]
pub struct Arrival {
    pub gradient: Vec<f64>,
    pub agent: usize,
    /// Virtual time the gradient reached the server.
    pub time: f64,
    /// The agent's job index.
    pub job: u64,
}

/// Per-arrival stream: every agent fetches θ (κ_i), computes one gradient,
/// sends it back (κ_i), and repeats. The stream owns the context's event
/// queue until it is dropped.
#[derive(Debug)]
pub struct GreedyStream {
    horizon: usize,
    tables: Vec<Vec<Vec<f64>>>,
    jobs: Vec<u64>,
    arrivals: u64,
    restart: Option<usize>,
}

impl GreedyStream {
    /// Every agent snapshots `theta` at the current time and starts fetching.
    pub fn start(ctx: &mut AggregationContext, theta: &PolicyParams, horizon: usize) -> Result<Self, AggregateError> {
        if horizon == 0 {
            return Err(AggregateError::ZeroHorizon);
        }
        theta.check_matches(ctx.envs.first())?;
        let n = ctx.n_agents();
        let table = mdp::policy_table(theta);
        let stream = Self { horizon, tables: vec![table; n], jobs: vec![0; n], arrivals: 0, restart: None };
        for i in 0..n {
            stream.launch(ctx, i)?;
        }
        Ok(stream)
    }

    fn launch(&self, ctx: &mut AggregationContext, agent: usize) -> Result<(), AggregateError> {
        let t = ctx.now() + ctx.time.agent_kappa(agent) + ctx.duration(self.arrivals, agent, self.jobs[agent], self.horizon)?;
        ctx.events.schedule(t, agent, EventKind::GradientComplete)?;
        Ok(())
    }

    pub fn arrivals(&self) -> u64 {
        self.arrivals
    }

    /// Advances to the next delivery. The agent that delivered previously
    /// first fetches `provider()` as its new snapshot.
    pub fn next_arrival<P>(&mut self, ctx: &mut AggregationContext, provider: P) -> Result<Arrival, AggregateError>
    where
        P: FnOnce() -> PolicyParams,
    {
        if let Some(agent) = self.restart.take() {
            let theta = provider();
            theta.check_matches(ctx.envs.first())?;
            self.tables[agent] = mdp::policy_table(&theta);
            self.launch(ctx, agent)?;
        }
        let mut delivered = None;
        ctx.drive(|c, e, q| match e.kind {
            EventKind::GradientComplete => {
                q.schedule(e.time + c.time.agent_kappa(e.agent), e.agent, EventKind::Delivered)?;
                Ok(ControlFlow::Continue(()))
            }
            EventKind::Delivered => {
                delivered = Some(e.agent);
                Ok(ControlFlow::Break(()))
            }
            _ => unreachable!("greedy stream only schedules agent events"),
        })?;
        let agent = delivered.expect("every agent always has a job in flight");
        let job = self.jobs[agent];
        let spec = ctx.envs.for_agent(agent);
        let table = &self.tables[agent];
        let mut rng = stream::stream(ctx.seed, tag::GREEDY, &[agent as u64, job]);
        let traj = mdp::rollout(spec, table, self.horizon, &mut rng);
        let mut gradient = vec![0.0; spec.dim()];
        accumulate_gh(&traj, table, spec.n_actions, spec.gamma, 1.0, &mut gradient);
        self.jobs[agent] += 1;
        self.arrivals += 1;
        self.restart = Some(agent);
        ctx.comms += 1;
        Ok(Arrival { gradient, agent, time: ctx.now(), job })
    }
}
