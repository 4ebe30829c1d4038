//! Virtual-clock discrete-event engine and the agent time model.
//!
//! Computation times are per trajectory step: an agent with step time `ḣ`
//! needs `ḣ·H` virtual seconds per gradient of horizon `H`. The upper
//! bounds of the time model are used as exact durations, optionally shrunk
//! by a multiplicative jitter drawn from `U[1−δ, 1]`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::cmp::Reverse;
use std::fmt::Write as _;
use std::ops::ControlFlow;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream;

/// Agent index used for coordinator-side (collective) events.
pub const COORDINATOR: usize = usize::MAX;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("time model has no agents")]
    NoAgents,
    #[error("invalid time value in {field}: {value}")]
    BadTime { field: &'static str, value: f64 },
    #[error("{field} has {found} entries, expected {expected} (one per agent)")]
    AgentCount { field: &'static str, expected: usize, found: usize },
    #[error("jitter must lie in [0, 1), got {0}")]
    BadJitter(f64),
    #[error("agent {agent} out of range")]
    AgentOutOfRange { agent: usize },
    #[error("no per-round computation time for round {round}")]
    MissingRound { round: usize },
    #[error("event scheduled in the past: t={at} < now={now}")]
    PastEvent { at: f64, now: f64 },
}

/// Per-step computation times: fixed per agent, or a table indexed by round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompTimes {
    Static(Vec<f64>),
    PerRound(Vec<Vec<f64>>),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    #[default]
    Centralized,
    Allreduce,
}

/// Computation and communication times of the agents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeModel {
    pub comp: CompTimes,
    /// Seconds per vector transfer. Superseded by `kappa_per_agent` when present.
    #[serde(default)]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_per_agent: Option<Vec<f64>>,
    #[serde(default)]
    pub mode: CommMode,
    /// δ of the `U[1−δ, 1]` duration multiplier; 0 gives exact durations.
    #[serde(default)]
    pub jitter: f64,
}

impl TimeModel {
    pub fn fixed(step_times: Vec<f64>, kappa: f64) -> Self {
        Self { comp: CompTimes::Static(step_times), kappa, kappa_per_agent: None, mode: CommMode::Centralized, jitter: 0.0 }
    }

    pub fn per_agent_kappa(step_times: Vec<f64>, kappas: Vec<f64>) -> Self {
        Self {
            comp: CompTimes::Static(step_times),
            kappa: 0.0,
            kappa_per_agent: Some(kappas),
            mode: CommMode::Centralized,
            jitter: 0.0,
        }
    }

    pub fn n_agents(&self) -> usize {
        match &self.comp {
            CompTimes::Static(v) => v.len(),
            CompTimes::PerRound(rows) => rows.first().map_or(0, Vec::len),
        }
    }

    pub fn validate(self) -> Result<Self, SimError> {
        let n = self.n_agents();
        if n == 0 {
            return Err(SimError::NoAgents);
        }
        let check = |field: &'static str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(SimError::BadTime { field, value: v })
            }
        };
        match &self.comp {
            CompTimes::Static(v) => v.iter().try_for_each(|&x| check("comp", x))?,
            CompTimes::PerRound(rows) => {
                for row in rows {
                    if row.len() != n {
                        return Err(SimError::AgentCount { field: "comp.per_round", expected: n, found: row.len() });
                    }
                    row.iter().try_for_each(|&x| check("comp", x))?;
                }
            }
        }
        check("kappa", self.kappa)?;
        if let Some(k) = &self.kappa_per_agent {
            if k.len() != n {
                return Err(SimError::AgentCount { field: "kappa_per_agent", expected: n, found: k.len() });
            }
            k.iter().try_for_each(|&x| check("kappa_per_agent", x))?;
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(SimError::BadJitter(self.jitter));
        }
        Ok(self)
    }

    /// ḣ of `agent` in `round`.
    pub fn step_time(&self, round: usize, agent: usize) -> Result<f64, SimError> {
        let row = match &self.comp {
            CompTimes::Static(v) => v,
            CompTimes::PerRound(rows) => rows.get(round).ok_or(SimError::MissingRound { round })?,
        };
        row.get(agent).copied().ok_or(SimError::AgentOutOfRange { agent })
    }

    /// Step times of one round, ascending.
    pub fn sorted_round(&self, round: usize) -> Result<Vec<f64>, SimError> {
        let mut v = match &self.comp {
            CompTimes::Static(v) => v.clone(),
            CompTimes::PerRound(rows) => rows.get(round).ok_or(SimError::MissingRound { round })?.clone(),
        };
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    /// Static step times in ascending order (first row for a table).
    pub fn sorted_static(&self) -> Vec<f64> {
        self.sorted_round(0).unwrap_or_default()
    }

    pub fn n_rounds(&self) -> Option<usize> {
        match &self.comp {
            CompTimes::Static(_) => None,
            CompTimes::PerRound(rows) => Some(rows.len()),
        }
    }

    /// Point-to-point transfer time of one agent.
    pub fn agent_kappa(&self, agent: usize) -> f64 {
        match &self.kappa_per_agent {
            Some(k) => k[agent],
            None => self.kappa,
        }
    }

    /// The single κ bounding every transfer (max over agents when they differ).
    pub fn kappa_max(&self) -> f64 {
        match &self.kappa_per_agent {
            Some(k) => k.iter().copied().fold(0.0, f64::max),
            None => self.kappa,
        }
    }

    /// Duration of one gradient of `agent`, including the jitter draw for
    /// job `job` of `round` when jitter is enabled.
    pub fn job_duration(&self, seed: u64, round: usize, agent: usize, job: u64, horizon: usize) -> Result<f64, SimError> {
        let base = self.step_time(round, agent)? * horizon as f64;
        if self.jitter == 0.0 {
            return Ok(base);
        }
        let u: f64 = stream::stream(seed, stream::tag::JITTER, &[round as u64, agent as u64, job]).random();
        Ok(base * (1.0 - self.jitter * u))
    }
}

/// Completion time of a gradient started at `start`.
pub fn gradient_completion(tm: &TimeModel, agent: usize, round: usize, horizon: usize, start: f64) -> Result<f64, SimError> {
    Ok(start + tm.step_time(round, agent)? * horizon as f64)
}

/// Communication charged per aggregation round: one broadcast plus one reduce.
pub fn round_comm_cost(tm: &TimeModel) -> f64 {
    2.0 * tm.kappa_max()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    GradientComplete,
    BroadcastDone,
    ReduceDone,
    /// A single gradient reached the server (greedy stream).
    Delivered,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::GradientComplete => "gradient-complete",
            EventKind::BroadcastDone => "broadcast-done",
            EventKind::ReduceDone => "reduce-done",
            EventKind::Delivered => "delivered",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub agent: usize,
    pub seq: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.agent.cmp(&other.agent))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Clock {
    pub now: f64,
    pub events_processed: u64,
}

/// Pending events plus the clock. Events pop in `(time, agent, seq)` order.
#[derive(Debug, Default)]
pub struct EventLoop {
    heap: BinaryHeap<Reverse<SimEvent>>,
    next_seq: u64,
    clock: Clock,
    trace: Option<Vec<SimEvent>>,
}

impl EventLoop {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_trace() -> Self {
        Self { trace: Some(Vec::new()), ..Self::default() }
    }

    pub fn now(&self) -> f64 {
        self.clock.now
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn pending(&self) -> usize {
        self.heap.len()
    }

    /// Enqueues an event; times before `now` are rejected.
    pub fn schedule(&mut self, time: f64, agent: usize, kind: EventKind) -> Result<(), SimError> {
        if time.is_nan() || time < self.clock.now {
            return Err(SimError::PastEvent { at: time, now: self.clock.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(SimEvent { time, agent, seq, kind }));
        Ok(())
    }

    /// Drops every pending event.
    pub fn clear_pending(&mut self) {
        self.heap.clear();
    }

    /// Moves the clock forward without an event (e.g. a transfer nobody waits on).
    pub fn advance_to(&mut self, time: f64) -> Result<(), SimError> {
        if time.is_nan() || time < self.clock.now {
            return Err(SimError::PastEvent { at: time, now: self.clock.now });
        }
        self.clock.now = time;
        Ok(())
    }

    pub fn trace(&self) -> Option<&[SimEvent]> {
        self.trace.as_deref()
    }

    /// Processes events in order until the handler breaks, `stop` holds, or
    /// the queue drains. Pending events are left in place.
    pub fn run<F, S>(&mut self, mut handler: F, mut stop: S) -> Result<Clock, SimError>
    where
        F: FnMut(&SimEvent, &mut EventLoop) -> Result<ControlFlow<()>, SimError>,
        S: FnMut(&Clock) -> bool,
    {
        while !stop(&self.clock) {
            let Some(Reverse(ev)) = self.heap.pop() else { break };
            debug_assert!(ev.time >= self.clock.now);
            self.clock.now = ev.time;
            self.clock.events_processed += 1;
            if let Some(trace) = &mut self.trace {
                trace.push(ev);
            }
            if handler(&ev, self)?.is_break() {
                break;
            }
        }
        Ok(self.clock)
    }
}

/// Free-function form of [`EventLoop::run`].
pub fn run_events<F, S>(queue: &mut EventLoop, handler: F, stop: S) -> Result<Clock, SimError>
where
    F: FnMut(&SimEvent, &mut EventLoop) -> Result<ControlFlow<()>, SimError>,
    S: FnMut(&Clock) -> bool,
{
    queue.run(handler, stop)
}

/// One line per event: `time<TAB>agent<TAB>seq<TAB>kind`; coordinator events show agent `-`.
pub fn format_trace(events: &[SimEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        let agent = if ev.agent == COORDINATOR { "-".to_string() } else { ev.agent.to_string() };
        let _ = writeln!(out, "{}\t{}\t{}\t{}", ev.time, agent, ev.seq, ev.kind.as_str());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn completion_is_start_plus_step_times_horizon() {
        let tm = TimeModel::fixed(vec![1.0], 0.0);
        assert_eq!(gradient_completion(&tm, 0, 0, 10, 0.0).unwrap(), 10.0);
        let tm = TimeModel { comp: CompTimes::PerRound(vec![vec![1.0], vec![3.0]]), ..TimeModel::fixed(vec![], 7.0) };
        assert_eq!(gradient_completion(&tm, 0, 1, 2, 5.0).unwrap(), 11.0);
        assert_eq!(gradient_completion(&tm, 0, 2, 2, 5.0), Err(SimError::MissingRound { round: 2 }));
        assert_eq!(gradient_completion(&tm, 1, 1, 2, 5.0), Err(SimError::AgentOutOfRange { agent: 1 }));
    }

    #[test]
    fn kappa_does_not_touch_compute() {
        let a = TimeModel::fixed(vec![2.0], 0.0);
        let b = TimeModel::fixed(vec![2.0], 100.0);
        assert_eq!(gradient_completion(&a, 0, 0, 3, 1.0), gradient_completion(&b, 0, 0, 3, 1.0));
    }

    #[test]
    fn comm_cost_is_broadcast_plus_reduce() {
        assert_eq!(round_comm_cost(&TimeModel::fixed(vec![1.0], 0.0)), 0.0);
        assert_eq!(round_comm_cost(&TimeModel::fixed(vec![1.0], 3.0)), 6.0);
        let mut tm = TimeModel::fixed(vec![1.0], 3.0);
        tm.mode = CommMode::Allreduce;
        assert_eq!(round_comm_cost(&tm), 6.0);
        let tm = TimeModel::per_agent_kappa(vec![1.0, 1.0], vec![1.0, 2.5]);
        assert_eq!(round_comm_cost(&tm), 5.0);
    }

    #[test]
    fn validation() {
        assert_eq!(TimeModel::fixed(vec![], 0.0).validate(), Err(SimError::NoAgents));
        assert!(matches!(TimeModel::fixed(vec![-1.0], 0.0).validate(), Err(SimError::BadTime { .. })));
        assert!(matches!(
            TimeModel::per_agent_kappa(vec![1.0, 2.0], vec![1.0]).validate(),
            Err(SimError::AgentCount { field: "kappa_per_agent", .. })
        ));
        let mut tm = TimeModel::fixed(vec![1.0], 0.0);
        tm.jitter = 1.0;
        assert_eq!(tm.validate(), Err(SimError::BadJitter(1.0)));
    }

    #[test]
    fn sorted_accessor() {
        let tm = TimeModel::fixed(vec![3.0, 1.0, 2.0], 0.0);
        assert_eq!(tm.sorted_static(), vec![1.0, 2.0, 3.0]);
        assert_eq!(tm.step_time(0, 0).unwrap(), 3.0);
    }

    #[test]
    fn jitter_only_shortens() {
        let mut tm = TimeModel::fixed(vec![2.0], 0.0);
        tm.jitter = 0.5;
        for job in 0..100 {
            let d = tm.job_duration(1, 0, 0, job, 3).unwrap();
            assert!((3.0..=6.0).contains(&d));
        }
    }

    #[test]
    fn empty_queue_with_immediate_stop() {
        let mut ev = EventLoop::new();
        let clock = run_events(&mut ev, |_, _| Ok(ControlFlow::Continue(())), |_| true).unwrap();
        assert_eq!(clock, Clock::default());
    }

    #[test]
    fn ties_break_by_agent_index() {
        let mut ev = EventLoop::new();
        ev.schedule(1.0, 2, EventKind::GradientComplete).unwrap();
        ev.schedule(1.0, 1, EventKind::GradientComplete).unwrap();
        let mut seen = Vec::new();
        ev.run(
            |e, _| {
                seen.push(e.agent);
                Ok(ControlFlow::Continue(()))
            },
            |_| false,
        )
        .unwrap();
        assert_eq!(seen, vec![1, 2]);
    }

    #[test]
    fn continuous_workers_hand_simulation() {
        // h = (1, 2, 4): agent 0's second gradient ties agent 1's first at t=2
        let h = [1.0, 2.0, 4.0];
        let mut ev = EventLoop::new();
        for (i, hi) in h.iter().enumerate() {
            ev.schedule(*hi, i, EventKind::GradientComplete).unwrap();
        }
        let mut seen = Vec::new();
        ev.run(
            |e, q| {
                seen.push((e.time, e.agent));
                q.schedule(e.time + h[e.agent], e.agent, EventKind::GradientComplete)?;
                Ok(if seen.len() == 3 { ControlFlow::Break(()) } else { ControlFlow::Continue(()) })
            },
            |_| false,
        )
        .unwrap();
        assert_eq!(seen, vec![(1.0, 0), (2.0, 0), (2.0, 1)]);
    }

    #[test]
    fn past_events_are_a_hard_fault() {
        let mut ev = EventLoop::new();
        ev.schedule(5.0, 0, EventKind::GradientComplete).unwrap();
        let err = ev
            .run(
                |e, q| {
                    q.schedule(e.time - 1.0, 0, EventKind::GradientComplete)?;
                    Ok(ControlFlow::Continue(()))
                },
                |_| false,
            )
            .unwrap_err();
        assert_eq!(err, SimError::PastEvent { at: 4.0, now: 5.0 });
    }

    #[test]
    fn trace_lines_are_tab_separated() {
        let mut ev = EventLoop::with_trace();
        ev.schedule(0.5, COORDINATOR, EventKind::BroadcastDone).unwrap();
        ev.schedule(1.5, 0, EventKind::GradientComplete).unwrap();
        ev.run(|_, _| Ok(ControlFlow::Continue(())), |_| false).unwrap();
        assert_eq!(format_trace(ev.trace().unwrap()), "0.5\t-\t0\tbroadcast-done\n1.5\t0\t1\tgradient-complete\n");
    }
}
