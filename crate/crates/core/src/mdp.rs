//! Finite discounted MDPs and the tabular softmax policy class.
//!
//! Parameters are laid out flat, one coordinate per (state, action) pair at
//! `s * n_actions + a`. The score function of a softmax policy only touches
//! the block of the visited state, which the estimator exploits.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Frozen 2-state, 2-action benchmark shared by tests, suites and the CLI.
pub const BENCHMARK_MDP_JSON: &str = include_str!("../fixtures/benchmark_mdp.json");

#[derive(Debug, Error, PartialEq)]
pub enum MdpError {
    #[error("MDP must have at least one state and one action")]
    Empty,
    #[error("shape mismatch in {field}: expected {expected}, found {found}")]
    Shape { field: &'static str, expected: usize, found: usize },
    #[error("non-stochastic row at state {state}, action {action}: sums to {sum}")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    #[error("negative or non-finite transition probability at ({state}, {action}, {next})")]
    BadProbability { state: usize, action: usize, next: usize },
    #[error("initial distribution is not a probability vector (sum {sum})")]
    BadInitial { sum: f64 },
    #[error("reward exceeds r_max at state {state}, action {action}: |{reward}| > {r_max}")]
    RewardExceedsRmax { state: usize, action: usize, reward: f64, r_max: f64 },
    #[error("r_max must be positive and finite, got {0}")]
    BadRmax(f64),
    #[error("gamma must lie strictly inside (0, 1), got {0}")]
    GammaOutOfRange(f64),
    #[error("state index {0} out of range")]
    StateOutOfRange(usize),
    #[error("action index {0} out of range")]
    ActionOutOfRange(usize),
    #[error("parameter vector has length {found}, expected {expected}")]
    ParamLength { expected: usize, found: usize },
    #[error("non-finite policy parameter")]
    NonFiniteParam,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("invalid MDP JSON: {0}")]
    Json(String),
}

/// A finite discounted MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub gamma: f64,
    pub r_max: f64,
}

impl MdpSpec {
    /// Checks every structural invariant; returns the spec unchanged on success.
    pub fn validate(self) -> Result<Self, MdpError> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 {
            return Err(MdpError::Empty);
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(MdpError::GammaOutOfRange(self.gamma));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(MdpError::BadRmax(self.r_max));
        }
        check_len("transition", ns, self.transition.len())?;
        check_len("reward", ns, self.reward.len())?;
        check_len("rho", ns, self.rho.len())?;
        for (s, rows) in self.transition.iter().enumerate() {
            check_len("transition[s]", na, rows.len())?;
            for (a, row) in rows.iter().enumerate() {
                check_len("transition[s][a]", ns, row.len())?;
                if let Some(next) = row.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
                    return Err(MdpError::BadProbability { state: s, action: a, next });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(MdpError::NonStochasticRow { state: s, action: a, sum });
                }
            }
        }
        for (s, row) in self.reward.iter().enumerate() {
            check_len("reward[s]", na, row.len())?;
            for (a, &r) in row.iter().enumerate() {
                if !(r.is_finite() && r.abs() <= self.r_max) {
                    return Err(MdpError::RewardExceedsRmax {
                        state: s,
                        action: a,
                        reward: r,
                        r_max: self.r_max,
                    });
                }
            }
        }
        let sum: f64 = self.rho.iter().sum();
        if self.rho.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(MdpError::BadInitial { sum });
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let spec: MdpSpec = serde_json::from_str(text).map_err(|e| MdpError::Json(e.to_string()))?;
        spec.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MdpSpec is always serializable")
    }

    /// The frozen benchmark MDP.
    pub fn benchmark() -> Self {
        Self::from_json(BENCHMARK_MDP_JSON).expect("benchmark fixture is valid")
    }

    /// Number of policy parameters, `|S|·|A|`.
    pub fn dim(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Same dynamics with every reward negated.
    pub fn with_negated_rewards(&self) -> Self {
        let mut out = self.clone();
        for row in &mut out.reward {
            for r in row {
                *r = -*r;
            }
        }
        out
    }

    /// The same MDP observed through reversed state labels (`s ↦ |S|−1−s`).
    /// A policy shared with the original sees every state "inverted".
    pub fn with_reversed_states(&self) -> Self {
        let n = self.n_states;
        let flip = |s: usize| n - 1 - s;
        let mut out = self.clone();
        for s in 0..n {
            out.reward[s] = self.reward[flip(s)].clone();
            out.rho[s] = self.rho[flip(s)];
            for a in 0..self.n_actions {
                for t in 0..n {
                    out.transition[s][a][t] = self.transition[flip(s)][a][flip(t)];
                }
            }
        }
        out
    }

    /// One-state MDP with reward table `rewards` over actions.
    pub fn bandit(rewards: &[f64], gamma: f64) -> Result<Self, MdpError> {
        let r_max = rewards.iter().fold(0.0f64, |m, r| m.max(r.abs())).max(1.0);
        MdpSpec {
            n_states: 1,
            n_actions: rewards.len(),
            transition: vec![vec![vec![1.0]; rewards.len()]],
            reward: vec![rewards.to_vec()],
            rho: vec![1.0],
            gamma,
            r_max,
        }
        .validate()
    }
}

fn check_len(field: &'static str, expected: usize, found: usize) -> Result<(), MdpError> {
    if expected == found {
        Ok(())
    } else {
        Err(MdpError::Shape { field, expected, found })
    }
}

/// Tabular softmax policy parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub n_states: usize,
    pub n_actions: usize,
    pub theta: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self { n_states, n_actions, theta: vec![0.0; n_states * n_actions] }
    }

    pub fn zeros_for(spec: &MdpSpec) -> Self {
        Self::zeros(spec.n_states, spec.n_actions)
    }

    pub fn from_vec(n_states: usize, n_actions: usize, theta: Vec<f64>) -> Result<Self, MdpError> {
        if theta.len() != n_states * n_actions {
            return Err(MdpError::ParamLength { expected: n_states * n_actions, found: theta.len() });
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(MdpError::NonFiniteParam);
        }
        Ok(Self { n_states, n_actions, theta })
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Logits of state `s`.
    pub fn block(&self, s: usize) -> &[f64] {
        &self.theta[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn check_matches(&self, spec: &MdpSpec) -> Result<(), MdpError> {
        if self.n_states != spec.n_states || self.n_actions != spec.n_actions || self.theta.len() != spec.dim() {
            return Err(MdpError::ParamLength { expected: spec.dim(), found: self.theta.len() });
        }
        Ok(())
    }

    fn check_state(&self, s: usize) -> Result<(), MdpError> {
        if s < self.n_states {
            Ok(())
        } else {
            Err(MdpError::StateOutOfRange(s))
        }
    }

    fn check_action(&self, a: usize) -> Result<(), MdpError> {
        if a < self.n_actions {
            Ok(())
        } else {
            Err(MdpError::ActionOutOfRange(a))
        }
    }
}

/// A finite rollout of length `horizon`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// Softmax of a logit block, written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

/// π_θ(·|s).
pub fn policy_probs(theta: &PolicyParams, s: usize) -> Result<Vec<f64>, MdpError> {
    theta.check_state(s)?;
    let mut probs = vec![0.0; theta.n_actions];
    softmax_into(theta.block(s), &mut probs);
    Ok(probs)
}

/// All action distributions, one row per state.
pub fn policy_table(theta: &PolicyParams) -> Vec<Vec<f64>> {
    (0..theta.n_states)
        .map(|s| {
            let mut p = vec![0.0; theta.n_actions];
            softmax_into(theta.block(s), &mut p);
            p
        })
        .collect()
}

/// ∇_θ log π_θ(a|s) as a dense vector.
pub fn grad_log_pi(theta: &PolicyParams, s: usize, a: usize) -> Result<Vec<f64>, MdpError> {
    theta.check_action(a)?;
    let probs = policy_probs(theta, s)?;
    let mut out = vec![0.0; theta.dim()];
    let base = theta.index(s, 0);
    for (b, p) in probs.iter().enumerate() {
        out[base + b] = if b == a { 1.0 - p } else { -p };
    }
    Ok(out)
}

/// ∇²_θ log π_θ(a|s). Independent of `a` for softmax.
pub fn hessian_log_pi(theta: &PolicyParams, s: usize, a: usize) -> Result<DMatrix<f64>, MdpError> {
    theta.check_action(a)?;
    let probs = policy_probs(theta, s)?;
    let d = theta.dim();
    let base = theta.index(s, 0);
    let mut h = DMatrix::zeros(d, d);
    for (i, pi) in probs.iter().enumerate() {
        for (j, pj) in probs.iter().enumerate() {
            let diag = if i == j { *pi } else { 0.0 };
            h[(base + i, base + j)] = -(diag - pi * pj);
        }
    }
    Ok(h)
}

/// Draws an index from a probability vector by inverse CDF.
pub(crate) fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last partial sum
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

/// Rolls out `horizon` steps of π_θ in `spec`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    spec: &MdpSpec,
    theta: &PolicyParams,
    horizon: usize,
    rng: &mut R,
) -> Result<Trajectory, MdpError> {
    if horizon == 0 {
        return Err(MdpError::ZeroHorizon);
    }
    theta.check_matches(spec)?;
    let table = policy_table(theta);
    Ok(rollout(spec, &table, horizon, rng))
}

/// Rollout against a precomputed policy table (no validation).
pub(crate) fn rollout<R: Rng + ?Sized>(spec: &MdpSpec, table: &[Vec<f64>], horizon: usize, rng: &mut R) -> Trajectory {
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut s = sample_categorical(&spec.rho, rng);
    for t in 0..horizon {
        let a = sample_categorical(&table[s], rng);
        states.push(s);
        actions.push(a);
        rewards.push(spec.reward[s][a]);
        if t + 1 < horizon {
            s = sample_categorical(&spec.transition[s][a], rng);
        }
    }
    Trajectory { states, actions, rewards }
}
