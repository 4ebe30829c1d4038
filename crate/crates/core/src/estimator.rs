//! The truncated REINFORCE estimator g_H and exact gradient oracles.
//!
//! Two independent routes to ∇J_H are provided: exhaustive enumeration of
//! every length-H trajectory, and a finite-horizon backward recursion. The
//! infinite-horizon gradient ∇J comes from linear solves for the value
//! function and the discounted occupancy measure.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::{self, MdpError, MdpSpec, PolicyParams, Trajectory};
use crate::stream;
use crate::vector::{self, pairwise_sum};

/// Largest number of trajectories the enumeration oracle will visit.
pub const ENUMERATION_BUDGET: u128 = 10_000_000;

const VALUE_ITERATION_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("trajectory uses state/action outside the parameter table")]
    DimensionMismatch,
    #[error("enumeration budget exceeded: {count} trajectories > {budget}")]
    BudgetExceeded { count: u128, budget: u128 },
    #[error("linear solve failed for the policy-induced kernel")]
    SingularSystem,
    #[error("need at least 2 Monte Carlo samples, got {0}")]
    TooFewSamples(usize),
}

/// A (possibly averaged) policy-gradient estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub vector: Vec<f64>,
    pub n_samples: usize,
    pub horizon: usize,
}

/// Exact quantities at one parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactGradientReport {
    pub grad_jh: Vec<f64>,
    pub grad_j: Vec<f64>,
    pub j: f64,
    pub j_h: f64,
    pub j_star: f64,
    pub bias_norm: f64,
    pub horizon: usize,
}

/// Reward-to-go weights `Σ_{h≥t} γ^h r_h`, one backward pass.
fn reward_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let h = rewards.len();
    let mut disc = 1.0;
    let discounted: Vec<f64> = rewards
        .iter()
        .map(|r| {
            let v = disc * r;
            disc *= gamma;
            v
        })
        .collect();
    let mut out = vec![0.0; h];
    let mut acc = 0.0;
    for t in (0..h).rev() {
        acc += discounted[t];
        out[t] = acc;
    }
    out
}

/// Adds `weight · g_H(τ, θ)` into `out`, given the policy table of θ.
pub(crate) fn accumulate_gh(
    traj: &Trajectory,
    table: &[Vec<f64>],
    n_actions: usize,
    gamma: f64,
    weight: f64,
    out: &mut [f64],
) {
    let coeffs = reward_to_go(&traj.rewards, gamma);
    for ((&s, &a), c) in traj.states.iter().zip(&traj.actions).zip(coeffs) {
        if c == 0.0 {
            continue;
        }
        let w = weight * c;
        let base = s * n_actions;
        for (b, p) in table[s].iter().enumerate() {
            let score = if b == a { 1.0 - p } else { -p };
            out[base + b] += w * score;
        }
    }
}

/// g_H(τ, θ) for a single trajectory.
pub fn estimate_gh(traj: &Trajectory, theta: &PolicyParams, gamma: f64) -> Result<GradientEstimate, EstimatorError> {
    let ok = traj.states.len() == traj.actions.len()
        && traj.states.len() == traj.rewards.len()
        && traj.states.iter().all(|&s| s < theta.n_states)
        && traj.actions.iter().all(|&a| a < theta.n_actions);
    if !ok {
        return Err(EstimatorError::DimensionMismatch);
    }
    let table = mdp::policy_table(theta);
    let mut vector = vec![0.0; theta.dim()];
    accumulate_gh(traj, &table, theta.n_actions, gamma, 1.0, &mut vector);
    Ok(GradientEstimate { vector, n_samples: 1, horizon: traj.horizon() })
}

fn enumeration_count(spec: &MdpSpec, horizon: usize) -> Result<u128, EstimatorError> {
    let base = (spec.n_states * spec.n_actions) as u128;
    let mut count: u128 = 1;
    for _ in 0..horizon {
        count = count.saturating_mul(base);
        if count > ENUMERATION_BUDGET {
            return Err(EstimatorError::BudgetExceeded { count, budget: ENUMERATION_BUDGET });
        }
    }
    Ok(count)
}

/// `(J_H(θ), ∇J_H(θ))` by summing over every length-H trajectory.
pub fn enumerate_jh(spec: &MdpSpec, theta: &PolicyParams, horizon: usize) -> Result<(f64, Vec<f64>), EstimatorError> {
    if horizon == 0 {
        return Err(MdpError::ZeroHorizon.into());
    }
    theta.check_matches(spec)?;
    enumeration_count(spec, horizon)?;
    let table = mdp::policy_table(theta);
    let mut walker = Enumerator {
        spec,
        table: &table,
        horizon,
        traj: Trajectory {
            states: Vec::with_capacity(horizon),
            actions: Vec::with_capacity(horizon),
            rewards: Vec::with_capacity(horizon),
        },
        j: 0.0,
        grad: vec![0.0; spec.dim()],
    };
    for s0 in 0..spec.n_states {
        let p = spec.rho[s0];
        if p > 0.0 {
            walker.visit(s0, p);
        }
    }
    Ok((walker.j, walker.grad))
}

/// ∇J_H(θ) by enumeration.
pub fn exact_grad_jh_bruteforce(spec: &MdpSpec, theta: &PolicyParams, horizon: usize) -> Result<Vec<f64>, EstimatorError> {
    enumerate_jh(spec, theta, horizon).map(|(_, g)| g)
}

struct Enumerator<'a> {
    spec: &'a MdpSpec,
    table: &'a [Vec<f64>],
    horizon: usize,
    traj: Trajectory,
    j: f64,
    grad: Vec<f64>,
}

impl Enumerator<'_> {
    fn visit(&mut self, s: usize, prob: f64) {
        for a in 0..self.spec.n_actions {
            let pa = prob * self.table[s][a];
            if pa == 0.0 {
                continue;
            }
            self.traj.states.push(s);
            self.traj.actions.push(a);
            self.traj.rewards.push(self.spec.reward[s][a]);
            if self.traj.states.len() == self.horizon {
                let mut disc = 1.0;
                let ret: f64 = self
                    .traj
                    .rewards
                    .iter()
                    .map(|r| {
                        let v = disc * r;
                        disc *= self.spec.gamma;
                        v
                    })
                    .sum();
                self.j += pa * ret;
                accumulate_gh(&self.traj, self.table, self.spec.n_actions, self.spec.gamma, pa, &mut self.grad);
            } else {
                for s2 in 0..self.spec.n_states {
                    let p2 = pa * self.spec.transition[s][a][s2];
                    if p2 > 0.0 {
                        self.visit(s2, p2);
                    }
                }
            }
            self.traj.states.pop();
            self.traj.actions.pop();
            self.traj.rewards.pop();
        }
    }
}

/// `(J_H, ∇J_H)` by finite-horizon backward recursion:
/// ∇J_H = Σ_t γ^t Σ_s d_t(s) Σ_a π(a|s) Q_{H−t}(s,a) ∇log π(a|s).
pub fn recursive_jh(spec: &MdpSpec, theta: &PolicyParams, horizon: usize) -> Result<(f64, Vec<f64>), EstimatorError> {
    if horizon == 0 {
        return Err(MdpError::ZeroHorizon.into());
    }
    theta.check_matches(spec)?;
    let (ns, na) = (spec.n_states, spec.n_actions);
    let table = mdp::policy_table(theta);

    // q[k][s][a]: expected discounted reward over the next k steps starting with (s, a)
    let mut q = Vec::with_capacity(horizon + 1);
    q.push(vec![vec![0.0; na]; ns]);
    let mut v = vec![0.0; ns];
    for _ in 0..horizon {
        let mut qk = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = spec.transition[s][a].iter().zip(&v).map(|(p, x)| p * x).sum();
                qk[s][a] = spec.reward[s][a] + spec.gamma * future;
            }
        }
        v = (0..ns).map(|s| table[s].iter().zip(&qk[s]).map(|(p, x)| p * x).sum()).collect();
        q.push(qk);
    }
    let j_h: f64 = spec.rho.iter().zip(&v).map(|(p, x)| p * x).sum();

    let mut grad = vec![0.0; spec.dim()];
    let mut marginal = spec.rho.clone();
    let mut disc = 1.0;
    for t in 0..horizon {
        let qk = &q[horizon - t];
        for s in 0..ns {
            if marginal[s] == 0.0 {
                continue;
            }
            add_state_gradient(&mut grad, s, na, disc * marginal[s], &table[s], &qk[s]);
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                let w = marginal[s] * table[s][a];
                for (n, p) in next.iter_mut().zip(&spec.transition[s][a]) {
                    *n += w * p;
                }
            }
        }
        marginal = next;
        disc *= spec.gamma;
    }
    Ok((j_h, grad))
}

/// Adds `weight · Σ_a π(a|s) Q(s,a) ∇log π(a|s)` into the block of `s`.
fn add_state_gradient(grad: &mut [f64], s: usize, na: usize, weight: f64, probs: &[f64], q: &[f64]) {
    let base = s * na;
    for a in 0..na {
        let coef = weight * probs[a] * q[a];
        for (b, p) in probs.iter().enumerate() {
            let score = if b == a { 1.0 - p } else { -p };
            grad[base + b] += coef * score;
        }
    }
}

/// Optimal value `J* = ρᵀV*` by value iteration.
pub fn optimal_return(spec: &MdpSpec) -> f64 {
    let (ns, na) = (spec.n_states, spec.n_actions);
    let mut v = vec![0.0; ns];
    // stopping rule: ‖V_{k+1} − V_k‖∞ ≤ tol·(1−γ)/γ bounds ‖V_{k+1} − V*‖∞ by tol
    let stop = VALUE_ITERATION_TOL * (1.0 - spec.gamma) / spec.gamma;
    loop {
        let next: Vec<f64> = (0..ns)
            .map(|s| {
                (0..na)
                    .map(|a| {
                        let future: f64 = spec.transition[s][a].iter().zip(&v).map(|(p, x)| p * x).sum();
                        spec.reward[s][a] + spec.gamma * future
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let diff = vector::max_abs_diff(&next, &v);
        v = next;
        if diff <= stop {
            break;
        }
    }
    spec.rho.iter().zip(&v).map(|(p, x)| p * x).sum()
}

/// `(J(θ), ∇J(θ))` of the infinite-horizon objective via linear solves.
pub fn exact_j_and_grad_infinite(spec: &MdpSpec, theta: &PolicyParams) -> Result<(f64, Vec<f64>), EstimatorError> {
    theta.check_matches(spec)?;
    let (ns, na) = (spec.n_states, spec.n_actions);
    let table = mdp::policy_table(theta);
    let mut p_pi = DMatrix::<f64>::zeros(ns, ns);
    let mut r_pi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let w = table[s][a];
            r_pi[s] += w * spec.reward[s][a];
            for s2 in 0..ns {
                p_pi[(s, s2)] += w * spec.transition[s][a][s2];
            }
        }
    }
    let eye = DMatrix::<f64>::identity(ns, ns);
    let values = (&eye - spec.gamma * &p_pi).lu().solve(&r_pi).ok_or(EstimatorError::SingularSystem)?;
    let rho = DVector::from_column_slice(&spec.rho);
    let occupancy = (&eye - spec.gamma * p_pi.transpose())
        .lu()
        .solve(&rho)
        .ok_or(EstimatorError::SingularSystem)?;
    let j = rho.dot(&values);

    let mut grad = vec![0.0; spec.dim()];
    for s in 0..ns {
        let q: Vec<f64> = (0..na)
            .map(|a| {
                let future: f64 = (0..ns).map(|s2| spec.transition[s][a][s2] * values[s2]).sum();
                spec.reward[s][a] + spec.gamma * future
            })
            .collect();
        add_state_gradient(&mut grad, s, na, occupancy[s], &table[s], &q);
    }
    Ok((j, grad))
}

/// Full exact report at horizon `horizon`.
pub fn exact_j_and_grad(spec: &MdpSpec, theta: &PolicyParams, horizon: usize) -> Result<ExactGradientReport, EstimatorError> {
    let (j, grad_j) = exact_j_and_grad_infinite(spec, theta)?;
    let (j_h, grad_jh) = recursive_jh(spec, theta, horizon)?;
    let bias_norm = vector::dist(&grad_jh, &grad_j);
    Ok(ExactGradientReport { grad_jh, grad_j, j, j_h, j_star: optimal_return(spec), bias_norm, horizon })
}

/// Monte Carlo summary of g_H at a fixed θ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloMoments {
    pub mean: Vec<f64>,
    /// Componentwise standard error of `mean`.
    pub std_err: Vec<f64>,
    /// Empirical 𝔼‖g_H − ∇J_H‖² about the exact ∇J_H.
    pub second_moment: f64,
    pub exact: Vec<f64>,
    pub n_samples: usize,
}

/// Draws `n` trajectories (sample `k` from its own stream) and summarizes g_H.
/// Reductions use a fixed-shape tree, so the result is identical for any
/// thread count.
pub fn empirical_moments(
    spec: &MdpSpec,
    theta: &PolicyParams,
    horizon: usize,
    n: usize,
    seed: u64,
) -> Result<MonteCarloMoments, EstimatorError> {
    if n < 2 {
        return Err(EstimatorError::TooFewSamples(n));
    }
    let exact = exact_grad_jh_bruteforce(spec, theta, horizon)?;
    let table = mdp::policy_table(theta);
    let dim = spec.dim();
    // per-sample rows: [g (dim), g² (dim), ‖g − ∇J_H‖²]
    let rows: Vec<Vec<f64>> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream::stream(seed, stream::tag::MONTE_CARLO, &[k]);
            let traj = mdp::rollout(spec, &table, horizon, &mut rng);
            let mut g = vec![0.0; dim];
            accumulate_gh(&traj, &table, spec.n_actions, spec.gamma, 1.0, &mut g);
            let mut row = Vec::with_capacity(2 * dim + 1);
            row.extend_from_slice(&g);
            row.extend(g.iter().map(|x| x * x));
            row.push(vector::dist_sq(&g, &exact));
            row
        })
        .collect();
    let total = pairwise_sum(&rows, 2 * dim + 1);
    let nf = n as f64;
    let mean: Vec<f64> = total[..dim].iter().map(|x| x / nf).collect();
    let std_err = (0..dim)
        .map(|i| {
            let var = (total[dim + i] - nf * mean[i] * mean[i]).max(0.0) / (nf - 1.0);
            (var / nf).sqrt()
        })
        .collect();
    Ok(MonteCarloMoments { mean, std_err, second_moment: total[2 * dim] / nf, exact, n_samples: n })
}
