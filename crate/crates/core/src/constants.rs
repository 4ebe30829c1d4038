//! Smoothness constants, NIGT parameter schedules and time-complexity predictors.
//!
//! Predictors return the bound with every hidden constant set to 1 and the
//! `1/(1−γ)` factor replaced by the schedule's horizon `H`, so that
//! `ḣ_i·H` is the per-gradient time the simulator charges.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{self, EstimatorError};
use crate::mdp::{MdpSpec, PolicyParams};
use crate::simtime::{SimError, TimeModel};

/// Horizon cap for degenerate (γ → 1, ε → 0) schedules.
pub const MAX_HORIZON: usize = 10_000;

/// Verified score-function bounds of the tabular softmax policy.
pub const SOFTMAX_M_G: f64 = std::f64::consts::SQRT_2;
pub const SOFTMAX_M_H: f64 = 1.0;
pub const SOFTMAX_L_2: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum ConstantsError {
    #[error("{name} must be positive and finite, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("gamma must lie in (0, 1), got {0}")]
    Gamma(f64),
    #[error("predictor needs at least one agent")]
    NoAgents,
    #[error("predictor {0} requires global-convergence parameters")]
    MissingGlobal(&'static str),
    #[error(transparent)]
    Time(#[from] SimError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

fn positive(name: &'static str, value: f64) -> Result<f64, ConstantsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ConstantsError::NotPositive { name, value })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub m_g: f64,
    pub m_h: f64,
    pub l_2: f64,
    pub r_max: f64,
    pub gamma: f64,
    pub l_g: f64,
    pub l_h: f64,
    pub sigma2: f64,
    /// Horizon at which `d_g` and `d_h` were evaluated.
    pub horizon: usize,
    pub d_g: f64,
    pub d_h: f64,
    pub delta: f64,
}

pub fn compute_constants(
    m_g: f64,
    m_h: f64,
    l_2: f64,
    r_max: f64,
    gamma: f64,
    horizon: usize,
    delta: f64,
) -> Result<SmoothnessConstants, ConstantsError> {
    positive("M_g", m_g)?;
    positive("M_h", m_h)?;
    positive("l_2", l_2)?;
    positive("r_max", r_max)?;
    positive("Delta", delta)?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(ConstantsError::Gamma(gamma));
    }
    let q = 1.0 - gamma;
    let l_g = r_max * (m_g * m_g + m_h) / (q * q);
    let inner = [
        m_h,
        gamma * m_g * m_g / q,
        l_2 / m_g,
        m_h * gamma / q,
        (m_g * (1.0 + gamma) + m_h * gamma * q) / (1.0 - gamma * gamma),
    ]
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max);
    let l_h = r_max * m_g * m_h / (q * q) + r_max * m_g.powi(3) * (1.0 + gamma) / q.powi(3) + r_max * m_g / q * inner;
    let sigma2 = r_max * r_max * m_g * m_g / q.powi(3);
    let (d_g, d_h) = truncation_constants(m_g, m_h, r_max, gamma, horizon);
    Ok(SmoothnessConstants { m_g, m_h, l_2, r_max, gamma, l_g, l_h, sigma2, horizon, d_g, d_h, delta })
}

/// Constants of the tabular softmax policy on `spec`.
pub fn softmax_constants(spec: &MdpSpec, horizon: usize, delta: f64) -> Result<SmoothnessConstants, ConstantsError> {
    compute_constants(SOFTMAX_M_G, SOFTMAX_M_H, SOFTMAX_L_2, spec.r_max, spec.gamma, horizon, delta)
}

fn truncation_constants(m_g: f64, m_h: f64, r_max: f64, gamma: f64, horizon: usize) -> (f64, f64) {
    let q = 1.0 - gamma;
    let span = 1.0 / q + horizon as f64;
    (m_g * r_max / q * span.sqrt(), (m_h + m_g * m_g) * r_max / q * span)
}

impl SmoothnessConstants {
    /// Same constants with `D_g`, `D_h` re-evaluated at another horizon.
    pub fn at_horizon(&self, horizon: usize) -> Self {
        let (d_g, d_h) = truncation_constants(self.m_g, self.m_h, self.r_max, self.gamma, horizon);
        Self { horizon, d_g, d_h, ..*self }
    }
}

/// `J* − J(θ_0)` from the exact oracles, floored at a tiny positive value.
pub fn exact_delta(spec: &MdpSpec, theta0: &PolicyParams) -> Result<f64, ConstantsError> {
    let (j, _) = estimator::exact_j_and_grad_infinite(spec, theta0)?;
    Ok((estimator::optimal_return(spec) - j).max(f64::MIN_POSITIVE))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub eta: f64,
    pub alpha: f64,
    pub horizon: usize,
    pub m: usize,
    pub m_init: usize,
    pub eps: f64,
}

fn horizon_for(gamma: f64, numerator: f64, d_g: f64, d_h: f64, alpha: f64) -> usize {
    let x = numerator / (64.0 * d_g.max(alpha * d_h));
    let h = (x.ln() / gamma.ln()).ceil();
    if h.is_nan() || h < 1.0 {
        1
    } else if h >= MAX_HORIZON as f64 {
        MAX_HORIZON
    } else {
        h as usize
    }
}

/// Step sizes and horizon for given batch sizes, using the stored `D_g`, `D_h`.
pub fn make_schedule(c: &SmoothnessConstants, eps: f64, m: usize, m_init: usize) -> Schedule {
    let eta = (m as f64 * eps * eps / (64.0 * c.sigma2)).min(0.5);
    let alpha = (eps / (8.0 * c.l_g)).min(eta * eps.sqrt() / (4.0 * c.l_h.sqrt()));
    let horizon = horizon_for(c.gamma, eps * eta, c.d_g, c.d_h, alpha);
    Schedule { eta, alpha, horizon, m, m_init, eps }
}

/// `max{⌈x⌉, 1}`; values within 1e-9 (relative) of an integer snap to it,
/// so rounding noise in `σ²` cannot add a sample.
fn ceil_at_least_one(x: f64) -> usize {
    if x.is_nan() || x <= 1.0 {
        return 1;
    }
    if x >= usize::MAX as f64 {
        return usize::MAX;
    }
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest {
        nearest as usize
    } else {
        x.ceil() as usize
    }
}

fn stationarity_terms(c: &SmoothnessConstants, eps: f64) -> (f64, f64) {
    let sq = c.l_h.sqrt();
    let a = c.l_g * c.delta / (eps * eps) + sq * c.delta / eps.powf(1.5);
    let b = c.sigma2 / (eps * eps) + c.sigma2 * sq * c.delta / eps.powf(3.5);
    (a, b)
}

/// `(M, M_init)` balancing the iteration bound's deterministic and noise terms.
pub fn choose_batches(c: &SmoothnessConstants, eps: f64) -> (usize, usize) {
    let (a, b) = stationarity_terms(c, eps);
    (ceil_at_least_one(b / a), ceil_at_least_one(c.sigma2 / (eps * eps)))
}

/// Batches and schedule with `D_g`, `D_h` taken at the schedule's own horizon.
///
/// The horizon formula depends on `H` through `D_g` and `D_h`; this raises
/// `H` from 1 until it reproduces itself (or hits [`MAX_HORIZON`]).
pub fn theory_schedule(c: &SmoothnessConstants, eps: f64) -> (SmoothnessConstants, Schedule) {
    let (m, m_init) = choose_batches(c, eps);
    let mut at = c.at_horizon(1);
    loop {
        let s = make_schedule(&at, eps, m, m_init);
        if s.horizon <= at.horizon || at.horizon >= MAX_HORIZON {
            let s = Schedule { horizon: at.horizon.max(s.horizon), ..s };
            return (at.at_horizon(s.horizon), s);
        }
        at = at.at_horizon(s.horizon);
    }
}

/// Iteration count of the stationarity guarantee (hidden constant 1).
pub fn iteration_bound(c: &SmoothnessConstants, eps: f64, m: usize, m_init: usize) -> f64 {
    let sigma = c.sigma2.sqrt();
    let (m, mi) = (m as f64, (m_init as f64).sqrt());
    let sq = c.l_h.sqrt();
    c.l_g * c.delta / (eps * eps)
        + sq * c.delta / eps.powf(1.5)
        + sigma / (mi * eps)
        + sigma.powi(3) / (m * mi * eps.powi(3))
        + c.sigma2 * sq * c.delta / (m * eps.powf(3.5))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub mu_f: f64,
    pub eps_bias: f64,
    pub mu: f64,
    pub eps_prime: f64,
}

impl GlobalParams {
    pub fn new(mu_f: f64, eps_bias: f64, m_g: f64, gamma: f64) -> Result<Self, ConstantsError> {
        positive("mu_F", mu_f)?;
        if !(eps_bias.is_finite() && eps_bias >= 0.0) {
            return Err(ConstantsError::NotPositive { name: "eps_bias", value: eps_bias });
        }
        Ok(Self {
            mu_f,
            eps_bias,
            mu: mu_f * mu_f / (2.0 * m_g * m_g),
            eps_prime: mu_f * eps_bias.sqrt() / (m_g * (1.0 - gamma)),
        })
    }

    /// Radius of the neighbourhood of `J*` the guarantee reaches.
    pub fn neighbourhood(&self) -> f64 {
        std::f64::consts::SQRT_2 * self.eps_prime / self.mu.sqrt()
    }
}

fn global_terms(c: &SmoothnessConstants, g: &GlobalParams, eps: f64) -> (f64, f64) {
    let (mu, sq) = (g.mu, c.l_h.sqrt());
    let a = c.l_g / (mu * eps) + sq / (mu.powf(0.75) * eps.sqrt());
    let b = c.sigma2 / (mu * eps * eps) + c.sigma2 * sq / (mu.powf(1.75) * eps.powf(2.5));
    (a, b)
}

/// Schedule of the global-convergence guarantee, `D_g`, `D_h` as stored.
pub fn global_schedule(c: &SmoothnessConstants, g: &GlobalParams, eps: f64) -> Schedule {
    let (a, b) = global_terms(c, g, eps);
    let m = ceil_at_least_one(b / a);
    let m_init = ceil_at_least_one(c.sigma2 / (g.mu * eps * eps));
    let eta = (m as f64 * g.mu * eps * eps / (64.0 * c.sigma2)).min(0.5);
    let alpha = (g.mu.sqrt() * eps / (8.0 * c.l_g))
        .min(eta * g.mu.powf(0.25) * eps.sqrt() / (4.0 * c.l_h.sqrt()))
        .min(1.0 / (2.0 * g.mu).sqrt())
        .min(eps * eta * (m_init as f64).sqrt() / (8.0 * c.sigma2.sqrt()));
    let horizon = horizon_for(c.gamma, g.mu.sqrt() * eps * eta, c.d_g, c.d_h, alpha);
    Schedule { eta, alpha, horizon, m, m_init, eps }
}

pub fn global_iteration_bound(c: &SmoothnessConstants, g: &GlobalParams, eps: f64) -> f64 {
    global_terms(c, g, eps).0 * (c.delta / eps).ln().max(1.0)
}

/// `min_{m∈[n]} hm_m · f(m)` over ascending `h`, where `hm_m` is the harmonic
/// mean of the `m` smallest entries. Returns the value and the minimizing `m`.
pub fn harmonic_min<F: Fn(f64) -> f64>(sorted: &[f64], f: F) -> Option<(f64, usize)> {
    let mut inv_sum = 0.0;
    let mut best: Option<(f64, usize)> = None;
    for (i, &h) in sorted.iter().enumerate() {
        inv_sum += 1.0 / h;
        let m = (i + 1) as f64;
        let value = m / inv_sum * f(m);
        if best.is_none_or(|(b, _)| value < b) {
            best = Some((value, i + 1));
        }
    }
    best
}

fn sorted(h: &[f64]) -> Vec<f64> {
    let mut v = h.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// `min_m (Σ_{i≤m} 1/h_i)^{-1}(M + m)` for per-gradient times `h`.
pub fn rennala_min_term(h: &[f64], m: usize) -> f64 {
    harmonic_min(&sorted(h), |k| m as f64 / k + 1.0).map_or(f64::INFINITY, |(v, _)| v)
}

/// Round-time bound of the first-M aggregation.
pub fn rennala_round_bound(h: &[f64], m: usize, kappa: f64) -> f64 {
    2.0 * kappa + rennala_min_term(h, m)
}

/// Round-time bound of the harmonic-mean aggregation.
pub fn malenia_round_bound(h: &[f64], m: usize, kappa: f64) -> f64 {
    let n = h.len() as f64;
    let h_max = h.iter().copied().fold(0.0, f64::max);
    let mean = h.iter().sum::<f64>() / n;
    2.0 * kappa + h_max + mean * m as f64 / n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictKind {
    RennalaCompute,
    RennalaTotal,
    MaleniaTotal,
    AnyTime,
    LowerBound,
    RennalaGlobal,
    MaleniaGlobal,
}

impl PredictKind {
    pub const ALL: [PredictKind; 7] = [
        PredictKind::RennalaCompute,
        PredictKind::RennalaTotal,
        PredictKind::MaleniaTotal,
        PredictKind::AnyTime,
        PredictKind::LowerBound,
        PredictKind::RennalaGlobal,
        PredictKind::MaleniaGlobal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PredictKind::RennalaCompute => "rennala-compute",
            PredictKind::RennalaTotal => "rennala-total",
            PredictKind::MaleniaTotal => "malenia-total",
            PredictKind::AnyTime => "any-time",
            PredictKind::LowerBound => "lower-bound",
            PredictKind::RennalaGlobal => "rennala-global",
            PredictKind::MaleniaGlobal => "malenia-global",
        }
    }
}

impl std::str::FromStr for PredictKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        PredictKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown predictor {s:?}"))
    }
}

fn rennala_shape(h: &[f64], a: f64, b: f64, horizon: f64) -> f64 {
    horizon * harmonic_min(h, |m| a + b / m).map_or(f64::INFINITY, |(v, _)| v)
}

fn malenia_shape(h: &[f64], a: f64, b: f64, horizon: f64) -> f64 {
    let n = h.len() as f64;
    let mean = h.iter().sum::<f64>() / n;
    horizon * (h[h.len() - 1] * a + mean * b / n)
}

/// Predicted virtual seconds to an ε-stationary point (or ε-solution for the
/// global kinds). `ε`, `H`, `M`, `M_init` come from `s`.
pub fn predict_time(
    kind: PredictKind,
    c: &SmoothnessConstants,
    s: &Schedule,
    tm: &TimeModel,
    global: Option<&GlobalParams>,
) -> Result<f64, ConstantsError> {
    if tm.n_agents() == 0 {
        return Err(ConstantsError::NoAgents);
    }
    let eps = s.eps;
    let horizon = s.horizon as f64;
    let kappa = tm.kappa_max();
    let h = tm.sorted_static();
    let (a, b) = stationarity_terms(c, eps);
    let value = match kind {
        PredictKind::RennalaCompute => rennala_shape(&h, a, b, horizon),
        PredictKind::RennalaTotal => kappa * a + rennala_shape(&h, a, b, horizon),
        PredictKind::MaleniaTotal => kappa * a + malenia_shape(&h, a, b, horizon),
        PredictKind::AnyTime => {
            let iterations = a.ceil().max(1.0) as usize;
            let per_round = |round: usize, batch: usize| -> Result<f64, ConstantsError> {
                let row = tm.sorted_round(round)?;
                Ok(harmonic_min(&row, |m| batch as f64 / m + 1.0).map_or(f64::INFINITY, |(v, _)| v))
            };
            let body = match tm.n_rounds() {
                None => iterations as f64 * per_round(0, s.m)?,
                Some(_) => (1..=iterations).map(|t| per_round(t, s.m)).sum::<Result<f64, _>>()?,
            };
            // the initial term is taken literally: row 0 of per-gradient times ḣ·H
            let init_row: Vec<f64> = tm.sorted_round(0)?.iter().map(|x| x * horizon).collect();
            let init = harmonic_min(&init_row, |m| s.m_init as f64 / m + 1.0).map_or(f64::INFINITY, |(v, _)| v);
            horizon * (body + init)
        }
        PredictKind::LowerBound => {
            let comm = kappa * c.l_g.powf(3.0 / 7.0) * c.l_h.powf(2.0 / 7.0) * c.delta / eps.powf(12.0 / 7.0);
            let per = harmonic_min(&h, |m| c.sigma2 / (m * eps * eps) + 1.0).map_or(f64::INFINITY, |(v, _)| v);
            let rounds = (c.l_g * c.delta / (eps * eps)).min(c.l_h.sqrt() * c.delta / eps.powf(1.5));
            comm + horizon * per * rounds
        }
        PredictKind::RennalaGlobal | PredictKind::MaleniaGlobal => {
            let g = global.ok_or(ConstantsError::MissingGlobal(kind.as_str()))?;
            let (ag, bg) = global_terms(c, g, eps);
            let compute = if kind == PredictKind::RennalaGlobal {
                rennala_shape(&h, ag, bg, horizon)
            } else {
                malenia_shape(&h, ag, bg, horizon)
            };
            kappa * ag + compute
        }
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn defaults(horizon: usize, delta: f64) -> SmoothnessConstants {
        compute_constants(SOFTMAX_M_G, 1.0, 2.0, 1.0, 0.9, horizon, delta).unwrap()
    }

    #[test]
    fn smoothness_constants_by_substitution() {
        let c = defaults(10, 1.0);
        assert_relative_eq!(c.l_g, 300.0, max_relative = 1e-12);
        assert_relative_eq!(c.sigma2, 2000.0, max_relative = 1e-12);
        assert_relative_eq!(c.d_g, 63.245553203367606, max_relative = 1e-12);
        assert_relative_eq!(c.d_h, 600.0, max_relative = 1e-12);
        // independent evaluation of the five-term maximum
        assert_relative_eq!(c.l_h, 5769.991334482233, max_relative = 1e-12);
    }

    #[test]
    fn domain_is_checked() {
        assert_eq!(compute_constants(1.0, 1.0, 1.0, 1.0, 1.0, 1, 1.0), Err(ConstantsError::Gamma(1.0)));
        assert!(matches!(compute_constants(0.0, 1.0, 1.0, 1.0, 0.5, 1, 1.0), Err(ConstantsError::NotPositive { name: "M_g", .. })));
    }

    fn with(sigma2: f64, gamma: f64, d_g: f64, d_h: f64) -> SmoothnessConstants {
        SmoothnessConstants { sigma2, gamma, d_g, d_h, ..defaults(10, 1.0) }
    }

    #[test]
    fn eta_formula() {
        let s = make_schedule(&with(4.0, 0.9, 1.0, 1.0), 1.0, 8, 1);
        assert_eq!(s.eta, 1.0 / 32.0);
        let s = make_schedule(&with(4.0, 0.9, 1.0, 1.0), 1.0, 128, 1);
        assert_eq!(s.eta, 0.5);
    }

    #[test]
    fn horizon_formula() {
        // sigma2 small enough for eta = 1/2; alpha·D_h below D_g = 10
        let c = with(1e-6, 0.9, 10.0, 1.0);
        let s = make_schedule(&c, 0.1, 1, 1);
        assert_eq!(s.eta, 0.5);
        assert_eq!(s.horizon, 90);
        let c = with(1e-6, 0.9, 1e-9, 0.0);
        assert_eq!(make_schedule(&c, 0.1, 1, 1).horizon, 1);
        let c = with(1e-6, 1.0 - 1e-9, 10.0, 1.0);
        assert_eq!(make_schedule(&c, 0.1, 1, 1).horizon, MAX_HORIZON);
    }

    #[test]
    fn batch_sizes() {
        let c = with(4.0, 0.9, 1.0, 1.0);
        assert_eq!(choose_batches(&c, 2.0).1, 1);
        let c = SmoothnessConstants { sigma2: 0.0, ..c };
        assert_eq!(choose_batches(&c, 0.5), (1, 1));
        // independent evaluation: ceil(1726788.98... / 1414.848...) = 1221
        let c = defaults(10, 1.0);
        assert_eq!(choose_batches(&c, 0.5), (1221, 8000));
    }

    #[test]
    fn theory_schedule_is_self_consistent() {
        let c = defaults(1, 1.0);
        let (at, s) = theory_schedule(&c, 0.5);
        assert_eq!(at.horizon, s.horizon);
        assert!(make_schedule(&at, 0.5, s.m, s.m_init).horizon <= s.horizon);
    }

    #[test]
    fn min_term_scan() {
        assert_eq!(rennala_min_term(&[1.0, 2.0], 4), 4.0);
        assert_eq!(rennala_min_term(&[2.0, 1.0], 4), 4.0);
        assert_eq!(malenia_round_bound(&[1.0, 3.0], 4, 0.0), 7.0);
        assert_eq!(rennala_round_bound(&[1.0], 3, 2.0), 8.0);
    }

    #[test]
    fn single_agent_collapse() {
        let c = defaults(10, 1.0);
        let s = Schedule { eta: 0.1, alpha: 0.1, horizon: 7, m: 3, m_init: 5, eps: 0.5 };
        let tm = TimeModel::fixed(vec![1.5], 0.0);
        let (a, b) = stationarity_terms(&c, 0.5);
        let v = predict_time(PredictKind::RennalaCompute, &c, &s, &tm, None).unwrap();
        assert_relative_eq!(v, 7.0 * 1.5 * (a + b), max_relative = 1e-12);
        let m = predict_time(PredictKind::MaleniaTotal, &c, &s, &tm, None).unwrap();
        assert_relative_eq!(m, v, max_relative = 1e-12);
    }

    #[test]
    fn predictor_errors() {
        let c = defaults(10, 1.0);
        let s = Schedule { eta: 0.1, alpha: 0.1, horizon: 7, m: 3, m_init: 5, eps: 0.5 };
        let tm = TimeModel::fixed(vec![], 0.0);
        assert_eq!(predict_time(PredictKind::RennalaTotal, &c, &s, &tm, None), Err(ConstantsError::NoAgents));
        let tm = TimeModel::fixed(vec![1.0], 0.0);
        assert!(matches!(
            predict_time(PredictKind::RennalaGlobal, &c, &s, &tm, None),
            Err(ConstantsError::MissingGlobal(_))
        ));
        let tm = TimeModel { comp: crate::simtime::CompTimes::PerRound(vec![vec![1.0]; 3]), ..tm };
        assert!(matches!(
            predict_time(PredictKind::AnyTime, &c, &s, &tm, None),
            Err(ConstantsError::Time(SimError::MissingRound { .. }))
        ));
    }

    #[test]
    fn global_params_formulas() {
        let g = GlobalParams::new(0.5, 0.01, SOFTMAX_M_G, 0.9).unwrap();
        assert_relative_eq!(g.mu, 0.0625, max_relative = 1e-12);
        assert_relative_eq!(g.eps_prime, 0.5 * 0.1 / (SOFTMAX_M_G * 0.1), max_relative = 1e-12);
        let c = defaults(10, 1.0);
        let s = global_schedule(&c, &g, 0.5);
        assert!(s.eta > 0.0 && s.eta <= 0.5);
        assert!(s.alpha <= 1.0 / (2.0 * g.mu).sqrt());
        assert_eq!(s.m_init, (2000.0f64 / (0.0625 * 0.25)).ceil() as usize);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in PredictKind::ALL {
            assert_eq!(k.as_str().parse::<PredictKind>().unwrap(), k);
        }
    }
}
