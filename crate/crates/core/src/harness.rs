//! Run configuration, multi-seed experiments, metrics files and the scripted
//! comparison suites.
//!
//! Output layout of one experiment directory:
//!
//! ```text
//! <dir>/manifest.json          resolved config, constants, hyperparameters
//! <dir>/seed_<i>.csv           per-iteration metrics of seed i
//! <dir>/seed_<i>.summary.json  terminal summary of seed i
//! <dir>/seed_<i>.trace.tsv     event trace (only with "trace": true)
//! <dir>/summary.json           all seeds plus (0.2, 0.5, 0.8) quantiles
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::Environments;
use crate::constants::{
    self, exact_delta, iteration_bound, softmax_constants, theory_schedule, ConstantsError, GlobalParams, PredictKind,
    Schedule, SmoothnessConstants, SOFTMAX_M_G,
};
use crate::estimator;
use crate::mdp::{MdpError, MdpSpec, PolicyParams};
use crate::nigt::{self, Hyper, MethodConfig, MethodKind, NigtError, RunRecord, StopRule, Summary, Target};
use crate::simtime::TimeModel;
use crate::stream::{self, tag};

/// Environment variable overriding the default output root `runs`.
pub const OUTPUT_ROOT_ENV: &str = "ASYNCPG_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: cannot read mdp file {path}: {source}")]
    MdpFile { path: PathBuf, source: io::Error },
    #[error("config: mdp {origin}: {source}")]
    Mdp { origin: String, source: MdpError },
    #[error(transparent)]
    Constants(#[from] ConstantsError),
    #[error(transparent)]
    Run(#[from] NigtError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn invalid(msg: impl Into<String>) -> HarnessError {
    HarnessError::Invalid(msg.into())
}

/// `"benchmark"`, a path to an MDP JSON file, or an inline MDP object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MdpRef {
    Named(String),
    Inline(Box<MdpSpec>),
}

impl MdpRef {
    pub fn resolve(&self, base: &Path) -> Result<MdpSpec, HarnessError> {
        match self {
            MdpRef::Named(name) if name == "benchmark" => Ok(MdpSpec::benchmark()),
            MdpRef::Named(path) => {
                let full = base.join(path);
                let text = fs::read_to_string(&full).map_err(|source| HarnessError::MdpFile { path: full.clone(), source })?;
                MdpSpec::from_json(&text).map_err(|source| HarnessError::Mdp { origin: path.clone(), source })
            }
            MdpRef::Inline(spec) => {
                (**spec).clone().validate().map_err(|source| HarnessError::Mdp { origin: "inline".into(), source })
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    /// Batch sizes, step sizes and horizon from the convergence theory.
    #[default]
    Theory,
    Explicit(Hyper),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalInput {
    pub mu_f: f64,
    pub eps_bias: f64,
}

fn default_time() -> TimeModel {
    TimeModel::fixed(vec![1.0], 0.0)
}

fn one() -> usize {
    1
}

/// One experiment. Required keys: `method`, `mdp`, `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: MethodKind,
    pub mdp: MdpRef,
    /// Per-agent environments; makes the context heterogeneous.
    #[serde(default)]
    pub environments: Option<Vec<MdpRef>>,
    /// Defaults to one agent with `ḣ = 1` and `κ = 0`.
    #[serde(default = "default_time")]
    pub time: TimeModel,
    #[serde(default)]
    pub schedule: ScheduleSource,
    pub eps: f64,
    /// Defaults to the ceiling of the iteration bound.
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub seeds: usize,
    /// `J* − J(θ_0)`; computed exactly when absent.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub stop: StopRule,
    #[serde(default)]
    pub global: Option<GlobalInput>,
    /// Relative to the output root unless absolute; defaults to the method name.
    #[serde(default)]
    pub output_dir: Option<String>,
    #[serde(default)]
    pub trace: bool,
}

impl RunConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a config, resolving MDP paths against the current directory.
pub fn parse_config(text: &str) -> Result<RunConfig, HarnessError> {
    parse_config_in(text, Path::new("."))
}

/// Parses and validates a config, resolving MDP paths against `base`.
pub fn parse_config_in(text: &str, base: &Path) -> Result<RunConfig, HarnessError> {
    let config: RunConfig = serde_json::from_str(text)?;
    prepare(&config, base)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf), HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok((parse_config_in(&text, &base)?, base))
}

/// Everything a config resolves to before any sampling happens.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Prepared {
    pub envs: Environments,
    pub time: TimeModel,
    pub theta0: PolicyParams,
    pub delta: f64,
    pub constants: SmoothnessConstants,
    /// Theory schedule, when that is the source.
    pub schedule: Option<Schedule>,
    pub hyper: Hyper,
    pub iterations: usize,
    pub global: Option<GlobalParams>,
}

pub fn prepare(config: &RunConfig, base: &Path) -> Result<Prepared, HarnessError> {
    if !(config.eps > 0.0 && config.eps.is_finite()) {
        return Err(invalid(format!("eps must be positive, got {}", config.eps)));
    }
    if config.seeds == 0 {
        return Err(invalid("seeds must be at least 1"));
    }
    let time = config.time.clone().validate().map_err(|e| invalid(format!("time: {e}")))?;
    let n = time.n_agents();
    let spec = config.mdp.resolve(base)?;
    let envs = match &config.environments {
        None => Environments::Homogeneous(spec.clone()),
        Some(list) => {
            if config.method == MethodKind::RennalaNigt {
                return Err(invalid("environments: rennala-nigt needs a homogeneous environment; use malenia-nigt"));
            }
            if list.len() != n {
                return Err(invalid(format!("environments: {} entries for {n} agents", list.len())));
            }
            let specs = list.iter().map(|r| r.resolve(base)).collect::<Result<Vec<_>, _>>()?;
            if specs.iter().any(|s| s.n_states != spec.n_states || s.n_actions != spec.n_actions || s.gamma != spec.gamma) {
                return Err(invalid("environments: every environment must match mdp's states, actions and gamma"));
            }
            Environments::Heterogeneous(specs)
        }
    };
    let theta0 = match &config.theta0 {
        None => PolicyParams::zeros_for(&spec),
        Some(v) => PolicyParams::from_vec(spec.n_states, spec.n_actions, v.clone())
            .map_err(|e| invalid(format!("theta0: {e}")))?,
    };
    let delta = match config.delta {
        Some(d) => d,
        None => match &envs {
            Environments::Homogeneous(s) => exact_delta(s, &theta0)?,
            Environments::Heterogeneous(_) => {
                let (j0, _) = nigt::exact_metrics(&envs, &theta0)?;
                (nigt::reference_optimum(&envs) - j0).max(f64::MIN_POSITIVE)
            }
        },
    };
    let r_max = envs.specs().iter().map(|s| s.r_max).fold(0.0, f64::max);
    let reference = MdpSpec { r_max, ..spec.clone() };
    let base_constants = softmax_constants(&reference, 1, delta)?;
    let (constants, schedule, hyper) = match &config.schedule {
        ScheduleSource::Theory => {
            let (at, s) = theory_schedule(&base_constants, config.eps);
            (at, Some(s), Hyper::from(s))
        }
        ScheduleSource::Explicit(h) => {
            if h.m == 0 || h.m_init == 0 || h.horizon == 0 {
                return Err(invalid("schedule.explicit: m, m_init and horizon must be at least 1"));
            }
            if !(h.eta > 0.0 && h.eta <= 1.0) || !(h.alpha > 0.0 && h.alpha.is_finite()) {
                return Err(invalid("schedule.explicit: need 0 < eta <= 1 and alpha > 0"));
            }
            (base_constants.at_horizon(h.horizon), None, *h)
        }
    };
    if let Some(b) = hyper.sync_batch {
        if b == 0 || !b.is_multiple_of(n) {
            return Err(invalid(format!("schedule.sync_batch: {b} is not a positive multiple of {n} agents")));
        }
    }
    let iterations = match config.iterations {
        Some(t) => t,
        None => {
            let t = iteration_bound(&constants, config.eps, hyper.m, hyper.m_init).ceil();
            if t >= usize::MAX as f64 { usize::MAX } else { t as usize }
        }
    };
    let global = config
        .global
        .map(|g| GlobalParams::new(g.mu_f, g.eps_bias, SOFTMAX_M_G, spec.gamma))
        .transpose()?;
    Ok(Prepared { envs, time, theta0, delta, constants, schedule, hyper, iterations, global })
}

/// Seed of run `index` in a fan-out from `master`.
pub fn derived_seed(master: u64, index: usize) -> u64 {
    stream::mix(master, tag::SEED_FANOUT, &[index as u64])
}

pub fn method_config(config: &RunConfig, prepared: &Prepared, seed: u64) -> MethodConfig {
    MethodConfig {
        kind: config.method,
        envs: prepared.envs.clone(),
        time: prepared.time.clone(),
        hyper: prepared.hyper,
        iterations: prepared.iterations,
        seed,
        theta0: Some(prepared.theta0.clone()),
        stop: config.stop,
        trace: config.trace,
    }
}

/// Output root: `$ASYNCPG_OUTPUT_ROOT` or `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

pub fn output_dir(config: &RunConfig, root: &Path) -> PathBuf {
    let rel = config.output_dir.clone().unwrap_or_else(|| config.method.as_str().to_string());
    root.join(rel)
}

/// Writes through a temporary sibling and a rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), HarnessError> {
    let io_err = |source| HarnessError::Io { path: path.to_path_buf(), source };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_atomic(path, &text)
}

/// Linear-interpolation quantile of ascending data (`+∞` allowed).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || sorted[lo] == sorted[hi] {
        return sorted[lo];
    }
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 20% / 50% / 80% quantiles; `None` stands for +∞ (target never reached).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub q20: Option<f64>,
    pub median: Option<f64>,
    pub q80: Option<f64>,
}

impl Band {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let finite = |x: f64| x.is_finite().then_some(x);
        Band { q20: finite(quantile(&v, 0.2)), median: finite(quantile(&v, 0.5)), q80: finite(quantile(&v, 0.8)) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub method: MethodKind,
    pub seeds: Vec<u64>,
    pub runs: Vec<Summary>,
    pub time_to_target: Band,
    pub final_j: Band,
    pub best_grad_norm: Band,
    pub sampled_grad_norm: Band,
    pub total_time: Band,
}

impl ExperimentSummary {
    fn new(method: MethodKind, seeds: Vec<u64>, runs: Vec<Summary>) -> Self {
        let col = |f: &dyn Fn(&Summary) -> f64| Band::of(&runs.iter().map(f).collect::<Vec<_>>());
        Self {
            method,
            time_to_target: col(&|s| s.time_to_target.unwrap_or(f64::INFINITY)),
            final_j: col(&|s| s.final_j),
            best_grad_norm: col(&|s| s.best_grad_norm),
            sampled_grad_norm: col(&|s| s.sampled_grad_norm),
            total_time: col(&|s| s.total_time),
            seeds,
            runs,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutput {
    pub dir: PathBuf,
    pub csvs: Vec<PathBuf>,
    pub summary: PathBuf,
    pub records: Vec<RunRecord>,
}

/// Runs every seed of `config` (in parallel) and writes the directory layout above.
pub fn run_experiment(config: &RunConfig, base: &Path, dir: &Path) -> Result<ExperimentOutput, HarnessError> {
    let prepared = prepare(config, base)?;
    let seeds: Vec<u64> = (0..config.seeds).map(|i| derived_seed(config.seed, i)).collect();
    let records = seeds
        .par_iter()
        .map(|&s| nigt::run_method(&method_config(config, &prepared, s)))
        .collect::<Result<Vec<_>, _>>()?;
    write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({ "config": config, "resolved": prepared, "seeds": seeds }),
    )?;
    let mut csvs = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let csv = dir.join(format!("seed_{i}.csv"));
        write_atomic(&csv, &rec.to_csv())?;
        write_json(&dir.join(format!("seed_{i}.summary.json")), &rec.summary)?;
        if let Some(trace) = &rec.trace {
            write_atomic(&dir.join(format!("seed_{i}.trace.tsv")), trace)?;
        }
        csvs.push(csv);
    }
    let summary = ExperimentSummary::new(config.method, seeds, records.iter().map(|r| r.summary.clone()).collect());
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    Ok(ExperimentOutput { dir: dir.to_path_buf(), csvs, summary: summary_path, records })
}

/// Every predictor on a config's resolved constants and schedule; the
/// global kinds are `None` without `global` parameters.
pub fn predict_table(config: &RunConfig, base: &Path) -> Result<Vec<(PredictKind, Option<f64>)>, HarnessError> {
    let p = prepare(config, base)?;
    let s = p.schedule.unwrap_or(Schedule {
        eta: p.hyper.eta,
        alpha: p.hyper.alpha,
        horizon: p.hyper.horizon,
        m: p.hyper.m,
        m_init: p.hyper.m_init,
        eps: config.eps,
    });
    PredictKind::ALL
        .into_iter()
        .map(|k| match constants::predict_time(k, &p.constants, &s, &p.time, p.global.as_ref()) {
            Ok(v) => Ok((k, Some(v))),
            Err(ConstantsError::MissingGlobal(_)) => Ok((k, None)),
            Err(e) => Err(e.into()),
        })
        .collect()
}

/// Highest (mixture) value over deterministic policies, evaluated exactly.
pub fn best_deterministic_value(envs: &Environments) -> Result<f64, HarnessError> {
    let spec = envs.first();
    let (ns, na) = (spec.n_states, spec.n_actions);
    let count = (na as u64)
        .checked_pow(ns as u32)
        .filter(|&c| c <= 1 << 20)
        .ok_or_else(|| invalid("too many deterministic policies to enumerate"))?;
    let mut best = f64::NEG_INFINITY;
    let mut actions = vec![0usize; ns];
    for mut code in 0..count {
        for a in actions.iter_mut() {
            *a = (code % na as u64) as usize;
            code /= na as u64;
        }
        let mut total = 0.0;
        for spec in envs.specs() {
            total += deterministic_value(spec, &actions)?;
        }
        best = best.max(total / envs.specs().len() as f64);
    }
    Ok(best)
}

/// `J` of the policy playing `actions[s]` in state `s`, as a one-action MDP.
fn deterministic_value(spec: &MdpSpec, actions: &[usize]) -> Result<f64, HarnessError> {
    let ns = spec.n_states;
    let mut sub = spec.clone();
    sub.n_actions = 1;
    sub.transition = (0..ns).map(|s| vec![spec.transition[s][actions[s]].clone()]).collect();
    sub.reward = (0..ns).map(|s| vec![spec.reward[s][actions[s]]]).collect();
    let (j, _) = estimator::exact_j_and_grad_infinite(&sub, &PolicyParams::zeros(ns, 1)).map_err(NigtError::from)?;
    Ok(j)
}

/// Shared knobs of the scripted suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seeds: usize,
    pub master_seed: u64,
    pub etas: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `M` grid; `M_init = M`. Unused by greedy-nigt.
    pub batches: Vec<usize>,
    pub horizon: usize,
    /// Target `J ≥ J(θ_0) + f·(J_ref − J(θ_0))`.
    pub target_fraction: f64,
    /// Virtual-time cap of a single tuning run.
    pub max_virtual_time: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seeds: 5,
            master_seed: 0,
            etas: vec![0.001, 0.01, 0.1],
            alphas: (1..=10).rev().map(|e| 2f64.powi(-e)).collect(),
            batches: vec![20, 30, 50],
            horizon: 50,
            target_fraction: 0.9,
            max_virtual_time: 20_000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub eta: f64,
    pub alpha: f64,
    pub m: Option<usize>,
    pub median: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: MethodKind,
    pub eta: f64,
    pub alpha: f64,
    pub m: Option<usize>,
    /// Time-to-target per seed of the selected grid point (`None`: not reached).
    pub times: Vec<Option<f64>>,
    pub median: Option<f64>,
    pub grid: Vec<GridPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub name: String,
    pub time: TimeModel,
    pub methods: Vec<MethodResult>,
}

impl RegimeReport {
    pub fn median_of(&self, kind: MethodKind) -> f64 {
        self.methods.iter().find(|m| m.method == kind).and_then(|m| m.median).unwrap_or(f64::INFINITY)
    }
}

pub const SELECTION_RULE: &str = "per method and regime: the grid point with the lowest median time-to-target \
over seeds (unreached counts as +inf); ties go to the earlier point in grid order (M ascending, then eta ascending, then alpha ascending)";

fn median_opt(times: &[f64]) -> Option<f64> {
    Band::of(times).median
}

struct Regime<'a> {
    name: &'a str,
    envs: Environments,
    time: TimeModel,
}

/// Tunes each method on the grid, then reruns the winner to a common
/// virtual-time horizon and writes its CSVs under `dir/<method>/`.
fn run_regime(
    regime: &Regime,
    methods: &[MethodKind],
    target: f64,
    opts: &SuiteOptions,
    dir: &Path,
) -> Result<RegimeReport, HarnessError> {
    let seeds: Vec<u64> = (0..opts.seeds).map(|i| derived_seed(opts.master_seed, i)).collect();
    let base = |kind, eta, alpha, m: usize, seed, stop| MethodConfig {
        kind,
        envs: regime.envs.clone(),
        time: regime.time.clone(),
        hyper: Hyper { eta, alpha, horizon: opts.horizon, m, m_init: m, sync_batch: None },
        iterations: usize::MAX,
        seed,
        theta0: None,
        stop,
        trace: false,
    };
    let tuning_stop = StopRule {
        target: Some(Target::J(target)),
        stop_at_target: true,
        max_virtual_time: Some(opts.max_virtual_time),
    };
    let mut results = Vec::new();
    for &kind in methods {
        let batches: Vec<Option<usize>> = if kind == MethodKind::GreedyNigt {
            vec![None]
        } else {
            opts.batches.iter().copied().map(Some).collect()
        };
        let points: Vec<(f64, f64, Option<usize>)> = batches
            .iter()
            .flat_map(|&m| opts.etas.iter().flat_map(move |&e| opts.alphas.iter().map(move |&a| (e, a, m))))
            .collect();
        let jobs: Vec<(usize, u64)> = (0..points.len()).flat_map(|p| seeds.iter().map(move |&s| (p, s))).collect();
        let times = jobs
            .par_iter()
            .map(|&(p, seed)| {
                let (eta, alpha, m) = points[p];
                let rec = nigt::run_method(&base(kind, eta, alpha, m.unwrap_or(1), seed, tuning_stop))?;
                Ok(rec.summary.time_to_target.unwrap_or(f64::INFINITY))
            })
            .collect::<Result<Vec<f64>, NigtError>>()?;
        let grid: Vec<GridPoint> = points
            .iter()
            .enumerate()
            .map(|(p, &(eta, alpha, m))| GridPoint {
                eta,
                alpha,
                m,
                median: median_opt(&times[p * seeds.len()..(p + 1) * seeds.len()]),
            })
            .collect();
        let best = (0..points.len())
            .min_by(|&a, &b| {
                let key = |i: usize| grid[i].median.unwrap_or(f64::INFINITY);
                key(a).total_cmp(&key(b)).then(a.cmp(&b))
            })
            .expect("non-empty grid");
        let chosen = &times[best * seeds.len()..(best + 1) * seeds.len()];
        results.push(MethodResult {
            method: kind,
            eta: points[best].0,
            alpha: points[best].1,
            m: points[best].2,
            times: chosen.iter().map(|&t| t.is_finite().then_some(t)).collect(),
            median: grid[best].median,
            grid,
        });
    }
    // curves of every method run to the same virtual time
    let slowest = results.iter().filter_map(|r| r.median).fold(0.0, f64::max);
    let horizon_time = if slowest > 0.0 { (1.5 * slowest).min(opts.max_virtual_time) } else { opts.max_virtual_time };
    let curve_stop = StopRule { target: Some(Target::J(target)), stop_at_target: false, max_virtual_time: Some(horizon_time) };
    for r in &results {
        let records = seeds
            .par_iter()
            .map(|&s| nigt::run_method(&base(r.method, r.eta, r.alpha, r.m.unwrap_or(1), s, curve_stop)))
            .collect::<Result<Vec<_>, _>>()?;
        let mdir = dir.join(r.method.as_str());
        for (i, rec) in records.iter().enumerate() {
            write_atomic(&mdir.join(format!("seed_{i}.csv")), &rec.to_csv())?;
            write_json(&mdir.join(format!("seed_{i}.summary.json")), &rec.summary)?;
        }
        let summary = ExperimentSummary::new(r.method, seeds.clone(), records.iter().map(|x| x.summary.clone()).collect());
        write_json(&mdir.join("summary.json"), &serde_json::json!({ "selected": r, "curves": summary }))?;
    }
    Ok(RegimeReport { name: regime.name.to_string(), time: regime.time.clone(), methods: results })
}

pub const FIGURE1_METHODS: [MethodKind; 3] = [MethodKind::RennalaNigt, MethodKind::SyncNigt, MethodKind::GreedyNigt];
pub const FIGURE1_REGIMES: [&str; 3] = ["a-equal", "b-heterogeneous", "c-communication"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure1Report {
    pub n_agents: usize,
    pub target_j: f64,
    pub j0: f64,
    pub j_star: f64,
    pub selection_rule: String,
    pub options: SuiteOptions,
    pub regimes: Vec<RegimeReport>,
    /// Twice rennala-nigt's regime-(b) median.
    pub budget_c: f64,
    pub regime_a_within_1_5x: bool,
    pub regime_b_rennala_fastest: bool,
    pub regime_c_rennala_only_within_budget: bool,
}

/// Time models of the three regimes with `n` agents and policy dimension `d`.
/// Per-gradient times `h_i` become step times `ḣ_i = h_i / H`.
pub fn figure1_time_models(n: usize, d: usize, horizon: usize) -> [TimeModel; 3] {
    let root = |i: usize| (i as f64).sqrt();
    let steps = |h: Vec<f64>| h.into_iter().map(|x| x / horizon as f64).collect::<Vec<_>>();
    let scale = (d as f64).powf(0.25);
    [
        TimeModel::per_agent_kappa(steps(vec![1.0; n]), vec![0.0; n]),
        TimeModel::per_agent_kappa(steps((1..=n).map(root).collect()), (1..=n).map(root).collect()),
        TimeModel::per_agent_kappa(steps((1..=n).map(root).collect()), (1..=n).map(|i| root(i) * scale).collect()),
    ]
}

/// Equal / heterogeneous / communication-heavy regimes on the benchmark MDP.
pub fn suite_figure1(out: &Path, opts: &SuiteOptions) -> Result<Figure1Report, HarnessError> {
    let n = 10;
    let spec = MdpSpec::benchmark();
    let envs = Environments::Homogeneous(spec.clone());
    let (j0, _) = nigt::exact_metrics(&envs, &PolicyParams::zeros_for(&spec))?;
    let j_star = estimator::optimal_return(&spec);
    let target = j0 + opts.target_fraction * (j_star - j0);
    let dir = out.join("figure1");
    let models = figure1_time_models(n, spec.dim(), opts.horizon);
    let mut regimes = Vec::new();
    for (name, time) in FIGURE1_REGIMES.iter().zip(models) {
        let regime = Regime { name, envs: envs.clone(), time };
        regimes.push(run_regime(&regime, &FIGURE1_METHODS, target, opts, &dir.join(name))?);
    }
    let medians = |r: &RegimeReport| FIGURE1_METHODS.map(|k| r.median_of(k));
    let [ra, sa, ga] = medians(&regimes[0]);
    let [rb, sb, gb] = medians(&regimes[1]);
    let [rc, sc, gc] = medians(&regimes[2]);
    let (lo, hi) = (ra.min(sa).min(ga), ra.max(sa).max(ga));
    let budget_c = 2.0 * rb;
    let report = Figure1Report {
        n_agents: n,
        target_j: target,
        j0,
        j_star,
        selection_rule: SELECTION_RULE.into(),
        options: opts.clone(),
        budget_c,
        regime_a_within_1_5x: hi.is_finite() && hi <= 1.5 * lo,
        regime_b_rennala_fastest: rb.is_finite() && rb < sb && rb < gb,
        regime_c_rennala_only_within_budget: rc < sc && rc < gc && rc <= budget_c && sc > budget_c && gc > budget_c,
        regimes,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneousReport {
    pub target_j: f64,
    pub j0: f64,
    /// Best deterministic mixture value (the target reference).
    pub j_reference: f64,
    pub selection_rule: String,
    pub regime: RegimeReport,
}

/// Two agents with `h = (1, 10)`, `κ = 0`; the second sees reversed state labels.
pub fn suite_heterogeneous(out: &Path, opts: &SuiteOptions) -> Result<HeterogeneousReport, HarnessError> {
    let spec = MdpSpec::benchmark();
    let envs = Environments::Heterogeneous(vec![spec.clone(), spec.with_reversed_states()]);
    let (j0, _) = nigt::exact_metrics(&envs, &PolicyParams::zeros_for(&spec))?;
    let j_reference = best_deterministic_value(&envs)?;
    let target = j0 + opts.target_fraction * (j_reference - j0);
    let h = opts.horizon as f64;
    let time = TimeModel::fixed(vec![1.0 / h, 10.0 / h], 0.0);
    let dir = out.join("heterogeneous");
    let regime = Regime { name: "two-environments", envs, time };
    let methods = [MethodKind::MaleniaNigt, MethodKind::SyncNigt, MethodKind::GreedyNigt];
    let report = HeterogeneousReport {
        target_j: target,
        j0,
        j_reference,
        selection_rule: SELECTION_RULE.into(),
        regime: run_regime(&regime, &methods, target, opts, &dir)?,
    };
    write_json(&dir.join("summary.json"), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub label: String,
    pub n_agents: usize,
    pub method: MethodKind,
    /// Round-time bound `min_m (Σ_{i≤m} 1/h_i)^{-1}(M+m)` (rennala) or `h_n·⌈M/n⌉` (sync).
    pub round_bound: f64,
    pub mean_round_time: f64,
    pub median_time_to_target: Option<f64>,
    pub predicted_total: f64,
}

/// Rennala vs sync as agents with `h_i = √i` are added, plus one straggler case.
pub fn suite_scaling(out: &Path, opts: &SuiteOptions) -> Result<Vec<ScalingRow>, HarnessError> {
    let spec = MdpSpec::benchmark();
    let envs = Environments::Homogeneous(spec.clone());
    let theta0 = PolicyParams::zeros_for(&spec);
    let (j0, _) = nigt::exact_metrics(&envs, &theta0)?;
    let target = j0 + opts.target_fraction * (estimator::optimal_return(&spec) - j0);
    let m = opts.batches[0];
    let alpha = opts.alphas.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let eta = opts.etas.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let hz = opts.horizon;
    let c = softmax_constants(&spec, hz, exact_delta(&spec, &theta0)?)?;
    let schedule = Schedule { eta, alpha, horizon: hz, m, m_init: m, eps: 0.1 };
    let mut cases: Vec<(String, Vec<f64>)> =
        [1usize, 2, 4, 8, 16].iter().map(|&n| (format!("n={n}"), (1..=n).map(|i| (i as f64).sqrt()).collect())).collect();
    let mut straggler: Vec<f64> = (1..=8).map(|i| (i as f64).sqrt()).collect();
    straggler.push(1e6);
    cases.push(("n=8+straggler".into(), straggler));
    let seeds: Vec<u64> = (0..opts.seeds).map(|i| derived_seed(opts.master_seed, i)).collect();
    let mut rows = Vec::new();
    for (label, h) in cases {
        let n = h.len();
        let time = TimeModel::fixed(h.iter().map(|x| x / hz as f64).collect(), 0.0);
        for kind in [MethodKind::RennalaNigt, MethodKind::SyncNigt] {
            let cfg = |seed| MethodConfig {
                kind,
                envs: envs.clone(),
                time: time.clone(),
                hyper: Hyper { eta, alpha, horizon: hz, m, m_init: m, sync_batch: None },
                iterations: 200,
                seed,
                theta0: None,
                stop: StopRule { target: Some(Target::J(target)), stop_at_target: true, max_virtual_time: Some(1e9) },
                trace: false,
            };
            let records = seeds.par_iter().map(|&s| nigt::run_method(&cfg(s))).collect::<Result<Vec<_>, _>>()?;
            let (mut time_sum, mut rounds) = (0.0, 0usize);
            for r in &records {
                // rows 2.. are M-sample rounds (row 1 is the M_init round)
                for w in r.rows.windows(2).skip(1) {
                    time_sum += w[1].virtual_time - w[0].virtual_time;
                    rounds += 1;
                }
            }
            let times: Vec<f64> = records.iter().map(|r| r.summary.time_to_target.unwrap_or(f64::INFINITY)).collect();
            let round_bound = match kind {
                MethodKind::RennalaNigt => constants::rennala_min_term(&h, m),
                _ => h.iter().copied().fold(0.0, f64::max) * m.div_ceil(n) as f64,
            };
            let predicted_total = constants::predict_time(PredictKind::RennalaTotal, &c, &schedule, &time, None)?;
            rows.push(ScalingRow {
                label: label.clone(),
                n_agents: n,
                method: kind,
                round_bound,
                mean_round_time: if rounds > 0 { time_sum / rounds as f64 } else { 0.0 },
                median_time_to_target: median_opt(&times),
                predicted_total,
            });
        }
    }
    let dir = out.join("scaling");
    let mut csv = String::from("label,n_agents,method,round_bound,mean_round_time,median_time_to_target,predicted_total\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.n_agents,
            r.method.as_str(),
            r.round_bound,
            r.mean_round_time,
            r.median_time_to_target.map_or("inf".to_string(), |t| t.to_string()),
            r.predicted_total
        ));
    }
    write_atomic(&dir.join("scaling.csv"), &csv)?;
    write_json(&dir.join("summary.json"), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(r#"{"method": "rennala-nigt", "mdp": "benchmark", "eps": 0.5}"#).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.seeds, 1);
        assert_eq!(c.schedule, ScheduleSource::Theory);
        assert_eq!(c.time.kappa, 0.0);
        assert_eq!(c.time.n_agents(), 1);
    }

    #[test]
    fn strict_keys_and_required_fields() {
        let err = parse_config(r#"{"method": "rennala-nigt", "mdp": "benchmark", "eps": 0.5, "sede": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
        let err = parse_config(r#"{"method": "rennala-nigt", "mdp": "benchmark"}"#).unwrap_err();
        assert!(err.to_string().contains("eps"), "{err}");
    }

    #[test]
    fn rennala_with_environments_is_rejected() {
        let text = r#"{"method": "rennala-nigt", "mdp": "benchmark", "eps": 0.5,
            "environments": ["benchmark", "benchmark"],
            "time": {"comp": {"static": [1.0, 1.0]}}}"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("rennala"), "{err}");
    }

    #[test]
    fn kappa_list_length_is_named() {
        let text = r#"{"method": "sync-nigt", "mdp": "benchmark", "eps": 0.5,
            "time": {"comp": {"static": [1.0, 1.0]}, "kappa_per_agent": [1.0]}}"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("kappa_per_agent"), "{err}");
    }

    #[test]
    fn config_round_trip() {
        let text = r#"{"method": "malenia-nigt", "mdp": "benchmark", "eps": 0.5, "seeds": 3,
            "schedule": {"explicit": {"eta": 0.1, "alpha": 0.25, "horizon": 10, "m": 4, "m_init": 4}},
            "stop": {"target": {"j": 3.0}, "stop_at_target": true}}"#;
        let c = parse_config(text).unwrap();
        assert_eq!(parse_config(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((quantile(&v, 0.2) - 1.8).abs() < 1e-12);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert!((quantile(&v, 0.8) - 4.2).abs() < 1e-12);
        let b = Band::of(&[1.0, f64::INFINITY, 2.0, f64::INFINITY, f64::INFINITY]);
        assert_eq!(b.median, None);
        assert!(b.q20.is_some());
    }

    #[test]
    fn deterministic_optimum_matches_value_iteration() {
        let spec = MdpSpec::benchmark();
        let best = best_deterministic_value(&Environments::Homogeneous(spec.clone())).unwrap();
        assert!((best - estimator::optimal_return(&spec)).abs() < 1e-8);
    }

    #[test]
    fn figure1_models() {
        let [a, b, c] = figure1_time_models(10, 4, 50);
        assert_eq!(a.kappa_max(), 0.0);
        assert!((b.kappa_max() - 10f64.sqrt()).abs() < 1e-12);
        assert!((c.kappa_max() - 20f64.sqrt()).abs() < 1e-12);
        assert!((b.step_time(0, 3).unwrap() * 50.0 - 2.0).abs() < 1e-12);
    }
}
