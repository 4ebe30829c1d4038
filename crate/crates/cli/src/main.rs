use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use asyncpg::constants::{exact_delta, softmax_constants};
use asyncpg::estimator;
use asyncpg::harness::{self, SuiteOptions};
use asyncpg::{MdpSpec, PolicyParams};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asyncpg", version, about = "Asynchronous distributed policy gradient on a virtual clock")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config; writes CSVs and summaries.
    Run {
        config: PathBuf,
        /// Output directory; defaults to <root>/<output_dir or method>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scripted comparison suite.
    Suite {
        #[arg(value_enum)]
        name: SuiteName,
        /// Output root; defaults to $ASYNCPG_OUTPUT_ROOT or ./runs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print every time-complexity predictor for a config.
    Predict { config: PathBuf },
    /// Print exact J, gradients and smoothness constants at a parameter.
    Oracle {
        /// `benchmark` or a path to an MDP JSON file.
        mdp: String,
        /// Comma-separated parameters, `s * n_actions + a` order; `0` means all zeros.
        theta: String,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteName {
    Figure1,
    Heterogeneous,
    Scaling,
}

fn load_mdp(arg: &str) -> Result<MdpSpec> {
    if arg == "benchmark" {
        return Ok(MdpSpec::benchmark());
    }
    let text = fs::read_to_string(arg).with_context(|| format!("reading {arg}"))?;
    Ok(MdpSpec::from_json(&text)?)
}

fn parse_theta(spec: &MdpSpec, arg: &str) -> Result<PolicyParams> {
    let trimmed = arg.trim().trim_start_matches('[').trim_end_matches(']');
    if trimmed == "0" {
        return Ok(PolicyParams::zeros_for(spec));
    }
    let values = trimmed
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad theta entry {v:?}")))
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyParams::from_vec(spec.n_states, spec.n_actions, values)?)
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.10}")).collect();
    format!("[{}]", items.join(", "))
}

fn run(config: &Path, out: Option<PathBuf>) -> Result<()> {
    let (cfg, base) = harness::load_config(config)?;
    let dir = out.unwrap_or_else(|| harness::output_dir(&cfg, &harness::output_root()));
    let result = harness::run_experiment(&cfg, &base, &dir)?;
    for rec in &result.records {
        let s = &rec.summary;
        println!(
            "{}\titerations {}\ttime {:.4}\tJ {:.6}\t|grad J| {:.6}\tstop {:?}",
            s.method.as_str(),
            s.iterations,
            s.total_time,
            s.final_j,
            s.final_grad_norm,
            s.stop_reason
        );
    }
    println!("wrote {}", result.dir.display());
    Ok(())
}

fn suite(name: SuiteName, out: Option<PathBuf>, seeds: usize, seed: u64) -> Result<()> {
    if seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let root = out.unwrap_or_else(harness::output_root);
    let opts = SuiteOptions { seeds, master_seed: seed, ..SuiteOptions::default() };
    let show = |r: &harness::RegimeReport| {
        for m in &r.methods {
            let median = m.median.map_or("not reached".to_string(), |t| format!("{t:.3}"));
            println!(
                "{}\t{}\teta {}\talpha {}\tM {:?}\tmedian time-to-target {median}",
                r.name,
                m.method.as_str(),
                m.eta,
                m.alpha,
                m.m
            );
        }
    };
    match name {
        SuiteName::Figure1 => {
            let report = harness::suite_figure1(&root, &opts)?;
            report.regimes.iter().for_each(show);
            println!(
                "equal times within 1.5x: {}\nrennala fastest (heterogeneous): {}\nrennala only within budget {:.3} (communication): {}",
                report.regime_a_within_1_5x,
                report.regime_b_rennala_fastest,
                report.budget_c,
                report.regime_c_rennala_only_within_budget
            );
        }
        SuiteName::Heterogeneous => {
            let report = harness::suite_heterogeneous(&root, &opts)?;
            show(&report.regime);
        }
        SuiteName::Scaling => {
            for r in harness::suite_scaling(&root, &opts)? {
                println!(
                    "{}\t{}\tround bound {:.3}\tmean round {:.3}",
                    r.label,
                    r.method.as_str(),
                    r.round_bound,
                    r.mean_round_time
                );
            }
        }
    }
    println!("wrote {}", root.display());
    Ok(())
}

fn predict(config: &Path) -> Result<()> {
    let (cfg, base) = harness::load_config(config)?;
    for (kind, value) in harness::predict_table(&cfg, &base)? {
        match value {
            Some(v) => println!("{}\t{v:.6e}", kind.as_str()),
            None => println!("{}\tn/a (needs \"global\")", kind.as_str()),
        }
    }
    Ok(())
}

fn oracle(mdp: &str, theta: &str, horizon: usize) -> Result<()> {
    let spec = load_mdp(mdp)?;
    let theta = parse_theta(&spec, theta)?;
    let report = estimator::exact_j_and_grad(&spec, &theta, horizon)?;
    let grad_norm = report.grad_j.iter().map(|x| x * x).sum::<f64>().sqrt();
    let delta = exact_delta(&spec, &theta)?;
    let c = softmax_constants(&spec, horizon, delta)?;
    println!("J\t{:.10}", report.j);
    println!("grad_J\t{}", fmt_vec(&report.grad_j));
    println!("grad_norm\t{grad_norm:.10}");
    println!("J_star\t{:.10}", report.j_star);
    println!("J_H\t{:.10}", report.j_h);
    println!("grad_J_H\t{}", fmt_vec(&report.grad_jh));
    println!("truncation_bias\t{:.10e}", report.bias_norm);
    println!("H\t{horizon}");
    println!("L_g\t{:.6}\nL_h\t{:.6}\nsigma2\t{:.6}\nD_g\t{:.6}\nD_h\t{:.6}\ndelta\t{:.10}", c.l_g, c.l_h, c.sigma2, c.d_g, c.d_h, c.delta);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out } => run(&config, out),
        Command::Suite { name, out, seeds, seed } => suite(name, out, seeds, seed),
        Command::Predict { config } => predict(&config),
        Command::Oracle { mdp, theta, horizon } => oracle(&mdp, &theta, horizon),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
