use std::ops::ControlFlow;

use asyncpg::aggregate::{aggregate_malenia, aggregate_rennala, malenia_should_exit};
use asyncpg::constants::{
    harmonic_min, make_schedule, malenia_round_bound, predict_time, rennala_round_bound, softmax_constants, PredictKind,
    Schedule,
};
use asyncpg::estimator;
use asyncpg::harness::{parse_config, MdpRef, RunConfig, ScheduleSource};
use asyncpg::mdp::{grad_log_pi, hessian_log_pi, policy_probs, sample_trajectory};
use asyncpg::nigt::{self, Hyper, StopRule, Target};
use asyncpg::simtime::{EventKind, EventLoop, SimEvent};
use asyncpg::{AggregationContext, Environments, MdpSpec, MethodConfig, MethodKind, PolicyParams, TimeModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_mdp(seed: u64, n_states: usize, n_actions: usize, gamma: f64) -> MdpSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut simplex = |k: usize| {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let transition = (0..n_states).map(|_| (0..n_actions).map(|_| simplex(n_states)).collect()).collect();
    let rho = simplex(n_states);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let reward = (0..n_states).map(|_| (0..n_actions).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect();
    MdpSpec { n_states, n_actions, transition, reward, rho, gamma, r_max: 1.0 }.validate().unwrap()
}

fn theta_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, dim)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn softmax_score_and_hessian_bounds_over_gaussian_draws() {
    let normal = Normal::new(0.0, 3.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..10_000 {
        let theta = PolicyParams::from_vec(2, 3, (0..6).map(|_| normal.sample(&mut rng)).collect()).unwrap();
        for s in 0..2 {
            for a in 0..3 {
                assert!(norm(&grad_log_pi(&theta, s, a).unwrap()) <= std::f64::consts::SQRT_2 + 1e-9);
                let h = hessian_log_pi(&theta, s, a).unwrap();
                let spectral = h.symmetric_eigenvalues().iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(spectral <= 1.0 + 1e-9, "{spectral}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_matches_finite_differences(theta in theta_strategy(6), s in 0usize..2, a in 0usize..3) {
        let theta = PolicyParams::from_vec(2, 3, theta).unwrap();
        let score = grad_log_pi(&theta, s, a).unwrap();
        let step = 1e-5;
        let mut fd = [0.0; 6];
        for (i, out) in fd.iter_mut().enumerate() {
            let mut p = theta.clone();
            let mut m = theta.clone();
            p.theta[i] += step;
            m.theta[i] -= step;
            *out = (policy_probs(&p, s).unwrap()[a].ln() - policy_probs(&m, s).unwrap()[a].ln()) / (2.0 * step);
        }
        let err = norm(&fd.iter().zip(&score).map(|(x, y)| x - y).collect::<Vec<_>>());
        prop_assert!(err <= 1e-6 * norm(&score).max(1e-12), "err {err}");
    }

    #[test]
    fn score_has_zero_mean(theta in theta_strategy(6), s in 0usize..2) {
        let theta = PolicyParams::from_vec(2, 3, theta).unwrap();
        let pi = policy_probs(&theta, s).unwrap();
        let mut total = vec![0.0; 6];
        for (a, p) in pi.iter().enumerate() {
            for (t, g) in total.iter_mut().zip(grad_log_pi(&theta, s, a).unwrap()) {
                *t += p * g;
            }
        }
        prop_assert!(total.iter().all(|x| x.abs() <= 1e-10));
    }

    #[test]
    fn trajectory_rewards_come_from_the_table(seed in any::<u64>(), theta in theta_strategy(4), h in 1usize..20) {
        let spec = random_mdp(seed, 2, 2, 0.9);
        let theta = PolicyParams::from_vec(2, 2, theta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_trajectory(&spec, &theta, h, &mut rng).unwrap();
        prop_assert_eq!(t.states.len(), h);
        prop_assert_eq!(t.actions.len(), h);
        for k in 0..h {
            prop_assert_eq!(t.rewards[k], spec.reward[t.states[k]][t.actions[k]]);
        }
    }

    #[test]
    fn gradient_oracles_agree(seed in any::<u64>(), ns in 1usize..=3, theta in theta_strategy(6), h in 1usize..=4) {
        let spec = random_mdp(seed, ns, 2, 0.8);
        let theta = PolicyParams::from_vec(ns, 2, theta[..2 * ns].to_vec()).unwrap();
        let a = estimator::exact_grad_jh_bruteforce(&spec, &theta, h).unwrap();
        let (jh, b) = estimator::recursive_jh(&spec, &theta, h).unwrap();
        let (je, _) = estimator::enumerate_jh(&spec, &theta, h).unwrap();
        prop_assert!((jh - je).abs() <= 1e-10);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn truncation_bias_is_bounded(seed in any::<u64>(), theta in theta_strategy(6), gamma in 0.3f64..0.95) {
        let spec = random_mdp(seed, 3, 2, gamma);
        let theta = PolicyParams::from_vec(3, 2, theta).unwrap();
        let (_, grad) = estimator::exact_j_and_grad_infinite(&spec, &theta).unwrap();
        for h in [1usize, 2, 5, 10, 30] {
            let (_, gh) = estimator::recursive_jh(&spec, &theta, h).unwrap();
            let gap = norm(&gh.iter().zip(&grad).map(|(a, b)| a - b).collect::<Vec<_>>());
            let bound = softmax_constants(&spec, h, 1.0).unwrap().d_g * gamma.powi(h as i32);
            prop_assert!(gap <= bound, "H={h}: {gap} > {bound}");
        }
    }

    #[test]
    fn schedule_follows_its_formulas(
        gamma in 0.5f64..0.99, eps in 0.01f64..2.0, m in 1usize..10_000, delta in 0.1f64..10.0, h in 1usize..200,
    ) {
        let spec = MdpSpec { gamma, ..MdpSpec::benchmark() };
        let c = softmax_constants(&spec, h, delta).unwrap();
        let s = make_schedule(&c, eps, m, m);
        let eta = (m as f64 * eps * eps / (64.0 * c.sigma2)).min(0.5);
        prop_assert_eq!(s.eta, eta);
        prop_assert_eq!(s.alpha, (eps / (8.0 * c.l_g)).min(eta * eps.sqrt() / (4.0 * c.l_h.sqrt())));
        let lhs = eps * eta / (64.0 * c.d_g.max(s.alpha * c.d_h));
        // γ^H ≤ lhs < γ^{H−1}, unless clamped at 1
        prop_assert!(gamma.powi(s.horizon as i32) <= lhs * (1.0 + 1e-12));
        if s.horizon > 1 {
            prop_assert!(gamma.powi(s.horizon as i32 - 1) > lhs * (1.0 - 1e-12));
        }
    }

    #[test]
    fn events_pop_in_total_order(items in prop::collection::vec((0u32..20, 0usize..4), 1..60)) {
        let mut q = EventLoop::with_trace();
        for &(t, agent) in &items {
            q.schedule(t as f64 * 0.5, agent, EventKind::GradientComplete).unwrap();
        }
        let mut last = f64::NEG_INFINITY;
        q.run(|e, _| {
            assert!(e.time >= last);
            last = e.time;
            Ok(ControlFlow::Continue(()))
        }, |_| false).unwrap();
        let popped: Vec<SimEvent> = q.trace().unwrap().to_vec();
        prop_assert_eq!(popped.len(), items.len());
        prop_assert!(popped.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(q.schedule(last - 1.0, 0, EventKind::Delivered).is_err());
    }

    #[test]
    fn rennala_returns_exactly_m_and_respects_its_bound(
        steps in prop::collection::vec(0.1f64..10.0, 1..=8), m in 1usize..=50, kappa in 0.0f64..5.0,
        horizon in 1usize..4, jitter in prop_oneof![Just(0.0), 0.0f64..0.9], seed in any::<u64>(),
    ) {
        let tm = TimeModel { jitter, ..TimeModel::fixed(steps.clone(), kappa) };
        let mut ctx = AggregationContext::new(Environments::Homogeneous(MdpSpec::benchmark()), tm, seed).unwrap().with_trace();
        let theta = PolicyParams::zeros(2, 2);
        let h: Vec<f64> = steps.iter().map(|s| s * horizon as f64).collect();
        for _ in 0..3 {
            let r = aggregate_rennala(&mut ctx, &theta, m, horizon).unwrap();
            prop_assert_eq!(r.total_samples, m);
            prop_assert_eq!(r.samples_per_agent.iter().sum::<usize>(), m);
            prop_assert!(r.gradient.iter().all(|x| x.is_finite()));
            prop_assert!(r.elapsed <= rennala_round_bound(&h, m, kappa));
        }
        let completions = ctx.trace().unwrap().iter().filter(|e| e.kind == EventKind::GradientComplete).count();
        prop_assert_eq!(completions, 3 * m);
    }

    #[test]
    fn malenia_exit_state_and_bound(
        steps in prop::collection::vec(0.1f64..10.0, 1..=8), m in 1usize..=50, kappa in 0.0f64..5.0,
        horizon in 1usize..4, seed in any::<u64>(),
    ) {
        let n = steps.len();
        let spec = MdpSpec::benchmark();
        let envs = Environments::Heterogeneous((0..n).map(|i| if i % 2 == 0 { spec.clone() } else { spec.with_reversed_states() }).collect());
        let mut ctx = AggregationContext::new(envs, TimeModel::fixed(steps.clone(), kappa), seed).unwrap().with_trace();
        let r = aggregate_malenia(&mut ctx, &PolicyParams::zeros(2, 2), m, horizon).unwrap();
        let h: Vec<f64> = steps.iter().map(|s| s * horizon as f64).collect();
        prop_assert!(r.samples_per_agent.iter().all(|&c| c >= 1));
        prop_assert!(malenia_should_exit(&r.samples_per_agent, m));
        prop_assert!(r.elapsed <= malenia_round_bound(&h, m, kappa));
        let completions = ctx.trace().unwrap().iter().filter(|e| e.kind == EventKind::GradientComplete).count();
        prop_assert_eq!(completions, r.total_samples);
    }

    #[test]
    fn appending_a_slower_agent_never_raises_the_compute_prediction(
        mut h in prop::collection::vec(0.1f64..10.0, 1..8), extra in 0.0f64..100.0,
    ) {
        h.sort_by(f64::total_cmp);
        let (c, s) = predictor_inputs();
        let before = predict_time(PredictKind::RennalaCompute, &c, &s, &TimeModel::fixed(h.clone(), 0.0), None).unwrap();
        let mut more = h.clone();
        more.push(h.last().unwrap() + extra);
        let after = predict_time(PredictKind::RennalaCompute, &c, &s, &TimeModel::fixed(more, 0.0), None).unwrap();
        prop_assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn a_straggler_costs_at_most_the_prediction_without_it(mut h in prop::collection::vec(0.1f64..10.0, 2..8)) {
        h.sort_by(f64::total_cmp);
        let (c, s) = predictor_inputs();
        let p = |v: &[f64]| predict_time(PredictKind::RennalaCompute, &c, &s, &TimeModel::fixed(v.to_vec(), 0.0), None).unwrap();
        let mut slow = h.clone();
        *slow.last_mut().unwrap() *= 1e6;
        let change = (p(&slow) - p(&h)).abs();
        prop_assert!(change <= p(&h[..h.len() - 1]) * (1.0 + 1e-12));
    }

    #[test]
    fn m_scan_equals_brute_force(h in prop::collection::vec(0.1f64..10.0, 1..10), m in 1usize..200) {
        let mut sorted = h.clone();
        sorted.sort_by(f64::total_cmp);
        let (value, _) = harmonic_min(&sorted, |k| m as f64 / k + 1.0).unwrap();
        let brute = (1..=sorted.len())
            .map(|k| (m as f64 + k as f64) / sorted[..k].iter().map(|x| 1.0 / x).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        prop_assert!((value - brute).abs() <= 1e-9 * brute);
    }

    #[test]
    fn lower_bound_never_exceeds_rennala_total(
        h in prop::collection::vec(0.01f64..10.0, 1..10), kappa in 0.0f64..10.0, eps in 0.05f64..1.0,
    ) {
        let spec = MdpSpec::benchmark();
        let c = softmax_constants(&spec, 20, 2.0).unwrap();
        let (m, m_init) = asyncpg::constants::choose_batches(&c, eps);
        let s = make_schedule(&c, eps, m, m_init);
        let c = c.at_horizon(s.horizon);
        let tm = TimeModel::fixed(h, kappa);
        let lb = predict_time(PredictKind::LowerBound, &c, &s, &tm, None).unwrap();
        let total = predict_time(PredictKind::RennalaTotal, &c, &s, &tm, None).unwrap();
        prop_assert!(lb <= total, "{lb} > {total}");
    }

    #[test]
    fn config_round_trip(
        kind in prop::sample::select(MethodKind::ALL.to_vec()), eps in 0.01f64..1.0, seed in any::<u64>(),
        seeds in 1usize..6, steps in prop::collection::vec(0.1f64..5.0, 1..4), kappa in 0.0f64..3.0,
        explicit in any::<bool>(), target in prop::option::of(0.0f64..5.0),
    ) {
        let config = RunConfig {
            method: kind,
            mdp: MdpRef::Named("benchmark".into()),
            environments: None,
            time: TimeModel::fixed(steps, kappa),
            schedule: if explicit {
                ScheduleSource::Explicit(Hyper { eta: 0.5, alpha: 0.01, horizon: 5, m: 3, m_init: 4, sync_batch: None })
            } else {
                ScheduleSource::Theory
            },
            eps,
            iterations: Some(10),
            seed,
            seeds,
            delta: Some(1.0),
            theta0: None,
            stop: StopRule { target: target.map(Target::J), stop_at_target: target.is_some(), max_virtual_time: None },
            global: None,
            output_dir: Some("out".into()),
            trace: false,
        };
        let parsed = parse_config(&config.to_json()).unwrap();
        prop_assert_eq!(&parsed, &config);
        prop_assert_eq!(parse_config(&parsed.to_json()).unwrap(), parsed);
    }
}

fn predictor_inputs() -> (asyncpg::SmoothnessConstants, Schedule) {
    let c = softmax_constants(&MdpSpec::benchmark(), 10, 1.0).unwrap();
    let s = make_schedule(&c, 0.5, 100, 200);
    (c, s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_step_has_length_alpha_or_zero(
        kind in prop::sample::select(vec![MethodKind::RennalaNigt, MethodKind::MaleniaNigt, MethodKind::SyncNigt, MethodKind::GreedyNigt]),
        alpha in 0.001f64..1.0, eta in 0.05f64..1.0, seed in any::<u64>(),
    ) {
        let rec = nigt::run_method(&MethodConfig {
            kind,
            envs: Environments::Homogeneous(MdpSpec::benchmark()),
            time: TimeModel::fixed(vec![1.0, 1.7], 0.3),
            hyper: Hyper { eta, alpha, horizon: 4, m: 3, m_init: 3, sync_batch: None },
            iterations: 15,
            seed,
            theta0: None,
            stop: StopRule::default(),
            trace: false,
        })
        .unwrap();
        for w in rec.thetas.windows(2) {
            let step = norm(&w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>());
            prop_assert!(step == 0.0 || (step - alpha).abs() <= 1e-12 * alpha.max(1.0), "{step} vs {alpha}");
        }
        prop_assert!(rec.rows.windows(2).all(|w| w[1].virtual_time >= w[0].virtual_time && w[1].samples_cum >= w[0].samples_cum));
    }
}
