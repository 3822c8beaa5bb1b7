use herding::control::{
    budget_bound_check, episode_fusion_cost, eval_fusion_cost, eval_socialistic_cost, incentive_chi, incentive_traces,
    mode_cost, run_incentivized_episode, sigmoid_continue_prob, spsa_optimize, submartingale_check,
    value_iteration_diagnostic, Decision, IncentiveGate, IncentivePolicy, IncentiveProblem, SpsaConfig,
    StoppingProblem, ThresholdPolicy,
};
use herding::order::{check_structural_assumptions, is_tp2};
use herding::random::{derive_seed, rng_from_seed};
use herding::social::{EpisodeTrace, Mode, StepRecord};
use herding::{Belief, CostSpec, Error, IncentiveCostParams, ObservationModel};
use rand::Rng;

#[test]
fn sigmoid_approaches_the_hard_threshold() {
    let eps = 1e-3;
    for theta in [0.2, 0.5, 0.77] {
        let worst = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .filter(|p| (p - theta).abs() > 6.0 * eps)
            .map(|p| (sigmoid_continue_prob(p, theta, eps) - f64::from(u8::from(p <= theta))).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.01, "theta {theta}: {worst}");
    }
    assert_eq!(sigmoid_continue_prob(0.5, 0.5, 0.3), 0.5);
}

#[test]
fn immediate_stop_has_closed_form_cost() {
    let mut sp = StoppingProblem::reference();
    sp.cost = CostSpec::new(vec![vec![0.2, 1.0], vec![0.7, 0.3]]).unwrap();
    let e = eval_socialistic_cost(&sp, &ThresholdPolicy::hard(0.0), 300, 4).unwrap();
    for c in &e.costs {
        // The uniform prior favours action 0, on which every later agent herds.
        let target = 0.2 / (1.0 - sp.rho);
        let other = 50.0 + 0.7 / (1.0 - sp.rho);
        assert!(*c == target || *c == other, "cost {c}");
    }
    let mut at_target = sp.clone();
    at_target.pi0 = Belief::vertex(2, 0);
    at_target.cost = CostSpec::zero_one(2);
    let e = eval_socialistic_cost(&at_target, &ThresholdPolicy::hard(0.5), 50, 1).unwrap();
    assert_eq!(e.mean_stop_time, 1.0);
}

#[test]
fn never_stopping_sums_only_running_costs() {
    let mut sp = StoppingProblem::reference();
    sp.horizon = 40;
    sp.target = 0;
    let e = eval_socialistic_cost(&sp, &ThresholdPolicy::hard(1.0), 200, 3).unwrap();
    let bound_off_target: f64 = (0..40).map(|k| sp.rho.powi(k)).sum();
    let bound_on_target = bound_off_target * 11.0;
    for c in &e.costs {
        assert!(*c <= bound_on_target + 1e-9);
    }
    assert!(e.costs.iter().any(|c| *c <= bound_off_target + 1e-9));
    assert_eq!(e.mean_stop_time, 40.0);
}

#[test]
fn paying_chi_makes_revealing_weakly_optimal() {
    let obs = ObservationModel::binary_symmetric(0.7).unwrap();
    let mut rng = rng_from_seed(12);
    for _ in 0..1000 {
        let w1: f64 = rng.gen_range(0.05..1.0);
        let params = IncentiveCostParams::new(
            [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)],
            [rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0)],
            [w1, w1 + rng.gen_range(0.05..1.0)],
        )
        .unwrap();
        let pi = Belief::binary(rng.gen_range(0.0..1.0)).unwrap();
        let y = rng.gen_range(0..2);
        let chi = incentive_chi(&pi, y, &obs, &params).unwrap();
        let q = herding::social::bayes_update(&pi, y, &obs).unwrap().get(1);
        for pay in [chi, chi + 0.5] {
            assert!(mode_cost(1, q, pay, &params) <= mode_cost(0, q, pay, &params) + 1e-12);
        }
    }
}

#[test]
fn chi_vanishes_without_cost_differences() {
    let p = IncentiveCostParams::new([0.5, 0.5], [0.2, 0.2], [0.1, 0.4]).unwrap();
    let obs = ObservationModel::binary_symmetric(0.7).unwrap();
    for q in [0.1, 0.5, 0.9] {
        assert_eq!(incentive_chi(&Belief::binary(q).unwrap(), 0, &obs, &p).unwrap(), 0.0);
    }
    assert!(matches!(IncentiveCostParams::new([0.5, 0.5], [0.2, 0.2], [0.3, 0.3]), Err(Error::DegenerateParams(_))));
}

#[test]
fn fusion_cost_special_cases() {
    let mut ip = IncentiveProblem::reference();
    ip.g0 = 0.0;
    let pol = IncentivePolicy::hard(0.4, IncentiveGate::Above);
    for seed in 0..10 {
        let t = run_incentivized_episode(&ip, &pol, 0, seed).unwrap();
        let paid: f64 = t.steps.iter().map(|s| s.incentive).sum();
        assert!((episode_fusion_cost(&ip, &t) - paid).abs() < 1e-9);
    }
    let ip = IncentiveProblem::reference();
    let never = IncentivePolicy::hard(1.0, IncentiveGate::Above);
    let t = run_incentivized_episode(&ip, &never, 1, 3).unwrap();
    assert!(t.steps.iter().all(|s| s.incentive == 0.0));
    let reveals: f64 = t.steps.iter().filter(|s| s.action == s.obs).map(|s| 1.0 / (1.0 + s.step as f64)).sum();
    assert!((episode_fusion_cost(&ip, &t) + reveals).abs() < 1e-12);
}

#[test]
fn herd_region_without_payment_means_no_reveal_reward() {
    let mut ip = IncentiveProblem::reference();
    ip.pi0 = Belief::binary(0.95).unwrap();
    let t = run_incentivized_episode(&ip, &IncentivePolicy::hard(1.0, IncentiveGate::Above), 1, 0).unwrap();
    assert!(t.steps.iter().all(|s| s.action == 0 && s.mode == Mode::Myopic));
    let e = eval_fusion_cost(&ip, &IncentivePolicy::hard(1.0, IncentiveGate::Above), 20, 2).unwrap();
    assert!(e.mean_cost <= 0.0);
}

#[test]
fn spsa_quadratic_battery() {
    for seed in 0..20u64 {
        let theta0 = rng_from_seed(seed).gen_range(0.0..1.0);
        let cfg = SpsaConfig { theta0, delta: 0.01, iterations: 50, step_start: 0.5, step_end: 0.5 };
        let noisy = |t: f64, s: u64| {
            let jitter = rng_from_seed(derive_seed(s, t.to_bits())).gen_range(-1.0..1.0);
            (t - 0.3).powi(2) + 1e-6 * jitter
        };
        let h = spsa_optimize(noisy, &cfg, seed);
        assert!((h.last().unwrap().theta - 0.3).abs() <= 1e-3, "seed {seed}: {}", h.last().unwrap().theta);
    }
    let flat = spsa_optimize(
        |_, _| 1.0,
        &SpsaConfig { theta0: 0.6, delta: 0.1, iterations: 5, step_start: 1.0, step_end: 1.0 },
        0,
    );
    assert!(flat.iter().all(|h| h.theta == 0.6));
}

fn synthetic_trace(payments: &[f64]) -> EpisodeTrace {
    let steps = payments
        .iter()
        .enumerate()
        .map(|(i, p)| StepRecord {
            step: i + 1,
            state: 0,
            obs: 0,
            action: 0,
            mode: Mode::Reveal,
            incentive: *p,
            prior_before: Belief::binary(0.5).unwrap(),
            prior_after: Belief::binary(0.5).unwrap(),
            text_id: None,
        })
        .collect();
    EpisodeTrace::new(0, 0, steps)
}

#[test]
fn submartingale_controls() {
    let constant: Vec<EpisodeTrace> = (0..60).map(|_| synthetic_trace(&[1.5; 100])).collect();
    let rep = submartingale_check(&constant, 10).unwrap();
    assert!(rep.holds);
    let falling: Vec<f64> = (0..100).map(|k| 2.0 - 0.01 * k as f64).collect();
    let down: Vec<EpisodeTrace> = (0..60).map(|_| synthetic_trace(&falling)).collect();
    assert!(!submartingale_check(&down, 10).unwrap().holds);
    let ip = IncentiveProblem::reference();
    let few = incentive_traces(&ip, &IncentivePolicy::hard(0.4, IncentiveGate::Above), 2, 0).unwrap();
    assert!(matches!(submartingale_check(&few, 10), Err(Error::InsufficientData { .. })));
}

#[test]
fn budget_bound_examples() {
    let ip = IncentiveProblem::reference();
    let pol = IncentivePolicy::hard(0.4, IncentiveGate::Above);
    let wide = budget_bound_check(&ip, &pol, 150.0, 50, 1).unwrap();
    assert!(wide.holds && wide.bound <= 1.0);
    let mut always = ip.clone();
    always.params = IncentiveCostParams::new([0.8, 1.3], [0.1, 5.0], [0.2, 0.5]).unwrap();
    let pay_all = IncentivePolicy::hard(0.0, IncentiveGate::Above);
    let rep = budget_bound_check(&always, &IncentivePolicy { theta: -1.0, ..pay_all }, 50.0, 20, 1).unwrap();
    assert_eq!(rep.exceed_prob, 1.0);
    assert_eq!(rep.bound, 2.0);
    assert!(rep.holds);
}

/// A random two-state stopping problem with state-invariant costs and a TP2 kernel.
fn compliant_problem(seed: u64) -> StoppingProblem {
    let mut rng = rng_from_seed(seed);
    let obs = loop {
        let a = rng.gen_range(0.55..0.95);
        let b = rng.gen_range(0.05..0.45);
        let rows = vec![vec![a, 1.0 - a], vec![b, 1.0 - b]];
        if is_tp2(&rows) {
            break ObservationModel::new(rows).unwrap();
        }
    };
    let c0 = rng.gen_range(0.0..1.0);
    let c1 = rng.gen_range(0.0..1.0);
    let cost = CostSpec::new(vec![vec![c0, c1], vec![c0, c1]]).unwrap();
    let rho = rng.gen_range(0.8..0.98);
    let delay = rng.gen_range(1.0..10.0);
    let spread = (c0 - c1).abs() / (1.0 - rho);
    let penalty = spread + rng.gen_range(1.0..30.0);
    StoppingProblem::new(obs, cost, rho, delay, penalty, 100).unwrap()
}

#[test]
fn compliant_instances_have_one_threshold() {
    for seed in 0..20 {
        let sp = compliant_problem(seed);
        let rep = check_structural_assumptions(&sp.cost, &sp.obs, sp.rho);
        assert!(rep.all_hold(), "seed {seed}: {rep:?}");
        let vi = value_iteration_diagnostic(&sp, 501).unwrap();
        assert_eq!(vi.crossings(), 1, "seed {seed}");
    }
}

#[test]
fn reference_problem_labels_split_once() {
    let vi = value_iteration_diagnostic(&StoppingProblem::reference(), 1001).unwrap();
    assert_eq!(vi.crossings(), 1);
    assert_eq!(vi.decisions[0], Decision::Continue);
    assert_eq!(*vi.decisions.last().unwrap(), Decision::Stop);
}

#[test]
fn free_stopping_is_never_worse() {
    let mut sp = compliant_problem(3);
    sp.delay = 0.0;
    sp.error_penalty = 0.0;
    let vi = value_iteration_diagnostic(&sp, 201).unwrap();
    for (i, &p) in vi.grid.iter().enumerate() {
        let b = Belief::binary(p).unwrap();
        assert!(sp.stop_cost(&b) <= sp.continue_cost(&b) + sp.rho * vi.value[i] + 1e-9);
        assert_eq!(vi.decisions[i], Decision::Stop);
    }
}

#[test]
fn myopic_limit_compares_instantaneous_costs() {
    let mut sp = StoppingProblem::reference();
    sp.rho = 1e-9;
    let vi = value_iteration_diagnostic(&sp, 401).unwrap();
    for (i, &p) in vi.grid.iter().enumerate() {
        let b = Belief::binary(p).unwrap();
        let (c1, c2) = (sp.stop_cost(&b), sp.continue_cost(&b));
        if (c1 - c2).abs() > 1e-6 {
            let expected = if c1 < c2 { Decision::Stop } else { Decision::Continue };
            assert_eq!(vi.decisions[i], expected, "p = {p}");
        }
    }
}

#[test]
fn value_iteration_rejects_bad_inputs() {
    let three = ObservationModel::identity(3).unwrap();
    let sp = StoppingProblem::new(three, CostSpec::zero_one(3), 0.9, 1.0, 1.0, 10).unwrap();
    assert!(matches!(value_iteration_diagnostic(&sp, 11), Err(Error::DimensionMismatch(_))));
    assert!(
        StoppingProblem::new(ObservationModel::identity(2).unwrap(), CostSpec::zero_one(2), 1.0, 1.0, 1.0, 10).is_err()
    );
}
