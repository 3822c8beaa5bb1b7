use herding::brp::{
    build_program, empirical_dataset, feasibility_check, generate_ribum_dataset, generate_ribum_samples,
    max_margin_reconstruct, paper_inequality_count, paper_variable_count, reconstruct_info_cost, sparse_reconstruct,
    witness_violation, BrpDataset, Margins, Verdict, DEFAULT_EPSILON_MIN,
};
use herding::random::{rng_from_seed, SimRng};
use herding::{Belief, Error, ObservationModel, UtilitySpec};
use proptest::prelude::*;
use rand::Rng;

fn diagonal_kernel(rng: &mut SimRng, n: usize, acc: f64) -> ObservationModel {
    let rows = (0..n)
        .map(|x| {
            let mut off: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
            off[x] = 0.0;
            let s: f64 = off.iter().sum();
            (0..n).map(|y| if y == x { acc } else { (1.0 - acc) * off[y] / s }).collect()
        })
        .collect();
    ObservationModel::new(rows).unwrap()
}

fn diagonal_utility(rng: &mut SimRng, n: usize) -> UtilitySpec {
    UtilitySpec::new(
        (0..n)
            .map(|x| (0..n).map(|u| if u == x { rng.gen_range(0.7..1.0) } else { rng.gen_range(0.0..0.3) }).collect())
            .collect(),
    )
    .unwrap()
}

/// A random informative instance with distinct accuracies per environment.
fn random_instance(seed: u64) -> (Vec<UtilitySpec>, Vec<ObservationModel>, Belief) {
    let mut rng = rng_from_seed(seed);
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(2..=3);
    let mut accs: Vec<f64> = vec![0.95, 0.8, 0.65];
    accs.truncate(m);
    let r = (0..m).map(|_| diagonal_utility(&mut rng, n)).collect();
    let b = accs.iter().map(|&a| diagonal_kernel(&mut rng, n, a)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
    (r, b, Belief::from_weights(w).unwrap())
}

#[test]
fn ribum_data_pass_and_witnesses_verify() {
    for seed in 0..20 {
        let (r, b, prior) = random_instance(seed);
        let ds = generate_ribum_dataset(&r, &b, &prior, 20_000, seed).unwrap();
        let rep = feasibility_check(&ds, DEFAULT_EPSILON_MIN).unwrap();
        assert_eq!(rep.verdict, Verdict::Ribum, "seed {seed}: margin {}", rep.margin);
        let rec = max_margin_reconstruct(&ds).unwrap();
        assert!(rec.eps1 > 0.0 && rec.eps2 > 0.0);
        assert!(witness_violation(&ds, &rec) <= 1e-7, "seed {seed}");
        let k = reconstruct_info_cost(&ds, &rec);
        assert!(k >= rec.costs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - 1e-12);
        for u in &rec.utilities {
            assert!(u.table().iter().flatten().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)));
        }
    }
}

#[test]
fn equal_posteriors_are_rejected() {
    let half = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let ds = BrpDataset::new(Belief::uniform(2), vec![half.clone(), half]).unwrap();
    assert_eq!(feasibility_check(&ds, DEFAULT_EPSILON_MIN).unwrap().verdict, Verdict::NotRibum);
    assert!(matches!(max_margin_reconstruct(&ds), Err(Error::ReconstructionInfeasible { .. })));
}

#[test]
fn sparse_reconstruction_is_no_larger_than_max_margin() {
    let r = vec![UtilitySpec::identity(2), UtilitySpec::identity(2)];
    let b = vec![ObservationModel::binary_symmetric(0.9).unwrap(), ObservationModel::binary_symmetric(0.7).unwrap()];
    let ds = generate_ribum_dataset(&r, &b, &Belief::uniform(2), 10_000, 3).unwrap();
    let mm = max_margin_reconstruct(&ds).unwrap();
    let sp = sparse_reconstruct(&ds, mm.eps1 / 2.0, mm.eps2 / 2.0).unwrap();
    assert!(sp.l1_norm() <= mm.l1_norm() + 1e-9);
    assert!(witness_violation(&ds, &sp) <= 1e-7);
    let too_much = sparse_reconstruct(&ds, mm.eps1 + mm.eps2 + 1.0, mm.eps2 + 1.0);
    assert!(matches!(too_much, Err(Error::ReconstructionInfeasible { .. })));
}

#[test]
fn generator_matches_the_kernel_when_actions_replay_observations() {
    let r = vec![UtilitySpec::identity(2), UtilitySpec::identity(2)];
    let b = vec![ObservationModel::binary_symmetric(0.9).unwrap(), ObservationModel::binary_symmetric(0.7).unwrap()];
    let prior = Belief::uniform(2);
    let ds = generate_ribum_dataset(&r, &b, &prior, 10_000, 8).unwrap();
    for (m, acc) in [(0usize, 0.9), (1, 0.7)] {
        for x in 0..2 {
            let n: f64 = 4_800.0;
            let band = 3.0 * (acc * (1.0 - acc) / n).sqrt();
            assert!((ds.action_given_state(m, x, x) - acc).abs() <= band, "env {m} state {x}");
        }
    }
    let flat = vec![ObservationModel::new(vec![vec![0.6, 0.4], vec![0.6, 0.4]]).unwrap(); 2];
    let ds = generate_ribum_dataset(&r, &flat, &prior, 2_000, 1).unwrap();
    for m in 0..2 {
        for u in 0..2 {
            assert_eq!(ds.action_given_state(m, 0, u), ds.action_given_state(m, 1, u));
        }
    }
    let none = generate_ribum_samples(&r, &b, &prior, 0, 1).unwrap();
    assert!(matches!(empirical_dataset(&none, &prior, 2, 2), Err(Error::EmptyCell { .. })));
}

#[test]
fn program_size_follows_the_counting_rule() {
    for (m, x, u) in [(2usize, 2usize, 2usize), (3, 3, 2), (2, 4, 4), (3, 2, 3)] {
        let cond: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|e| {
                (0..x)
                    .map(|s| (0..u).map(|a| if a == (s + e) % u { 0.6 } else { 0.4 / (u - 1) as f64 }).collect())
                    .collect()
            })
            .collect();
        let ds = BrpDataset::new(Belief::uniform(x), cond).unwrap();
        let prog = build_program(&ds, Margins::Common).unwrap();
        assert_eq!(prog.n_niac_rows, m * (m - 1));
        assert_eq!(prog.n_nias_rows, m * u * (u - 1));
        assert_eq!(prog.n_epigraph_rows, m * (m - 1) * u * u);
        assert_eq!(prog.n_aux, m * (m - 1) * u);
        assert_eq!(paper_variable_count(m, x, u), m * (u * x + 1));
        assert_eq!(prog.n_nias_rows + prog.n_niac_rows, paper_inequality_count(m, u));
    }
}

proptest! {
    #[test]
    fn nias_rows_are_affine_invariant(
        seed in any::<u64>(),
        a in 0.01f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let (r, b, prior) = random_instance(seed);
        let ds = generate_ribum_dataset(&r, &b, &prior, 500, seed).unwrap();
        let n = ds.n_states();
        let mut rng = rng_from_seed(seed ^ 1);
        let util: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
        for m in 0..ds.n_envs() {
            for u in 0..n {
                let Some(post) = ds.posterior(m, u) else { continue };
                for ubar in (0..n).filter(|&v| v != u) {
                    let row = |f: &dyn Fn(f64) -> f64| -> f64 {
                        (0..n).map(|x| post[x] * (f(util[x][ubar]) - f(util[x][u]))).sum()
                    };
                    let base = row(&|v| v);
                    let moved = row(&|v| a * v + shift);
                    prop_assert!((moved - a * base).abs() <= 1e-9 * (1.0 + shift.abs()) * a.max(1.0));
                    if base.abs() > 1e-9 {
                        prop_assert_eq!(base > 0.0, moved > 0.0);
                    }
                }
            }
        }
    }
}
