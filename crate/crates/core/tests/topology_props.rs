use herding::random::{derive_seed, rng_from_seed};
use herding::social::{bayes_update, public_prior_update, AgentModel};
use herding::topology::{
    incest_batch, incest_csv, run_async_fusion, run_word_of_mouth, EventKind, ScheduleEvent, WomConfig, WomVariant,
};
use herding::{Belief, ObservationModel};
use proptest::prelude::*;
use rand::Rng;

/// A valid random schedule: every update follows at least one draw by the same agent.
fn random_schedule(seed: u64, n_agents: usize, len: usize) -> Vec<ScheduleEvent> {
    let mut rng = rng_from_seed(seed);
    let mut drawn = vec![false; n_agents];
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let a = rng.gen_range(0..n_agents);
        let kind = match rng.gen_range(0..3) {
            0 => EventKind::Draw,
            1 if drawn[a] => EventKind::Update,
            1 => EventKind::Draw,
            _ => EventKind::Broadcast,
        };
        drawn[a] |= kind == EventKind::Draw;
        out.push(ScheduleEvent::new(a, kind));
    }
    out
}

#[test]
fn random_schedules_match_the_provenance_oracle() {
    let am = AgentModel::binary(0.75).unwrap();
    let pi0 = Belief::binary(0.4).unwrap();
    let mut clean = 0;
    for seed in 0..300u64 {
        let n = 1 + (seed % 4) as usize;
        let sched = random_schedule(seed, n, 25);
        let out = run_async_fusion(n, &am, (seed % 2) as usize, &pi0, &sched, derive_seed(5, seed)).unwrap();
        let naive =
            out.provenance.iter().fold(pi0.clone(), |b, &id| bayes_update(&b, out.observations[id], &am.obs).unwrap());
        assert_eq!(naive, out.naive, "seed {seed}");
        if out.has_duplicates() {
            assert!(out.incest >= 0.0);
        } else {
            clean += 1;
            assert_eq!(out.incest, 0.0, "seed {seed}");
            assert_eq!(out.naive, out.correct);
        }
    }
    assert!(clean > 0);
}

#[test]
fn star_schedule_has_no_incest() {
    let am = AgentModel::binary(0.8).unwrap();
    let n = 6;
    let mut sched: Vec<ScheduleEvent> = (0..n)
        .flat_map(|a| [ScheduleEvent::new(a, EventKind::Draw), ScheduleEvent::new(a, EventKind::Update)])
        .collect();
    sched.extend((0..n).map(|a| ScheduleEvent::new(a, EventKind::Broadcast)));
    for row in incest_batch(n, &am, 0, &Belief::uniform(2), &sched, 50, 9).unwrap() {
        assert_eq!(row.kl, 0.0);
    }
}

#[test]
fn incest_csv_has_one_row_per_run() {
    let am = AgentModel::binary(0.8).unwrap();
    let sched = herding::topology::double_count_schedule();
    let rows = incest_batch(1, &am, 0, &Belief::uniform(2), &sched, 7, 1).unwrap();
    let csv = incest_csv(&rows);
    assert!(csv.starts_with("run,kl_naive_vs_correct,cascaded\n"));
    assert_eq!(csv.lines().count(), 8);
    assert!(rows.iter().all(|r| r.kl > 0.0));
}

#[test]
fn identity_regeneration_repeats_the_observation() {
    let am = AgentModel::binary(0.8).unwrap();
    let cfg = WomConfig::new(3, ObservationModel::identity(2).unwrap(), am.clone(), 40).unwrap();
    for seed in 0..10 {
        let t = run_word_of_mouth(&cfg, 1, &Belief::uniform(2), seed).unwrap();
        for chunk in t.steps.chunks(3) {
            assert!(chunk.iter().all(|s| s.obs == chunk[0].obs));
        }
        for s in &t.steps {
            let replay = public_prior_update(&s.prior_before, s.action, &am, None).unwrap();
            assert!(replay.max_abs_diff(&s.prior_after) <= 1e-15, "seed {seed} step {}", s.step);
        }
    }
}

#[test]
fn word_of_mouth_cascades() {
    let am = AgentModel::binary(0.8).unwrap();
    let regen = ObservationModel::binary_symmetric(0.7).unwrap();
    for variant in [WomVariant::PerLevel, WomVariant::PerOuterStep] {
        let mut cfg = WomConfig::new(3, regen.clone(), am.clone(), 200).unwrap();
        cfg.variant = variant;
        for seed in 0..100 {
            let t = run_word_of_mouth(&cfg, (seed % 2) as usize, &Belief::uniform(2), seed).unwrap();
            assert!(t.cascade_time.is_some(), "{variant:?} seed {seed}");
        }
    }
}

proptest! {
    #[test]
    fn word_of_mouth_priors_stay_on_the_simplex(seed in any::<u64>(), levels in 2usize..5, acc in 0.55f64..0.95) {
        let am = AgentModel::binary(0.8).unwrap();
        let cfg = WomConfig::new(levels, ObservationModel::binary_symmetric(acc).unwrap(), am, 20).unwrap();
        let t = run_word_of_mouth(&cfg, 0, &Belief::uniform(2), seed).unwrap();
        prop_assert_eq!(t.steps.len(), 20 * levels);
        for s in &t.steps {
            let sum: f64 = s.prior_after.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(s.prior_after.probs().iter().all(|v| *v >= 0.0));
        }
    }
}
