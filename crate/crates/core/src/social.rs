//! Sequential Bayesian social learning.
//!
//! Agents act in turn. Each one combines the public prior with its private
//! observation, picks the action of least expected cost and publishes only the
//! action. The public prior is then updated through the action likelihood,
//! and once every observation leads to the same action the public belief
//! freezes: an information cascade.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_line, fmt_g};
use crate::model::{Belief, CostSpec, ObservationModel, MIN_NORMALIZER};
use crate::random::{derive_seed, rng_from_seed, SimRng};
use crate::sensor::{Sensor, SyntheticSensor};

/// Expected costs within this distance of the minimum are ties.
pub const TIE_TOL: f64 = 1e-12;
/// Priors within this sup-distance count as identical when detecting cascades.
pub const CASCADE_TOL: f64 = 1e-10;
/// Shortest stable tail accepted as a settled cascade or herd.
pub const MIN_STABLE_RUN: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    LowestIndex,
    SeededUniform,
}

/// Observation kernel, cost table and tie rule of a myopic agent.
#[derive(Clone, Debug)]
pub struct AgentModel {
    pub obs: ObservationModel,
    pub cost: CostSpec,
    pub tie_break: TieBreak,
}

impl AgentModel {
    pub fn new(obs: ObservationModel, cost: CostSpec, tie_break: TieBreak) -> Result<Self> {
        if obs.n_states() != cost.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "observation model has {} states, cost table {}",
                obs.n_states(),
                cost.n_states()
            )));
        }
        Ok(AgentModel { obs, cost, tie_break })
    }

    /// Binary states and actions with `c(x, u) = 1(x != u)`.
    pub fn binary(accuracy: f64) -> Result<Self> {
        Self::new(ObservationModel::binary_symmetric(accuracy)?, CostSpec::zero_one(2), TieBreak::LowestIndex)
    }

    pub fn n_states(&self) -> usize {
        self.obs.n_states()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.n_obs()
    }

    pub fn n_actions(&self) -> usize {
        self.cost.n_actions()
    }
}

fn check_len(prior: &Belief, n: usize) -> Result<()> {
    if prior.len() != n {
        return Err(Error::DimensionMismatch(format!("belief has {} entries, model has {n} states", prior.len())));
    }
    Ok(())
}

/// Posterior after observing `y`.
pub fn bayes_update(prior: &Belief, y: usize, obs: &ObservationModel) -> Result<Belief> {
    bayes_update_window(prior, std::slice::from_ref(&y), obs)
}

/// Posterior after a window of conditionally independent observations.
pub fn bayes_update_window(prior: &Belief, ys: &[usize], obs: &ObservationModel) -> Result<Belief> {
    check_len(prior, obs.n_states())?;
    if let Some(&y) = ys.iter().find(|&&y| y >= obs.n_obs()) {
        return Err(Error::DimensionMismatch(format!("observation {y} out of range")));
    }
    let w = window_weights(prior, ys, obs);
    Belief::from_weights(w).ok_or(Error::ZeroLikelihood { obs: ys.last().copied().unwrap_or(0) })
}

fn window_weights(prior: &Belief, ys: &[usize], obs: &ObservationModel) -> Vec<f64> {
    prior.probs().iter().enumerate().map(|(x, &p)| ys.iter().fold(p, |acc, &y| acc * obs.prob(x, y))).collect()
}

/// Actions whose expected cost under `w` is within [`TIE_TOL`] of the minimum.
pub fn optimal_actions(w: &[f64], cost: &CostSpec) -> Vec<usize> {
    let costs: Vec<f64> = (0..cost.n_actions()).map(|u| cost.expected(u, w)).collect();
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    (0..costs.len()).filter(|&u| costs[u] <= best + TIE_TOL).collect()
}

/// Least-expected-cost action under `posterior`.
pub fn select_action<R: Rng + ?Sized>(posterior: &Belief, cost: &CostSpec, tie: TieBreak, rng: &mut R) -> usize {
    let set = optimal_actions(posterior.probs(), cost);
    match tie {
        TieBreak::LowestIndex => set[0],
        TieBreak::SeededUniform if set.len() == 1 => set[0],
        TieBreak::SeededUniform => set[rng.gen_range(0..set.len())],
    }
}

/// Probability of each action given the posterior, as implied by the tie rule.
pub fn action_distribution(posterior: &Belief, cost: &CostSpec, tie: TieBreak) -> Vec<f64> {
    let set = optimal_actions(posterior.probs(), cost);
    let mut d = vec![0.0; cost.n_actions()];
    match tie {
        TieBreak::LowestIndex => d[set[0]] = 1.0,
        TieBreak::SeededUniform => {
            let share = 1.0 / set.len() as f64;
            set.into_iter().for_each(|u| d[u] = share);
        }
    }
    d
}

/// Posterior an agent acts on; evidence impossible under the prior leaves the prior unchanged.
fn acting_belief(prior: &Belief, ys: &[usize], obs: &ObservationModel) -> Belief {
    Belief::from_weights(window_weights(prior, ys, obs)).unwrap_or_else(|| prior.clone())
}

/// `P(u | x = i, prior)` for every state `i`.
pub fn action_likelihood(prior: &Belief, u: usize, am: &AgentModel) -> Result<Vec<f64>> {
    action_likelihood_window(prior, u, 1, am)
}

/// Action likelihood for an agent that saw `window` conditionally independent observations.
pub fn action_likelihood_window(prior: &Belief, u: usize, window: usize, am: &AgentModel) -> Result<Vec<f64>> {
    check_len(prior, am.n_states())?;
    if u >= am.n_actions() {
        return Err(Error::DimensionMismatch(format!("action {u} out of range")));
    }
    let ny = am.n_obs();
    let mut lik = vec![0.0; am.n_states()];
    let mut ys = vec![0usize; window.max(1)];
    loop {
        let post = acting_belief(prior, &ys, &am.obs);
        let pu = action_distribution(&post, &am.cost, am.tie_break)[u];
        if pu > 0.0 {
            for (x, l) in lik.iter_mut().enumerate() {
                *l += pu * ys.iter().map(|&y| am.obs.prob(x, y)).product::<f64>();
            }
        }
        // Odometer over all observation windows.
        let mut k = 0;
        while k < ys.len() {
            ys[k] += 1;
            if ys[k] < ny {
                break;
            }
            ys[k] = 0;
            k += 1;
        }
        if k == ys.len() {
            break;
        }
    }
    Ok(lik)
}

/// Predicted belief `P' pi` where `transition[j][i] = P(next = i | current = j)`.
pub fn predict(prior: &Belief, transition: &ObservationModel) -> Result<Belief> {
    check_len(prior, transition.n_states())?;
    let n = transition.n_obs();
    let w: Vec<f64> =
        (0..n).map(|i| prior.probs().iter().enumerate().map(|(j, p)| p * transition.prob(j, i)).sum()).collect();
    Belief::from_weights(w).ok_or_else(|| Error::NotASimplexPoint("prediction lost all mass".into()))
}

/// Multiplies the (optionally predicted) prior by a likelihood and renormalises.
pub fn filter_with_likelihood(
    prior: &Belief,
    likelihood: &[f64],
    transition: Option<&ObservationModel>,
    action: usize,
) -> Result<Belief> {
    let base = match transition {
        Some(p) => predict(prior, p)?,
        None => prior.clone(),
    };
    if likelihood.len() != base.len() {
        return Err(Error::DimensionMismatch("likelihood length differs from belief".into()));
    }
    let w: Vec<f64> = base.probs().iter().zip(likelihood).map(|(p, l)| p * l).collect();
    let total: f64 = w.iter().sum();
    if !(total > MIN_NORMALIZER) {
        return Err(Error::ImpossibleAction { action });
    }
    Ok(Belief::from_weights(w).expect("normaliser checked"))
}

/// Public belief after action `u` is observed.
pub fn public_prior_update(
    prior: &Belief,
    u: usize,
    am: &AgentModel,
    transition: Option<&ObservationModel>,
) -> Result<Belief> {
    let lik = action_likelihood(prior, u, am)?;
    filter_with_likelihood(prior, &lik, transition, u)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Learning,
    HerdTo(usize),
}

/// Whether the next agent's action is the same for every possible observation.
pub fn classify_region(prior: &Belief, am: &AgentModel) -> Result<Region> {
    check_len(prior, am.n_states())?;
    let mut herd: Option<usize> = None;
    for y in 0..am.n_obs() {
        let predictive: f64 = prior.probs().iter().enumerate().map(|(x, p)| p * am.obs.prob(x, y)).sum();
        if !(predictive > MIN_NORMALIZER) {
            continue;
        }
        let post = acting_belief(prior, &[y], &am.obs);
        let d = action_distribution(&post, &am.cost, am.tie_break);
        let Some(u) = d.iter().position(|&p| p == 1.0) else {
            return Ok(Region::Learning);
        };
        match herd {
            None => herd = Some(u),
            Some(v) if v == u => {}
            Some(_) => return Ok(Region::Learning),
        }
    }
    Ok(herd.map_or(Region::Learning, Region::HerdTo))
}

/// Boundaries of the learning region for two states under `c(x, u) = 1(x != u)`.
///
/// With `p` the probability of state 0 and lowest-index tie breaking, agents
/// herd to action 0 on `[p_high, 1]`, to action 1 on `[0, p_low)` and learn
/// in between.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HerdingThresholds {
    pub p_low: f64,
    pub p_high: f64,
}

impl HerdingThresholds {
    pub fn classify(&self, p: f64) -> Region {
        if p >= self.p_high - TIE_TOL {
            Region::HerdTo(0)
        } else if p < self.p_low - TIE_TOL {
            Region::HerdTo(1)
        } else {
            Region::Learning
        }
    }
}

/// Closed-form learning region of a two-state model.
///
/// Observation `y` moves the action to 0 exactly when
/// `p >= B(y|1) / (B(y|0) + B(y|1))`; the thresholds are the extremes of
/// this ratio over `y`.
pub fn herding_thresholds(obs: &ObservationModel) -> Result<HerdingThresholds> {
    if obs.n_states() != 2 {
        return Err(Error::DimensionMismatch(format!("thresholds need 2 states, got {}", obs.n_states())));
    }
    let mut p_low = f64::INFINITY;
    let mut p_high = f64::NEG_INFINITY;
    for y in 0..obs.n_obs() {
        let total = obs.prob(0, y) + obs.prob(1, y);
        if total > 0.0 {
            let t = obs.prob(1, y) / total;
            p_low = p_low.min(t);
            p_high = p_high.max(t);
        }
    }
    Ok(HerdingThresholds { p_low, p_high })
}

/// How an agent's action relates to its private observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Acted on its own posterior.
    Myopic,
    /// Reported its observation directly.
    Reveal,
    /// Declared the final state estimate.
    Stop,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Myopic => "myopic",
            Mode::Reveal => "reveal",
            Mode::Stop => "stop",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    /// 1-based position in the episode.
    pub step: usize,
    pub state: usize,
    pub obs: usize,
    pub action: usize,
    pub mode: Mode,
    pub incentive: f64,
    pub prior_before: Belief,
    pub prior_after: Belief,
    /// Identifier of the text behind the observation, when one exists.
    pub text_id: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub true_state: usize,
    pub steps: Vec<StepRecord>,
    pub cascade_time: Option<usize>,
    pub herd_time: Option<usize>,
}

impl EpisodeTrace {
    pub fn new(seed: u64, true_state: usize, steps: Vec<StepRecord>) -> Self {
        let mut t = EpisodeTrace { seed, true_state, steps, cascade_time: None, herd_time: None };
        t.cascade_time = detect_cascade(&t);
        t.herd_time = detect_herding(&t);
        t
    }

    pub fn final_action(&self) -> Option<usize> {
        self.steps.last().map(|s| s.action)
    }

    pub fn final_prior(&self) -> Option<&Belief> {
        self.steps.last().map(|s| &s.prior_after)
    }

    /// Public priors seen by each agent followed by the prior after the last step.
    pub fn prior_path(&self) -> Vec<&Belief> {
        let mut v: Vec<&Belief> = self.steps.iter().map(|s| &s.prior_before).collect();
        if let Some(s) = self.steps.last() {
            v.push(&s.prior_after);
        }
        v
    }

    /// Whether the last action matches the true state.
    pub fn correct(&self) -> bool {
        self.final_action() == Some(self.true_state)
    }

    pub fn to_csv(&self) -> String {
        let nx = self.steps.first().map_or(0, |s| s.prior_before.len());
        let mut header = vec!["step", "state", "obs", "action", "mode", "incentive"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((0..nx).map(|i| format!("prior_{i}")));
        let mut out = csv_line(&header);
        for s in &self.steps {
            let mut row = vec![
                s.step.to_string(),
                s.state.to_string(),
                s.obs.to_string(),
                s.action.to_string(),
                s.mode.as_str().to_string(),
                fmt_g(s.incentive),
            ];
            row.extend(s.prior_before.probs().iter().map(|&p| fmt_g(p)));
            out.push_str(&csv_line(&row));
        }
        out
    }
}

/// Where a sequence stops changing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Onset {
    /// Constant from this 1-based index on, for at least [`MIN_STABLE_RUN`] entries.
    Settled(usize),
    /// Constant from this index on, but the trace ends too soon to call it settled.
    Censored(usize),
    Never,
}

impl Onset {
    pub fn settled(self) -> Option<usize> {
        match self {
            Onset::Settled(k) => Some(k),
            _ => None,
        }
    }
}

/// First index from which every later entry equals the last one.
pub fn settle_point<T>(seq: &[T], same: impl Fn(&T, &T) -> bool) -> Onset {
    let Some(last) = seq.last() else {
        return Onset::Never;
    };
    let mut k = seq.len() - 1;
    while k > 0 && same(&seq[k - 1], last) {
        k -= 1;
    }
    if seq.len() - k >= MIN_STABLE_RUN {
        Onset::Settled(k + 1)
    } else {
        Onset::Censored(k + 1)
    }
}

pub fn cascade_onset(trace: &EpisodeTrace) -> Onset {
    settle_point(&trace.prior_path(), |a, b| a.max_abs_diff(b) <= CASCADE_TOL)
}

pub fn herding_onset(trace: &EpisodeTrace) -> Onset {
    let actions: Vec<usize> = trace.steps.iter().map(|s| s.action).collect();
    settle_point(&actions, |a, b| a == b)
}

/// 1-based step from which the public prior is frozen.
pub fn detect_cascade(trace: &EpisodeTrace) -> Option<usize> {
    cascade_onset(trace).settled()
}

/// 1-based step from which every agent takes the same action.
pub fn detect_herding(trace: &EpisodeTrace) -> Option<usize> {
    herding_onset(trace).settled()
}

/// Simulates one episode with observations drawn from the agent's own kernel.
pub fn run_protocol(
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    horizon: usize,
    m_shared: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut sensor = SyntheticSensor::new(am.obs.clone());
    let mut rng = rng_from_seed(seed);
    let mut trace = run_protocol_with_sensor(am, true_state, pi0, horizon, m_shared, &mut sensor, &mut rng)?;
    trace.seed = seed;
    Ok(trace)
}

/// Simulates one episode; agent `k` also sees the `m_shared` observations before its own.
pub fn run_protocol_with_sensor(
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    horizon: usize,
    m_shared: usize,
    sensor: &mut dyn Sensor,
    rng: &mut SimRng,
) -> Result<EpisodeTrace> {
    check_len(pi0, am.n_states())?;
    if true_state >= am.n_states() {
        return Err(Error::DimensionMismatch(format!("true state {true_state} out of range")));
    }
    if sensor.n_obs() != am.n_obs() {
        return Err(Error::DimensionMismatch("sensor and agent disagree on the observation count".into()));
    }
    let mut priors: Vec<Belief> = Vec::with_capacity(horizon + 1);
    priors.push(pi0.clone());
    let mut ys = Vec::with_capacity(horizon);
    let mut actions: Vec<usize> = Vec::with_capacity(horizon);
    let mut steps = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let y = sensor.observe(true_state, rng)?;
        ys.push(y);
        let start = k.saturating_sub(m_shared);
        let post = acting_belief(&priors[k], &ys[start..=k], &am.obs);
        let u = select_action(&post, &am.cost, am.tie_break, rng);
        actions.push(u);
        // The action of agent k - m_shared is the newest one whose evidence
        // does not overlap the windows of the agents still to come.
        let next = if k >= m_shared {
            let j = k - m_shared;
            let window = j.min(m_shared) + 1;
            let lik = action_likelihood_window(&priors[j], actions[j], window, am)?;
            filter_with_likelihood(&priors[k], &lik, None, actions[j])?
        } else {
            priors[k].clone()
        };
        steps.push(StepRecord {
            step: k + 1,
            state: true_state,
            obs: y,
            action: u,
            mode: Mode::Myopic,
            incentive: 0.0,
            prior_before: priors[k].clone(),
            prior_after: next.clone(),
            text_id: None,
        });
        priors.push(next);
    }
    Ok(EpisodeTrace::new(0, true_state, steps))
}

/// Runs `runs` independent episodes in parallel; results are in index order.
pub fn run_batch(
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    horizon: usize,
    m_shared: usize,
    master_seed: u64,
    runs: usize,
) -> Result<Vec<EpisodeTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|i| run_protocol(am, true_state, pi0, horizon, m_shared, derive_seed(master_seed, i as u64)))
        .collect()
}

/// `seed,cascade_time,herd_time,final_action,correct` rows; missing times are empty.
pub fn summary_csv(traces: &[EpisodeTrace]) -> String {
    let mut out = csv_line(["seed", "cascade_time", "herd_time", "final_action", "correct"]);
    let opt = |v: Option<usize>| v.map_or(String::new(), |k| k.to_string());
    for t in traces {
        out.push_str(&csv_line([
            t.seed.to_string(),
            opt(t.cascade_time),
            opt(t.herd_time),
            opt(t.final_action()),
            u8::from(t.correct()).to_string(),
        ]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(p: f64) -> Belief {
        Belief::binary(p).unwrap()
    }

    #[test]
    fn bayes_examples() {
        let m = ObservationModel::binary_symmetric(0.8).unwrap();
        let post = bayes_update(&b(0.34), 0, &m).unwrap();
        assert!((post.get(0) - 0.272 / 0.404).abs() < 1e-12);
        assert!((post.get(0) - 0.6733).abs() < 1e-4);
        let w = bayes_update_window(&b(0.5), &[1, 1], &m).unwrap();
        assert!((w.get(0) - 0.058824).abs() < 1e-6);
        let id = ObservationModel::identity(2).unwrap();
        assert!(matches!(bayes_update(&Belief::vertex(2, 0), 1, &id), Err(Error::ZeroLikelihood { obs: 1 })));
    }

    #[test]
    fn tie_breaking() {
        let c = CostSpec::zero_one(2);
        let mut rng = rng_from_seed(1);
        assert_eq!(select_action(&b(0.5), &c, TieBreak::LowestIndex, &mut rng), 0);
        let picks: Vec<usize> =
            (0..200).map(|_| select_action(&b(0.5), &c, TieBreak::SeededUniform, &mut rng)).collect();
        assert!(picks.contains(&0) && picks.contains(&1));
        assert_eq!(action_distribution(&b(0.5), &c, TieBreak::SeededUniform), vec![0.5, 0.5]);
    }

    #[test]
    fn thresholds_for_symmetric_models() {
        for (acc, lo, hi) in [(0.8, 0.2, 0.8), (0.7, 0.3, 0.7), (0.5, 0.5, 0.5)] {
            let t = herding_thresholds(&ObservationModel::binary_symmetric(acc).unwrap()).unwrap();
            assert!((t.p_low - lo).abs() < 1e-12 && (t.p_high - hi).abs() < 1e-12);
        }
    }

    #[test]
    fn vertex_prior_is_a_cascade() {
        let am = AgentModel::binary(0.8).unwrap();
        assert_eq!(classify_region(&Belief::vertex(2, 1), &am).unwrap(), Region::HerdTo(1));
        let t = run_protocol(&am, 0, &Belief::vertex(2, 1), 30, 0, 5).unwrap();
        assert_eq!(t.cascade_time, Some(1));
        assert_eq!(t.herd_time, Some(1));
        assert!(!t.correct());
    }

    #[test]
    fn herd_region_is_a_fixed_point() {
        let am = AgentModel::binary(0.8).unwrap();
        let pi = b(0.9);
        assert_eq!(classify_region(&pi, &am).unwrap(), Region::HerdTo(0));
        let next = public_prior_update(&pi, 0, &am, None).unwrap();
        assert!(next.max_abs_diff(&pi) < 1e-12);
        assert!(matches!(public_prior_update(&pi, 1, &am, None), Err(Error::ImpossibleAction { action: 1 })));
    }

    #[test]
    fn learning_region_action_moves_prior() {
        let am = AgentModel::binary(0.8).unwrap();
        let next = public_prior_update(&b(0.5), 0, &am, None).unwrap();
        assert!((next.get(0) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn transition_prediction_applies_before_filtering() {
        let am = AgentModel::binary(0.8).unwrap();
        let flip = ObservationModel::new(vec![vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let next = public_prior_update(&b(0.5), 0, &am, Some(&flip)).unwrap();
        assert!((next.get(0) - 0.8).abs() < 1e-12);
        let p = predict(&b(0.3), &flip).unwrap();
        assert!((p.get(0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn settle_point_censoring() {
        assert_eq!(settle_point(&[1, 2, 2, 2], |a, b| a == b), Onset::Censored(2));
        let long: Vec<u8> = std::iter::once(0).chain(std::iter::repeat(1).take(12)).collect();
        assert_eq!(settle_point(&long, |a, b| a == b), Onset::Settled(2));
        assert_eq!(settle_point::<u8>(&[], |a, b| a == b), Onset::Never);
    }

    #[test]
    fn batch_is_reproducible_and_ordered() {
        let am = AgentModel::binary(0.7).unwrap();
        let a = run_batch(&am, 1, &b(0.5), 40, 0, 11, 16).unwrap();
        let c = run_batch(&am, 1, &b(0.5), 40, 0, 11, 16).unwrap();
        assert_eq!(a, c);
        assert_eq!(a[3].seed, derive_seed(11, 3));
        assert_eq!(summary_csv(&a), summary_csv(&c));
    }

    #[test]
    fn trace_csv_layout() {
        let am = AgentModel::binary(0.7).unwrap();
        let t = run_protocol(&am, 0, &b(0.5), 3, 0, 2).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("step,state,obs,action,mode,incentive,prior_0,prior_1"));
        assert!(lines.next().unwrap().starts_with("1,0,"));
    }
}
