//! Controlling herding: when to stop sharing private observations, and how
//! much to pay agents to share them.
//!
//! Two controlled problems live here. In the stopping problem agents reveal
//! their observations while a threshold policy continues, and the episode ends
//! once the public belief in the target state is high enough. In the
//! incentive problem a controller pays each agent a price that makes
//! revealing its observation weakly optimal, gated by a threshold on the
//! public belief. Both policies are tuned by a simultaneous-perturbation
//! stochastic approximation.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_line, fmt_g};
use crate::model::{Belief, CostSpec, IncentiveCostParams, ObservationModel};
use crate::random::{derive_seed, rng_from_seed, sample_categorical, SimRng};
use crate::social::{self, filter_with_likelihood, EpisodeTrace, Mode, StepRecord};
use crate::stats::{mean, mean_se};

/// Maximum number of value-iteration sweeps.
pub const MAX_SWEEPS: usize = 10_000;
/// Sup-norm change at which value iteration stops.
pub const VI_TOL: f64 = 1e-8;
/// Smallest number of step pairs accepted by [`submartingale_check`].
pub const MIN_SUBMARTINGALE_STEPS: usize = 5_000;
/// Bins with fewer pairs than this are not tested.
pub const MIN_BIN_COUNT: usize = 30;

/// Whether the agents keep revealing observations or the episode ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    Stop,
    Continue,
}

/// Action forced on an agent: its observation while continuing, the herd action once stopped.
pub fn constrained_decision(prior: &Belief, y: usize, decision: Decision, cost: &CostSpec) -> Result<usize> {
    if cost.n_actions() <= y {
        return Err(Error::DimensionMismatch(format!("observation {y} has no matching action")));
    }
    Ok(match decision {
        Decision::Continue => y,
        Decision::Stop => herd_action(prior, cost),
    })
}

fn herd_action(prior: &Belief, cost: &CostSpec) -> usize {
    social::optimal_actions(prior.probs(), cost)[0]
}

/// Continue while `prior(0) <= theta`.
pub fn hard_threshold_decide(prior: &Belief, theta: f64) -> Decision {
    if prior.get(0) <= theta {
        Decision::Continue
    } else {
        Decision::Stop
    }
}

/// Smooth surrogate of the hard threshold: `1 / (1 + exp((p0 - theta) / eps))`.
pub fn sigmoid_continue_prob(prior0: f64, theta: f64, eps: f64) -> f64 {
    1.0 / (1.0 + ((prior0 - theta) / eps).exp())
}

/// Threshold on `prior(0)`; with `smoothing` the decision is randomised through a sigmoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdPolicy {
    pub theta: f64,
    pub smoothing: Option<f64>,
}

impl ThresholdPolicy {
    pub fn hard(theta: f64) -> Self {
        ThresholdPolicy { theta, smoothing: None }
    }

    pub fn sigmoid(theta: f64, eps: f64) -> Self {
        ThresholdPolicy { theta, smoothing: Some(eps) }
    }

    /// Probability of continuing at `prior0`.
    pub fn continue_prob(&self, prior0: f64) -> f64 {
        match self.smoothing {
            None => f64::from(u8::from(prior0 <= self.theta)),
            Some(eps) => sigmoid_continue_prob(prior0, self.theta, eps),
        }
    }

    pub fn decide(&self, prior: &Belief, rng: &mut SimRng) -> Decision {
        match self.smoothing {
            None => hard_threshold_decide(prior, self.theta),
            Some(_) => {
                if rng.gen::<f64>() < self.continue_prob(prior.get(0)) {
                    Decision::Continue
                } else {
                    Decision::Stop
                }
            }
        }
    }
}

/// Optimal-stopping formulation of herding control.
#[derive(Clone, Debug)]
pub struct StoppingProblem {
    pub obs: ObservationModel,
    pub cost: CostSpec,
    pub rho: f64,
    /// Per-step cost of continuing while the state is the target.
    pub delay: f64,
    /// Penalty for stopping in a state other than the target.
    pub error_penalty: f64,
    pub target: usize,
    pub horizon: usize,
    pub pi0: Belief,
}

impl StoppingProblem {
    pub fn new(
        obs: ObservationModel,
        cost: CostSpec,
        rho: f64,
        delay: f64,
        error_penalty: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidParameter(format!("discount must lie in (0, 1), got {rho}")));
        }
        if !(delay >= 0.0 && error_penalty >= 0.0) {
            return Err(Error::InvalidParameter("delay and error penalty must be nonnegative".into()));
        }
        if cost.n_states() != obs.n_states() {
            return Err(Error::DimensionMismatch("cost table and kernel disagree on the state count".into()));
        }
        if cost.n_actions() != obs.n_obs() {
            return Err(Error::DimensionMismatch(format!(
                "revealing observations needs as many actions as observations ({} vs {})",
                cost.n_actions(),
                obs.n_obs()
            )));
        }
        let pi0 = Belief::uniform(obs.n_states());
        Ok(StoppingProblem { obs, cost, rho, delay, error_penalty, target: 0, horizon, pi0 })
    }

    /// Two states, `P(y = x) = 0.7`, `c = 1(x != u)`, `d = 10`, penalty 50, discount 0.99, 100 steps.
    pub fn reference() -> Self {
        Self::new(ObservationModel::binary_symmetric(0.7).expect("valid"), CostSpec::zero_one(2), 0.99, 10.0, 50.0, 100)
            .expect("valid")
    }

    /// Terminal cost `C(pi, stop) = min_u c_u . pi / (1 - rho)`.
    pub fn stop_cost(&self, pi: &Belief) -> f64 {
        (0..self.cost.n_actions()).map(|u| self.cost.expected(u, pi.probs())).fold(f64::INFINITY, f64::min)
            / (1.0 - self.rho)
    }

    /// Running cost `C(pi, continue)` after subtracting the discounted stopping penalty.
    pub fn continue_cost(&self, pi: &Belief) -> f64 {
        let reveal: f64 = (0..self.obs.n_obs())
            .map(|y| {
                (0..self.obs.n_states()).map(|x| self.cost.cost(x, y) * self.obs.prob(x, y) * pi.get(x)).sum::<f64>()
            })
            .sum();
        let k = (1.0 - self.rho) * self.error_penalty;
        reveal + (self.delay + k) * pi.get(self.target) - k
    }
}

/// Monte Carlo estimate of the realised stopping cost of a policy.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialisticEval {
    pub mean_cost: f64,
    pub mean_stop_time: f64,
    /// Fraction of runs whose declared state equals the true state.
    pub accuracy: f64,
    pub costs: Vec<f64>,
}

struct StopRun {
    cost: f64,
    stop_time: usize,
    correct: bool,
}

fn stopping_run(sp: &StoppingProblem, policy: &ThresholdPolicy, x: usize, seed: u64) -> StopRun {
    let mut rng = rng_from_seed(seed);
    let mut pi = sp.pi0.clone();
    let mut cost = 0.0;
    let mut disc = 1.0;
    for k in 1..=sp.horizon {
        match policy.decide(&pi, &mut rng) {
            Decision::Continue => {
                let y = sp.obs.sample(x, &mut rng);
                let u = y;
                cost += disc * (sp.cost.cost(x, u) + sp.delay * f64::from(u8::from(x == sp.target)));
                if let Ok(next) = social::bayes_update(&pi, y, &sp.obs) {
                    pi = next;
                }
            }
            Decision::Stop => {
                // Every later agent herds on the action the stopping belief favours.
                let herd = herd_action(&pi, &sp.cost);
                let penalty = sp.error_penalty * f64::from(u8::from(x != sp.target));
                cost += disc * (penalty + sp.cost.cost(x, herd) / (1.0 - sp.rho));
                return StopRun { cost, stop_time: k, correct: herd == x };
            }
        }
        disc *= sp.rho;
    }
    StopRun { cost, stop_time: sp.horizon, correct: herd_action(&pi, &sp.cost) == x }
}

/// Average realised cost, stopping time and accuracy over `n_runs` episodes.
///
/// Run `r` has true state `r mod X`, so every state is equally represented.
pub fn eval_socialistic_cost(
    sp: &StoppingProblem,
    policy: &ThresholdPolicy,
    n_runs: usize,
    seed: u64,
) -> Result<SocialisticEval> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter("at least one run is required".into()));
    }
    let nx = sp.obs.n_states();
    let runs: Vec<StopRun> =
        (0..n_runs).into_par_iter().map(|r| stopping_run(sp, policy, r % nx, derive_seed(seed, r as u64))).collect();
    let costs: Vec<f64> = runs.iter().map(|r| r.cost).collect();
    Ok(SocialisticEval {
        mean_cost: mean(&costs),
        mean_stop_time: runs.iter().map(|r| r.stop_time as f64).sum::<f64>() / n_runs as f64,
        accuracy: runs.iter().filter(|r| r.correct).count() as f64 / n_runs as f64,
        costs,
    })
}

/// Evaluates hard thresholds on an evenly spaced grid over `[0, 1]`; every grid point reuses the same run seeds.
pub fn stopping_sweep(
    sp: &StoppingProblem,
    grid: usize,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<(f64, SocialisticEval)>> {
    threshold_grid(grid)
        .into_iter()
        .map(|t| eval_socialistic_cost(sp, &ThresholdPolicy::hard(t), n_runs, seed).map(|e| (t, e)))
        .collect()
}

/// `n` evenly spaced points from 0 to 1 inclusive.
pub fn threshold_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn stopping_sweep_csv(rows: &[(f64, SocialisticEval)]) -> String {
    let mut out = csv_line(["theta", "mean_cost", "mean_stop_time", "accuracy"]);
    for (t, e) in rows {
        out.push_str(&csv_line([fmt_g(*t), fmt_g(e.mean_cost), fmt_g(e.mean_stop_time), fmt_g(e.accuracy)]));
    }
    out
}

/// Stop/continue labels of the optimal policy on a grid of `prior(0)` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueIterationResult {
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub decisions: Vec<Decision>,
    pub sweeps: usize,
}

impl ValueIterationResult {
    /// Number of adjacent grid points with different decisions.
    pub fn crossings(&self) -> usize {
        self.decisions.windows(2).filter(|w| w[0] != w[1]).count()
    }
}

/// Solves the two-state stopping problem on a belief grid with nearest-point projection.
pub fn value_iteration_diagnostic(sp: &StoppingProblem, grid_points: usize) -> Result<ValueIterationResult> {
    if sp.obs.n_states() != 2 {
        return Err(Error::DimensionMismatch("value iteration is implemented for two states".into()));
    }
    if grid_points < 2 {
        return Err(Error::InvalidParameter("the belief grid needs at least two points".into()));
    }
    let grid = threshold_grid(grid_points);
    let beliefs: Vec<Belief> = grid.iter().map(|&p| Belief::binary(p).expect("grid point")).collect();
    let stop: Vec<f64> = beliefs.iter().map(|b| sp.stop_cost(b)).collect();
    let run: Vec<f64> = beliefs.iter().map(|b| sp.continue_cost(b)).collect();
    // Successor grid index and probability for each observation.
    let step = (grid_points - 1) as f64;
    let moves: Vec<Vec<(usize, f64)>> = beliefs
        .iter()
        .map(|b| {
            (0..sp.obs.n_obs())
                .filter_map(|y| {
                    let sigma: f64 = (0..2).map(|x| sp.obs.prob(x, y) * b.get(x)).sum();
                    let next = social::bayes_update(b, y, &sp.obs).ok()?;
                    Some((((next.get(0) * step).round() as usize).min(grid_points - 1), sigma))
                })
                .collect()
        })
        .collect();
    let q_continue = |v: &[f64], i: usize| run[i] + sp.rho * moves[i].iter().map(|&(j, s)| s * v[j]).sum::<f64>();
    let mut v = vec![0.0; grid_points];
    let mut last_delta = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let next: Vec<f64> = (0..grid_points).map(|i| stop[i].min(q_continue(&v, i))).collect();
        last_delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = next;
        if last_delta < VI_TOL {
            let decisions = (0..grid_points)
                .map(|i| if stop[i] <= q_continue(&v, i) + 1e-12 { Decision::Stop } else { Decision::Continue })
                .collect();
            return Ok(ValueIterationResult { grid, value: v, decisions, sweeps: sweep });
        }
    }
    Err(Error::NonConvergence { sweeps: MAX_SWEEPS, delta: last_delta })
}

/// Price that makes revealing weakly optimal after observation `y`, clamped at zero.
///
/// `q` is the posterior probability of the flagged state (index 1).
pub fn incentive_chi(prior: &Belief, y: usize, obs: &ObservationModel, params: &IncentiveCostParams) -> Result<f64> {
    if prior.len() != 2 || obs.n_states() != 2 {
        return Err(Error::DimensionMismatch("incentives are defined for two states".into()));
    }
    let q = social::bayes_update(prior, y, obs)?.get(1);
    Ok(chi_at(q, params))
}

fn chi_at(q: f64, p: &IncentiveCostParams) -> f64 {
    let dw = p.reward_weight(1) - p.reward_weight(0);
    (((p.alpha[1] - p.alpha[0]) * q + (p.delta[1] - p.delta[0])) / dw).max(0.0)
}

/// Expected cost of herding (`mode = 0`) or revealing (`mode = 1`) at flagged-state posterior `q` and payment `p`.
pub fn mode_cost(mode: usize, q: f64, payment: f64, params: &IncentiveCostParams) -> f64 {
    params.alpha[mode] * q + params.delta[mode] - params.reward_weight(mode) * payment
}

/// Which side of the threshold on `prior(0)` receives incentives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IncentiveGate {
    /// Pay when `prior(0) > theta`.
    Above,
    /// Pay when `prior(0) <= theta`.
    AtOrBelow,
}

/// Hard or sigmoid-smoothed threshold rule for paying incentives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncentivePolicy {
    pub theta: f64,
    pub gate: IncentiveGate,
    pub smoothing: Option<f64>,
}

impl IncentivePolicy {
    pub fn hard(theta: f64, gate: IncentiveGate) -> Self {
        IncentivePolicy { theta, gate, smoothing: None }
    }

    pub fn sigmoid(theta: f64, gate: IncentiveGate, eps: f64) -> Self {
        IncentivePolicy { theta, gate, smoothing: Some(eps) }
    }

    /// Probability that the controller pays at `prior0`.
    pub fn pay_prob(&self, prior0: f64) -> f64 {
        let below = match self.smoothing {
            None => f64::from(u8::from(prior0 <= self.theta)),
            Some(eps) => sigmoid_continue_prob(prior0, self.theta, eps),
        };
        match self.gate {
            IncentiveGate::AtOrBelow => below,
            IncentiveGate::Above => 1.0 - below,
        }
    }
}

/// Hard-threshold incentive: `chi(y, prior)` when `prior(0) > theta`, otherwise nothing.
pub fn incentive_policy_decide(
    prior: &Belief,
    y: usize,
    theta: f64,
    obs: &ObservationModel,
    params: &IncentiveCostParams,
) -> Result<f64> {
    if prior.get(0) <= theta {
        Ok(0.0)
    } else {
        incentive_chi(prior, y, obs, params)
    }
}

/// Per-step fusion cost `p_k - g(k) 1(u_k = y_k)`.
pub fn fusion_cost(payment: f64, k: usize, revealed: bool, g0: f64) -> f64 {
    payment - reveal_reward(k, g0) * f64::from(u8::from(revealed))
}

/// Value to the controller of a revealed observation at step `k`: `g0 / (1 + k)`.
pub fn reveal_reward(k: usize, g0: f64) -> f64 {
    g0 / (1.0 + k as f64)
}

/// The incentivised information-fusion problem.
#[derive(Clone, Debug)]
pub struct IncentiveProblem {
    pub obs: ObservationModel,
    pub params: IncentiveCostParams,
    pub horizon: usize,
    pub pi0: Belief,
    pub g0: f64,
    /// Discount of the fusion cost; `None` sums the undiscounted cost over the horizon.
    pub discount: Option<f64>,
    /// Upper clamp on each payment.
    pub max_payment: Option<f64>,
}

impl IncentiveProblem {
    pub fn new(obs: ObservationModel, params: IncentiveCostParams, horizon: usize) -> Result<Self> {
        if obs.n_states() != 2 || obs.n_obs() != 2 {
            return Err(Error::DimensionMismatch("incentives are defined for two states and observations".into()));
        }
        Ok(IncentiveProblem {
            obs,
            params,
            horizon,
            pi0: Belief::uniform(2),
            g0: 1.0,
            discount: None,
            max_payment: None,
        })
    }

    /// `P(y = x) = 0.7`, alpha `(0.8, 1.3)`, delta `(0.1, 0.5)`, omega `(0.2, 0.5)`, 100 steps.
    pub fn reference() -> Self {
        let params = IncentiveCostParams::new([0.8, 1.3], [0.1, 0.5], [0.2, 0.5]).expect("valid");
        Self::new(ObservationModel::binary_symmetric(0.7).expect("valid"), params, 100).expect("valid")
    }

    fn payment(&self, prior: &Belief, y: usize) -> f64 {
        let q = social::bayes_update(prior, y, &self.obs).map_or(prior.get(1), |b| b.get(1));
        let chi = chi_at(q, &self.params);
        self.max_payment.map_or(chi, |cap| chi.min(cap))
    }

    /// Action of an agent that saw `y` and was offered `payment`, and whether it revealed `y`.
    pub fn agent_action(&self, prior: &Belief, y: usize, payment: f64) -> (usize, Mode) {
        let post = social::bayes_update(prior, y, &self.obs).unwrap_or_else(|_| prior.clone());
        let q = post.get(1);
        if mode_cost(1, q, payment, &self.params) <= mode_cost(0, q, payment, &self.params) {
            (y, Mode::Reveal)
        } else {
            (social::optimal_actions(post.probs(), &CostSpec::zero_one(2))[0], Mode::Myopic)
        }
    }

    /// Public belief after action `u`, accounting for the randomised payment rule.
    fn public_update(&self, prior: &Belief, u: usize, policy: &IncentivePolicy) -> Result<Belief> {
        let pay = policy.pay_prob(prior.get(0));
        let mut lik = [0.0; 2];
        for y in 0..2 {
            let mut pu = 0.0;
            if pay > 0.0 && self.agent_action(prior, y, self.payment(prior, y)).0 == u {
                pu += pay;
            }
            if pay < 1.0 && self.agent_action(prior, y, 0.0).0 == u {
                pu += 1.0 - pay;
            }
            for (x, l) in lik.iter_mut().enumerate() {
                *l += pu * self.obs.prob(x, y);
            }
        }
        filter_with_likelihood(prior, &lik, None, u)
    }
}

/// Simulates one incentivised episode.
pub fn run_incentivized_episode(
    ip: &IncentiveProblem,
    policy: &IncentivePolicy,
    true_state: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut rng = rng_from_seed(seed);
    let mut pi = ip.pi0.clone();
    let mut steps = Vec::with_capacity(ip.horizon);
    for k in 1..=ip.horizon {
        let y = ip.obs.sample(true_state, &mut rng);
        let pay = policy.pay_prob(pi.get(0));
        let payment = if pay >= 1.0 || (pay > 0.0 && rng.gen::<f64>() < pay) { ip.payment(&pi, y) } else { 0.0 };
        let (u, mode) = ip.agent_action(&pi, y, payment);
        let next = ip.public_update(&pi, u, policy)?;
        steps.push(StepRecord {
            step: k,
            state: true_state,
            obs: y,
            action: u,
            mode,
            incentive: payment,
            prior_before: pi,
            prior_after: next.clone(),
            text_id: None,
        });
        pi = next;
    }
    Ok(EpisodeTrace::new(seed, true_state, steps))
}

/// Fusion cost of a finished episode.
pub fn episode_fusion_cost(ip: &IncentiveProblem, trace: &EpisodeTrace) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for s in &trace.steps {
        total += disc * fusion_cost(s.incentive, s.step, s.action == s.obs, ip.g0);
        if let Some(rho) = ip.discount {
            disc *= rho;
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct FusionEval {
    pub mean_cost: f64,
    pub mean_total_incentive: f64,
    /// Fraction of runs whose final public belief puts most mass on the true state.
    pub classification_rate: f64,
}

fn incentive_runs(
    ip: &IncentiveProblem,
    policy: &IncentivePolicy,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let s = derive_seed(seed, r as u64);
            let x = sample_categorical(&[0.5, 0.5], &mut rng_from_seed(s ^ 0x5851_F42D_4C95_7F2D));
            run_incentivized_episode(ip, policy, x, s)
        })
        .collect()
}

/// Monte Carlo fusion cost, total incentive and classification rate with a uniform true state.
pub fn eval_fusion_cost(
    ip: &IncentiveProblem,
    policy: &IncentivePolicy,
    n_runs: usize,
    seed: u64,
) -> Result<FusionEval> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter("at least one run is required".into()));
    }
    let traces = incentive_runs(ip, policy, n_runs, seed)?;
    Ok(summarise_fusion(ip, &traces))
}

fn summarise_fusion(ip: &IncentiveProblem, traces: &[EpisodeTrace]) -> FusionEval {
    let costs: Vec<f64> = traces.iter().map(|t| episode_fusion_cost(ip, t)).collect();
    let totals: Vec<f64> = traces.iter().map(|t| t.steps.iter().map(|s| s.incentive).sum()).collect();
    let right = traces.iter().filter(|t| t.final_prior().is_some_and(|b| b.argmax() == t.true_state)).count();
    FusionEval {
        mean_cost: mean(&costs),
        mean_total_incentive: mean(&totals),
        classification_rate: right as f64 / traces.len() as f64,
    }
}

/// Episodes of an incentive policy, for diagnostics.
pub fn incentive_traces(
    ip: &IncentiveProblem,
    policy: &IncentivePolicy,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<EpisodeTrace>> {
    incentive_runs(ip, policy, n_runs, seed)
}

pub fn incentive_sweep(
    ip: &IncentiveProblem,
    gate: IncentiveGate,
    grid: usize,
    n_runs: usize,
    seed: u64,
) -> Result<Vec<(f64, FusionEval)>> {
    threshold_grid(grid)
        .into_iter()
        .map(|t| eval_fusion_cost(ip, &IncentivePolicy::hard(t, gate), n_runs, seed).map(|e| (t, e)))
        .collect()
}

pub fn incentive_sweep_csv(rows: &[(f64, FusionEval)]) -> String {
    let mut out = csv_line(["theta", "total_incentive", "classification_rate"]);
    for (t, e) in rows {
        out.push_str(&csv_line([fmt_g(*t), fmt_g(e.mean_total_incentive), fmt_g(e.classification_rate)]));
    }
    out
}

/// Step-size schedule and perturbation of the stochastic approximation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpsaConfig {
    pub theta0: f64,
    pub delta: f64,
    pub iterations: usize,
    /// Step size at the first iteration.
    pub step_start: f64,
    /// Step size at the last iteration; intermediate steps interpolate linearly.
    pub step_end: f64,
}

impl SpsaConfig {
    pub fn step(&self, m: usize) -> f64 {
        if self.iterations <= 1 {
            return self.step_start;
        }
        let f = m as f64 / (self.iterations - 1) as f64;
        self.step_start + (self.step_end - self.step_start) * f
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpsaStep {
    pub iter: usize,
    pub theta: f64,
    /// Mean of the two perturbed cost estimates.
    pub cost: f64,
}

/// Minimises `objective(theta, seed)` over `[0, 1]`; both perturbations of an iteration share a seed.
pub fn spsa_optimize<F>(objective: F, cfg: &SpsaConfig, seed: u64) -> Vec<SpsaStep>
where
    F: Fn(f64, u64) -> f64,
{
    let mut theta = cfg.theta0.clamp(0.0, 1.0);
    let mut history = Vec::with_capacity(cfg.iterations);
    for m in 0..cfg.iterations {
        let s = derive_seed(seed, m as u64);
        let plus = objective(theta + cfg.delta, s);
        let minus = objective(theta - cfg.delta, s);
        let grad = (plus - minus) / (2.0 * cfg.delta);
        theta = (theta - cfg.step(m) * grad).clamp(0.0, 1.0);
        history.push(SpsaStep { iter: m + 1, theta, cost: 0.5 * (plus + minus) });
    }
    history
}

pub fn spsa_csv(history: &[SpsaStep]) -> String {
    let mut out = csv_line(["iter", "theta", "cost"]);
    for h in history {
        out.push_str(&csv_line([h.iter.to_string(), fmt_g(h.theta), fmt_g(h.cost)]));
    }
    out
}

/// Drift of the payment sequence within one bin of the public belief.
#[derive(Clone, Debug, PartialEq)]
pub struct DriftBin {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub mean_current: f64,
    pub mean_next: f64,
    pub se: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubmartingaleReport {
    pub n_pairs: usize,
    pub bins: Vec<DriftBin>,
    pub holds: bool,
}

impl SubmartingaleReport {
    pub fn failing_bins(&self) -> impl Iterator<Item = &DriftBin> {
        self.bins.iter().filter(|b| !b.passes)
    }
}

/// Tests `E[p_{k+1} | bin] >= E[p_k | bin] - 3 SE`, binning step `k` by the public belief `prior(0)` it was priced at.
pub fn submartingale_check(traces: &[EpisodeTrace], n_bins: usize) -> Result<SubmartingaleReport> {
    let mut diffs: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_bins.max(1)];
    let mut n_pairs = 0;
    for t in traces {
        for w in t.steps.windows(2) {
            let b = crate::stats::unit_bin(w[0].prior_before.get(0), n_bins.max(1));
            diffs[b].push((w[0].incentive, w[1].incentive));
            n_pairs += 1;
        }
    }
    if n_pairs < MIN_SUBMARTINGALE_STEPS {
        return Err(Error::InsufficientData { needed: MIN_SUBMARTINGALE_STEPS, got: n_pairs });
    }
    let width = 1.0 / n_bins.max(1) as f64;
    let bins: Vec<DriftBin> = diffs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.len() >= MIN_BIN_COUNT)
        .map(|(i, d)| {
            let delta: Vec<f64> = d.iter().map(|(a, b)| b - a).collect();
            let ms = mean_se(&delta);
            DriftBin {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                n: d.len(),
                mean_current: mean(&d.iter().map(|p| p.0).collect::<Vec<_>>()),
                mean_next: mean(&d.iter().map(|p| p.1).collect::<Vec<_>>()),
                se: ms.se,
                passes: ms.mean >= -3.0 * ms.se - 1e-12,
            }
        })
        .collect();
    let holds = bins.iter().all(|b| b.passes);
    Ok(SubmartingaleReport { n_pairs, bins, holds })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetReport {
    pub budget: f64,
    pub exceed_prob: f64,
    pub se: f64,
    /// Markov bound `horizon / budget` for payments in `[0, 1]`.
    pub bound: f64,
    pub holds: bool,
}

/// Empirical probability that total payments reach `budget`, with payments clamped to `[0, 1]`.
pub fn budget_bound_check(
    ip: &IncentiveProblem,
    policy: &IncentivePolicy,
    budget: f64,
    n_runs: usize,
    seed: u64,
) -> Result<BudgetReport> {
    if !(budget > 0.0) {
        return Err(Error::InvalidParameter("budget must be positive".into()));
    }
    let mut clamped = ip.clone();
    clamped.max_payment = Some(clamped.max_payment.map_or(1.0, |c| c.min(1.0)));
    let traces = incentive_runs(&clamped, policy, n_runs, seed)?;
    let hits: Vec<f64> = traces
        .iter()
        .map(|t| f64::from(u8::from(t.steps.iter().map(|s| s.incentive).sum::<f64>() >= budget)))
        .collect();
    let p = mean(&hits);
    let se = (p * (1.0 - p) / n_runs as f64).sqrt();
    let bound = ip.horizon as f64 / budget;
    Ok(BudgetReport { budget, exceed_prob: p, se, bound, holds: p <= bound + 3.0 * se })
}
