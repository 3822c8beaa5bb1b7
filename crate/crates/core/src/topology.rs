//! Information structures beyond the sequential chain.
//!
//! Word of mouth passes each fresh observation down a hierarchy of agents, each
//! seeing a regenerated version of its predecessor's observation. Naive
//! asynchronous fusion lets agents overwrite a shared board without tracking
//! which observations it already contains.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_line, fmt_g};
use crate::model::{Belief, ObservationModel};
use crate::random::{derive_seed, rng_from_seed, SimRng};
use crate::sensor::{Sensor, SyntheticSensor};
use crate::social::{self, AgentModel, EpisodeTrace, Mode, Region, StepRecord};

/// When the public belief absorbs the actions of one outer step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WomVariant {
    /// After every level.
    PerLevel,
    /// Once, after all levels acted on the same prior.
    PerOuterStep,
}

#[derive(Clone, Debug)]
pub struct WomConfig {
    pub n_levels: usize,
    /// Observation-to-observation map applied between consecutive levels.
    pub regen: ObservationModel,
    pub agent: AgentModel,
    pub outer_steps: usize,
    pub variant: WomVariant,
}

impl WomConfig {
    pub fn new(n_levels: usize, regen: ObservationModel, agent: AgentModel, outer_steps: usize) -> Result<Self> {
        if n_levels < 2 {
            return Err(Error::InvalidParameter(format!("word of mouth needs at least two levels, got {n_levels}")));
        }
        if regen.n_states() != agent.n_obs() || regen.n_obs() != agent.n_obs() {
            return Err(Error::DimensionMismatch("regeneration map must be square over observations".into()));
        }
        Ok(WomConfig { n_levels, regen, agent, outer_steps, variant: WomVariant::PerLevel })
    }

    /// Agents at each level, with the kernel from the state to that level's observation.
    pub fn level_agents(&self) -> Result<Vec<AgentModel>> {
        let mut out = Vec::with_capacity(self.n_levels);
        let mut kernel = self.agent.obs.clone();
        for m in 0..self.n_levels {
            if m > 0 {
                kernel = kernel.compose(&self.regen)?;
            }
            out.push(AgentModel { obs: kernel.clone(), ..self.agent.clone() });
        }
        Ok(out)
    }
}

/// Simulates `outer_steps` rounds of the hierarchy; steps are numbered across levels.
pub fn run_word_of_mouth(cfg: &WomConfig, true_state: usize, pi0: &Belief, seed: u64) -> Result<EpisodeTrace> {
    if true_state >= cfg.agent.n_states() || pi0.len() != cfg.agent.n_states() {
        return Err(Error::DimensionMismatch("true state or prior does not match the agent model".into()));
    }
    let levels = cfg.level_agents()?;
    let mut rng = rng_from_seed(seed);
    let mut pi = pi0.clone();
    let mut steps = Vec::with_capacity(cfg.outer_steps * cfg.n_levels);
    for _ in 0..cfg.outer_steps {
        let outer_prior = pi.clone();
        let mut pending = vec![1.0; pi.len()];
        let mut y = cfg.agent.obs.sample(true_state, &mut rng);
        for (m, am) in levels.iter().enumerate() {
            if m > 0 {
                y = cfg.regen.sample(y, &mut rng);
            }
            let acting_prior = match cfg.variant {
                WomVariant::PerLevel => &pi,
                WomVariant::PerOuterStep => &outer_prior,
            };
            let post = social::bayes_update(acting_prior, y, &am.obs).unwrap_or_else(|_| acting_prior.clone());
            let u = social::select_action(&post, &am.cost, am.tie_break, &mut rng);
            let before = pi.clone();
            match cfg.variant {
                WomVariant::PerLevel => pi = social::public_prior_update(&pi, u, am, None)?,
                WomVariant::PerOuterStep => {
                    let lik = social::action_likelihood(&outer_prior, u, am)?;
                    pending.iter_mut().zip(&lik).for_each(|(a, l)| *a *= l);
                    if m + 1 == levels.len() {
                        pi = social::filter_with_likelihood(&outer_prior, &pending, None, u)?;
                    }
                }
            }
            steps.push(StepRecord {
                step: steps.len() + 1,
                state: true_state,
                obs: y,
                action: u,
                mode: Mode::Myopic,
                incentive: 0.0,
                prior_before: before,
                prior_after: pi.clone(),
                text_id: None,
            });
        }
    }
    Ok(EpisodeTrace::new(seed, true_state, steps))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    /// The agent takes a fresh private observation.
    Draw,
    /// The agent applies its latest observation to the board belief.
    Update,
    /// The agent overwrites the board with its local belief.
    Broadcast,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Draw => "draw",
            EventKind::Update => "update",
            EventKind::Broadcast => "broadcast",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub agent: usize,
    pub kind: EventKind,
}

impl ScheduleEvent {
    pub fn new(agent: usize, kind: EventKind) -> Self {
        ScheduleEvent { agent, kind }
    }
}

/// Parses `event_index,agent,kind` rows; events run in ascending index order.
pub fn parse_schedule(text: &str, path: &Path) -> Result<Vec<ScheduleEvent>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["event_index", "agent", "kind"]) => {}
        _ => return Err(Error::parse(path, 1, "expected header `event_index,agent,kind`")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected three fields"));
        }
        let idx: usize = cells[0].parse().map_err(|_| Error::parse(path, i + 1, "bad event index"))?;
        let agent: usize = cells[1].parse().map_err(|_| Error::parse(path, i + 1, "bad agent index"))?;
        let kind = match cells[2] {
            "draw" => EventKind::Draw,
            "update" => EventKind::Update,
            "broadcast" => EventKind::Broadcast,
            other => return Err(Error::parse(path, i + 1, format!("unknown event kind `{other}`"))),
        };
        rows.push((idx, ScheduleEvent { agent, kind }));
    }
    rows.sort_by_key(|r| r.0);
    if rows.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::parse(path, 0, "duplicate event index"));
    }
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn read_schedule(path: &Path) -> Result<Vec<ScheduleEvent>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_schedule(&text, path)
}

pub fn format_schedule(schedule: &[ScheduleEvent]) -> String {
    let mut out = csv_line(["event_index", "agent", "kind"]);
    for (i, e) in schedule.iter().enumerate() {
        out.push_str(&csv_line([i.to_string(), e.agent.to_string(), e.kind.as_str().to_string()]));
    }
    out
}

/// Each agent draws, updates from the board and broadcasts in turn.
pub fn sequential_chain(n_agents: usize) -> Vec<ScheduleEvent> {
    (0..n_agents)
        .flat_map(|a| [EventKind::Draw, EventKind::Update, EventKind::Broadcast].map(|k| ScheduleEvent::new(a, k)))
        .collect()
}

/// One agent applies the same observation twice to the board.
pub fn double_count_schedule() -> Vec<ScheduleEvent> {
    use EventKind::*;
    [Draw, Update, Broadcast, Update, Broadcast].into_iter().map(|k| ScheduleEvent::new(0, k)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsyncOutcome {
    /// Local belief of each agent after each of its updates.
    pub histories: Vec<Vec<Belief>>,
    /// Observation values in draw order; ids index this vector.
    pub observations: Vec<usize>,
    /// Observation ids behind the final board, counted with multiplicity.
    pub provenance: Vec<usize>,
    pub naive: Belief,
    pub correct: Belief,
    /// `KL(naive || correct)`.
    pub incest: f64,
}

impl AsyncOutcome {
    pub fn has_duplicates(&self) -> bool {
        let mut seen = HashSet::new();
        !self.provenance.iter().all(|id| seen.insert(*id))
    }
}

/// Runs the schedule with synthetic observations from the true state.
pub fn run_async_fusion(
    n_agents: usize,
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    schedule: &[ScheduleEvent],
    seed: u64,
) -> Result<AsyncOutcome> {
    let mut sensor = SyntheticSensor::new(am.obs.clone());
    run_async_fusion_with_sensor(n_agents, am, true_state, pi0, schedule, &mut sensor, &mut rng_from_seed(seed))
}

pub fn run_async_fusion_with_sensor(
    n_agents: usize,
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    schedule: &[ScheduleEvent],
    sensor: &mut dyn Sensor,
    rng: &mut SimRng,
) -> Result<AsyncOutcome> {
    if let Some((i, e)) = schedule.iter().enumerate().find(|(_, e)| e.agent >= n_agents) {
        return Err(Error::InvalidSchedule { index: i, reason: format!("agent {} out of range", e.agent) });
    }
    let mut board = (pi0.clone(), Vec::<usize>::new());
    let mut local: Vec<(Belief, Vec<usize>)> = vec![(pi0.clone(), Vec::new()); n_agents];
    let mut latest: Vec<Option<usize>> = vec![None; n_agents];
    let mut histories = vec![Vec::new(); n_agents];
    let mut observations = Vec::new();
    for (i, e) in schedule.iter().enumerate() {
        let a = e.agent;
        match e.kind {
            EventKind::Draw => {
                observations.push(sensor.observe(true_state, rng)?);
                latest[a] = Some(observations.len() - 1);
            }
            EventKind::Update => {
                let id = latest[a].ok_or_else(|| Error::InvalidSchedule {
                    index: i,
                    reason: format!("agent {a} updates before drawing"),
                })?;
                let b = social::bayes_update(&board.0, observations[id], &am.obs)?;
                let mut prov = board.1.clone();
                prov.push(id);
                histories[a].push(b.clone());
                local[a] = (b, prov);
            }
            EventKind::Broadcast => board = local[a].clone(),
        }
    }
    let mut seen = HashSet::new();
    let mut correct = pi0.clone();
    for &id in board.1.iter().filter(|id| seen.insert(**id)) {
        correct = social::bayes_update(&correct, observations[id], &am.obs)?;
    }
    let incest = board.0.kl_divergence(&correct);
    Ok(AsyncOutcome { histories, observations, provenance: board.1, naive: board.0, correct, incest })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncestRow {
    pub run: usize,
    pub kl: f64,
    /// Whether the final board sits in a herding region.
    pub cascaded: bool,
}

/// Runs the schedule `n_runs` times with derived seeds.
pub fn incest_batch(
    n_agents: usize,
    am: &AgentModel,
    true_state: usize,
    pi0: &Belief,
    schedule: &[ScheduleEvent],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<IncestRow>> {
    (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let out = run_async_fusion(n_agents, am, true_state, pi0, schedule, derive_seed(seed, r as u64))?;
            let cascaded = social::classify_region(&out.naive, am)? != Region::Learning;
            Ok(IncestRow { run: r, kl: out.incest, cascaded })
        })
        .collect()
}

pub fn incest_csv(rows: &[IncestRow]) -> String {
    let mut out = csv_line(["run", "kl_naive_vs_correct", "cascaded"]);
    for r in rows {
        out.push_str(&csv_line([r.run.to_string(), fmt_g(r.kl), u8::from(r.cascaded).to_string()]));
    }
    out
}
