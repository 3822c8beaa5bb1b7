use herding::brp::{self, BrpDataset, Verdict};
use herding::control::{
    self, budget_bound_check, eval_fusion_cost, incentive_traces, spsa_optimize, submartingale_check,
    value_iteration_diagnostic, IncentiveGate, IncentivePolicy, IncentiveProblem, SpsaConfig, StoppingProblem,
};
use herding::format::{csv_line, fmt_g};
use herding::random::{derive_seed, rng_from_seed};
use herding::sensor::{RemoteConfig, SensorSpec};
use herding::social::{self, AgentModel, EpisodeTrace, Region, TieBreak};
use herding::topology::{self, EventKind, IncestRow, ScheduleEvent, WomConfig, WomVariant};
use herding::{Belief, CostSpec, IncentiveCostParams, ObservationModel};

use crate::config::{CResult, Config, ConfigError};

/// Settings shared by all subcommands.
#[derive(Clone, Copy, Debug)]
pub struct Globals {
    pub seed: u64,
    pub runs: usize,
}

/// Files to write in the output directory, and a negative verdict if any.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub negative: Option<String>,
}

/// A fully validated experiment, ready to run.
pub trait Plan {
    fn run(&self, g: Globals) -> herding::Result<Outcome>;
}

fn obs_model(cfg: &Config, key: &str, default_accuracy: f64) -> CResult<ObservationModel> {
    match cfg.matrix(key)? {
        Some(m) => ObservationModel::new(m).map_err(|e| ConfigError::new(key, e)),
        None => Ok(ObservationModel::binary_symmetric(default_accuracy).expect("valid default")),
    }
}

fn cost_table(cfg: &Config, key: &str, n_states: usize) -> CResult<CostSpec> {
    let cost = match cfg.matrix(key)? {
        Some(m) => CostSpec::new(m).map_err(|e| ConfigError::new(key, e))?,
        None => CostSpec::zero_one(n_states),
    };
    if cost.n_states() != n_states {
        return Err(ConfigError::new(key, format!("needs {n_states} rows, one per state")));
    }
    Ok(cost)
}

fn belief(cfg: &Config, key: &str, n: usize) -> CResult<Belief> {
    match cfg.list::<f64>(key)? {
        None => Ok(Belief::uniform(n)),
        Some(v) if v.len() != n => Err(ConfigError::new(key, format!("expected {n} entries, got {}", v.len()))),
        Some(v) => Belief::new(v).map_err(|e| ConfigError::new(key, e)),
    }
}

fn state_index(cfg: &Config, key: &str, n: usize, default: usize) -> CResult<usize> {
    let x = cfg.get(key, default)?;
    if x >= n {
        return Err(ConfigError::new(key, format!("state {x} out of range for {n} states")));
    }
    Ok(x)
}

fn positive(key: &str, v: usize) -> CResult<usize> {
    if v == 0 {
        return Err(ConfigError::new(key, "must be positive"));
    }
    Ok(v)
}

fn agent(cfg: &Config, default_accuracy: f64) -> CResult<AgentModel> {
    let obs = obs_model(cfg, "model.obs", default_accuracy)?;
    let cost = cost_table(cfg, "model.cost", obs.n_states())?;
    let tie = match cfg.choice("model.tie_break", &["lowest", "random"], "lowest")? {
        "lowest" => TieBreak::LowestIndex,
        _ => TieBreak::SeededUniform,
    };
    AgentModel::new(obs, cost, tie).map_err(|e| ConfigError::new("model.cost", e))
}

fn region_label(r: Region) -> String {
    match r {
        Region::Learning => "learning".into(),
        Region::HerdTo(u) => format!("herd_{u}"),
    }
}

fn header(prefix: &[&str], name: &str, n: usize, suffix: &[&str]) -> String {
    let cols: Vec<String> = prefix
        .iter()
        .map(|s| s.to_string())
        .chain((0..n).map(|i| format!("{name}_{i}")))
        .chain(suffix.iter().map(|s| s.to_string()))
        .collect();
    csv_line(&cols)
}

pub struct HerdingSim {
    am: AgentModel,
    priors: Vec<Belief>,
    true_states: Vec<usize>,
    horizon: usize,
    window: usize,
    sensor: Option<SensorSpec>,
}

impl HerdingSim {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let am = agent(cfg, 0.8)?;
        let nx = am.n_states();
        let priors = match (cfg.matrix("sim.priors")?, cfg.list::<f64>("sim.flag_priors")?) {
            (Some(_), Some(_)) => return Err(ConfigError::new("sim.flag_priors", "conflicts with sim.priors")),
            (Some(rows), None) => rows
                .into_iter()
                .map(|r| {
                    if r.len() != nx {
                        return Err(ConfigError::new("sim.priors", format!("each row needs {nx} entries")));
                    }
                    Belief::new(r).map_err(|e| ConfigError::new("sim.priors", e))
                })
                .collect::<CResult<Vec<_>>>()?,
            (None, flags) => {
                if nx != 2 {
                    if flags.is_some() {
                        return Err(ConfigError::new("sim.flag_priors", "only defined for two states"));
                    }
                    vec![Belief::uniform(nx)]
                } else {
                    flags
                        .unwrap_or_else(|| (2..=8).map(|i| i as f64 / 10.0).collect())
                        .into_iter()
                        .map(|p| Belief::new(vec![1.0 - p, p]).map_err(|e| ConfigError::new("sim.flag_priors", e)))
                        .collect::<CResult<Vec<_>>>()?
                }
            }
        };
        let true_states = cfg.list::<usize>("sim.true_states")?.unwrap_or_else(|| (0..nx).collect());
        if let Some(x) = true_states.iter().find(|&&x| x >= nx) {
            return Err(ConfigError::new("sim.true_states", format!("state {x} out of range")));
        }
        let sensor = match cfg.choice("sensor.kind", &["synthetic", "replay", "remote"], "synthetic")? {
            "synthetic" => None,
            "replay" => {
                let path = cfg
                    .path("sensor.replay")?
                    .ok_or_else(|| ConfigError::new("sensor.replay", "required for replay"))?;
                let cyclic = cfg.get("sensor.cyclic", true)?;
                // Parse now so that a bad file is a config error.
                herding::sensor::ReplaySensor::from_csv(&path, nx, am.n_obs(), cyclic)
                    .map_err(|e| ConfigError::new("sensor.replay", e))?;
                Some(SensorSpec::Replay { path, cyclic })
            }
            _ => {
                let endpoint: String = cfg
                    .opt("sensor.endpoint")?
                    .ok_or_else(|| ConfigError::new("sensor.endpoint", "required for remote"))?;
                let texts =
                    cfg.path("sensor.texts")?.ok_or_else(|| ConfigError::new("sensor.texts", "required for remote"))?;
                let mut rc = RemoteConfig::new(endpoint, am.n_obs());
                rc.auth_token_env = cfg.opt("sensor.auth_env")?;
                rc.retries = cfg.get("sensor.retries", rc.retries)?;
                if let Some(t) = cfg.path("sensor.template")? {
                    rc.load_template(&t).map_err(|e| ConfigError::new("sensor.template", e))?;
                }
                Some(SensorSpec::Remote { config: rc, texts })
            }
        };
        Ok(HerdingSim {
            am,
            priors,
            true_states,
            horizon: positive("sim.horizon", cfg.get("sim.horizon", 500)?)?,
            window: cfg.get("sim.window", 0)?,
            sensor,
        })
    }

    fn traces(&self, true_state: usize, pi0: &Belief, seed: u64, runs: usize) -> herding::Result<Vec<EpisodeTrace>> {
        let Some(spec) = &self.sensor else {
            return social::run_batch(&self.am, true_state, pi0, self.horizon, self.window, seed, runs);
        };
        (0..runs)
            .map(|i| {
                let s = derive_seed(seed, i as u64);
                let mut sensor = spec.build(self.am.n_states(), self.am.n_obs())?;
                let mut rng = rng_from_seed(s);
                let mut t = social::run_protocol_with_sensor(
                    &self.am,
                    true_state,
                    pi0,
                    self.horizon,
                    self.window,
                    sensor.as_mut(),
                    &mut rng,
                )?;
                t.seed = s;
                Ok(t)
            })
            .collect()
    }
}

impl Plan for HerdingSim {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let nx = self.am.n_states();
        let mut summary =
            csv_line(["cell", "true_state", "seed", "cascade_time", "herd_time", "final_action", "correct"]);
        let mut cells = header(
            &["cell", "true_state"],
            "pi0",
            nx,
            &["runs", "cascade_fraction", "wrong_cascade_fraction", "mean_cascade_time"],
        );
        let mut paths = header(&["cell", "step"], "mean_pi", nx, &[]);
        let mut cell = 0usize;
        for pi0 in &self.priors {
            for &x in &self.true_states {
                let traces = self.traces(x, pi0, derive_seed(g.seed, cell as u64), g.runs)?;
                let opt = |v: Option<usize>| v.map_or(String::new(), |k| k.to_string());
                for t in &traces {
                    summary.push_str(&csv_line([
                        cell.to_string(),
                        x.to_string(),
                        t.seed.to_string(),
                        opt(t.cascade_time),
                        opt(t.herd_time),
                        opt(t.final_action()),
                        u8::from(t.correct()).to_string(),
                    ]));
                }
                let n = traces.len().max(1) as f64;
                let cascaded: Vec<&EpisodeTrace> = traces.iter().filter(|t| t.cascade_time.is_some()).collect();
                let wrong = cascaded.iter().filter(|t| !t.correct()).count();
                let mean_time = if cascaded.is_empty() {
                    String::new()
                } else {
                    fmt_g(
                        cascaded.iter().map(|t| t.cascade_time.unwrap_or(0) as f64).sum::<f64>()
                            / cascaded.len() as f64,
                    )
                };
                let mut row: Vec<String> = vec![cell.to_string(), x.to_string()];
                row.extend(pi0.probs().iter().map(|&p| fmt_g(p)));
                row.extend([
                    traces.len().to_string(),
                    fmt_g(cascaded.len() as f64 / n),
                    fmt_g(wrong as f64 / n),
                    mean_time,
                ]);
                cells.push_str(&csv_line(&row));
                for step in 0..=self.horizon {
                    let mut mean = vec![0.0; nx];
                    for t in &traces {
                        let b = if step == 0 { &t.steps[0].prior_before } else { &t.steps[step - 1].prior_after };
                        mean.iter_mut().zip(b.probs()).for_each(|(m, p)| *m += p / n);
                    }
                    let mut row = vec![cell.to_string(), step.to_string()];
                    row.extend(mean.into_iter().map(fmt_g));
                    paths.push_str(&csv_line(&row));
                }
                cell += 1;
            }
        }
        Ok(Outcome {
            files: vec![("summary.csv".into(), summary), ("cells.csv".into(), cells), ("mean_paths.csv".into(), paths)],
            negative: None,
        })
    }
}

pub struct Regions {
    am: AgentModel,
    points: usize,
}

impl Regions {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let am = agent(cfg, 0.8)?;
        let default = if am.n_states() == 2 { 101 } else { 21 };
        let points = cfg.get("regions.grid", default)?;
        if points < 2 {
            return Err(ConfigError::new("regions.grid", "needs at least two points per axis"));
        }
        Ok(Regions { am, points })
    }
}

/// All compositions of `total` into `parts` nonnegative integers, in lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

impl Plan for Regions {
    fn run(&self, _g: Globals) -> herding::Result<Outcome> {
        let nx = self.am.n_states();
        let n = self.points - 1;
        let mut out = header(&[], "pi", nx, &["label"]);
        for c in compositions(n, nx) {
            let probs: Vec<f64> = c.iter().map(|&k| k as f64 / n as f64).collect();
            let b = Belief::new(probs)?;
            let mut row: Vec<String> = b.probs().iter().map(|&p| fmt_g(p)).collect();
            row.push(region_label(social::classify_region(&b, &self.am)?));
            out.push_str(&csv_line(&row));
        }
        Ok(Outcome { files: vec![("regions.csv".into(), out)], negative: None })
    }
}

pub struct Brp {
    ds: BrpDataset,
    epsilon_min: f64,
    sparse: Option<Option<(f64, f64)>>,
}

impl Brp {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let samples: Vec<(usize, usize, usize)> = match (cfg.path("brp.samples")?, cfg.paths("brp.envs")?) {
            (Some(_), Some(_)) => return Err(ConfigError::new("brp.envs", "conflicts with brp.samples")),
            (Some(p), None) => brp::read_samples_csv(&p).map_err(|e| ConfigError::new("brp.samples", e))?,
            (None, Some(envs)) => {
                let mut all = Vec::new();
                for (m, p) in envs.iter().enumerate() {
                    let pairs = brp::read_state_action_pairs(p).map_err(|e| ConfigError::new("brp.envs", e))?;
                    all.extend(pairs.into_iter().map(|(x, u)| (m, x, u)));
                }
                all
            }
            (None, None) => return Err(ConfigError::new("brp.samples", "either brp.samples or brp.envs is required")),
        };
        let n_envs = samples.iter().map(|s| s.0 + 1).max().unwrap_or(0);
        let n_states = cfg.get("brp.n_states", samples.iter().map(|s| s.1 + 1).max().unwrap_or(0))?;
        let n_actions = cfg.get("brp.n_actions", samples.iter().map(|s| s.2 + 1).max().unwrap_or(0))?;
        let prior = match cfg.list::<f64>("brp.prior")? {
            Some(v) if v.len() != n_states => {
                return Err(ConfigError::new("brp.prior", format!("expected {n_states} entries, got {}", v.len())))
            }
            Some(v) => Belief::new(v).map_err(|e| ConfigError::new("brp.prior", e))?,
            None => {
                let mut w = vec![0.0; n_states];
                samples.iter().filter(|s| s.1 < n_states).for_each(|s| w[s.1] += 1.0);
                Belief::from_weights(w).ok_or_else(|| ConfigError::new("brp.samples", "no samples"))?
            }
        };
        let ds = brp::empirical_dataset(&samples, &prior, n_envs, n_actions)
            .map_err(|e| ConfigError::new("brp.samples", e))?;
        let epsilon_min = cfg.get("brp.epsilon_min", brp::DEFAULT_EPSILON_MIN)?;
        if !(epsilon_min > 0.0) {
            return Err(ConfigError::new("brp.epsilon_min", "must be positive"));
        }
        let sparse = match cfg.choice("brp.method", &["max-margin", "sparse"], "max-margin")? {
            "max-margin" => None,
            _ => Some(match cfg.list::<f64>("brp.sparse_margins")? {
                None => None,
                Some(v) if v.len() == 2 && v.iter().all(|e| *e > 0.0) => Some((v[0], v[1])),
                Some(_) => return Err(ConfigError::new("brp.sparse_margins", "expected two positive margins")),
            }),
        };
        Ok(Brp { ds, epsilon_min, sparse })
    }
}

impl Plan for Brp {
    fn run(&self, _g: Globals) -> herding::Result<Outcome> {
        let rep = brp::feasibility_check(&self.ds, self.epsilon_min)?;
        let verdict = match rep.verdict {
            Verdict::Ribum => "ribum",
            Verdict::NotRibum => "not_ribum",
        };
        let mut out = Outcome::default();
        out.files.push((
            "feasibility.csv".into(),
            csv_line(["verdict", "margin"]) + &csv_line([verdict, &fmt_g(rep.margin)]),
        ));
        if rep.verdict == Verdict::NotRibum {
            out.negative =
                Some(format!("data are not consistent with rational inattention (margin {})", fmt_g(rep.margin)));
            return Ok(out);
        }
        let mm = brp::max_margin_reconstruct(&self.ds)?;
        let rec = match self.sparse {
            None => mm,
            Some(Some((e1, e2))) => brp::sparse_reconstruct(&self.ds, e1, e2)?,
            Some(None) => brp::sparse_reconstruct(&self.ds, mm.eps1 / 2.0, mm.eps2 / 2.0)?,
        };
        out.files.push(("utilities.csv".into(), rec.utilities_csv()));
        out.files.push(("report.csv".into(), brp::report_csv(&self.ds, &rec)));
        Ok(out)
    }
}

pub struct StoppingSweep {
    sp: StoppingProblem,
    grid: usize,
    vi_points: usize,
}

impl StoppingSweep {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let obs = obs_model(cfg, "model.obs", 0.7)?;
        let cost = cost_table(cfg, "model.cost", obs.n_states())?;
        let mut sp = StoppingProblem::new(
            obs,
            cost,
            cfg.get("stopping.rho", 0.99)?,
            cfg.get("stopping.delay_d", 10.0)?,
            cfg.get("stopping.error_penalty", 50.0)?,
            positive("stopping.horizon", cfg.get("stopping.horizon", 100)?)?,
        )
        .map_err(|e| ConfigError::new("stopping", e))?;
        sp.target = state_index(cfg, "stopping.target", sp.obs.n_states(), 0)?;
        sp.pi0 = belief(cfg, "stopping.prior", sp.obs.n_states())?;
        let vi_points = cfg.get("stopping.vi_points", 0)?;
        if vi_points > 0 && (sp.obs.n_states() != 2 || vi_points < 2) {
            return Err(ConfigError::new(
                "stopping.vi_points",
                "value iteration needs two states and at least two points",
            ));
        }
        Ok(StoppingSweep { sp, grid: positive("stopping.grid", cfg.get("stopping.grid", 100)?)?, vi_points })
    }
}

impl Plan for StoppingSweep {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let rows = control::stopping_sweep(&self.sp, self.grid, g.runs, g.seed)?;
        let mut out =
            Outcome { files: vec![("stopping_sweep.csv".into(), control::stopping_sweep_csv(&rows))], negative: None };
        if self.vi_points > 0 {
            let vi = value_iteration_diagnostic(&self.sp, self.vi_points)?;
            let mut csv = csv_line(["pi_0", "value", "decision"]);
            for ((p, v), d) in vi.grid.iter().zip(&vi.value).zip(&vi.decisions) {
                let d = if *d == control::Decision::Stop { "stop" } else { "continue" };
                csv.push_str(&csv_line([fmt_g(*p), fmt_g(*v), d.to_string()]));
            }
            out.files.push(("value_iteration.csv".into(), csv));
        }
        Ok(out)
    }
}

fn incentive_problem(cfg: &Config) -> CResult<(IncentiveProblem, IncentiveGate)> {
    let obs = obs_model(cfg, "model.obs", 0.7)?;
    let params = IncentiveCostParams::new(
        cfg.pair("incentive.alpha", [0.8, 1.3])?,
        cfg.pair("incentive.delta", [0.1, 0.5])?,
        cfg.pair("incentive.omega", [0.2, 0.5])?,
    )
    .map_err(|e| ConfigError::new("incentive.omega", e))?;
    let horizon = positive("incentive.horizon", cfg.get("incentive.horizon", 100)?)?;
    let mut ip = IncentiveProblem::new(obs, params, horizon).map_err(|e| ConfigError::new("model.obs", e))?;
    ip.pi0 = belief(cfg, "incentive.prior", 2)?;
    ip.g0 = cfg.get("incentive.g0", ip.g0)?;
    ip.discount = cfg.opt("incentive.discount")?;
    if let Some(d) = ip.discount {
        if !(d > 0.0 && d <= 1.0) {
            return Err(ConfigError::new("incentive.discount", "must lie in (0, 1]"));
        }
    }
    ip.max_payment = cfg.opt("incentive.max_payment")?;
    let gate = match cfg.choice("incentive.gate", &["above", "at-or-below"], "above")? {
        "above" => IncentiveGate::Above,
        _ => IncentiveGate::AtOrBelow,
    };
    Ok((ip, gate))
}

pub struct IncentiveSweep {
    ip: IncentiveProblem,
    gate: IncentiveGate,
    grid: usize,
    drift: Option<(f64, usize)>,
    budgets: Vec<f64>,
}

impl IncentiveSweep {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let (ip, gate) = incentive_problem(cfg)?;
        let drift = match cfg.opt::<f64>("incentive.drift_theta")? {
            Some(t) => Some((t, positive("incentive.drift_bins", cfg.get("incentive.drift_bins", 10)?)?)),
            None => None,
        };
        let budgets = cfg.list::<f64>("incentive.budgets")?.unwrap_or_default();
        if budgets.iter().any(|b| !(*b > 0.0)) {
            return Err(ConfigError::new("incentive.budgets", "budgets must be positive"));
        }
        if !budgets.is_empty() && drift.is_none() {
            return Err(ConfigError::new("incentive.budgets", "needs incentive.drift_theta to fix the policy"));
        }
        Ok(IncentiveSweep {
            ip,
            gate,
            grid: positive("incentive.grid", cfg.get("incentive.grid", 100)?)?,
            drift,
            budgets,
        })
    }
}

impl Plan for IncentiveSweep {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let rows = control::incentive_sweep(&self.ip, self.gate, self.grid, g.runs, g.seed)?;
        let mut out = Outcome {
            files: vec![("incentive_sweep.csv".into(), control::incentive_sweep_csv(&rows))],
            negative: None,
        };
        let Some((theta, bins)) = self.drift else { return Ok(out) };
        let policy = IncentivePolicy::hard(theta, self.gate);
        let traces = incentive_traces(&self.ip, &policy, g.runs, g.seed)?;
        let rep = submartingale_check(&traces, bins)?;
        let mut csv = csv_line(["lo", "hi", "n", "mean_current", "mean_next", "se", "passes"]);
        for b in &rep.bins {
            csv.push_str(&csv_line([
                fmt_g(b.lo),
                fmt_g(b.hi),
                b.n.to_string(),
                fmt_g(b.mean_current),
                fmt_g(b.mean_next),
                fmt_g(b.se),
                u8::from(b.passes).to_string(),
            ]));
        }
        out.files.push(("drift.csv".into(), csv));
        let mut failed = Vec::new();
        if !rep.holds {
            failed.push(format!("payment drift is negative in {} bin(s)", rep.failing_bins().count()));
        }
        if !self.budgets.is_empty() {
            let mut csv = csv_line(["budget", "exceed_prob", "se", "bound", "holds"]);
            for &b in &self.budgets {
                let r = budget_bound_check(&self.ip, &policy, b, g.runs, g.seed)?;
                csv.push_str(&csv_line([
                    fmt_g(b),
                    fmt_g(r.exceed_prob),
                    fmt_g(r.se),
                    fmt_g(r.bound),
                    u8::from(r.holds).to_string(),
                ]));
                if !r.holds {
                    failed.push(format!("budget {} exceeded more often than the bound allows", fmt_g(b)));
                }
            }
            out.files.push(("budget.csv".into(), csv));
        }
        if !failed.is_empty() {
            out.negative = Some(failed.join("; "));
        }
        Ok(out)
    }
}

pub struct Spsa {
    ip: IncentiveProblem,
    gate: IncentiveGate,
    smoothing: f64,
    cfg: SpsaConfig,
}

impl Spsa {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let (ip, gate) = incentive_problem(cfg)?;
        let smoothing = cfg.get("spsa.smoothing", 0.3)?;
        if !(smoothing > 0.0) {
            return Err(ConfigError::new("spsa.smoothing", "must be positive"));
        }
        let sc = SpsaConfig {
            theta0: cfg.get("spsa.theta0", 0.5)?,
            delta: cfg.get("spsa.delta", 1.0)?,
            iterations: positive("spsa.iterations", cfg.get("spsa.iterations", 100)?)?,
            step_start: cfg.get("spsa.step_start", 0.05)?,
            step_end: cfg.get("spsa.step_end", 0.005)?,
        };
        if !(sc.delta > 0.0) {
            return Err(ConfigError::new("spsa.delta", "must be positive"));
        }
        if !(0.0..=1.0).contains(&sc.theta0) {
            return Err(ConfigError::new("spsa.theta0", "must lie in [0, 1]"));
        }
        Ok(Spsa { ip, gate, smoothing, cfg: sc })
    }
}

impl Plan for Spsa {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let policy = |t: f64| IncentivePolicy::sigmoid(t, self.gate, self.smoothing);
        // A failed evaluation cannot happen for a validated problem; NaN would surface in the CSV.
        let objective =
            |t: f64, s: u64| eval_fusion_cost(&self.ip, &policy(t), g.runs, s).map_or(f64::NAN, |e| e.mean_cost);
        let history = spsa_optimize(objective, &self.cfg, g.seed);
        let theta = history.last().map_or(self.cfg.theta0, |h| h.theta);
        let fin = eval_fusion_cost(&self.ip, &policy(theta), g.runs, derive_seed(g.seed, u64::MAX))?;
        let final_csv = csv_line(["theta", "mean_cost", "total_incentive", "classification_rate"])
            + &csv_line([
                fmt_g(theta),
                fmt_g(fin.mean_cost),
                fmt_g(fin.mean_total_incentive),
                fmt_g(fin.classification_rate),
            ]);
        Ok(Outcome {
            files: vec![("spsa.csv".into(), control::spsa_csv(&history)), ("spsa_final.csv".into(), final_csv)],
            negative: None,
        })
    }
}

pub struct Wom {
    cfg: WomConfig,
    true_state: usize,
    pi0: Belief,
}

impl Wom {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let am = agent(cfg, 0.8)?;
        let regen = match cfg.matrix("wom.regen")? {
            Some(m) => ObservationModel::new(m).map_err(|e| ConfigError::new("wom.regen", e))?,
            None if am.n_obs() == 2 => ObservationModel::binary_symmetric(0.7).expect("valid"),
            None => return Err(ConfigError::new("wom.regen", "required unless observations are binary")),
        };
        let nx = am.n_states();
        let mut wc = WomConfig::new(
            cfg.get("wom.levels", 3)?,
            regen,
            am,
            positive("wom.outer_steps", cfg.get("wom.outer_steps", 200)?)?,
        )
        .map_err(|e| ConfigError::new("wom.levels", e))?;
        wc.variant = match cfg.choice("wom.variant", &["per-level", "per-outer-step"], "per-level")? {
            "per-level" => WomVariant::PerLevel,
            _ => WomVariant::PerOuterStep,
        };
        Ok(Wom { cfg: wc, true_state: state_index(cfg, "wom.true_state", nx, 0)?, pi0: belief(cfg, "wom.prior", nx)? })
    }
}

impl Plan for Wom {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let traces = (0..g.runs)
            .map(|r| topology::run_word_of_mouth(&self.cfg, self.true_state, &self.pi0, derive_seed(g.seed, r as u64)))
            .collect::<herding::Result<Vec<_>>>()?;
        let stalled = traces.iter().filter(|t| t.cascade_time.is_none()).count();
        Ok(Outcome {
            files: vec![("wom_summary.csv".into(), social::summary_csv(&traces))],
            negative: (stalled > 0).then(|| format!("{stalled} run(s) never reached a cascade")),
        })
    }
}

pub struct Async {
    am: AgentModel,
    n_agents: usize,
    schedule: Vec<ScheduleEvent>,
    true_state: usize,
    pi0: Belief,
}

impl Async {
    pub fn from_config(cfg: &Config) -> CResult<Self> {
        let am = agent(cfg, 0.8)?;
        let nx = am.n_states();
        let schedule = match (cfg.path("async.schedule")?, cfg.has("async.pattern")) {
            (Some(_), true) => return Err(ConfigError::new("async.pattern", "conflicts with async.schedule")),
            (Some(p), false) => topology::read_schedule(&p).map_err(|e| ConfigError::new("async.schedule", e))?,
            (None, _) => match cfg.choice("async.pattern", &["double-count", "chain"], "double-count")? {
                "double-count" => topology::double_count_schedule(),
                _ => topology::sequential_chain(positive("async.agents", cfg.get("async.agents", 5)?)?),
            },
        };
        let needed = schedule.iter().map(|e| e.agent + 1).max().unwrap_or(1);
        let n_agents = if cfg.has("async.agents") { cfg.get("async.agents", needed)? } else { needed };
        if n_agents < needed {
            return Err(ConfigError::new("async.agents", format!("schedule refers to agent {}", needed - 1)));
        }
        let mut drawn = vec![false; n_agents];
        for (i, e) in schedule.iter().enumerate() {
            match e.kind {
                EventKind::Draw => drawn[e.agent] = true,
                EventKind::Update if !drawn[e.agent] => {
                    return Err(ConfigError::new(
                        "async.schedule",
                        format!("event {i}: agent {} updates before drawing", e.agent),
                    ))
                }
                _ => {}
            }
        }
        Ok(Async {
            am,
            n_agents,
            schedule,
            true_state: state_index(cfg, "async.true_state", nx, 0)?,
            pi0: belief(cfg, "async.prior", nx)?,
        })
    }
}

impl Plan for Async {
    fn run(&self, g: Globals) -> herding::Result<Outcome> {
        let nx = self.am.n_states();
        let mut rows = Vec::with_capacity(g.runs);
        let mut post = header(&["run", "belief"], "pi", nx, &[]);
        for r in 0..g.runs {
            let out = topology::run_async_fusion(
                self.n_agents,
                &self.am,
                self.true_state,
                &self.pi0,
                &self.schedule,
                derive_seed(g.seed, r as u64),
            )?;
            let cascaded = social::classify_region(&out.naive, &self.am)? != Region::Learning;
            rows.push(IncestRow { run: r, kl: out.incest, cascaded });
            for (name, b) in [("naive", &out.naive), ("correct", &out.correct)] {
                let mut row = vec![r.to_string(), name.to_string()];
                row.extend(b.probs().iter().map(|&p| fmt_g(p)));
                post.push_str(&csv_line(&row));
            }
        }
        Ok(Outcome {
            files: vec![("incest.csv".into(), topology::incest_csv(&rows)), ("posteriors.csv".into(), post)],
            negative: None,
        })
    }
}
