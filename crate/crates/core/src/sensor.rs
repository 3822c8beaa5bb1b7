//! Observation sources for simulated agents.
//!
//! A [`Sensor`] turns the current state into an observation index. Three
//! sources are provided: sampling from a known kernel, replaying recorded
//! `(state, observation)` pairs, and querying a classifier over HTTP.

use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::model::ObservationModel;
use crate::random::SimRng;

pub trait Sensor: Send {
    fn n_obs(&self) -> usize;
    fn observe(&mut self, state: usize, rng: &mut SimRng) -> Result<usize>;
}

/// Draws `y ~ B(. | x)`.
#[derive(Clone, Debug)]
pub struct SyntheticSensor {
    model: ObservationModel,
}

impl SyntheticSensor {
    pub fn new(model: ObservationModel) -> Self {
        SyntheticSensor { model }
    }
}

impl Sensor for SyntheticSensor {
    fn n_obs(&self) -> usize {
        self.model.n_obs()
    }

    fn observe(&mut self, state: usize, rng: &mut SimRng) -> Result<usize> {
        if state >= self.model.n_states() {
            return Err(Error::DimensionMismatch(format!("state {state} out of range")));
        }
        Ok(self.model.sample(state, rng))
    }
}

/// Replays recorded observations, one cursor per state.
#[derive(Clone, Debug)]
pub struct ReplaySensor {
    per_state: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    cyclic: bool,
    n_obs: usize,
}

impl ReplaySensor {
    pub fn from_pairs(pairs: &[(usize, usize)], n_states: usize, n_obs: usize, cyclic: bool) -> Result<Self> {
        let mut per_state = vec![Vec::new(); n_states];
        for &(x, y) in pairs {
            if x >= n_states || y >= n_obs {
                return Err(Error::DimensionMismatch(format!("replay pair ({x}, {y}) out of range")));
            }
            per_state[x].push(y);
        }
        Ok(ReplaySensor { per_state, cursors: vec![0; n_states], cyclic, n_obs })
    }

    /// Loads a `state,observation` CSV with a header row.
    pub fn from_csv(path: &Path, n_states: usize, n_obs: usize, cyclic: bool) -> Result<Self> {
        let pairs = read_index_pairs(path, &["state", "observation"])?;
        Self::from_pairs(&pairs, n_states, n_obs, cyclic)
    }
}

impl Sensor for ReplaySensor {
    fn n_obs(&self) -> usize {
        self.n_obs
    }

    fn observe(&mut self, state: usize, _rng: &mut SimRng) -> Result<usize> {
        let seq = self.per_state.get(state).ok_or(Error::ReplayExhausted { state })?;
        if seq.is_empty() {
            return Err(Error::ReplayExhausted { state });
        }
        let mut i = self.cursors[state];
        if i >= seq.len() {
            if !self.cyclic {
                return Err(Error::ReplayExhausted { state });
            }
            i = 0;
        }
        self.cursors[state] = i + 1;
        Ok(seq[i])
    }
}

/// Connection settings for a classifier served over HTTP.
#[derive(Clone, Debug)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token, if any.
    pub auth_token_env: Option<String>,
    /// JSON object merged into every request body.
    pub template: serde_json::Map<String, serde_json::Value>,
    pub timeout: Duration,
    pub retries: u32,
    pub n_obs: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, n_obs: usize) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            auth_token_env: None,
            template: serde_json::Map::new(),
            timeout: Duration::from_secs(30),
            retries: 3,
            n_obs,
        }
    }

    pub fn load_template(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match serde_json::from_str::<serde_json::Value>(&text) {
            Ok(serde_json::Value::Object(map)) => {
                self.template = map;
                Ok(())
            }
            Ok(_) => Err(Error::parse(path, 1, "request template must be a JSON object")),
            Err(e) => Err(Error::parse(path, e.line(), e.to_string())),
        }
    }
}

/// Sends a text drawn for the current state to a classifier and reads back `{"y": <index>}`.
pub struct RemoteSensor {
    config: RemoteConfig,
    texts: Vec<Vec<String>>,
    cursors: Vec<usize>,
    agent: ureq::Agent,
}

impl RemoteSensor {
    /// `texts[x]` lists the texts that realise state `x`; they are used in order, cyclically.
    pub fn new(config: RemoteConfig, texts: Vec<Vec<String>>) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let cursors = vec![0; texts.len()];
        RemoteSensor { config, texts, cursors, agent }
    }

    /// Reads a `state,text` CSV; everything after the first comma is the text.
    pub fn read_texts(path: &Path, n_states: usize) -> Result<Vec<Vec<String>>> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut texts = vec![Vec::new(); n_states];
        for (i, line) in body.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let (x, t) = line.split_once(',').ok_or_else(|| Error::parse(path, i + 1, "expected state,text"))?;
            let x: usize = x.trim().parse().map_err(|_| Error::parse(path, i + 1, "bad state index"))?;
            if x >= n_states {
                return Err(Error::parse(path, i + 1, format!("state {x} out of range")));
            }
            texts[x].push(t.to_string());
        }
        Ok(texts)
    }

    fn query(&self, text: &str) -> Result<usize> {
        let mut body = self.config.template.clone();
        body.insert("text".into(), serde_json::Value::String(text.to_string()));
        let token = match &self.config.auth_token_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::RemoteError(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let mut last = String::new();
        for attempt in 0..self.config.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 << attempt));
            }
            let mut req = self.agent.post(&self.config.endpoint);
            if let Some(t) = &token {
                req = req.set("Authorization", &format!("Bearer {t}"));
            }
            match req.send_json(serde_json::Value::Object(body.clone())) {
                Ok(resp) => {
                    let v: serde_json::Value =
                        resp.into_json().map_err(|e| Error::RemoteError(format!("unreadable response: {e}")))?;
                    let y = v
                        .get("y")
                        .and_then(serde_json::Value::as_u64)
                        .ok_or_else(|| Error::RemoteError(format!("response lacks an integer `y`: {v}")))?
                        as usize;
                    if y >= self.config.n_obs {
                        return Err(Error::RemoteError(format!("label {y} out of range")));
                    }
                    return Ok(y);
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(Error::RemoteError(format!("{} attempts failed: {last}", self.config.retries.max(1))))
    }
}

impl Sensor for RemoteSensor {
    fn n_obs(&self) -> usize {
        self.config.n_obs
    }

    fn observe(&mut self, state: usize, _rng: &mut SimRng) -> Result<usize> {
        let pool = self.texts.get(state).filter(|p| !p.is_empty()).ok_or(Error::ReplayExhausted { state })?;
        let i = self.cursors[state] % pool.len();
        self.cursors[state] += 1;
        let text = pool[i].clone();
        self.query(&text)
    }
}

/// Declarative description of an observation source.
#[derive(Clone, Debug)]
pub enum SensorSpec {
    Synthetic(ObservationModel),
    Replay { path: PathBuf, cyclic: bool },
    Remote { config: RemoteConfig, texts: PathBuf },
}

impl SensorSpec {
    pub fn build(&self, n_states: usize, n_obs: usize) -> Result<Box<dyn Sensor>> {
        Ok(match self {
            SensorSpec::Synthetic(m) => Box::new(SyntheticSensor::new(m.clone())),
            SensorSpec::Replay { path, cyclic } => Box::new(ReplaySensor::from_csv(path, n_states, n_obs, *cyclic)?),
            SensorSpec::Remote { config, texts } => {
                Box::new(RemoteSensor::new(config.clone(), RemoteSensor::read_texts(texts, n_states)?))
            }
        })
    }
}

/// Laplace-smoothed estimate of `P(y | x)` from labelled `(state, observation)` pairs.
pub fn estimate_likelihood(
    labeled: &[(usize, usize)],
    n_states: usize,
    n_obs: usize,
    laplace_alpha: f64,
) -> Result<ObservationModel> {
    if !(laplace_alpha >= 0.0) {
        return Err(Error::InvalidParameter(format!("laplace alpha must be nonnegative, got {laplace_alpha}")));
    }
    let mut counts = vec![vec![0.0; n_obs]; n_states];
    for &(x, y) in labeled {
        if x >= n_states || y >= n_obs {
            return Err(Error::DimensionMismatch(format!("labelled pair ({x}, {y}) out of range")));
        }
        counts[x][y] += 1.0;
    }
    let mut rows = Vec::with_capacity(n_states);
    for (x, row) in counts.into_iter().enumerate() {
        let total: f64 = row.iter().sum::<f64>() + laplace_alpha * n_obs as f64;
        if total <= 0.0 {
            return Err(Error::EmptyState { state: x });
        }
        rows.push(row.into_iter().map(|c| (c + laplace_alpha) / total).collect());
    }
    ObservationModel::new(rows)
}

/// Reads a headed CSV of two nonnegative integer columns.
pub(crate) fn read_index_pairs(path: &Path, header: &[&str; 2]) -> Result<Vec<(usize, usize)>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    if cols != header[..] {
        return Err(Error::parse(path, 1, format!("expected header `{}`", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(Error::parse(path, i + 1, "expected two columns"));
        }
        let a = cells[0].parse().map_err(|_| Error::parse(path, i + 1, format!("bad index `{}`", cells[0])))?;
        let b = cells[1].parse().map_err(|_| Error::parse(path, i + 1, format!("bad index `{}`", cells[1])))?;
        out.push((a, b));
    }
    Ok(out)
}
