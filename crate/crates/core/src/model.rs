//! Beliefs, stochastic kernels and cost tables shared by every other module.
//!
//! All state, observation and action labels are 0-based indices.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::order;
use crate::random::sample_categorical;

/// Tolerance on the total mass of a belief before renormalisation.
pub const BELIEF_SUM_TOL: f64 = 1e-6;
/// Entries at or above `-BELIEF_NEG_TOL` are clamped to zero.
pub const BELIEF_NEG_TOL: f64 = 1e-12;
/// Tolerance on the row sums of a stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Normalisers at or below this value are treated as zero.
pub const MIN_NORMALIZER: f64 = 1e-300;

/// A probability vector over states.
#[derive(Clone, Debug, PartialEq)]
pub struct Belief(Vec<f64>);

/// Checks that `v` is a simplex point, clamps tiny negatives and renormalises.
pub fn validate_belief(v: &[f64]) -> Result<Belief> {
    if v.len() < 2 {
        return Err(Error::NotASimplexPoint(format!("need at least 2 entries, got {}", v.len())));
    }
    let mut out = Vec::with_capacity(v.len());
    for (i, &p) in v.iter().enumerate() {
        if !p.is_finite() {
            return Err(Error::NotASimplexPoint(format!("entry {i} is not finite")));
        }
        if p < -BELIEF_NEG_TOL {
            return Err(Error::NotASimplexPoint(format!("entry {i} is negative ({p})")));
        }
        out.push(p.max(0.0));
    }
    let sum: f64 = out.iter().sum();
    if (sum - 1.0).abs() > BELIEF_SUM_TOL {
        return Err(Error::NotASimplexPoint(format!("entries sum to {sum}")));
    }
    for p in &mut out {
        *p /= sum;
    }
    Ok(Belief(out))
}

impl Belief {
    pub fn new(v: Vec<f64>) -> Result<Self> {
        validate_belief(&v)
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 2, "a belief needs at least two states");
        Belief(vec![1.0 / n as f64; n])
    }

    /// Point mass on state `i`.
    pub fn vertex(n: usize, i: usize) -> Self {
        assert!(n >= 2 && i < n, "vertex {i} out of range for {n} states");
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        Belief(v)
    }

    /// Two-state belief `[p, 1 - p]`.
    pub fn binary(p: f64) -> Result<Self> {
        validate_belief(&[p, 1.0 - p])
    }

    /// Normalises a nonnegative weight vector, or returns `None` when its mass is negligible.
    pub fn from_weights(w: Vec<f64>) -> Option<Self> {
        let sum: f64 = w.iter().sum();
        if !(sum > MIN_NORMALIZER) {
            return None;
        }
        Some(Belief(w.into_iter().map(|x| x / sum).collect()))
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_abs_diff(&self, other: &Belief) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Kullback-Leibler divergence `KL(self || other)` in nats.
    pub fn kl_divergence(&self, other: &Belief) -> f64 {
        let mut kl = 0.0;
        for (&p, &q) in self.0.iter().zip(&other.0) {
            if p > 0.0 {
                if q <= 0.0 {
                    return f64::INFINITY;
                }
                kl += p * (p / q).ln();
            }
        }
        kl.max(0.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Row-stochastic matrix with `entry[x][y] = P(y | x)`.
///
/// Besides observation likelihoods the same type carries state transition
/// kernels and observation regeneration maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    rows: Vec<Vec<f64>>,
    tp2: bool,
}

impl ObservationModel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let x = rows.len();
        if x < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 rows, got {x}")));
        }
        let y = rows[0].len();
        if y < 2 {
            return Err(Error::DimensionMismatch(format!("need at least 2 columns, got {y}")));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != y {
                return Err(Error::DimensionMismatch(format!("row {i} has {} entries, expected {y}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::NotStochastic { row: i, sum });
            }
        }
        let tp2 = order::is_tp2(&rows);
        Ok(ObservationModel { rows, tp2 })
    }

    /// Two states, two observations, `P(y = x) = p`.
    pub fn binary_symmetric(p: f64) -> Result<Self> {
        Self::new(vec![vec![p, 1.0 - p], vec![1.0 - p, p]])
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new((0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect())
    }

    pub fn n_states(&self) -> usize {
        self.rows.len()
    }

    pub fn n_obs(&self) -> usize {
        self.rows[0].len()
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.rows[x][y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.rows[x]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Likelihood of observation `y` as a function of the state.
    pub fn column(&self, y: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[y]).collect()
    }

    pub fn is_tp2(&self) -> bool {
        self.tp2
    }

    /// Kernel of `x -> y -> z` where `next` maps `y` to `z`.
    pub fn compose(&self, next: &ObservationModel) -> Result<Self> {
        if self.n_obs() != next.n_states() {
            return Err(Error::DimensionMismatch(format!(
                "cannot compose {}x{} with {}x{}",
                self.n_states(),
                self.n_obs(),
                next.n_states(),
                next.n_obs()
            )));
        }
        let rows = self
            .rows
            .iter()
            .map(|r| (0..next.n_obs()).map(|z| r.iter().enumerate().map(|(y, p)| p * next.rows[y][z]).sum()).collect())
            .collect();
        Self::new(rows)
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        sample_categorical(&self.rows[x], rng)
    }

    pub fn from_csv(path: &Path) -> Result<Self> {
        Self::new(read_matrix_csv(path)?)
    }
}

/// Cost table `c(x, u)` with one row per state and one column per action.
#[derive(Clone, Debug, PartialEq)]
pub struct CostSpec {
    table: Vec<Vec<f64>>,
}

impl CostSpec {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        check_rectangular(&table, "cost")?;
        Ok(CostSpec { table })
    }

    /// `c(x, u) = 1(x != u)`.
    pub fn zero_one(n: usize) -> Self {
        CostSpec { table: (0..n).map(|x| (0..n).map(|u| if x == u { 0.0 } else { 1.0 }).collect()).collect() }
    }

    /// `c(x, u) = |u - x|`.
    pub fn abs_diff(n_states: usize, n_actions: usize) -> Self {
        CostSpec {
            table: (0..n_states).map(|x| (0..n_actions).map(|u| (u as f64 - x as f64).abs()).collect()).collect(),
        }
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    pub fn cost(&self, x: usize, u: usize) -> f64 {
        self.table[x][u]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// `sum_x c(x, u) w(x)` for an arbitrary weight vector.
    pub fn expected(&self, u: usize, w: &[f64]) -> f64 {
        self.table.iter().zip(w).map(|(row, p)| row[u] * p).sum()
    }

    pub fn min_cost(&self, x: usize) -> f64 {
        self.table[x].iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Utility table `r(x, u)`; larger is better.
#[derive(Clone, Debug, PartialEq)]
pub struct UtilitySpec {
    table: Vec<Vec<f64>>,
}

impl UtilitySpec {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        check_rectangular(&table, "utility")?;
        Ok(UtilitySpec { table })
    }

    /// `r(x, u) = 1(x == u)`.
    pub fn identity(n: usize) -> Self {
        UtilitySpec { table: (0..n).map(|x| (0..n).map(|u| if x == u { 1.0 } else { 0.0 }).collect()).collect() }
    }

    pub fn n_states(&self) -> usize {
        self.table.len()
    }

    pub fn n_actions(&self) -> usize {
        self.table[0].len()
    }

    pub fn utility(&self, x: usize, u: usize) -> f64 {
        self.table[x][u]
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    /// The equivalent cost table `-r(x, u)`.
    pub fn to_cost(&self) -> CostSpec {
        CostSpec { table: self.table.iter().map(|r| r.iter().map(|v| -v).collect()).collect() }
    }
}

fn check_rectangular(table: &[Vec<f64>], what: &str) -> Result<()> {
    if table.is_empty() || table[0].is_empty() {
        return Err(Error::DimensionMismatch(format!("{what} table is empty")));
    }
    let cols = table[0].len();
    for (i, row) in table.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::DimensionMismatch(format!("{what} row {i} has {} entries, expected {cols}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{what} row {i} has a non-finite entry")));
        }
    }
    Ok(())
}

/// Per-action misclassification weight, effort and incentive sensitivity of a
/// two-action agent.
///
/// The incentive lowers the cost of action `u` by `|omega[u]| * p`, so either
/// sign convention for `omega` is accepted.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IncentiveCostParams {
    pub alpha: [f64; 2],
    pub delta: [f64; 2],
    pub omega: [f64; 2],
}

impl IncentiveCostParams {
    pub fn new(alpha: [f64; 2], delta: [f64; 2], omega: [f64; 2]) -> Result<Self> {
        if alpha.iter().chain(&delta).chain(&omega).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("incentive parameters must be finite".into()));
        }
        if alpha.iter().any(|&a| a <= 0.0) || delta.iter().any(|&d| d <= 0.0) {
            return Err(Error::InvalidParameter("alpha and delta must be positive".into()));
        }
        if omega[0].abs() == omega[1].abs() {
            return Err(Error::DegenerateParams("omega_2 == omega_1".into()));
        }
        Ok(IncentiveCostParams { alpha, delta, omega })
    }

    /// Magnitude of the incentive sensitivity of action `u`.
    pub fn reward_weight(&self, u: usize) -> f64 {
        self.omega[u].abs()
    }
}

/// Reads a matrix stored as `# rows=R cols=C` followed by comma-separated rows.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn parse_matrix_csv(text: &str, path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hline, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty matrix file"))?;
    let (mut rows, mut cols) = (None, None);
    let body = header
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::parse(path, hline + 1, "expected a `# rows=R cols=C` header"))?;
    for tok in body.split_whitespace() {
        let (key, value) =
            tok.split_once('=').ok_or_else(|| Error::parse(path, hline + 1, format!("bad header token `{tok}`")))?;
        let n: usize = value.parse().map_err(|_| Error::parse(path, hline + 1, format!("bad dimension `{value}`")))?;
        match key {
            "rows" => rows = Some(n),
            "cols" => cols = Some(n),
            _ => return Err(Error::parse(path, hline + 1, format!("unknown header key `{key}`"))),
        }
    }
    let (rows, cols) = match (rows, cols) {
        (Some(r), Some(c)) => (r, c),
        _ => return Err(Error::parse(path, hline + 1, "header must give rows and cols")),
    };
    let mut out = Vec::with_capacity(rows);
    for (i, line) in lines {
        let row = line
            .split(',')
            .map(|t| {
                t.trim().parse::<f64>().map_err(|_| Error::parse(path, i + 1, format!("bad number `{}`", t.trim())))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "{}:{}: row has {} entries, header says {cols}",
                path.display(),
                i + 1,
                row.len()
            )));
        }
        out.push(row);
    }
    if out.len() != rows {
        return Err(Error::DimensionMismatch(format!(
            "{}: found {} rows, header says {rows}",
            path.display(),
            out.len()
        )));
    }
    Ok(out)
}

/// Serialises a matrix in the format read by [`read_matrix_csv`].
pub fn format_matrix_csv(m: &[Vec<f64>]) -> String {
    let cols = m.first().map_or(0, Vec::len);
    let mut s = format!("# rows={} cols={cols}\n", m.len());
    for row in m {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(s, "{}", cells.join(","));
    }
    s
}
