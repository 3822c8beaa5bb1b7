//! Revealed-preference tests and utility reconstruction for rationally
//! inattentive classifiers.
//!
//! A dataset records, for each of several environments, how often each action
//! was taken in each state. The data are consistent with an agent that
//! maximises expected utility net of an attention cost exactly when a linear
//! program over per-environment utilities `r_m(x, u)` and costs `z_m` has a
//! strictly positive margin. Two families of inequalities enter: no
//! improving action switches within an environment (NIAS), and no improving
//! swaps of attention strategies across environments (NIAC).

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::format::{csv_line, fmt_g};
use crate::lp::{self, LinearProgram, LpSolution};
use crate::model::{read_matrix_csv, Belief, ObservationModel, UtilitySpec, ROW_SUM_TOL};
use crate::random::{derive_seed, rng_from_seed, sample_categorical};
use crate::sensor::read_index_pairs;

/// Smallest margin accepted as evidence of a strict solution.
pub const MIN_MARGIN: f64 = 1e-9;
/// Default threshold of [`feasibility_check`].
pub const DEFAULT_EPSILON_MIN: f64 = 1e-4;
const EPS1_CAP: f64 = 1.0;
const EPS2_CAP: f64 = 2.0;

/// Prior over states and per-environment action frequencies `p_m(u | x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrpDataset {
    prior: Belief,
    cond: Vec<Vec<Vec<f64>>>,
    n_actions: usize,
}

impl BrpDataset {
    pub fn new(prior: Belief, cond: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let nx = prior.len();
        let nu = cond.first().and_then(|e| e.first()).map_or(0, Vec::len);
        if nu == 0 {
            return Err(Error::DimensionMismatch("dataset has no environments or actions".into()));
        }
        for (m, env) in cond.iter().enumerate() {
            if env.len() != nx {
                return Err(Error::DimensionMismatch(format!(
                    "environment {m} has {} states, prior has {nx}",
                    env.len()
                )));
            }
            for (x, row) in env.iter().enumerate() {
                if row.len() != nu {
                    return Err(Error::DimensionMismatch(format!(
                        "environment {m} state {x} has {} actions",
                        row.len()
                    )));
                }
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(p >= &0.0)) || (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::NotStochastic { row: x, sum });
                }
            }
        }
        Ok(BrpDataset { prior, cond, n_actions: nu })
    }

    pub fn prior(&self) -> &Belief {
        &self.prior
    }

    pub fn n_envs(&self) -> usize {
        self.cond.len()
    }

    pub fn n_states(&self) -> usize {
        self.prior.len()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `p_m(u | x)`.
    pub fn action_given_state(&self, m: usize, x: usize, u: usize) -> f64 {
        self.cond[m][x][u]
    }

    /// `p_m(x, u) = prior(x) p_m(u | x)`.
    pub fn joint(&self, m: usize, x: usize, u: usize) -> f64 {
        self.prior.get(x) * self.cond[m][x][u]
    }

    /// `p_m(u)`.
    pub fn action_prob(&self, m: usize, u: usize) -> f64 {
        (0..self.n_states()).map(|x| self.joint(m, x, u)).sum()
    }

    /// `p_m(x | u)`, or `None` when `u` is never taken.
    pub fn posterior(&self, m: usize, u: usize) -> Option<Vec<f64>> {
        let pu = self.action_prob(m, u);
        (pu > 0.0).then(|| (0..self.n_states()).map(|x| self.joint(m, x, u) / pu).collect())
    }
}

/// Builds `p_m(u | x)` from `(environment, state, action)` samples.
pub fn empirical_dataset(
    samples: &[(usize, usize, usize)],
    prior: &Belief,
    n_envs: usize,
    n_actions: usize,
) -> Result<BrpDataset> {
    let nx = prior.len();
    let mut counts = vec![vec![vec![0u64; n_actions]; nx]; n_envs];
    for &(m, x, u) in samples {
        if m >= n_envs || x >= nx || u >= n_actions {
            return Err(Error::DimensionMismatch(format!("sample ({m}, {x}, {u}) out of range")));
        }
        counts[m][x][u] += 1;
    }
    let mut cond = Vec::with_capacity(n_envs);
    for (m, env) in counts.into_iter().enumerate() {
        let mut rows = Vec::with_capacity(nx);
        for (x, row) in env.into_iter().enumerate() {
            let total: u64 = row.iter().sum();
            if total == 0 {
                return Err(Error::EmptyCell { env: m, state: x });
            }
            rows.push(row.into_iter().map(|c| c as f64 / total as f64).collect());
        }
        cond.push(rows);
    }
    BrpDataset::new(prior.clone(), cond)
}

/// Reads an `environment,state,action` CSV.
pub fn read_samples_csv(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = body.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(["environment", "state", "action"]) => {}
        _ => return Err(Error::parse(path, 1, "expected header `environment,state,action`")),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells = line
            .split(',')
            .map(|c| {
                c.trim().parse::<usize>().map_err(|_| Error::parse(path, i + 1, format!("bad index `{}`", c.trim())))
            })
            .collect::<Result<Vec<usize>>>()?;
        if cells.len() != 3 {
            return Err(Error::parse(path, i + 1, "expected three columns"));
        }
        out.push((cells[0], cells[1], cells[2]));
    }
    Ok(out)
}

/// Reads a prior stored as a one-row matrix file.
pub fn read_prior(path: &Path) -> Result<Belief> {
    let m = read_matrix_csv(path)?;
    if m.len() != 1 {
        return Err(Error::DimensionMismatch(format!("{}: prior must be a single row", path.display())));
    }
    Belief::new(m.into_iter().next().expect("one row"))
}

/// Variable indices of the reconstruction program.
#[derive(Clone, Copy, Debug)]
struct Layout {
    m: usize,
    x: usize,
    u: usize,
}

impl Layout {
    fn r(&self, m: usize, x: usize, u: usize) -> usize {
        (m * self.x + x) * self.u + u
    }
    fn z(&self, m: usize) -> usize {
        self.m * self.x * self.u + m
    }
    fn eps1(&self) -> usize {
        self.z(self.m)
    }
    fn eps2(&self) -> usize {
        self.eps1() + 1
    }
    /// Auxiliary for `max_ubar sum_x p_l(x, u) r_m(x, ubar)`, ordered pairs `l != m`.
    fn t(&self, l: usize, m: usize, u: usize) -> usize {
        let pair = l * (self.m - 1) + if m < l { m } else { m - 1 };
        self.eps2() + 1 + pair * self.u + u
    }
    fn n_vars(&self) -> usize {
        self.eps2() + 1 + self.m * (self.m - 1) * self.u
    }
}

/// How the two margins enter the program.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Margins {
    /// Maximise `eps1 + eps2`, each at least the given floor.
    MaxSum { floor: f64 },
    /// A single margin shared by both families, maximised.
    Common,
    /// Fixed margins; the objective is supplied separately.
    Fixed { eps1: f64, eps2: f64 },
}

/// The reconstruction linear program with its row counts.
#[derive(Clone, Debug)]
pub struct BrpProgram {
    pub lp: LinearProgram,
    pub n_nias_rows: usize,
    pub n_niac_rows: usize,
    pub n_epigraph_rows: usize,
    pub n_aux: usize,
    layout: Layout,
}

/// Decision variables in the closed-form count: utilities and costs.
pub fn paper_variable_count(n_envs: usize, n_states: usize, n_actions: usize) -> usize {
    n_envs * (n_actions * n_states + 1)
}

/// Inequalities in the closed-form count when every action is taken.
pub fn paper_inequality_count(n_envs: usize, n_actions: usize) -> usize {
    n_envs * n_envs + n_envs * (n_actions * n_actions - n_actions - 1)
}

pub fn build_program(ds: &BrpDataset, margins: Margins) -> Result<BrpProgram> {
    let nm = ds.n_envs();
    if nm < 2 {
        return Err(Error::TooFewEnvironments(nm));
    }
    let layout = Layout { m: nm, x: ds.n_states(), u: ds.n_actions() };
    let mut lp = LinearProgram::new(layout.n_vars());
    for m in 0..nm {
        for x in 0..layout.x {
            for u in 0..layout.u {
                lp.set_bounds(layout.r(m, x, u), 0.0, 1.0);
            }
        }
        lp.set_bounds(layout.z(m), 0.0, 1.0);
    }
    let (e1, e2) = (layout.eps1(), layout.eps2());
    match margins {
        Margins::MaxSum { floor } => {
            lp.set_bounds(e1, floor, EPS1_CAP);
            lp.set_bounds(e2, floor, EPS2_CAP);
            lp.objective[e1] = -1.0;
            lp.objective[e2] = -1.0;
        }
        Margins::Common => {
            lp.set_bounds(e1, 0.0, EPS1_CAP);
            lp.set_bounds(e2, 0.0, EPS1_CAP);
            lp.add_le(&[(e1, 1.0), (e2, -1.0)], 0.0);
            lp.add_le(&[(e1, -1.0), (e2, 1.0)], 0.0);
            lp.objective[e1] = -1.0;
        }
        Margins::Fixed { eps1, eps2 } => {
            lp.set_bounds(e1, eps1, eps1);
            lp.set_bounds(e2, eps2, eps2);
        }
    }

    let mut n_nias_rows = 0;
    for m in 0..nm {
        for u in 0..layout.u {
            let Some(post) = ds.posterior(m, u) else { continue };
            for ubar in (0..layout.u).filter(|&v| v != u) {
                let mut terms = vec![(e1, 1.0)];
                for (x, &p) in post.iter().enumerate() {
                    if p != 0.0 {
                        terms.push((layout.r(m, x, ubar), p));
                        terms.push((layout.r(m, x, u), -p));
                    }
                }
                lp.add_le(&terms, 0.0);
                n_nias_rows += 1;
            }
        }
    }

    let (mut n_niac_rows, mut n_epigraph_rows) = (0, 0);
    for l in 0..nm {
        for m in (0..nm).filter(|&m| m != l) {
            let mut terms = vec![(e2, 1.0), (layout.z(l), -1.0), (layout.z(m), 1.0)];
            for u in 0..layout.u {
                terms.push((layout.t(l, m, u), 1.0));
                for x in 0..layout.x {
                    let p = ds.joint(m, x, u);
                    if p != 0.0 {
                        terms.push((layout.r(m, x, u), -p));
                    }
                }
            }
            lp.add_le(&terms, 0.0);
            n_niac_rows += 1;
            for u in 0..layout.u {
                for ubar in 0..layout.u {
                    let mut terms = vec![(layout.t(l, m, u), -1.0)];
                    for x in 0..layout.x {
                        let p = ds.joint(l, x, u);
                        if p != 0.0 {
                            terms.push((layout.r(m, x, ubar), p));
                        }
                    }
                    lp.add_le(&terms, 0.0);
                    n_epigraph_rows += 1;
                }
            }
        }
    }
    Ok(BrpProgram { lp, n_nias_rows, n_niac_rows, n_epigraph_rows, n_aux: nm * (nm - 1) * layout.u, layout })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ribum,
    NotRibum,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub verdict: Verdict,
    /// Largest margin achievable by both inequality families at once.
    pub margin: f64,
}

/// Per-environment utilities and attention costs with the margins they achieve.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub utilities: Vec<UtilitySpec>,
    pub costs: Vec<f64>,
    pub eps1: f64,
    pub eps2: f64,
}

impl ReconstructionResult {
    fn from_point(prog: &BrpProgram, x: &[f64]) -> Self {
        let l = prog.layout;
        let utilities = (0..l.m)
            .map(|m| {
                UtilitySpec::new((0..l.x).map(|s| (0..l.u).map(|u| x[l.r(m, s, u)]).collect()).collect())
                    .expect("rectangular by construction")
            })
            .collect();
        ReconstructionResult {
            utilities,
            costs: (0..l.m).map(|m| x[l.z(m)]).collect(),
            eps1: x[l.eps1()],
            eps2: x[l.eps2()],
        }
    }

    /// Sum of absolute utility entries.
    pub fn l1_norm(&self) -> f64 {
        self.utilities.iter().flat_map(|u| u.table().iter().flatten()).map(|v| v.abs()).sum()
    }

    /// `environment,state,action,utility` rows.
    pub fn utilities_csv(&self) -> String {
        let mut out = csv_line(["environment", "state", "action", "utility"]);
        for (m, r) in self.utilities.iter().enumerate() {
            for x in 0..r.n_states() {
                for u in 0..r.n_actions() {
                    out.push_str(&csv_line([m.to_string(), x.to_string(), u.to_string(), fmt_g(r.utility(x, u))]));
                }
            }
        }
        out
    }
}

fn solve_program(prog: &BrpProgram) -> Result<LpSolution> {
    Ok(lp::solve(&prog.lp)?)
}

/// Decides whether the data admit a reconstruction with both margins at least `epsilon_min`.
pub fn feasibility_check(ds: &BrpDataset, epsilon_min: f64) -> Result<FeasibilityReport> {
    let prog = build_program(ds, Margins::Common)?;
    let margin = match solve_program(&prog)? {
        LpSolution::Optimal { x, .. } => x[prog.layout.eps1()],
        LpSolution::Infeasible => 0.0,
        LpSolution::Unbounded => unreachable!("all variables are bounded"),
    };
    let verdict = if margin >= epsilon_min { Verdict::Ribum } else { Verdict::NotRibum };
    Ok(FeasibilityReport { verdict, margin })
}

/// Utilities maximising `eps1 + eps2`; neither margin drops below half the common margin.
pub fn max_margin_reconstruct(ds: &BrpDataset) -> Result<ReconstructionResult> {
    let common = feasibility_check(ds, MIN_MARGIN)?;
    if common.margin < MIN_MARGIN {
        return Err(Error::ReconstructionInfeasible { margin: common.margin });
    }
    let prog = build_program(ds, Margins::MaxSum { floor: 0.5 * common.margin })?;
    match solve_program(&prog)? {
        LpSolution::Optimal { x, .. } => Ok(ReconstructionResult::from_point(&prog, &x)),
        _ => Err(Error::ReconstructionInfeasible { margin: common.margin }),
    }
}

/// Utilities of least total magnitude meeting the given margins.
pub fn sparse_reconstruct(ds: &BrpDataset, eps1: f64, eps2: f64) -> Result<ReconstructionResult> {
    if !(eps1 >= 0.0 && eps2 >= 0.0) {
        return Err(Error::InvalidParameter("margins must be nonnegative".into()));
    }
    let mut prog = build_program(ds, Margins::Fixed { eps1, eps2 })?;
    let l = prog.layout;
    // Utilities are bounded below by zero, so |r| = r.
    for m in 0..l.m {
        for x in 0..l.x {
            for u in 0..l.u {
                prog.lp.objective[l.r(m, x, u)] = 1.0;
            }
        }
    }
    match solve_program(&prog)? {
        LpSolution::Optimal { x, .. } => Ok(ReconstructionResult::from_point(&prog, &x)),
        _ => Err(Error::ReconstructionInfeasible { margin: eps1.min(eps2) }),
    }
}

/// `sum_u max_ubar sum_x p_l(x, u) r(x, ubar)`: value of environment `l`'s data under `r`.
fn best_response_value(ds: &BrpDataset, l: usize, r: &UtilitySpec) -> f64 {
    (0..ds.n_actions())
        .map(|u| {
            (0..ds.n_actions())
                .map(|ubar| (0..ds.n_states()).map(|x| ds.joint(l, x, u) * r.utility(x, ubar)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum()
}

/// `sum_{x,u} p_m(x, u) r(x, u)`: expected utility of the recorded behaviour.
fn recorded_value(ds: &BrpDataset, m: usize, r: &UtilitySpec) -> f64 {
    (0..ds.n_states())
        .flat_map(|x| (0..ds.n_actions()).map(move |u| (x, u)))
        .map(|(x, u)| ds.joint(m, x, u) * r.utility(x, u))
        .sum()
}

/// Largest violation of any NIAS or NIAC inequality by `rec`, evaluated with exact maxima.
pub fn witness_violation(ds: &BrpDataset, rec: &ReconstructionResult) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for m in 0..ds.n_envs() {
        let r = &rec.utilities[m];
        for u in 0..ds.n_actions() {
            let Some(post) = ds.posterior(m, u) else { continue };
            for ubar in (0..ds.n_actions()).filter(|&v| v != u) {
                let lhs: f64 =
                    post.iter().enumerate().map(|(x, p)| p * (r.utility(x, ubar) - r.utility(x, u))).sum::<f64>()
                        + rec.eps1;
                worst = worst.max(lhs);
            }
        }
    }
    for l in 0..ds.n_envs() {
        for m in (0..ds.n_envs()).filter(|&m| m != l) {
            let r = &rec.utilities[m];
            let lhs =
                best_response_value(ds, l, r) - rec.costs[l] - (recorded_value(ds, m, r) - rec.costs[m]) + rec.eps2;
            worst = worst.max(lhs);
        }
    }
    worst
}

/// Attention cost bound implied by a reconstruction.
pub fn reconstruct_info_cost(ds: &BrpDataset, rec: &ReconstructionResult) -> f64 {
    (0..ds.n_envs())
        .map(|m| {
            let r = &rec.utilities[m];
            rec.costs[m] + best_response_value(ds, m, r) - recorded_value(ds, m, r)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `sum_y max_u sum_x r(x, u) B(y | x) prior(x)`.
pub fn gross_expected_utility(r: &UtilitySpec, b: &ObservationModel, prior: &Belief) -> Result<f64> {
    if r.n_states() != b.n_states() || prior.len() != b.n_states() {
        return Err(Error::DimensionMismatch("utility, kernel and prior disagree on the state count".into()));
    }
    Ok((0..b.n_obs())
        .map(|y| {
            (0..r.n_actions())
                .map(|u| (0..b.n_states()).map(|x| r.utility(x, u) * b.prob(x, y) * prior.get(x)).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .sum())
}

/// Samples of an expected-utility maximiser that observes through `kernels[m]` in environment `m`.
pub fn generate_ribum_samples(
    utilities: &[UtilitySpec],
    kernels: &[ObservationModel],
    prior: &Belief,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<(usize, usize, usize)>> {
    if utilities.len() != kernels.len() {
        return Err(Error::DimensionMismatch("one utility table per kernel is required".into()));
    }
    for (r, b) in utilities.iter().zip(kernels) {
        if r.n_states() != prior.len() || b.n_states() != prior.len() {
            return Err(Error::DimensionMismatch("utility, kernel and prior disagree on the state count".into()));
        }
    }
    let per_env: Vec<Vec<(usize, usize, usize)>> = (0..kernels.len())
        .into_par_iter()
        .map(|m| {
            let (r, b) = (&utilities[m], &kernels[m]);
            // The chosen action depends only on the observation.
            let choice: Vec<usize> = (0..b.n_obs())
                .map(|y| {
                    let score = |u: usize| {
                        (0..b.n_states()).map(|x| r.utility(x, u) * b.prob(x, y) * prior.get(x)).sum::<f64>()
                    };
                    let mut best = 0;
                    for u in 1..r.n_actions() {
                        if score(u) > score(best) + crate::social::TIE_TOL {
                            best = u;
                        }
                    }
                    best
                })
                .collect();
            let mut rng = rng_from_seed(derive_seed(seed, m as u64));
            (0..n_samples)
                .map(|_| {
                    let x = sample_categorical(prior.probs(), &mut rng);
                    let y = b.sample(x, &mut rng);
                    (m, x, choice[y])
                })
                .collect()
        })
        .collect();
    Ok(per_env.into_iter().flatten().collect())
}

/// [`generate_ribum_samples`] followed by [`empirical_dataset`].
pub fn generate_ribum_dataset(
    utilities: &[UtilitySpec],
    kernels: &[ObservationModel],
    prior: &Belief,
    n_samples: usize,
    seed: u64,
) -> Result<BrpDataset> {
    let samples = generate_ribum_samples(utilities, kernels, prior, n_samples, seed)?;
    let nu = utilities.first().map_or(0, UtilitySpec::n_actions);
    empirical_dataset(&samples, prior, kernels.len(), nu)
}

/// `eps1,eps2,K_hat` report.
pub fn report_csv(ds: &BrpDataset, rec: &ReconstructionResult) -> String {
    csv_line(["eps1", "eps2", "K_hat"])
        + &csv_line([fmt_g(rec.eps1), fmt_g(rec.eps2), fmt_g(reconstruct_info_cost(ds, rec))])
}

/// Reads `(state, action)` pairs for a single environment.
pub fn read_state_action_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    read_index_pairs(path, &["state", "action"])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_env_dataset() -> BrpDataset {
        // Environment 0 classifies perfectly, environment 1 always answers 0.
        BrpDataset::new(
            Belief::uniform(2),
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
        )
        .unwrap()
    }

    #[test]
    fn row_counts_for_two_by_two() {
        let ds = BrpDataset::new(
            Belief::uniform(2),
            vec![vec![vec![0.9, 0.1], vec![0.2, 0.8]], vec![vec![0.7, 0.3], vec![0.4, 0.6]]],
        )
        .unwrap();
        let p = build_program(&ds, Margins::MaxSum { floor: 0.0 }).unwrap();
        assert_eq!(p.n_niac_rows, 2);
        assert_eq!(p.n_epigraph_rows, 8);
        assert_eq!(p.n_aux, 4);
        assert_eq!(p.n_nias_rows, 4);
        assert_eq!(p.n_nias_rows + p.n_niac_rows, paper_inequality_count(2, 2));
        assert_eq!(paper_variable_count(2, 2, 2), 10);
    }

    #[test]
    fn single_environment_is_rejected() {
        let ds = BrpDataset::new(Belief::uniform(2), vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap();
        assert!(matches!(feasibility_check(&ds, 1e-4), Err(Error::TooFewEnvironments(1))));
    }

    #[test]
    fn empty_cells_are_reported() {
        let e = empirical_dataset(&[(0, 0, 0), (1, 0, 1), (1, 1, 1)], &Belief::uniform(2), 2, 2);
        assert!(matches!(e, Err(Error::EmptyCell { env: 0, state: 1 })));
    }

    #[test]
    fn gross_utility_examples() {
        let r = UtilitySpec::identity(2);
        let pi = Belief::uniform(2);
        let id = ObservationModel::identity(2).unwrap();
        assert!((gross_expected_utility(&r, &id, &pi).unwrap() - 1.0).abs() < 1e-15);
        let b = ObservationModel::binary_symmetric(0.9).unwrap();
        assert!((gross_expected_utility(&r, &b, &pi).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn sparse_optimum_has_minimal_support() {
        let ds = two_env_dataset();
        let (e1, e2) = (0.01, 0.01);
        let rec = sparse_reconstruct(&ds, e1, e2).unwrap();
        // Environment 0 needs r(0,0), r(1,1) >= max(eps1, 4 eps2); environment 1 needs
        // half the mass of r(., 0) to reach eps1. One support entry per taken action.
        let expected = 2.0 * f64::max(e1, 4.0 * e2) + 2.0 * e1;
        assert!((rec.l1_norm() - expected).abs() < 1e-9, "{}", rec.l1_norm());
        let zeros = rec.utilities.iter().flat_map(|u| u.table().iter().flatten()).filter(|v| v.abs() < 1e-12).count();
        assert_eq!(zeros, 8 - 3);
        assert!(witness_violation(&ds, &rec) <= 1e-7);
    }

    #[test]
    fn randomising_agent_fails_nias() {
        let ds = BrpDataset::new(
            Belief::uniform(2),
            vec![vec![vec![0.5, 0.5], vec![0.5, 0.5]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
        )
        .unwrap();
        let rep = feasibility_check(&ds, 1e-4).unwrap();
        assert_eq!(rep.verdict, Verdict::NotRibum);
        assert!(rep.margin < 1e-9);
        assert!(matches!(max_margin_reconstruct(&ds), Err(Error::ReconstructionInfeasible { .. })));
    }

    #[test]
    fn info_cost_is_nonnegative_for_feasible_data() {
        let ds = two_env_dataset();
        let rec = max_margin_reconstruct(&ds).unwrap();
        assert!(rec.eps1 > 0.0 && rec.eps2 > 0.0);
        assert!(reconstruct_info_cost(&ds, &rec) >= -1e-9);
        assert!(report_csv(&ds, &rec).starts_with("eps1,eps2,K_hat\n"));
    }
}
