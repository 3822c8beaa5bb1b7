//! Dense two-phase primal simplex.
//!
//! Problems are stated as `minimize c . x` subject to `A x <= b` and
//! per-variable bounds `l <= x <= u` (either side may be infinite). The
//! leaving row is chosen by a lexicographic ratio test, so degenerate
//! programs cannot cycle and runs are deterministic.

use std::fmt;

/// Smallest admissible pivot magnitude.
pub const PIVOT_TOL: f64 = 1e-10;
/// Constraint residual guaranteed for an optimal point.
pub const FEAS_TOL: f64 = 1e-7;
/// Default cap on the number of pivots across both phases.
pub const DEFAULT_MAX_PIVOTS: usize = 100_000;
/// Relative slack when comparing ratios in the leaving-row test.
const RATIO_TOL: f64 = 1e-11;
/// Primal infeasibility a ratio step may introduce in exchange for a larger pivot.
const HARRIS_TOL: f64 = 1e-10;
/// Leaving-row pivots must be at least this fraction of the largest candidate.
const STABLE_PIVOT: f64 = 1e-2;

const COST_TOL: f64 = 1e-10;
const PHASE1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("malformed program: {0}")]
    MalformedProgram(String),
    #[error("iteration limit of {0} pivots reached")]
    IterationLimit(usize),
}

/// `minimize objective . x` subject to `rows x <= rhs` and `lower <= x <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
    pub rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// A program over `n` variables with bounds `[0, inf)` and a zero objective.
    pub fn new(n: usize) -> Self {
        LinearProgram {
            objective: vec![0.0; n],
            rows: Vec::new(),
            rhs: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    /// Adds `sum coef * x[var] <= rhs`; repeated indices accumulate.
    pub fn add_le(&mut self, terms: &[(usize, f64)], rhs: f64) {
        let mut row = vec![0.0; self.n_vars()];
        for &(j, a) in terms {
            row[j] += a;
        }
        self.rows.push(row);
        self.rhs.push(rhs);
    }

    /// Largest violation of a row constraint at `x`.
    pub fn max_residual(&self, x: &[f64]) -> f64 {
        self.rows
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() - b)
            .fold(0.0, f64::max)
    }

    /// Largest violation of a variable bound at `x`.
    pub fn max_bound_violation(&self, x: &[f64]) -> f64 {
        x.iter().zip(self.lower.iter().zip(&self.upper)).map(|(v, (l, u))| (l - v).max(v - u)).fold(0.0, f64::max)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    fn validate(&self) -> Result<(), LpError> {
        let n = self.n_vars();
        let bad = |msg: String| Err(LpError::MalformedProgram(msg));
        if self.lower.len() != n || self.upper.len() != n {
            return bad(format!("{n} variables but {} lower and {} upper bounds", self.lower.len(), self.upper.len()));
        }
        if self.rows.len() != self.rhs.len() {
            return bad(format!("{} rows but {} right-hand sides", self.rows.len(), self.rhs.len()));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return bad("objective has a non-finite coefficient".into());
        }
        for (i, (row, b)) in self.rows.iter().zip(&self.rhs).enumerate() {
            if row.len() != n {
                return bad(format!("row {i} has {} coefficients, expected {n}", row.len()));
            }
            if row.iter().any(|a| !a.is_finite()) || !b.is_finite() {
                return bad(format!("row {i} has a non-finite entry"));
            }
        }
        for j in 0..n {
            let (l, u) = (self.lower[j], self.upper[j]);
            if l.is_nan() || u.is_nan() || l > u || l == f64::INFINITY || u == f64::NEG_INFINITY {
                return bad(format!("variable {j} has invalid bounds [{l}, {u}]"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpSolution {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpSolution {
    pub fn is_optimal(&self) -> bool {
        matches!(self, LpSolution::Optimal { .. })
    }

    pub fn point(&self) -> Option<&[f64]> {
        match self {
            LpSolution::Optimal { x, .. } => Some(x),
            _ => None,
        }
    }
}

impl fmt::Display for LpSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LpSolution::Optimal { objective, .. } => write!(f, "optimal ({objective})"),
            LpSolution::Infeasible => write!(f, "infeasible"),
            LpSolution::Unbounded => write!(f, "unbounded"),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub max_pivots: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_pivots: DEFAULT_MAX_PIVOTS }
    }
}

pub fn solve(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_with(lp, SolverOptions::default())
}

/// Finds any feasible point, ignoring the objective.
pub fn solve_feasibility(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    let mut zero = lp.clone();
    zero.objective.iter_mut().for_each(|c| *c = 0.0);
    solve(&zero)
}

/// How an original variable is rebuilt from nonnegative standard-form columns.
#[derive(Clone, Debug)]
struct VarMap {
    offset: f64,
    cols: Vec<(usize, f64)>,
}

pub fn solve_with(lp: &LinearProgram, opts: SolverOptions) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let n = lp.n_vars();

    // Substitute bounds so that every standard-form column is nonnegative.
    let mut maps = Vec::with_capacity(n);
    let mut ncols = 0;
    let mut extra_rows: Vec<(usize, f64)> = Vec::new();
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        let map = if l.is_finite() {
            if u.is_finite() {
                extra_rows.push((ncols, u - l));
            }
            VarMap { offset: l, cols: vec![(ncols, 1.0)] }
        } else if u.is_finite() {
            VarMap { offset: u, cols: vec![(ncols, -1.0)] }
        } else {
            ncols += 1;
            VarMap { offset: 0.0, cols: vec![(ncols - 1, 1.0), (ncols, -1.0)] }
        };
        ncols += 1;
        maps.push(map);
    }

    let mut std_rows: Vec<Vec<f64>> = Vec::with_capacity(lp.rows.len() + extra_rows.len());
    let mut std_rhs: Vec<f64> = Vec::with_capacity(std_rows.capacity());
    for (row, &b) in lp.rows.iter().zip(&lp.rhs) {
        let mut r = vec![0.0; ncols];
        let mut rhs = b;
        for (a, map) in row.iter().zip(&maps) {
            if *a != 0.0 {
                rhs -= a * map.offset;
                for &(c, s) in &map.cols {
                    r[c] += a * s;
                }
            }
        }
        std_rows.push(r);
        std_rhs.push(rhs);
    }
    for &(c, width) in &extra_rows {
        let mut r = vec![0.0; ncols];
        r[c] = 1.0;
        std_rows.push(r);
        std_rhs.push(width);
    }
    let mut std_cost = vec![0.0; ncols];
    for (c, map) in lp.objective.iter().zip(&maps) {
        for &(col, s) in &map.cols {
            std_cost[col] += c * s;
        }
    }

    let status = match Simplex::solve(&std_rows, &std_rhs, &std_cost, opts.max_pivots)? {
        Outcome::Optimal(xs) => xs,
        Outcome::Infeasible => return Ok(LpSolution::Infeasible),
        Outcome::Unbounded => return Ok(LpSolution::Unbounded),
    };

    let x: Vec<f64> = maps
        .iter()
        .zip(lp.lower.iter().zip(&lp.upper))
        .map(|(map, (&l, &u))| {
            let v = map.offset + map.cols.iter().map(|&(c, s)| s * status[c]).sum::<f64>();
            v.clamp(l, u)
        })
        .collect();
    let objective = lp.objective_value(&x);
    Ok(LpSolution::Optimal { x, objective })
}

enum Outcome {
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// Tableau over `[structural | slack | artificial]` columns plus a right-hand side.
struct Simplex {
    m: usize,
    width: usize,
    t: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    pivots: usize,
    max_pivots: usize,
    /// Column that was basic in each row initially; these columns hold the basis inverse.
    init_cols: Vec<usize>,
}

impl Simplex {
    fn solve(rows: &[Vec<f64>], rhs: &[f64], cost: &[f64], max_pivots: usize) -> Result<Outcome, LpError> {
        let m = rows.len();
        let nx = cost.len();
        let flipped: Vec<bool> = rhs.iter().map(|&b| b < 0.0).collect();
        let n_art = flipped.iter().filter(|&&f| f).count();
        let art0 = nx + m;
        let ncols = art0 + n_art;
        let width = ncols + 1;
        let mut t = vec![0.0; m * width];
        let mut basis = vec![0; m];
        let mut next_art = art0;
        for i in 0..m {
            let s = if flipped[i] { -1.0 } else { 1.0 };
            let r = &mut t[i * width..(i + 1) * width];
            for j in 0..nx {
                r[j] = s * rows[i][j];
            }
            r[nx + i] = s;
            r[ncols] = s * rhs[i];
            if flipped[i] {
                r[next_art] = 1.0;
                basis[i] = next_art;
                next_art += 1;
            } else {
                basis[i] = nx + i;
            }
        }
        let mut sx =
            Simplex { m, width, t, obj: vec![0.0; width], init_cols: basis.clone(), basis, pivots: 0, max_pivots };

        if n_art > 0 {
            let mut c1 = vec![0.0; ncols];
            c1[art0..ncols].iter_mut().for_each(|c| *c = 1.0);
            sx.price(&c1);
            if sx.run(ncols)? == Step::Unbounded {
                // Phase one is bounded below by zero.
                return Err(LpError::MalformedProgram("phase one reported unbounded".into()));
            }
            let infeasibility = -sx.obj[ncols];
            let scale = 1.0 + rhs.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            if infeasibility > PHASE1_TOL * scale {
                return Ok(Outcome::Infeasible);
            }
            sx.drive_out_artificials(art0, ncols);
        }

        let mut c2 = vec![0.0; ncols];
        c2[..nx].copy_from_slice(cost);
        sx.price(&c2);
        if sx.run(art0)? == Step::Unbounded {
            return Ok(Outcome::Unbounded);
        }
        let mut x = vec![0.0; nx];
        for (i, &b) in sx.basis.iter().enumerate() {
            if b < nx {
                x[b] = sx.t[i * width + ncols].max(0.0);
            }
        }
        Ok(Outcome::Optimal(x))
    }

    /// Rebuilds the reduced-cost row for `cost` from the current basis.
    fn price(&mut self, cost: &[f64]) {
        let w = self.width;
        self.obj.iter_mut().for_each(|v| *v = 0.0);
        self.obj[..cost.len()].copy_from_slice(cost);
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * w..(i + 1) * w];
                for (o, a) in self.obj.iter_mut().zip(row) {
                    *o -= cb * a;
                }
            }
        }
    }

    /// Pivots until optimal; only columns below `allowed` may enter.
    ///
    /// Entering: most negative reduced cost, lowest index on ties. Leaving:
    /// lexicographic ratio test over the rows of the basis inverse, which
    /// rules out cycling on degenerate vertices.
    fn run(&mut self, allowed: usize) -> Result<Step, LpError> {
        let w = self.width;
        let rhs = w - 1;
        loop {
            let mut enter = None;
            let mut most = -COST_TOL;
            for j in 0..allowed {
                if self.obj[j] < most {
                    most = self.obj[j];
                    enter = Some(j);
                }
            }
            let Some(enter) = enter else {
                return Ok(Step::Optimal);
            };
            let col_of = |i: usize| self.t[i * w + enter];
            let level = |i: usize| self.t[i * w + rhs].max(0.0);
            let eligible: Vec<usize> = (0..self.m).filter(|&i| col_of(i) > PIVOT_TOL).collect();
            if eligible.is_empty() {
                return Ok(Step::Unbounded);
            }
            // Harris bound: rows may overshoot zero by at most HARRIS_TOL.
            let bound = eligible.iter().map(|&i| (level(i) + HARRIS_TOL) / col_of(i)).fold(f64::INFINITY, f64::min);
            let mut cands: Vec<usize> = eligible.into_iter().filter(|&i| level(i) / col_of(i) <= bound).collect();
            let biggest = cands.iter().map(|&i| col_of(i)).fold(0.0, f64::max);
            cands.retain(|&i| col_of(i) >= STABLE_PIVOT * biggest);
            // Column 0 of the key is the right-hand side, then the basis inverse.
            for k in 0..=self.m {
                if cands.len() == 1 {
                    break;
                }
                let col = if k == 0 { rhs } else { self.init_cols[k - 1] };
                let key = |i: usize| {
                    let v = self.t[i * w + col] / self.t[i * w + enter];
                    if k == 0 {
                        v.max(0.0)
                    } else {
                        v
                    }
                };
                let best = cands.iter().map(|&i| key(i)).fold(f64::INFINITY, f64::min);
                let tol = RATIO_TOL * (1.0 + best.abs());
                cands.retain(|&i| key(i) <= best + tol);
            }
            let row = *cands
                .iter()
                .max_by(|&&a, &&b| self.t[a * w + enter].partial_cmp(&self.t[b * w + enter]).unwrap().then(b.cmp(&a)))
                .expect("nonempty");
            self.pivot(row, enter)?;
        }
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<(), LpError> {
        if self.pivots >= self.max_pivots {
            return Err(LpError::IterationLimit(self.max_pivots));
        }
        self.pivots += 1;
        let w = self.width;
        let p = self.t[row * w + col];
        let pivot_row: Vec<f64> = self.t[row * w..(row + 1) * w].iter().map(|v| v / p).collect();
        for i in 0..self.m {
            let r = &mut self.t[i * w..(i + 1) * w];
            if i == row {
                r.copy_from_slice(&pivot_row);
                continue;
            }
            let f = r[col];
            if f != 0.0 {
                for (v, pv) in r.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                r[col] = 0.0;
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for (v, pv) in self.obj.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.obj[col] = 0.0;
        }
        self.basis[row] = col;
        Ok(())
    }

    /// Replaces zero-level artificial basics by structural or slack columns where possible.
    fn drive_out_artificials(&mut self, art0: usize, ncols: usize) {
        let w = self.width;
        for i in 0..self.m {
            if self.basis[i] < art0 || self.basis[i] >= ncols {
                continue;
            }
            if let Some(j) = (0..art0).find(|&j| self.t[i * w + j].abs() > PIVOT_TOL) {
                // Zero-level pivot; cannot exceed the pivot budget meaningfully.
                let _ = self.pivot(i, j);
            }
        }
    }
}

#[derive(PartialEq, Eq)]
enum Step {
    Optimal,
    Unbounded,
}
