//! Stochastic orders and the structural conditions behind threshold policies.

use crate::model::{CostSpec, ObservationModel};

const ORDER_TOL: f64 = 1e-12;

/// Every 2x2 minor of `m` is nonnegative (within `1e-12`).
pub fn is_tp2(m: &[Vec<f64>]) -> bool {
    first_negative_minor(m).is_none()
}

/// Row and column pairs `((i, j), (k, l))` of the first negative minor.
pub fn first_negative_minor(m: &[Vec<f64>]) -> Option<((usize, usize), (usize, usize))> {
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            for k in 0..m[i].len() {
                for l in k + 1..m[i].len() {
                    if m[i][k] * m[j][l] - m[i][l] * m[j][k] < -ORDER_TOL {
                        return Some(((i, j), (k, l)));
                    }
                }
            }
        }
    }
    None
}

/// `p1` dominates `p2` in the monotone likelihood ratio order.
pub fn mlr_dominates(p1: &[f64], p2: &[f64]) -> bool {
    assert_eq!(p1.len(), p2.len());
    for i in 0..p1.len() {
        for j in i + 1..p1.len() {
            if p1[i] * p2[j] > p1[j] * p2[i] + ORDER_TOL {
                return false;
            }
        }
    }
    true
}

/// `p1` first-order stochastically dominates `p2`.
pub fn fosd_dominates(p1: &[f64], p2: &[f64]) -> bool {
    assert_eq!(p1.len(), p2.len());
    let (mut t1, mut t2) = (0.0, 0.0);
    for i in (0..p1.len()).rev() {
        t1 += p1[i];
        t2 += p2[i];
        if t1 < t2 - ORDER_TOL {
            return false;
        }
    }
    true
}

/// Outcome of one structural condition with the first violating `(state, action)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Condition {
    pub holds: bool,
    pub first_violation: Option<(usize, usize)>,
}

impl Condition {
    fn from(v: Option<(usize, usize)>) -> Self {
        Condition { holds: v.is_none(), first_violation: v }
    }
}

/// The four conditions under which the stopping value function is monotone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssumptionReport {
    /// Costs decrease along the state order.
    pub s1: Condition,
    /// Upper-state cost gap bounds its discounted one-step counterpart.
    pub s2: Condition,
    /// Lower-state one-step cost gap bounds the instantaneous gap.
    pub s3: Condition,
    /// The observation kernel is TP2; `first_violation` holds `(row i, column k)`.
    pub s4: Condition,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.s1.holds && self.s2.holds && self.s3.holds && self.s4.holds
    }
}

pub fn check_structural_assumptions(c: &CostSpec, b: &ObservationModel, rho: f64) -> AssumptionReport {
    let nx = c.n_states();
    let last = nx - 1;
    // One-step expected cost sum_y c(e_i, u) B(i, y).
    let one_step = |i: usize, u: usize| -> f64 { (0..b.n_obs()).map(|y| c.cost(i, u) * b.prob(i, y)).sum() };
    let mut s1 = None;
    let mut s2 = None;
    let mut s3 = None;
    for i in 0..nx {
        for u in 0..c.n_actions() {
            if s1.is_none() && i + 1 < nx && c.cost(i, u) - c.cost(i + 1, u) < -ORDER_TOL {
                s1 = Some((i, u));
            }
            let lhs2 = c.cost(last, u) - c.cost(i, u);
            let rhs2 = (1.0 - rho) * (one_step(last, u) - one_step(i, u));
            if s2.is_none() && lhs2 < rhs2 - ORDER_TOL {
                s2 = Some((i, u));
            }
            let lhs3 = (1.0 - rho) * (one_step(0, u) - one_step(i, u));
            let rhs3 = c.cost(0, u) - c.cost(i, u);
            if s3.is_none() && lhs3 < rhs3 - ORDER_TOL {
                s3 = Some((i, u));
            }
        }
    }
    let s4 = first_negative_minor(b.rows()).map(|((i, _), (k, _))| (i, k));
    AssumptionReport {
        s1: Condition::from(s1),
        s2: Condition::from(s2),
        s3: Condition::from(s3),
        s4: Condition::from(s4),
    }
}
