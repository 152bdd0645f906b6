//! Dense two-phase primal simplex for small linear programs
//!
//! ```text
//! minimize    c^T x
//! subject to  A x >= b
//!             lower <= x <= upper
//! ```
//!
//! Pivoting follows Bland's rule (lowest-index entering column, lowest-index
//! leaving basic variable on ratio ties), so the method cannot cycle.
//! Infeasibility is certified by a positive phase-one optimum.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Where an inequality row came from; used to report violated constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTag {
    /// Source-relay SINR row of a pair.
    SourceRelay(usize),
    /// Relay-destination SINR row of a pair.
    RelayDestination(usize),
    Other,
}

impl RowTag {
    pub fn pair(self) -> Option<usize> {
        match self {
            RowTag::SourceRelay(k) | RowTag::RelayDestination(k) => Some(k),
            RowTag::Other => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpStandardForm<T: Real> {
    pub objective: Vec<T>,
    /// `m x n` inequality matrix of `A x >= b`.
    pub rows: DMatrix<T>,
    pub rhs: Vec<T>,
    pub tags: Vec<RowTag>,
    pub lower: Vec<T>,
    /// Upper bounds; `None` means unbounded above.
    pub upper: Vec<Option<T>>,
}

impl<T: Real> LpStandardForm<T> {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let m = self.num_rows();
        if self.rows.shape() != (m, n) || self.tags.len() != m || self.lower.len() != n || self.upper.len() != n {
            return Err(Error::Shape(format!(
                "LP with {n} variables and {m} rows has matrix {:?}, {} tags, {} lower, {} upper bounds",
                self.rows.shape(),
                self.tags.len(),
                self.lower.len(),
                self.upper.len()
            )));
        }
        let finite = self.objective.iter().chain(self.rhs.iter()).chain(self.lower.iter()).all(|v| v.is_finite())
            && self.rows.iter().all(|v| v.is_finite())
            && self.upper.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("LP data must be finite".into()));
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for i in 0..self.num_rows() {
            let lhs = (0..self.num_vars()).fold(T::zero(), |acc, j| acc + self.rows[(i, j)] * x[j]);
            worst = worst.max(self.rhs[i] - lhs);
        }
        for ((&xj, &lo), up) in x.iter().zip(&self.lower).zip(&self.upper) {
            worst = worst.max(lo - xj);
            if let Some(u) = *up {
                worst = worst.max(xj - u);
            }
        }
        worst
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective.iter().zip(x).fold(T::zero(), |acc, (c, v)| acc + *c * *v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LpOutcome<T: Real> {
    Optimal { x: Vec<T>, objective: T },
    /// Phase-one optimum (total artificial infeasibility) and the rows it
    /// could not satisfy.
    Infeasible { phase_one: T, violated: Vec<RowTag> },
}

/// Pivot on |a| below this is treated as zero.
const PIVOT_TOL: f64 = 1e-11;
/// Phase-one residual tolerance, relative to `1 + max |b|`.
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 10_000;

struct Tableau<T: Real> {
    a: DMatrix<T>,
    b: Vec<T>,
    /// Reduced costs and objective value (negated) of the current phase.
    cost: Vec<T>,
    cost_rhs: T,
    basis: Vec<usize>,
    /// Columns allowed to enter.
    allowed: Vec<bool>,
    pivots: usize,
}

impl<T: Real> Tableau<T> {
    fn pivot(&mut self, r: usize, c: usize) {
        let p = self.a[(r, c)];
        let cols = self.a.ncols();
        for j in 0..cols {
            self.a[(r, j)] /= p;
        }
        self.b[r] /= p;
        for i in 0..self.a.nrows() {
            if i == r {
                continue;
            }
            let f = self.a[(i, c)];
            if f != T::zero() {
                for j in 0..cols {
                    let v = self.a[(r, j)];
                    self.a[(i, j)] -= f * v;
                }
                let br = self.b[r];
                self.b[i] -= f * br;
            }
        }
        let f = self.cost[c];
        if f != T::zero() {
            for j in 0..cols {
                self.cost[j] -= f * self.a[(r, j)];
            }
            self.cost_rhs -= f * self.b[r];
        }
        self.basis[r] = c;
        self.pivots += 1;
    }

    /// Loads a cost vector and prices out the current basis.
    fn set_cost(&mut self, cost: &[T]) {
        self.cost = cost.to_vec();
        self.cost_rhs = T::zero();
        for r in 0..self.basis.len() {
            let f = self.cost[self.basis[r]];
            if f != T::zero() {
                for j in 0..self.a.ncols() {
                    self.cost[j] -= f * self.a[(r, j)];
                }
                self.cost_rhs -= f * self.b[r];
            }
        }
    }

    /// Runs Bland-rule simplex to optimality of the loaded cost.
    fn optimize(&mut self) -> Result<()> {
        let tol = T::lit(PIVOT_TOL);
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Numeric(format!("no convergence after {MAX_PIVOTS} pivots")));
            }
            let entering = (0..self.a.ncols()).find(|&j| self.allowed[j] && self.cost[j] < -tol);
            let Some(c) = entering else { return Ok(()) };
            let mut leave: Option<(usize, T)> = None;
            for r in 0..self.a.nrows() {
                let arc = self.a[(r, c)];
                if arc > tol {
                    let ratio = self.b[r] / arc;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio || (ratio == lratio && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Numeric(format!("objective unbounded along column {c}")));
            };
            self.pivot(r, c);
        }
    }
}

/// Solves the LP. Returns `Err` only for malformed input or numerical
/// breakdown; infeasibility is a regular outcome.
pub fn solve<T: Real>(lp: &LpStandardForm<T>) -> Result<LpOutcome<T>> {
    lp.validate()?;
    let n = lp.num_vars();
    let tol = T::lit(FEAS_TOL);

    // Shift to y = x - lower >= 0 and collect constraints as (coeffs, sense, rhs):
    // sense +1 is `>=`, -1 is `<=`.
    let mut cons: Vec<(Vec<T>, i8, T, RowTag)> = Vec::new();
    for i in 0..lp.num_rows() {
        let coeffs: Vec<T> = (0..n).map(|j| lp.rows[(i, j)]).collect();
        let shift = (0..n).fold(T::zero(), |acc, j| acc + coeffs[j] * lp.lower[j]);
        cons.push((coeffs, 1, lp.rhs[i] - shift, lp.tags[i]));
    }
    for j in 0..n {
        if let Some(u) = lp.upper[j] {
            let width = u - lp.lower[j];
            if width < -tol {
                return Ok(LpOutcome::Infeasible { phase_one: -width, violated: vec![RowTag::Other] });
            }
            let mut coeffs = vec![T::zero(); n];
            coeffs[j] = T::one();
            cons.push((coeffs, -1, width.max(T::zero()), RowTag::Other));
        }
    }

    let m = cons.len();
    // Columns: n structural, m slack, m artificial.
    let cols = n + 2 * m;
    let mut a = DMatrix::<T>::zeros(m, cols);
    let mut b = vec![T::zero(); m];
    for (r, (coeffs, sense, rhs, _)) in cons.iter().enumerate() {
        let flip = if *rhs < T::zero() { -T::one() } else { T::one() };
        for j in 0..n {
            a[(r, j)] = coeffs[j] * flip;
        }
        // >= row gets surplus -1, <= row gets slack +1.
        let slack = if *sense > 0 { -T::one() } else { T::one() };
        a[(r, n + r)] = slack * flip;
        a[(r, n + m + r)] = T::one();
        b[r] = *rhs * flip;
    }
    let scale = b.iter().fold(T::one(), |acc, v| acc.max(v.abs()));

    let mut t = Tableau {
        a,
        b,
        cost: vec![],
        cost_rhs: T::zero(),
        basis: (n + m..n + 2 * m).collect(),
        allowed: vec![true; cols],
        pivots: 0,
    };

    // Phase one: minimize the sum of artificials.
    let mut phase_one_cost = vec![T::zero(); cols];
    for c in phase_one_cost.iter_mut().skip(n + m) {
        *c = T::one();
    }
    t.set_cost(&phase_one_cost);
    t.optimize()?;
    let infeasibility = -t.cost_rhs;
    if infeasibility > tol * scale {
        let mut violated: Vec<RowTag> = Vec::new();
        for (r, &bv) in t.basis.iter().enumerate() {
            if bv >= n + m && t.b[r] > tol * scale {
                let tag = cons[bv - n - m].3;
                if !violated.contains(&tag) {
                    violated.push(tag);
                }
            }
        }
        return Ok(LpOutcome::Infeasible { phase_one: infeasibility, violated });
    }

    // Drive zero-level artificials out of the basis where possible.
    for r in 0..m {
        if t.basis[r] >= n + m {
            if let Some(c) = (0..n + m).find(|&j| t.a[(r, j)].abs() > T::lit(PIVOT_TOL)) {
                t.pivot(r, c);
            }
        }
    }
    for j in n + m..cols {
        t.allowed[j] = false;
    }

    // Phase two.
    let mut cost = vec![T::zero(); cols];
    cost[..n].copy_from_slice(&lp.objective);
    t.set_cost(&cost);
    t.optimize()?;

    let mut x = lp.lower.clone();
    for (r, &bv) in t.basis.iter().enumerate() {
        if bv < n {
            x[bv] += t.b[r];
        }
    }
    let objective = lp.objective_value(&x);
    Ok(LpOutcome::Optimal { x, objective })
}
