//! Dense two-phase simplex with Bland's anti-cycling rule.
//!
//! Problems are stated as
//!
//! ```text
//! maximize    c·x
//! subject to  a_i·x {<=, >=, =} b_i
//!             x >= 0
//! ```
//!
//! Rows with negative right-hand side are negated on entry. `<=` rows get a
//! slack column, `>=` rows a surplus column plus an artificial, `=` rows an
//! artificial. Phase one drives the artificials to zero, phase two optimizes
//! `c·x`. Entering columns are the lowest-index improving column; leaving rows
//! break ratio ties by the lowest basic variable index. After phase two the
//! basic values are recomputed from the original rows by a dense solve of the
//! basis system, and every constraint is re-checked against [`FEAS_TOL`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the post-solve constraint check.
pub const FEAS_TOL: f64 = 1e-9;

const REDUCED_COST_TOL: f64 = 1e-10;
const PIVOT_TOL: f64 = 1e-10;
const MIN_PIVOT: f64 = 1e-13;
const PHASE1_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "=")]
    Eq,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Ge => ">=",
            Sense::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub label: String,
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn lhs(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().zip(x).map(|(a, v)| a * v).sum()
    }

    /// Amount by which `x` violates this row (0 when satisfied).
    pub fn violation(&self, x: &[f64]) -> f64 {
        let lhs = self.lhs(x);
        match self.sense {
            Sense::Le => (lhs - self.rhs).max(0.0),
            Sense::Ge => (self.rhs - lhs).max(0.0),
            Sense::Eq => (lhs - self.rhs).abs(),
        }
    }
}

/// `maximize objective·x` over nonnegative `x` subject to `constraints`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    pub n_vars: usize,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(n_vars: usize) -> Self {
        LinearProgram {
            n_vars,
            objective: vec![0.0; n_vars],
            constraints: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint {
            label: label.into(),
            coeffs,
            sense,
            rhs,
        });
    }

    pub fn count(&self, sense: Sense) -> usize {
        self.constraints.iter().filter(|c| c.sense == sense).count()
    }

    pub fn equalities(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter().filter(|c| c.sense == Sense::Eq)
    }

    pub fn inequalities(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter().filter(|c| c.sense != Sense::Eq)
    }

    /// Largest violation of any row or sign bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let rows = self
            .constraints
            .iter()
            .map(|c| c.violation(x))
            .fold(0.0, f64::max);
        let signs = x.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max);
        rows.max(signs)
    }

    fn validate(&self) -> Result<(), SolverError> {
        if self.objective.len() != self.n_vars {
            return Err(SolverError::Malformed(format!(
                "objective has {} coefficients for {} variables",
                self.objective.len(),
                self.n_vars
            )));
        }
        for c in &self.constraints {
            if c.coeffs.len() != self.n_vars {
                return Err(SolverError::Malformed(format!(
                    "row '{}' has {} coefficients for {} variables",
                    c.label,
                    c.coeffs.len(),
                    self.n_vars
                )));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(SolverError::Malformed(format!(
                    "row '{}' has non-finite data",
                    c.label
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpResult {
    pub status: LpStatus,
    /// Primal solution; all zeros unless `status` is `Optimal`.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

/// Location of a failed pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotReport {
    pub phase: u8,
    pub iteration: usize,
    pub row: usize,
    pub column: usize,
    pub pivot: f64,
}

impl fmt::Display for PivotReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "phase {} iteration {}: pivot {:e} at row {} column {}",
            self.phase, self.iteration, self.pivot, self.row, self.column
        )
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(PivotReport),
    #[error("iteration limit {limit} reached in phase {phase}")]
    IterationLimit { phase: u8, limit: usize },
    #[error("solution violates row '{label}' by {violation:e}")]
    ConstraintViolation { label: String, violation: f64 },
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// Row-major `rows x (cols + 1)`; the last column is the right-hand side.
    a: Vec<f64>,
    basis: Vec<usize>,
    /// Reduced costs `c_j - c_B B^-1 A_j`, length `cols`.
    reduced: Vec<f64>,
    iterations: usize,
}

impl Tableau {
    fn width(&self) -> usize {
        self.cols + 1
    }

    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width() + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn set_costs(&mut self, cost: &[f64]) {
        self.reduced = cost.to_vec();
        for r in 0..self.rows {
            let cb = cost[self.basis[r]];
            if cb != 0.0 {
                for c in 0..self.cols {
                    self.reduced[c] -= cb * self.at(r, c);
                }
            }
        }
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width();
        let p = self.at(pr, pc);
        for v in &mut self.a[pr * w..(pr + 1) * w] {
            *v /= p;
        }
        let pivot_row: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.rows {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                for (v, pv) in self.a[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
                self.a[r * w + pc] = 0.0;
            }
        }
        let f = self.reduced[pc];
        if f != 0.0 {
            for (v, pv) in self.reduced.iter_mut().zip(&pivot_row) {
                *v -= f * pv;
            }
            self.reduced[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Runs Bland's rule over columns `< allowed_cols` until optimal.
    /// Returns `false` when the objective is unbounded.
    fn optimize(
        &mut self,
        allowed_cols: usize,
        phase: u8,
        limit: usize,
    ) -> Result<bool, SolverError> {
        let start = self.iterations;
        loop {
            if self.iterations - start >= limit {
                return Err(SolverError::IterationLimit { phase, limit });
            }
            let Some(enter) = (0..allowed_cols).find(|&c| self.reduced[c] > REDUCED_COST_TOL)
            else {
                return Ok(true);
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, enter);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r).max(0.0) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            let tie = (ratio - lratio).abs() <= 1e-12 * (1.0 + lratio.abs());
                            if ratio < lratio && !tie || tie && self.basis[r] < self.basis[lr] {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Ok(false);
            };
            let p = self.at(row, enter);
            if p.abs() < MIN_PIVOT || !p.is_finite() {
                return Err(SolverError::NumericalBreakdown(PivotReport {
                    phase,
                    iteration: self.iterations,
                    row,
                    column: enter,
                    pivot: p,
                }));
            }
            self.pivot(row, enter);
            self.iterations += 1;
            if !self.rhs(row).is_finite() {
                return Err(SolverError::NumericalBreakdown(PivotReport {
                    phase,
                    iteration: self.iterations,
                    row,
                    column: enter,
                    pivot: p,
                }));
            }
        }
    }
}

/// Solves `lp`. Infeasible and unbounded problems are reported through
/// [`LpResult::status`]; numerical trouble is an error.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpResult, SolverError> {
    lp.validate()?;
    let n = lp.n_vars;
    let m = lp.constraints.len();

    // Normalize signs so every rhs is nonnegative.
    let rows: Vec<(Vec<f64>, Sense, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.sense, c.rhs)
            }
        })
        .collect();

    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let structural = n + n_slack;
    let cols = structural + n_art;
    let w = cols + 1;

    let mut a = vec![0.0; m * w];
    let mut basis = vec![0; m];
    let (mut next_slack, mut next_art) = (n, structural);
    for (r, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        a[r * w..r * w + n].copy_from_slice(coeffs);
        a[r * w + cols] = *rhs;
        match sense {
            Sense::Le => {
                a[r * w + next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                a[r * w + next_slack] = -1.0;
                next_slack += 1;
                a[r * w + next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                a[r * w + next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }

    let mut t = Tableau {
        rows: m,
        cols,
        a,
        basis,
        reduced: vec![0.0; cols],
        iterations: 0,
    };
    let limit = 50 * (cols + m).max(1000);

    // Phase one: maximize -sum(artificials).
    if n_art > 0 {
        let mut cost = vec![0.0; cols];
        cost[structural..].iter_mut().for_each(|c| *c = -1.0);
        t.set_costs(&cost);
        t.optimize(cols, 1, limit)?;
        let infeasibility: f64 = (0..m)
            .filter(|&r| t.basis[r] >= structural)
            .map(|r| t.rhs(r))
            .sum();
        if infeasibility > PHASE1_TOL {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                x: vec![0.0; n],
                objective: 0.0,
                iterations: t.iterations,
            });
        }
        // Pivot zero-level artificials out of the basis; rows where that is
        // impossible are redundant and get dropped.
        let mut r = 0;
        while r < t.rows {
            if t.basis[r] >= structural {
                let candidate = (0..structural)
                    .filter(|&c| t.at(r, c).abs() > PIVOT_TOL)
                    .max_by(|&x, &y| t.at(r, x).abs().total_cmp(&t.at(r, y).abs()));
                match candidate {
                    Some(c) => {
                        t.pivot(r, c);
                        t.iterations += 1;
                    }
                    None => {
                        drop_row(&mut t, r);
                        continue;
                    }
                }
            }
            r += 1;
        }
    }

    // Phase two over structural columns only.
    let mut cost = vec![0.0; cols];
    cost[..n].copy_from_slice(&lp.objective);
    t.set_costs(&cost);
    if !t.optimize(structural, 2, limit)? {
        return Ok(LpResult {
            status: LpStatus::Unbounded,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            iterations: t.iterations,
        });
    }

    let mut x_full = vec![0.0; structural];
    for r in 0..t.rows {
        if t.basis[r] < structural {
            x_full[t.basis[r]] = t.rhs(r);
        }
    }
    if let Some(refined) = refine(&rows, n, structural, &t.basis) {
        x_full = refined;
    }
    // clear round-off below zero; `+ 0.0` also turns -0.0 into 0.0
    let x: Vec<f64> = x_full[..n]
        .iter()
        .map(|&v| {
            if v < 0.0 && v > -FEAS_TOL {
                0.0
            } else {
                v + 0.0
            }
        })
        .collect();

    for c in &lp.constraints {
        let violation = c.violation(&x);
        if violation > FEAS_TOL {
            return Err(SolverError::ConstraintViolation {
                label: c.label.clone(),
                violation,
            });
        }
    }
    if let Some((j, v)) = x.iter().enumerate().find(|(_, v)| **v < -FEAS_TOL) {
        return Err(SolverError::ConstraintViolation {
            label: format!("x[{j}] >= 0"),
            violation: -v,
        });
    }

    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpResult {
        status: LpStatus::Optimal,
        x,
        objective,
        iterations: t.iterations,
    })
}

fn drop_row(t: &mut Tableau, r: usize) {
    let w = t.width();
    t.a.drain(r * w..(r + 1) * w);
    t.basis.remove(r);
    t.rows -= 1;
}

/// Recomputes basic values by solving `B x_B = b` on the original rows, which
/// removes drift accumulated over many pivots. Returns `None` if the basis
/// system is singular or the basis still holds an artificial.
fn refine(
    rows: &[(Vec<f64>, Sense, f64)],
    n: usize,
    structural: usize,
    basis: &[usize],
) -> Option<Vec<f64>> {
    if basis.iter().any(|&b| b >= structural) {
        return None;
    }
    // Column of a structural variable in the sign-normalized original system.
    let mut slack_row = vec![usize::MAX; structural];
    let mut slack_sign = vec![0.0; structural];
    let mut next = n;
    for (r, (_, sense, _)) in rows.iter().enumerate() {
        match sense {
            Sense::Le => {
                slack_row[next] = r;
                slack_sign[next] = 1.0;
                next += 1;
            }
            Sense::Ge => {
                slack_row[next] = r;
                slack_sign[next] = -1.0;
                next += 1;
            }
            Sense::Eq => {}
        }
    }
    let col = |j: usize, r: usize| -> f64 {
        if j < n {
            rows[r].0[j]
        } else if slack_row[j] == r {
            slack_sign[j]
        } else {
            0.0
        }
    };

    // The basis may be shorter than `rows` after redundant rows were dropped;
    // pick a row subset of full rank by elimination on the augmented system.
    let k = basis.len();
    let m = rows.len();
    let mut mat: Vec<Vec<f64>> = (0..m)
        .map(|r| {
            let mut row: Vec<f64> = basis.iter().map(|&j| col(j, r)).collect();
            row.push(rows[r].2);
            row
        })
        .collect();

    let mut pivot_rows = Vec::with_capacity(k);
    let mut used = vec![false; m];
    for c in 0..k {
        let (best, val) = (0..m)
            .filter(|&r| !used[r])
            .map(|r| (r, mat[r][c].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if val < 1e-12 {
            return None;
        }
        used[best] = true;
        pivot_rows.push(best);
        let prow = mat[best].clone();
        for (r, row) in mat.iter_mut().enumerate() {
            if r != best {
                let f = row[c] / prow[c];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(&prow) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    let mut x = vec![0.0; structural];
    for (c, &r) in pivot_rows.iter().enumerate() {
        x[basis[c]] = mat[r][k] / mat[r][c];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn textbook_maximization() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![3.0, 5.0];
        lp.push("a", vec![1.0, 0.0], Sense::Le, 4.0);
        lp.push("b", vec![0.0, 2.0], Sense::Le, 12.0);
        lp.push("c", vec![3.0, 2.0], Sense::Le, 18.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_abs_diff_eq!(r.objective, 36.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[1], 6.0, epsilon = 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // max -x - y s.t. x + y = 1, x >= 0.3
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![-1.0, -2.0];
        lp.push("sum", vec![1.0, 1.0], Sense::Eq, 1.0);
        lp.push("floor", vec![1.0, 0.0], Sense::Ge, 0.3);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.objective, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_rhs_is_normalized() {
        // -x <= -2  <=>  x >= 2; min x
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![-1.0];
        lp.push("neg", vec![-1.0], Sense::Le, -2.0);
        let r = solve_lp(&lp).unwrap();
        assert_abs_diff_eq!(r.x[0], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinearProgram::new(1);
        lp.push("lo", vec![1.0], Sense::Ge, 2.0);
        lp.push("hi", vec![1.0], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.push("r", vec![1.0, -1.0], Sense::Le, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 0.0];
        lp.push("e1", vec![1.0, 1.0], Sense::Eq, 1.0);
        lp.push("e2", vec![2.0, 2.0], Sense::Eq, 2.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_abs_diff_eq!(r.objective, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example cycles under Dantzig's rule; Bland's rule terminates.
        let mut lp = LinearProgram::new(4);
        lp.objective = vec![0.75, -150.0, 0.02, -6.0];
        lp.push("r1", vec![0.25, -60.0, -0.04, 9.0], Sense::Le, 0.0);
        lp.push("r2", vec![0.5, -90.0, -0.02, 3.0], Sense::Le, 0.0);
        lp.push("r3", vec![0.0, 0.0, 1.0, 0.0], Sense::Le, 1.0);
        let r = solve_lp(&lp).unwrap();
        assert_eq!(r.status, LpStatus::Optimal);
        assert_abs_diff_eq!(r.objective, 0.05, epsilon = 1e-9);
    }

    #[test]
    fn malformed_rows_rejected() {
        let mut lp = LinearProgram::new(2);
        lp.push("short", vec![1.0], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(SolverError::Malformed(_))));
        let mut lp = LinearProgram::new(1);
        lp.push("nan", vec![f64::NAN], Sense::Le, 1.0);
        assert!(matches!(solve_lp(&lp), Err(SolverError::Malformed(_))));
    }

    #[test]
    fn lp_json_roundtrip() {
        let mut lp = LinearProgram::new(2);
        lp.push("r", vec![1.0, 2.0], Sense::Ge, 0.5);
        let json = serde_json::to_string(&lp).unwrap();
        assert!(json.contains(r#""sense":">=""#));
        assert_eq!(serde_json::from_str::<LinearProgram>(&json).unwrap(), lp);
    }
}
