//! Numeric substrate: LP (simplex), convex QP (interior point), mixed-integer
//! branch-and-bound over either, and a block-diagonal SDP solver.
//!
//! Every solver reports a `certified_lower_bound` computed from a dual
//! certificate, which stays valid even when the primal iterate has not fully
//! converged.

mod lp;
mod mip;
mod qp;
mod sdp;

pub use lp::solve_lp;
pub use mip::{solve_mip, BaseProblem, MipOptions, MixedIntegerSpec, DEFAULT_NODE_LIMIT};
pub use qp::solve_qp;
pub use sdp::{
    solve_sdp, solve_sdp_with, SdpOptions, SdpProblem, SdpSolution, SymEntry, SymMatrix,
};

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("dimension mismatch in {0}")]
    Dimension(String),
    #[error("variable {index} has lower bound {lower} above upper bound {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("hessian is not positive semi-definite (minimum eigenvalue {min_eigenvalue:e})")]
    NonConvex { min_eigenvalue: f64 },
    #[error("hessian is not symmetric")]
    NotSymmetric,
    #[error("integer variable index {0} out of range")]
    BadIntegerVar(usize),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    ToleranceReached,
}

/// Outcome of a minimization. `certified_lower_bound` never exceeds the true
/// optimum (up to floating-point rounding in its evaluation).
#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub point: Vec<f64>,
    pub objective: f64,
    pub certified_lower_bound: f64,
    pub gap: f64,
    pub iterations: usize,
    pub nodes: usize,
}

impl SolveResult {
    pub(crate) fn infeasible(iterations: usize) -> Self {
        Self {
            status: SolveStatus::Infeasible,
            point: Vec::new(),
            objective: f64::INFINITY,
            certified_lower_bound: f64::INFINITY,
            gap: 0.0,
            iterations,
            nodes: 0,
        }
    }

    pub(crate) fn unbounded(iterations: usize) -> Self {
        Self {
            status: SolveStatus::Unbounded,
            point: Vec::new(),
            objective: f64::NEG_INFINITY,
            certified_lower_bound: f64::NEG_INFINITY,
            gap: 0.0,
            iterations,
            nodes: 0,
        }
    }
}

/// `min c^T z  s.t.  A z <= b,  E z = e,  lower <= z <= upper`.
/// Bounds may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub ineq_rows: Vec<Vec<f64>>,
    pub ineq_rhs: Vec<f64>,
    pub eq_rows: Vec<Vec<f64>>,
    pub eq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    /// Free variables and no constraints.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        Self {
            objective,
            ineq_rows: Vec::new(),
            ineq_rhs: Vec::new(),
            eq_rows: Vec::new(),
            eq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn set_bounds(&mut self, var: usize, lower: f64, upper: f64) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    /// `row^T z <= rhs`
    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row);
        self.ineq_rhs.push(rhs);
    }

    /// `row^T z >= rhs`
    pub fn add_ge(&mut self, row: Vec<f64>, rhs: f64) {
        self.ineq_rows.push(row.into_iter().map(|v| -v).collect());
        self.ineq_rhs.push(-rhs);
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.eq_rows.push(row);
        self.eq_rhs.push(rhs);
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n_vars();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension("variable bounds".into()));
        }
        if self.ineq_rows.len() != self.ineq_rhs.len()
            || self.ineq_rows.iter().any(|r| r.len() != n)
        {
            return Err(SolverError::Dimension("inequality rows".into()));
        }
        if self.eq_rows.len() != self.eq_rhs.len() || self.eq_rows.iter().any(|r| r.len() != n) {
            return Err(SolverError::Dimension("equality rows".into()));
        }
        for j in 0..n {
            if self.lower[j] > self.upper[j] || self.lower[j].is_nan() || self.upper[j].is_nan() {
                return Err(SolverError::InvalidBounds {
                    index: j,
                    lower: self.lower[j],
                    upper: self.upper[j],
                });
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `z`.
    pub fn max_violation(&self, z: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (row, &b) in self.ineq_rows.iter().zip(&self.ineq_rhs) {
            worst = worst.max(dot(row, z) - b);
        }
        for (row, &e) in self.eq_rows.iter().zip(&self.eq_rhs) {
            worst = worst.max((dot(row, z) - e).abs());
        }
        for (j, &v) in z.iter().enumerate() {
            worst = worst.max(self.lower[j] - v).max(v - self.upper[j]);
        }
        worst
    }

    /// Lagrangian lower bound for `min grad^T z + constant` over this
    /// feasible set, given multipliers `lambda >= 0` for the inequality rows
    /// and `mu` for the equality rows. Box constraints are handled exactly by
    /// minimizing each coordinate over its interval.
    pub(crate) fn lagrangian_bound(
        &self,
        grad: &[f64],
        constant: f64,
        lambda: &[f64],
        mu: &[f64],
    ) -> f64 {
        let mut reduced = grad.to_vec();
        let mut value = constant;
        for ((row, &b), &l) in self.ineq_rows.iter().zip(&self.ineq_rhs).zip(lambda) {
            let l = l.max(0.0);
            if l == 0.0 {
                continue;
            }
            value -= l * b;
            for (r, a) in reduced.iter_mut().zip(row) {
                *r += l * a;
            }
        }
        for ((row, &e), &m) in self.eq_rows.iter().zip(&self.eq_rhs).zip(mu) {
            if m == 0.0 {
                continue;
            }
            value -= m * e;
            for (r, a) in reduced.iter_mut().zip(row) {
                *r += m * a;
            }
        }
        for (j, &r) in reduced.iter().enumerate() {
            let scale = 1.0 + grad[j].abs();
            let term = if r > 0.0 {
                if self.lower[j].is_finite() {
                    r * self.lower[j]
                } else if r <= FREE_REDUCED_COST_TOL * scale {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else if r < 0.0 {
                if self.upper[j].is_finite() {
                    r * self.upper[j]
                } else if -r <= FREE_REDUCED_COST_TOL * scale {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                0.0
            };
            value += term;
        }
        value
    }
}

// Reduced costs this small on an unbounded coordinate are treated as zero.
const FREE_REDUCED_COST_TOL: f64 = 1e-11;

/// `min 1/2 z^T H z + c^T z` over the feasible set of `constraints`, whose
/// `objective` field holds `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub constraints: LinearProgram,
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, constraints: LinearProgram) -> Self {
        Self {
            hessian,
            constraints,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.constraints.n_vars()
    }

    pub fn objective_at(&self, z: &[f64]) -> f64 {
        let zv = nalgebra::DVector::from_column_slice(z);
        0.5 * zv.dot(&(&self.hessian * &zv)) + dot(&self.constraints.objective, z)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
