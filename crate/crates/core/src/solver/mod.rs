//! Interior-point solver for the linear and convex quadratic programs built
//! by the client and baseline modules.
//!
//! Programs have the form
//!
//! ```text
//! minimize    1/2 x'Qx + c'x
//! subject to  A_ineq x <= b_ineq
//!             A_eq   x  = b_eq
//! ```
//!
//! with every variable free unless bounded by a row of `A_ineq`.

mod enumerate;
mod ipm;
pub mod ldl;
pub mod sparse;

pub use enumerate::{solve_lp_by_enumeration, EnumerationError, MAX_ENUMERATION_VARS};
pub use ipm::solve;
pub use sparse::CscMatrix;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProgramError {
    #[error("{what} has shape {got:?}, expected {expected:?}")]
    Shape {
        what: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("Q is not symmetric")]
    NotSymmetric,
    #[error("Q has a negative diagonal entry at {0}")]
    NegativeDiagonal(usize),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvexProgram {
    pub n: usize,
    pub q: CscMatrix,
    pub c: Vec<f64>,
    pub a_ineq: CscMatrix,
    pub b_ineq: Vec<f64>,
    pub a_eq: CscMatrix,
    pub b_eq: Vec<f64>,
}

impl ConvexProgram {
    /// LP with no constraints.
    pub fn unconstrained_lp(c: Vec<f64>) -> Self {
        let n = c.len();
        Self {
            n,
            q: CscMatrix::zeros(n, n),
            c,
            a_ineq: CscMatrix::zeros(0, n),
            b_ineq: Vec::new(),
            a_eq: CscMatrix::zeros(0, n),
            b_eq: Vec::new(),
        }
    }

    pub fn num_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn is_lp(&self) -> bool {
        self.q.nzval.iter().all(|&v| v == 0.0)
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let qx = self.q.mul(x);
        0.5 * dot(x, &qx) + dot(&self.c, x)
    }

    pub fn validate(&self) -> Result<(), ProgramError> {
        let n = self.n;
        let shape = |what, m: &CscMatrix, rows: usize| {
            if (m.nrows, m.ncols) != (rows, n) {
                Err(ProgramError::Shape {
                    what,
                    expected: (rows, n),
                    got: (m.nrows, m.ncols),
                })
            } else {
                Ok(())
            }
        };
        shape("Q", &self.q, n)?;
        shape("A_ineq", &self.a_ineq, self.b_ineq.len())?;
        shape("A_eq", &self.a_eq, self.b_eq.len())?;
        if self.c.len() != n {
            return Err(ProgramError::Shape {
                what: "c",
                expected: (n, 1),
                got: (self.c.len(), 1),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|a| a.is_finite());
        for (name, ok) in [
            ("Q", finite(&self.q.nzval)),
            ("c", finite(&self.c)),
            ("A_ineq", finite(&self.a_ineq.nzval)),
            ("b_ineq", finite(&self.b_ineq)),
            ("A_eq", finite(&self.a_eq.nzval)),
            ("b_eq", finite(&self.b_eq)),
        ] {
            if !ok {
                return Err(ProgramError::NonFinite(name));
            }
        }
        if !self.q.is_symmetric() {
            return Err(ProgramError::NotSymmetric);
        }
        if let Some(j) = (0..n).find(|&j| self.q.get(j, j) < 0.0) {
            return Err(ProgramError::NegativeDiagonal(j));
        }
        Ok(())
    }
}

/// Incremental row-wise construction of a [`ConvexProgram`].
#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    n: usize,
    q: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    ineq: Vec<(usize, usize, f64)>,
    b_ineq: Vec<f64>,
    eq: Vec<(usize, usize, f64)>,
    b_eq: Vec<f64>,
}

impl ProgramBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: Vec::new(),
            c: vec![0.0; n],
            ineq: Vec::new(),
            b_ineq: Vec::new(),
            eq: Vec::new(),
            b_eq: Vec::new(),
        }
    }

    pub fn cost(&mut self, j: usize, v: f64) -> &mut Self {
        self.c[j] += v;
        self
    }

    pub fn quad_diag(&mut self, j: usize, v: f64) -> &mut Self {
        self.q.push((j, j, v));
        self
    }

    /// Adds `sum terms <= rhs` and returns the row index.
    pub fn le(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b_ineq.len();
        self.ineq.extend(terms.iter().map(|&(j, v)| (row, j, v)));
        self.b_ineq.push(rhs);
        row
    }

    /// Adds `sum terms = rhs` and returns the row index.
    pub fn eq(&mut self, terms: &[(usize, f64)], rhs: f64) -> usize {
        let row = self.b_eq.len();
        self.eq.extend(terms.iter().map(|&(j, v)| (row, j, v)));
        self.b_eq.push(rhs);
        row
    }

    pub fn num_ineq(&self) -> usize {
        self.b_ineq.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b_eq.len()
    }

    pub fn build(self) -> ConvexProgram {
        let n = self.n;
        ConvexProgram {
            n,
            q: CscMatrix::from_triplets(n, n, &self.q),
            c: self.c,
            a_ineq: CscMatrix::from_triplets(self.b_ineq.len(), n, &self.ineq),
            b_ineq: self.b_ineq,
            a_eq: CscMatrix::from_triplets(self.b_eq.len(), n, &self.eq),
            b_eq: self.b_eq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps2: f64,
    pub max_iterations: usize,
    pub regularization: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps2: 1e-8,
            max_iterations: 200,
            regularization: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSolution {
    pub x_star: Vec<f64>,
    pub objective: f64,
    pub status: SolverStatus,
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Multipliers of the inequality rows (nonnegative).
    pub z_ineq: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: Vec<f64>,
    pub message: Option<String>,
}

impl SolverSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolverStatus::Optimal
    }

    pub(crate) fn failure(p: &ConvexProgram, message: String) -> Self {
        Self {
            x_star: vec![f64::NAN; p.n],
            objective: f64::NAN,
            status: SolverStatus::NumericalFailure,
            kkt_residual: f64::INFINITY,
            iterations: 0,
            z_ineq: vec![f64::NAN; p.num_ineq()],
            y_eq: vec![f64::NAN; p.num_eq()],
            message: Some(message),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
