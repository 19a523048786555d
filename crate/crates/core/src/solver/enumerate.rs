//! Exact LP solution by enumerating basic feasible solutions. Exponential;
//! only meant as an independent oracle for small programs.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use super::{dot, ConvexProgram, SolverSolution, SolverStatus};

pub const MAX_ENUMERATION_VARS: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnumerationError {
    #[error("{0} variables exceed the enumeration limit of {MAX_ENUMERATION_VARS}")]
    TooLarge(usize),
    #[error("program has a quadratic term")]
    NotLinear,
    #[error("feasible region is unbounded")]
    Unbounded,
    #[error("no feasible vertex")]
    Infeasible,
    #[error("invalid program: {0}")]
    Invalid(String),
}

const SINGULAR: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

fn combinations(m: usize, r: usize, mut visit: impl FnMut(&[usize])) {
    if r > m {
        return;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        visit(&idx);
        let mut i = r;
        while i > 0 && idx[i - 1] == i - 1 + m - r {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Solves an LP exactly by visiting every vertex of its feasible polytope.
///
/// The returned solution carries no multipliers.
pub fn solve_lp_by_enumeration(p: &ConvexProgram) -> Result<SolverSolution, EnumerationError> {
    p.validate().map_err(|e| EnumerationError::Invalid(e.to_string()))?;
    if !p.is_lp() {
        return Err(EnumerationError::NotLinear);
    }
    let n = p.n;
    if n > MAX_ENUMERATION_VARS {
        return Err(EnumerationError::TooLarge(n));
    }
    let (k, m) = (p.num_eq(), p.num_ineq());
    let a = p.a_ineq.to_dense();
    let e = p.a_eq.to_dense();
    if k > n {
        return Err(EnumerationError::Invalid("more equalities than variables".into()));
    }

    if has_recession_ray(&a, &e, n) {
        return Err(EnumerationError::Unbounded);
    }

    let scale_b = 1.0 + p.b_ineq.iter().chain(&p.b_eq).fold(0.0f64, |mx, v| mx.max(v.abs()));
    let mut best: Option<(f64, Vec<f64>)> = None;
    combinations(m, n - k, |rows| {
        let mut mat = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for (r, row) in e.iter().enumerate() {
            mat.row_mut(r).copy_from_slice(row);
            rhs[r] = p.b_eq[r];
        }
        for (r, &i) in rows.iter().enumerate() {
            mat.row_mut(k + r).copy_from_slice(&a[i]);
            rhs[k + r] = p.b_ineq[i];
        }
        let lu = mat.clone().lu();
        let det = lu.determinant();
        let norm = mat.norm().max(1.0);
        if det.abs() <= SINGULAR * norm.powi(n as i32) {
            return;
        }
        let Some(x) = lu.solve(&rhs) else { return };
        let x: Vec<f64> = x.iter().copied().collect();
        let feasible = a
            .iter()
            .zip(&p.b_ineq)
            .all(|(row, &b)| dot(row, &x) <= b + FEAS_TOL * scale_b)
            && e.iter()
                .zip(&p.b_eq)
                .all(|(row, &b)| (dot(row, &x) - b).abs() <= FEAS_TOL * scale_b);
        if !feasible {
            return;
        }
        let obj = dot(&p.c, &x);
        if best.as_ref().map_or(true, |(b, _)| obj < *b) {
            best = Some((obj, x));
        }
    });
    let (objective, x_star) = best.ok_or(EnumerationError::Infeasible)?;
    Ok(SolverSolution {
        x_star,
        objective,
        status: SolverStatus::Optimal,
        kkt_residual: 0.0,
        iterations: 0,
        z_ineq: Vec::new(),
        y_eq: Vec::new(),
        message: None,
    })
}

/// True when `{d != 0 : A d <= 0, E d = 0}` is non-empty, i.e. the polyhedron
/// (if non-empty) is unbounded. Extreme rays of a pointed cone are spanned by
/// `n - 1` linearly independent tight rows; a non-pointed cone has a lineality
/// direction, found the same way from a rank-deficient row set.
fn has_recession_ray(a: &[Vec<f64>], e: &[Vec<f64>], n: usize) -> bool {
    let k = e.len();
    if n == 0 {
        return false;
    }
    let tol = 1e-10;
    let check = |d: &[f64]| -> bool {
        e.iter().all(|row| dot(row, d).abs() <= tol) && a.iter().all(|row| dot(row, d) <= tol)
    };
    if k > n - 1 {
        return false;
    }
    // a lineality space shows up as a null vector of the full stacked matrix
    let full: Vec<&Vec<f64>> = e.iter().chain(a.iter()).collect();
    if full.len() < n || rank(&full, n) < n {
        let mut found = false;
        for d in null_basis(&full, n) {
            let neg: Vec<f64> = d.iter().map(|v| -v).collect();
            if check(&d) || check(&neg) {
                found = true;
            }
        }
        if found {
            return true;
        }
    }
    let mut found = false;
    combinations(a.len(), n - 1 - k, |rows| {
        if found {
            return;
        }
        let sel: Vec<&Vec<f64>> = e.iter().chain(rows.iter().map(|&i| &a[i])).collect();
        let d = generalized_cross(&sel, n);
        let dn = d.iter().fold(0.0f64, |mx, v| mx.max(v.abs()));
        if dn <= 1e-12 {
            return;
        }
        let d: Vec<f64> = d.iter().map(|v| v / dn).collect();
        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
        if check(&d) || check(&neg) {
            found = true;
        }
    });
    found
}

fn stacked(rows: &[&Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

fn rank(rows: &[&Vec<f64>], n: usize) -> usize {
    if rows.is_empty() {
        return 0;
    }
    stacked(rows, n).rank(1e-10)
}

fn null_basis(rows: &[&Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let m = if rows.is_empty() {
        DMatrix::zeros(1, n)
    } else {
        stacked(rows, n)
    };
    // null space of M from the eigenvectors of M'M with zero eigenvalue
    let gram = m.transpose() * &m;
    let eig = gram.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(1.0f64, |mx, v| mx.max(v.abs()));
    (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= 1e-10 * scale)
        .map(|i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect()
}

/// Vector orthogonal to the `n - 1` given rows: cofactor expansion.
fn generalized_cross(rows: &[&Vec<f64>], n: usize) -> Vec<f64> {
    debug_assert_eq!(rows.len(), n - 1);
    (0..n)
        .map(|j| {
            if n == 1 {
                return 1.0;
            }
            let minor = DMatrix::from_fn(n - 1, n - 1, |r, c| rows[r][if c < j { c } else { c + 1 }]);
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * minor.determinant()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::ProgramBuilder;

    fn simplex() -> ProgramBuilder {
        let mut b = ProgramBuilder::new(2);
        b.cost(0, -1.0).cost(1, -1.0);
        b.le(&[(0, 1.0), (1, 1.0)], 1.0);
        b.le(&[(0, -1.0)], 0.0);
        b.le(&[(1, -1.0)], 0.0);
        b
    }

    #[test]
    fn simplex_vertices() {
        let sol = solve_lp_by_enumeration(&simplex().build()).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_constraint_does_not_change_optimum() {
        let mut b = simplex();
        b.le(&[(0, 2.0), (1, 2.0)], 2.0);
        let sol = solve_lp_by_enumeration(&b.build()).unwrap();
        assert!((sol.objective + 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_objective_on_bounded_segment() {
        let mut b = ProgramBuilder::new(1);
        b.le(&[(0, 1.0)], 1.0);
        b.le(&[(0, -1.0)], 0.0);
        let sol = solve_lp_by_enumeration(&b.build()).unwrap();
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn half_line_is_unbounded() {
        let mut b = ProgramBuilder::new(1);
        b.le(&[(0, 1.0)], 1.0);
        assert_eq!(solve_lp_by_enumeration(&b.build()), Err(EnumerationError::Unbounded));
    }

    #[test]
    fn free_direction_is_unbounded() {
        let mut b = ProgramBuilder::new(2);
        b.le(&[(0, 1.0)], 1.0);
        b.le(&[(0, -1.0)], 0.0);
        assert_eq!(solve_lp_by_enumeration(&b.build()), Err(EnumerationError::Unbounded));
    }

    #[test]
    fn empty_polytope_is_infeasible() {
        let mut b = ProgramBuilder::new(1);
        b.le(&[(0, 1.0)], 0.0);
        b.le(&[(0, -1.0)], -1.0);
        assert_eq!(solve_lp_by_enumeration(&b.build()), Err(EnumerationError::Infeasible));
    }

    #[test]
    fn size_limit() {
        let p = ConvexProgram::unconstrained_lp(vec![0.0; 13]);
        assert_eq!(solve_lp_by_enumeration(&p), Err(EnumerationError::TooLarge(13)));
    }

    #[test]
    fn combination_count() {
        let mut count = 0;
        combinations(6, 3, |_| count += 1);
        assert_eq!(count, 20);
        let mut zero = 0;
        combinations(4, 0, |c| {
            assert!(c.is_empty());
            zero += 1
        });
        assert_eq!(zero, 1);
    }
}
