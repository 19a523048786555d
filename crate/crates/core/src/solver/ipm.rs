//! Mehrotra predictor-corrector on the augmented KKT system
//!
//! ```text
//! [ Q + dI   E'    A'  ] [dx]
//! [ E       -dI    0   ] [dy]
//! [ A        0   -S/Z  ] [dz]
//! ```
//!
//! which is quasi-definite, so an LDL' factorization exists for any
//! symmetric ordering.

use super::ldl::LdlFactor;
use super::{dot, norm_inf, ConvexProgram, SolverConfig, SolverSolution, SolverStatus};

const DYN_EPS: f64 = 1e-13;
const DYN_DELTA: f64 = 2e-7;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 10;
const DIVERGENCE: f64 = 1e8;
const CERT_TOL: f64 = 1e-6;
const STALL_LIMIT: usize = 5;
const FINISH_STEPS: usize = 2;

struct Kkt<'a> {
    p: &'a ConvexProgram,
    factor: LdlFactor,
    values: Vec<f64>,
    zdiag_pos: Vec<usize>,
    reg: f64,
    work: Vec<f64>,
}

impl<'a> Kkt<'a> {
    fn new(p: &'a ConvexProgram, reg: f64) -> Result<Self, String> {
        let (n, k, m) = (p.n, p.num_eq(), p.num_ineq());
        let dim = n + k + m;
        let mut pattern = Vec::new();
        let mut values = Vec::new();
        for j in 0..n {
            pattern.push((j, j));
            values.push(reg);
            for (i, v) in p.q.col(j) {
                if i <= j {
                    pattern.push((i, j));
                    values.push(v);
                }
            }
        }
        for j in 0..n {
            for (i, v) in p.a_eq.col(j) {
                pattern.push((j, n + i));
                values.push(v);
            }
            for (i, v) in p.a_ineq.col(j) {
                pattern.push((j, n + k + i));
                values.push(v);
            }
        }
        for i in 0..k {
            pattern.push((n + i, n + i));
            values.push(-reg);
        }
        let mut zdiag_pos = Vec::with_capacity(m);
        for i in 0..m {
            zdiag_pos.push(pattern.len());
            pattern.push((n + k + i, n + k + i));
            values.push(-1.0);
        }
        let mut signs = vec![1.0; dim];
        signs[n..].iter_mut().for_each(|s| *s = -1.0);
        let factor = LdlFactor::new(dim, &pattern, &signs).map_err(|e| e.to_string())?;
        Ok(Self {
            p,
            factor,
            values,
            zdiag_pos,
            reg,
            work: Vec::with_capacity(dim),
        })
    }

    /// Refactors with `W = diag(w)` in the (3,3) block.
    fn factor(&mut self, w: &[f64]) -> Result<(), String> {
        for (&pos, &wi) in self.zdiag_pos.iter().zip(w) {
            self.values[pos] = -(wi + self.reg);
        }
        self.factor
            .factor(&self.values, DYN_EPS, DYN_DELTA)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }

    /// Product with the unregularized KKT matrix.
    fn apply(&self, w: &[f64], v: &[f64], out: &mut [f64]) {
        let p = self.p;
        let (n, k) = (p.n, p.num_eq());
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(k);
        out.iter_mut().for_each(|o| *o = 0.0);
        let (ox, orest) = out.split_at_mut(n);
        let (oy, oz) = orest.split_at_mut(k);
        p.q.gemv(1.0, vx, ox);
        p.a_eq.gemv_t(1.0, vy, ox);
        p.a_ineq.gemv_t(1.0, vz, ox);
        p.a_eq.gemv(1.0, vx, oy);
        p.a_ineq.gemv(1.0, vx, oz);
        for ((o, &wi), &zi) in oz.iter_mut().zip(w).zip(vz) {
            *o -= wi * zi;
        }
    }

    fn solve(&mut self, w: &[f64], rhs: &[f64]) -> Vec<f64> {
        let mut sol = rhs.to_vec();
        self.factor.solve(&mut sol, &mut self.work);
        let mut kx = vec![0.0; rhs.len()];
        let mut r = vec![0.0; rhs.len()];
        let scale = 1.0 + norm_inf(rhs);
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_STEPS {
            self.apply(w, &sol, &mut kx);
            for ((ri, &b), &a) in r.iter_mut().zip(rhs).zip(&kx) {
                *ri = b - a;
            }
            let rn = norm_inf(&r);
            if rn <= 1e-14 * scale || rn >= 0.5 * last {
                break;
            }
            last = rn;
            self.factor.solve(&mut r, &mut self.work);
            for (s, d) in sol.iter_mut().zip(&r) {
                *s += d;
            }
        }
        sol
    }
}

struct Residuals {
    rd: Vec<f64>,
    rpe: Vec<f64>,
    rpi: Vec<f64>,
    pobj: f64,
    kkt: f64,
}

fn residuals(p: &ConvexProgram, x: &[f64], y: &[f64], z: &[f64], s: &[f64]) -> Residuals {
    let qx = p.q.mul(x);
    let ex = p.a_eq.mul(x);
    let ax = p.a_ineq.mul(x);
    let ety = p.a_eq.mul_t(y);
    let atz = p.a_ineq.mul_t(z);

    let rd: Vec<f64> = (0..p.n).map(|j| qx[j] + p.c[j] + ety[j] + atz[j]).collect();
    let rpe: Vec<f64> = ex.iter().zip(&p.b_eq).map(|(a, b)| a - b).collect();
    let rpi: Vec<f64> = (0..p.num_ineq()).map(|i| ax[i] + s[i] - p.b_ineq[i]).collect();

    let xqx = dot(x, &qx);
    let pobj = 0.5 * xqx + dot(&p.c, x);
    let dobj = -0.5 * xqx - dot(&p.b_ineq, z) - dot(&p.b_eq, y);

    let pres_e = norm_inf(&rpe) / (1.0 + norm_inf(&p.b_eq).max(norm_inf(&ex)));
    let pres_i = norm_inf(&rpi) / (1.0 + norm_inf(&p.b_ineq).max(norm_inf(&ax)).max(norm_inf(s)));
    let dres = norm_inf(&rd)
        / (1.0
            + norm_inf(&p.c)
                .max(norm_inf(&qx))
                .max(norm_inf(&ety))
                .max(norm_inf(&atz)));
    let gap = dot(s, z) / (1.0 + pobj.abs().max(dobj.abs()));
    Residuals {
        rd,
        rpe,
        rpi,
        pobj,
        kkt: pres_e.max(pres_i).max(dres).max(gap),
    }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a = 1.0f64;
    for (&vi, &di) in v.iter().zip(dv) {
        if di < 0.0 {
            a = a.min(-vi / di);
        }
    }
    a
}

/// Farkas-type checks on diverging iterates.
fn certificate(p: &ConvexProgram, x: &[f64], y: &[f64], z: &[f64]) -> Option<String> {
    let data = 1.0
        + norm_inf(&p.c)
            .max(norm_inf(&p.b_ineq))
            .max(norm_inf(&p.b_eq));
    let dn = norm_inf(y).max(norm_inf(z));
    if dn > DIVERGENCE * data {
        let yh: Vec<f64> = y.iter().map(|v| v / dn).collect();
        let zh: Vec<f64> = z.iter().map(|v| v / dn).collect();
        let mut r = p.a_ineq.mul_t(&zh);
        p.a_eq.gemv_t(1.0, &yh, &mut r);
        let lin = dot(&p.b_ineq, &zh) + dot(&p.b_eq, &yh);
        if norm_inf(&r) <= CERT_TOL && lin < 0.0 {
            return Some("primal infeasible: dual iterates diverge along a Farkas ray".into());
        }
    }
    let xn = norm_inf(x);
    if xn > DIVERGENCE * data {
        let xh: Vec<f64> = x.iter().map(|v| v / xn).collect();
        let ok_q = norm_inf(&p.q.mul(&xh)) <= CERT_TOL;
        let ok_e = norm_inf(&p.a_eq.mul(&xh)) <= CERT_TOL;
        let ok_a = p.a_ineq.mul(&xh).iter().all(|&v| v <= CERT_TOL);
        if ok_q && ok_e && ok_a && dot(&p.c, &xh) < 0.0 {
            return Some("dual infeasible: objective unbounded below along a recession ray".into());
        }
    }
    None
}

/// Minimizes `1/2 x'Qx + c'x` subject to `A_ineq x <= b_ineq`, `A_eq x = b_eq`.
///
/// Failures are reported through [`SolverStatus`]; infeasible and unbounded
/// programs come back as `NumericalFailure` with a diagnostic message.
pub fn solve(p: &ConvexProgram, cfg: &SolverConfig) -> SolverSolution {
    if let Err(e) = p.validate() {
        return SolverSolution::failure(p, format!("invalid program: {e}"));
    }
    if !(cfg.eps2 > 0.0) {
        return SolverSolution::failure(p, "eps2 must be positive".into());
    }
    let (n, k, m) = (p.n, p.num_eq(), p.num_ineq());
    let mut kkt = match Kkt::new(p, cfg.regularization) {
        Ok(kkt) => kkt,
        Err(e) => return SolverSolution::failure(p, format!("KKT analysis failed: {e}")),
    };

    // Starting point: minimize 1/2 x'Qx + c'x + 1/2 ||Ax - b||^2 s.t. Ex = d,
    // then shift slacks and multipliers into the positive orthant.
    let ones = vec![1.0; m];
    if let Err(e) = kkt.factor(&ones) {
        return SolverSolution::failure(p, format!("factorization failed: {e}"));
    }
    let mut rhs = Vec::with_capacity(n + k + m);
    rhs.extend(p.c.iter().map(|v| -v));
    rhs.extend_from_slice(&p.b_eq);
    rhs.extend_from_slice(&p.b_ineq);
    let sol = kkt.solve(&ones, &rhs);
    let mut x = sol[..n].to_vec();
    let mut y = sol[n..n + k].to_vec();
    let zr = &sol[n + k..];
    let mut s: Vec<f64> = zr.iter().map(|v| -v).collect();
    let mut z: Vec<f64> = zr.to_vec();
    shift_positive(&mut s);
    shift_positive(&mut z);

    let mut stalls = 0;
    let mut best: Option<SolverSolution> = None;
    let mut finishing = 0;
    let mut last = residuals(p, &x, &y, &z, &s);
    for iter in 0..=cfg.max_iterations {
        let res = residuals(p, &x, &y, &z, &s);
        let finite = res.kkt.is_finite() && x.iter().all(|v| v.is_finite());
        if let Some(b) = &best {
            // once within tolerance, keep stepping only while it pays off
            if !finite || res.kkt >= b.kkt_residual || finishing == FINISH_STEPS {
                let better = finite && res.kkt < b.kkt_residual;
                return if better { optimal(p, x, y, z, &res, iter) } else { best.unwrap() };
            }
        }
        if !finite {
            return fail(p, iter, &last, "non-finite iterate");
        }
        if res.kkt <= cfg.eps2 {
            if best.is_some() {
                finishing += 1;
            }
            best = Some(optimal(p, x.clone(), y.clone(), z.clone(), &res, iter));
            if m == 0 {
                return best.unwrap();
            }
        }
        if best.is_none() {
            if let Some(msg) = certificate(p, &x, &y, &z) {
                return fail(p, iter, &res, &msg);
            }
        }
        if iter == cfg.max_iterations {
            if let Some(b) = best {
                return b;
            }
            return SolverSolution {
                x_star: x,
                objective: res.pobj,
                status: SolverStatus::MaxIterations,
                kkt_residual: res.kkt,
                iterations: iter,
                z_ineq: z,
                y_eq: y,
                message: Some(format!("KKT residual {:.3e} after {iter} iterations", res.kkt)),
            };
        }

        let mu = if m > 0 { dot(&s, &z) / m as f64 } else { 0.0 };
        let w: Vec<f64> = s.iter().zip(&z).map(|(a, b)| a / b).collect();
        if let Err(e) = kkt.factor(&w) {
            if let Some(b) = best {
                return b;
            }
            return fail(p, iter, &res, &format!("factorization failed: {e}"));
        }

        let mut rhs = Vec::with_capacity(n + k + m);
        rhs.extend(res.rd.iter().map(|v| -v));
        rhs.extend(res.rpe.iter().map(|v| -v));
        let base = rhs.len();
        rhs.extend((0..m).map(|i| s[i] - res.rpi[i]));

        // predictor
        let d_aff = kkt.solve(&w, &rhs);
        let dz_aff = &d_aff[n + k..];
        let ds_aff = slack_step(p, &res.rpi, &d_aff[..n]);
        let a_aff = max_step(&s, &ds_aff).min(max_step(&z, dz_aff));
        let sigma = if m > 0 && mu > 0.0 {
            let mu_aff = (0..m)
                .map(|i| (s[i] + a_aff * ds_aff[i]) * (z[i] + a_aff * dz_aff[i]))
                .sum::<f64>()
                / m as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        for i in 0..m {
            rhs[base + i] = s[i] + (ds_aff[i] * dz_aff[i] - sigma * mu) / z[i] - res.rpi[i];
        }
        let d = kkt.solve(&w, &rhs);
        let ds = slack_step(p, &res.rpi, &d[..n]);
        let dz = &d[n + k..];
        let a_max = max_step(&s, &ds).min(max_step(&z, dz));
        let alpha = (STEP_FRACTION * a_max).min(1.0);
        if m == 0 {
            // equality-constrained QP: the Newton step is exact
            axpy(1.0, &d[..n], &mut x);
            axpy(1.0, &d[n..n + k], &mut y);
        } else {
            axpy(alpha, &d[..n], &mut x);
            axpy(alpha, &d[n..n + k], &mut y);
            axpy(alpha, dz, &mut z);
            axpy(alpha, &ds, &mut s);
        }
        if alpha < 1e-10 {
            stalls += 1;
            if stalls >= STALL_LIMIT {
                if let Some(b) = best {
                    return b;
                }
                return fail(p, iter, &res, "step length collapsed");
            }
        } else {
            stalls = 0;
        }
        last = res;
    }
    unreachable!("loop returns on its final iteration")
}

fn optimal(p: &ConvexProgram, x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, res: &Residuals, iter: usize) -> SolverSolution {
    debug_assert_eq!(x.len(), p.n);
    SolverSolution {
        x_star: x,
        objective: res.pobj,
        status: SolverStatus::Optimal,
        kkt_residual: res.kkt,
        iterations: iter,
        z_ineq: z,
        y_eq: y,
        message: None,
    }
}

fn fail(p: &ConvexProgram, iter: usize, res: &Residuals, msg: &str) -> SolverSolution {
    let mut out = SolverSolution::failure(p, format!("{msg} (iteration {iter}, KKT residual {:.3e})", res.kkt));
    out.iterations = iter;
    out
}

fn slack_step(p: &ConvexProgram, rpi: &[f64], dx: &[f64]) -> Vec<f64> {
    let mut ds: Vec<f64> = rpi.iter().map(|v| -v).collect();
    p.a_ineq.gemv(-1.0, dx, &mut ds);
    ds
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn shift_positive(v: &mut [f64]) {
    if v.is_empty() {
        return;
    }
    let lo = v.iter().fold(f64::INFINITY, |m, &a| m.min(a));
    if lo <= 1e-8 {
        let shift = 1.0 - lo.min(0.0);
        v.iter_mut().for_each(|a| *a += shift);
    }
}
