//! Worst-case distribution LP for the subgradient method.
//!
//! For each sample `(x, y)` the adversary keeps mass `stay` at the sample,
//! moves mass `beta+` to `(z+, y)` and mass `beta-` to `(z-, -y)`. With
//! `q = beta (x - z)` the expected hinge over the active pieces is linear:
//!
//! ```text
//! max 1/N sum_n beta+ (1 - y<w,x>) + beta- (1 + y<w,x>) + y<w,q+> - y<w,q->
//! s.t. beta+ + beta- <= 1,  beta >= 0,  0 <= beta x - q <= beta,
//!      sum_n ||q+|| + ||q-|| + kappa beta-  <=  N eps
//! ```
//!
//! The zero piece of the hinge is what `stay = 1 - beta+ - beta-` carries, so
//! the optimum equals the worst-case hinge risk over distributions supported
//! on `[0,1]^P x {-1,+1}`.

use serde::{Deserialize, Serialize};

use super::{check_dims, ClientConfig, ClientError};
use crate::solver::{self, ConvexProgram, ProgramBuilder, SolverConfig, SolverSolution};
use crate::svm::{dot, hinge_at, DatasetView, GlobalModel, Label, NormKind};

/// Masses below this are dropped before forming `z = x - q / beta`.
pub const ATOM_DROP_TOL: f64 = 1e-9;
/// Margin tolerance for choosing the active piece at a hinge kink.
pub const KINK_TOL: f64 = 1e-10;

/// Variable and row layout of the LP built by [`build_sm_lp`].
///
/// Per sample the variables are `beta+, beta-, q+ (P), q- (P), t+, t-` and,
/// for the L1 cost norm, split variables `a+ (P), a- (P)` with `t = sum a`.
/// Rows per sample: one mass row, two sign rows, `4P` support rows and `4P`
/// norm-epigraph rows; one shared budget row comes last. The L1 norm adds two
/// equality rows per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmLpLayout {
    pub samples: usize,
    pub dim: usize,
    pub norm: NormKind,
}

impl SmLpLayout {
    pub fn new(samples: usize, dim: usize, norm: NormKind) -> Self {
        Self { samples, dim, norm }
    }

    pub fn block(&self) -> usize {
        match self.norm {
            NormKind::LInf => 4 + 2 * self.dim,
            NormKind::L1 => 4 + 4 * self.dim,
        }
    }

    fn base(&self, n: usize) -> usize {
        n * self.block()
    }

    pub fn beta_plus(&self, n: usize) -> usize {
        self.base(n)
    }

    pub fn beta_minus(&self, n: usize) -> usize {
        self.base(n) + 1
    }

    pub fn q_plus(&self, n: usize, p: usize) -> usize {
        self.base(n) + 2 + p
    }

    pub fn q_minus(&self, n: usize, p: usize) -> usize {
        self.base(n) + 2 + self.dim + p
    }

    pub fn t_plus(&self, n: usize) -> usize {
        self.base(n) + 2 + 2 * self.dim
    }

    pub fn t_minus(&self, n: usize) -> usize {
        self.base(n) + 3 + 2 * self.dim
    }

    /// L1 split variables; `None` for the LInf layout.
    pub fn a_plus(&self, n: usize, p: usize) -> Option<usize> {
        (self.norm == NormKind::L1).then(|| self.base(n) + 4 + 2 * self.dim + p)
    }

    pub fn a_minus(&self, n: usize, p: usize) -> Option<usize> {
        (self.norm == NormKind::L1).then(|| self.base(n) + 4 + 3 * self.dim + p)
    }

    pub fn num_vars(&self) -> usize {
        self.samples * self.block()
    }

    pub fn num_ineq(&self) -> usize {
        self.samples * (3 + 8 * self.dim) + 1
    }

    pub fn num_eq(&self) -> usize {
        match self.norm {
            NormKind::LInf => 0,
            NormKind::L1 => 2 * self.samples,
        }
    }
}

/// Worst-case atoms for one training sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAtoms {
    pub x: Vec<f64>,
    pub y: Label,
    pub beta_plus: f64,
    pub beta_minus: f64,
    /// Mass left at `(x, y)`.
    pub stay: f64,
    /// Atom with the original label; present when `beta_plus` is retained.
    pub z_plus: Option<Vec<f64>>,
    /// Atom with the flipped label; present when `beta_minus` is retained.
    pub z_minus: Option<Vec<f64>>,
}

impl SampleAtoms {
    /// Expected hinge loss of this sample's atoms (total mass one).
    pub fn expected_hinge(&self, w: &[f64]) -> f64 {
        let y = self.y.sign();
        let mut v = self.stay * hinge_at(w, &self.x, y);
        if let Some(z) = &self.z_plus {
            v += self.beta_plus * hinge_at(w, z, y);
        }
        if let Some(z) = &self.z_minus {
            v += self.beta_minus * hinge_at(w, z, -y);
        }
        v
    }

    pub fn transport_cost(&self, norm: NormKind, kappa: f64) -> f64 {
        let dist = |z: &Vec<f64>| {
            let d: Vec<f64> = z.iter().zip(&self.x).map(|(a, b)| a - b).collect();
            norm.eval(&d)
        };
        let mut c = 0.0;
        if let Some(z) = &self.z_plus {
            c += self.beta_plus * dist(z);
        }
        if let Some(z) = &self.z_minus {
            c += self.beta_minus * (dist(z) + kappa);
        }
        c
    }
}

/// Discrete worst-case distribution: each sample contributes mass `1/N`
/// split over its atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseDistribution {
    pub atoms: Vec<SampleAtoms>,
}

impl WorstCaseDistribution {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Expected hinge loss of `w` under this distribution.
    pub fn risk(&self, w: &GlobalModel) -> f64 {
        self.atoms.iter().map(|a| a.expected_hinge(&w.w)).sum::<f64>() / self.atoms.len() as f64
    }

    /// Average transport cost from the empirical distribution.
    pub fn transport_budget_used(&self, norm: NormKind, kappa: f64) -> f64 {
        self.atoms.iter().map(|a| a.transport_cost(norm, kappa)).sum::<f64>() / self.atoms.len() as f64
    }

    /// Largest deviation of any sample's total mass from one.
    pub fn mass_error(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| (a.beta_plus + a.beta_minus + a.stay - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Largest distance of any retained atom from `[0,1]^P`.
    pub fn support_violation(&self) -> f64 {
        self.atoms
            .iter()
            .flat_map(|a| a.z_plus.iter().chain(a.z_minus.iter()))
            .flat_map(|z| z.iter())
            .map(|&v| (-v).max(v - 1.0).max(0.0))
            .fold(0.0, f64::max)
    }
}

fn check_unit_box(data: &DatasetView) -> Result<(), ClientError> {
    for (n, s) in data.samples().iter().enumerate() {
        if let Some((p, &v)) = s.x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(ClientError::OutsideUnitBox {
                sample: n,
                feature: p,
                value: v,
            });
        }
    }
    Ok(())
}

/// Builds the worst-case LP (as a minimization of the negated objective).
pub fn build_sm_lp(w: &GlobalModel, data: &DatasetView, cfg: &ClientConfig) -> Result<ConvexProgram, ClientError> {
    check_dims(w.dim(), data.dim())?;
    cfg.validate()?;
    check_unit_box(data)?;
    let layout = SmLpLayout::new(data.len(), data.dim(), cfg.norm);
    let inv_n = 1.0 / data.len() as f64;
    let mut b = ProgramBuilder::new(layout.num_vars());
    let mut budget = Vec::with_capacity(data.len() * 3);

    for (n, s) in data.samples().iter().enumerate() {
        let y = s.y.sign();
        let margin = y * dot(&w.w, &s.x);
        let (bp, bm) = (layout.beta_plus(n), layout.beta_minus(n));
        b.cost(bp, -inv_n * (1.0 - margin));
        b.cost(bm, -inv_n * (1.0 + margin));
        for p in 0..layout.dim {
            b.cost(layout.q_plus(n, p), -inv_n * y * w.w[p]);
            b.cost(layout.q_minus(n, p), inv_n * y * w.w[p]);
        }

        b.le(&[(bp, 1.0), (bm, 1.0)], 1.0);
        b.le(&[(bp, -1.0)], 0.0);
        b.le(&[(bm, -1.0)], 0.0);
        for (beta, q) in [(bp, 0usize), (bm, 1)] {
            for p in 0..layout.dim {
                let qi = if q == 0 { layout.q_plus(n, p) } else { layout.q_minus(n, p) };
                let xp = s.x[p];
                // 0 <= beta x_p - q_p <= beta
                b.le(&[(beta, -xp), (qi, 1.0)], 0.0);
                b.le(&[(beta, xp - 1.0), (qi, -1.0)], 0.0);
            }
        }
        for side in 0..2 {
            let t = if side == 0 { layout.t_plus(n) } else { layout.t_minus(n) };
            let q = |p| if side == 0 { layout.q_plus(n, p) } else { layout.q_minus(n, p) };
            match cfg.norm {
                NormKind::LInf => {
                    for p in 0..layout.dim {
                        b.le(&[(q(p), 1.0), (t, -1.0)], 0.0);
                        b.le(&[(q(p), -1.0), (t, -1.0)], 0.0);
                    }
                }
                NormKind::L1 => {
                    let a = |p| {
                        if side == 0 {
                            layout.a_plus(n, p).expect("L1 layout")
                        } else {
                            layout.a_minus(n, p).expect("L1 layout")
                        }
                    };
                    for p in 0..layout.dim {
                        b.le(&[(q(p), 1.0), (a(p), -1.0)], 0.0);
                        b.le(&[(q(p), -1.0), (a(p), -1.0)], 0.0);
                    }
                    let mut terms: Vec<(usize, f64)> = (0..layout.dim).map(|p| (a(p), 1.0)).collect();
                    terms.push((t, -1.0));
                    b.eq(&terms, 0.0);
                }
            }
        }
        budget.push((layout.t_plus(n), 1.0));
        budget.push((layout.t_minus(n), 1.0));
        budget.push((bm, cfg.kappa));
    }
    b.le(&budget, data.len() as f64 * cfg.epsilon);
    debug_assert_eq!(b.num_ineq(), layout.num_ineq());
    debug_assert_eq!(b.num_eq(), layout.num_eq());
    Ok(b.build())
}

/// Reads the worst-case atoms off an optimal solution of [`build_sm_lp`].
///
/// Masses are clipped into `[0, 1]`; atoms whose mass is below
/// [`ATOM_DROP_TOL`] are dropped and their mass returned to the sample.
/// Atoms are clipped into `[0,1]^P` to absorb solver tolerance.
pub fn extract_worst_case(
    sol: &SolverSolution,
    data: &DatasetView,
    cfg: &ClientConfig,
) -> Result<WorstCaseDistribution, ClientError> {
    if !sol.is_optimal() {
        return Err(ClientError::Solver {
            status: sol.status,
            message: sol.message.clone().unwrap_or_default(),
        });
    }
    let layout = SmLpLayout::new(data.len(), data.dim(), cfg.norm);
    if sol.x_star.len() != layout.num_vars() {
        return Err(ClientError::Layout);
    }
    let x = &sol.x_star;
    let atoms = data
        .samples()
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let mut bp = x[layout.beta_plus(n)].clamp(0.0, 1.0);
            let mut bm = x[layout.beta_minus(n)].clamp(0.0, 1.0);
            let total = bp + bm;
            if total > 1.0 {
                bp /= total;
                bm /= total;
            }
            let atom = |beta: f64, q: &dyn Fn(usize) -> usize| {
                (beta > ATOM_DROP_TOL).then(|| {
                    (0..layout.dim)
                        .map(|p| (s.x[p] - x[q(p)] / beta).clamp(0.0, 1.0))
                        .collect::<Vec<f64>>()
                })
            };
            let z_plus = atom(bp, &|p| layout.q_plus(n, p));
            let z_minus = atom(bm, &|p| layout.q_minus(n, p));
            if z_plus.is_none() {
                bp = 0.0;
            }
            if z_minus.is_none() {
                bm = 0.0;
            }
            SampleAtoms {
                x: s.x.clone(),
                y: s.y,
                beta_plus: bp,
                beta_minus: bm,
                stay: (1.0 - bp - bm).max(0.0),
                z_plus,
                z_minus,
            }
        })
        .collect();
    Ok(WorstCaseDistribution { atoms })
}

/// Subgradient of the worst-case risk at `w` from the worst-case atoms:
/// each atom contributes `-label * mass * z` when its hinge is active.
/// At a kink (margin residual within [`KINK_TOL`]) the active piece is used.
pub fn sm_subgradient(w: &GlobalModel, dist: &WorstCaseDistribution) -> Vec<f64> {
    let mut v = vec![0.0; w.dim()];
    if dist.is_empty() {
        return v;
    }
    let mut add = |mass: f64, label: f64, z: &[f64]| {
        let r = 1.0 - label * dot(&w.w, z);
        if r >= -KINK_TOL {
            for (vi, zi) in v.iter_mut().zip(z) {
                *vi -= label * mass * zi;
            }
        }
    };
    for a in &dist.atoms {
        let y = a.y.sign();
        if a.stay > 0.0 {
            add(a.stay, y, &a.x);
        }
        if let Some(z) = &a.z_plus {
            add(a.beta_plus, y, z);
        }
        if let Some(z) = &a.z_minus {
            add(a.beta_minus, -y, z);
        }
    }
    let inv_n = 1.0 / dist.len() as f64;
    v.iter_mut().for_each(|vi| *vi *= inv_n);
    v
}

/// One SM client step: solve the worst-case LP at `w` and return the
/// subgradient together with the worst-case distribution.
pub fn sm_client_step(
    w: &GlobalModel,
    data: &DatasetView,
    cfg: &ClientConfig,
    solver_cfg: &SolverConfig,
) -> Result<(Vec<f64>, WorstCaseDistribution), ClientError> {
    let lp = build_sm_lp(w, data, cfg)?;
    let sol = solver::solve(&lp, solver_cfg);
    let dist = extract_worst_case(&sol, data, cfg)?;
    Ok((sm_subgradient(w, &dist), dist))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::client::worst_case_risk_dual;
    use crate::solver::SolverStatus;
    use crate::svm::LabeledSample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn one(x: &[f64], y: Label) -> DatasetView {
        DatasetView::from_samples(vec![LabeledSample::new(x.to_vec(), y)]).unwrap()
    }

    fn random_data(rng: &mut impl Rng, n: usize, p: usize) -> DatasetView {
        DatasetView::from_samples(
            (0..n)
                .map(|_| {
                    let x = (0..p).map(|_| rng.gen_range(0.0..1.0)).collect();
                    let y = if rng.gen_bool(0.5) { Label::Positive } else { Label::Negative };
                    LabeledSample::new(x, y)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn layout_counts_for_a_single_scalar_sample() {
        let d = one(&[0.5], Label::Positive);
        let w = GlobalModel::new(vec![1.0]);
        let linf = build_sm_lp(&w, &d, &ClientConfig::new(0.1, 1.0, NormKind::LInf)).unwrap();
        assert_eq!((linf.n, linf.num_ineq(), linf.num_eq()), (6, 12, 0));
        let l1 = build_sm_lp(&w, &d, &ClientConfig::new(0.1, 1.0, NormKind::L1)).unwrap();
        assert_eq!((l1.n, l1.num_ineq(), l1.num_eq()), (8, 12, 2));
    }

    #[test]
    fn rejects_features_outside_the_unit_box() {
        let d = one(&[1.5], Label::Positive);
        let err = build_sm_lp(&GlobalModel::zeros(1), &d, &ClientConfig::new(0.1, 1.0, NormKind::L1)).unwrap_err();
        assert!(matches!(err, ClientError::OutsideUnitBox { sample: 0, feature: 0, .. }));
    }

    #[test]
    fn tiny_radius_recovers_the_empirical_risk() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_data(&mut rng, 8, 3);
        let w = GlobalModel::new(vec![1.5, -2.0, 0.7]);
        let cfg = ClientConfig::new(1e-9, 1.0, NormKind::LInf);
        let (_, dist) = sm_client_step(&w, &d, &cfg, &SolverConfig::default()).unwrap();
        let emp = d.samples().iter().map(|s| hinge_at(&w.w, &s.x, s.y.sign())).sum::<f64>() / 8.0;
        assert!((dist.risk(&w) - emp).abs() < 1e-6);
        for a in &dist.atoms {
            assert!(a.beta_minus < 1e-6);
        }
    }

    #[test]
    fn huge_flip_cost_suppresses_flips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_data(&mut rng, 5, 2);
        let w = GlobalModel::new(vec![2.0, -1.0]);
        let eps = 0.05;
        let cfg = ClientConfig::new(eps, 1e3 * 5.0 * eps, NormKind::L1);
        let lp = build_sm_lp(&w, &d, &cfg).unwrap();
        let sol = solver::solve(&lp, &SolverConfig::default());
        assert_eq!(sol.status, SolverStatus::Optimal);
        let layout = SmLpLayout::new(5, 2, NormKind::L1);
        for n in 0..5 {
            assert!(sol.x_star[layout.beta_minus(n)] <= 1e-6);
        }
    }

    #[test]
    fn zero_transport_keeps_atoms_at_the_samples() {
        let layout = SmLpLayout::new(1, 2, NormKind::LInf);
        let d = one(&[0.3, 0.8], Label::Negative);
        let mut x = vec![0.0; layout.num_vars()];
        x[layout.beta_plus(0)] = 0.6;
        x[layout.beta_minus(0)] = 0.4;
        let sol = SolverSolution {
            x_star: x,
            objective: 0.0,
            status: SolverStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
            z_ineq: vec![],
            y_eq: vec![],
            message: None,
        };
        let dist = extract_worst_case(&sol, &d, &ClientConfig::new(0.1, 1.0, NormKind::LInf)).unwrap();
        assert_eq!(dist.atoms[0].z_plus.as_deref(), Some(&[0.3, 0.8][..]));
        assert_eq!(dist.atoms[0].z_minus.as_deref(), Some(&[0.3, 0.8][..]));
        assert_eq!(dist.mass_error(), 0.0);
    }

    #[test]
    fn dropped_atom_leaves_the_sample_in_place() {
        let layout = SmLpLayout::new(1, 1, NormKind::LInf);
        let d = one(&[0.25], Label::Positive);
        let mut x = vec![0.0; layout.num_vars()];
        x[layout.beta_plus(0)] = 1.0;
        let sol = SolverSolution {
            x_star: x,
            objective: 0.0,
            status: SolverStatus::Optimal,
            kkt_residual: 0.0,
            iterations: 0,
            z_ineq: vec![],
            y_eq: vec![],
            message: None,
        };
        let dist = extract_worst_case(&sol, &d, &ClientConfig::new(0.1, 1.0, NormKind::LInf)).unwrap();
        let a = &dist.atoms[0];
        assert_eq!(a.z_minus, None);
        assert_eq!(a.beta_minus, 0.0);
        assert_eq!(a.z_plus.as_deref(), Some(&[0.25][..]));
        assert_eq!(a.beta_plus + a.stay, 1.0);
    }

    #[test]
    fn non_optimal_solution_is_an_error() {
        let d = one(&[0.25], Label::Positive);
        let mut sol = SolverSolution::failure(&ConvexProgram::unconstrained_lp(vec![0.0; 6]), "x".into());
        sol.status = SolverStatus::MaxIterations;
        assert!(extract_worst_case(&sol, &d, &ClientConfig::new(0.1, 1.0, NormKind::LInf)).is_err());
    }

    #[test]
    fn satisfied_margins_give_zero_subgradient() {
        let dist = WorstCaseDistribution {
            atoms: vec![SampleAtoms {
                x: vec![1.0, 1.0],
                y: Label::Positive,
                beta_plus: 1.0,
                beta_minus: 0.0,
                stay: 0.0,
                z_plus: Some(vec![1.0, 1.0]),
                z_minus: None,
            }],
        };
        let w = GlobalModel::new(vec![2.0, 2.0]);
        assert_eq!(sm_subgradient(&w, &dist), vec![0.0, 0.0]);
    }

    #[test]
    fn single_active_atom_gives_the_plain_hinge_subgradient() {
        let z = vec![0.2, 0.5];
        let dist = WorstCaseDistribution {
            atoms: vec![SampleAtoms {
                x: z.clone(),
                y: Label::Negative,
                beta_plus: 1.0,
                beta_minus: 0.0,
                stay: 0.0,
                z_plus: Some(z.clone()),
                z_minus: None,
            }],
        };
        let w = GlobalModel::new(vec![0.1, 0.1]);
        assert_eq!(sm_subgradient(&w, &dist), vec![0.2, 0.5]);
    }

    #[test]
    fn primal_matches_dual_when_the_support_is_slack() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut interior = 0;
        for case in 0..40 {
            let n = rng.gen_range(1..=10);
            let p = rng.gen_range(1..=3);
            let d = random_data(&mut rng, n, p);
            let w = GlobalModel::new((0..p).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let norm = if case % 2 == 0 { NormKind::L1 } else { NormKind::LInf };
            let cfg = ClientConfig::new(rng.gen_range(1e-3..0.1), [0.1, 0.5, 1.0][case % 3], norm);
            let (_, dist) = sm_client_step(&w, &d, &cfg, &SolverConfig::default()).unwrap();
            let primal = dist.risk(&w);
            let dual = worst_case_risk_dual(&w, &d, &cfg).unwrap();
            let tol = 1e-5 * (1.0 + dual);
            // restricting the support can only lower the worst case
            assert!(primal <= dual + tol, "case {case}: {primal} vs {dual}");
            let on_boundary = dist
                .atoms
                .iter()
                .flat_map(|a| a.z_plus.iter().chain(a.z_minus.iter()))
                .flatten()
                .any(|&v| v <= 1e-7 || v >= 1.0 - 1e-7);
            if !on_boundary {
                interior += 1;
                assert!((primal - dual).abs() <= tol, "case {case}: {primal} vs {dual}");
            }
        }
        assert!(interior >= 30);
    }
}
