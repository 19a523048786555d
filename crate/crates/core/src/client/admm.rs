use super::{check_dims, worst_case_risk_dual, ClientConfig, ClientError, ClientModel};
use crate::solver::{self, ConvexProgram, ProgramBuilder, SolverConfig};
use crate::svm::{DatasetView, GlobalModel, NormKind, SvmError};

/// Variable layout of [`build_dr_program`]: `w (P), lambda, s (N)` and, for
/// the LInf cost norm, `u (P)` bounding `|w|` so that `lambda >= sum u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdmmQpLayout {
    pub samples: usize,
    pub dim: usize,
    pub norm: NormKind,
}

impl AdmmQpLayout {
    pub fn w(&self, p: usize) -> usize {
        p
    }

    pub fn lambda(&self) -> usize {
        self.dim
    }

    pub fn s(&self, n: usize) -> usize {
        self.dim + 1 + n
    }

    pub fn u(&self, p: usize) -> Option<usize> {
        (self.norm == NormKind::LInf).then(|| self.dim + 1 + self.samples + p)
    }

    pub fn num_vars(&self) -> usize {
        match self.norm {
            NormKind::L1 => self.dim + 1 + self.samples,
            NormKind::LInf => 2 * self.dim + 1 + self.samples,
        }
    }
}

/// Proximal term `rho/2 ||w - center||^2 + tau ||w||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Proximal {
    pub rho: f64,
    pub tau: f64,
    pub center: Vec<f64>,
}

/// Distributionally robust SVM program
///
/// ```text
/// min  lambda eps + 1/N sum s_n  [+ proximal term]
/// s.t. s_n >= 0,  s_n >= 1 - y_n <w, x_n>,  s_n >= 1 + y_n <w, x_n> - kappa lambda,
///      lambda >= ||w||_*
/// ```
///
/// Without a proximal term this is the LP of the centralized model.
pub fn build_dr_program(
    data: &DatasetView,
    epsilon: f64,
    kappa: f64,
    norm: NormKind,
    prox: Option<&Proximal>,
) -> Result<ConvexProgram, ClientError> {
    if data.is_empty() {
        return Err(SvmError::EmptyDataset.into());
    }
    let layout = AdmmQpLayout {
        samples: data.len(),
        dim: data.dim(),
        norm,
    };
    let inv_n = 1.0 / data.len() as f64;
    let mut b = ProgramBuilder::new(layout.num_vars());
    let lam = layout.lambda();
    b.cost(lam, epsilon);
    if let Some(px) = prox {
        check_dims(px.center.len(), data.dim())?;
        for p in 0..layout.dim {
            b.quad_diag(layout.w(p), px.rho + 2.0 * px.tau);
            b.cost(layout.w(p), -px.rho * px.center[p]);
        }
    }
    for (n, smp) in data.samples().iter().enumerate() {
        let s = layout.s(n);
        let y = smp.y.sign();
        b.cost(s, inv_n);
        b.le(&[(s, -1.0)], 0.0);
        let mut keep: Vec<(usize, f64)> = smp.x.iter().enumerate().map(|(p, &x)| (layout.w(p), -y * x)).collect();
        keep.push((s, -1.0));
        b.le(&keep, -1.0);
        let mut flip: Vec<(usize, f64)> = smp.x.iter().enumerate().map(|(p, &x)| (layout.w(p), y * x)).collect();
        flip.push((lam, -kappa));
        flip.push((s, -1.0));
        b.le(&flip, -1.0);
    }
    match norm {
        // dual norm is LInf: lambda >= |w_p|
        NormKind::L1 => {
            for p in 0..layout.dim {
                b.le(&[(layout.w(p), 1.0), (lam, -1.0)], 0.0);
                b.le(&[(layout.w(p), -1.0), (lam, -1.0)], 0.0);
            }
        }
        // dual norm is L1: u_p >= |w_p|, lambda >= sum u
        NormKind::LInf => {
            let mut sum: Vec<(usize, f64)> = Vec::with_capacity(layout.dim + 1);
            for p in 0..layout.dim {
                let u = layout.u(p).expect("LInf layout");
                b.le(&[(layout.w(p), 1.0), (u, -1.0)], 0.0);
                b.le(&[(layout.w(p), -1.0), (u, -1.0)], 0.0);
                sum.push((u, 1.0));
            }
            sum.push((lam, -1.0));
            b.le(&sum, 0.0);
        }
    }
    Ok(b.build())
}

/// Local ADMM program: the DR-SVM objective plus
/// `rho/2 ||w_g - w + mu_g||^2 + tau ||w_g||^2`.
pub fn build_admm_qp(
    w_global: &GlobalModel,
    client: &ClientModel,
    data: &DatasetView,
    cfg: &ClientConfig,
) -> Result<ConvexProgram, ClientError> {
    cfg.validate()?;
    check_dims(w_global.dim(), data.dim())?;
    check_dims(client.mu_g.len(), data.dim())?;
    let center: Vec<f64> = w_global.w.iter().zip(&client.mu_g).map(|(w, m)| w - m).collect();
    let prox = Proximal {
        rho: cfg.rho,
        tau: cfg.tau,
        center,
    };
    build_dr_program(data, cfg.epsilon, cfg.kappa, cfg.norm, Some(&prox))
}

/// Local objective `J_g` at `w_g`, with `lambda` and `s` minimized out.
pub fn admm_objective(
    w_g: &[f64],
    w_global: &GlobalModel,
    mu_g: &[f64],
    data: &DatasetView,
    cfg: &ClientConfig,
) -> Result<f64, ClientError> {
    let risk = worst_case_risk_dual(&GlobalModel::new(w_g.to_vec()), data, cfg)?;
    let prox: f64 = (0..w_g.len())
        .map(|p| {
            let d = w_g[p] - w_global.w[p] + mu_g[p];
            d * d
        })
        .sum();
    let reg: f64 = w_g.iter().map(|v| v * v).sum();
    Ok(risk + 0.5 * cfg.rho * prox + cfg.tau * reg)
}

/// Solves the local program and returns the client with `w_g` updated;
/// the multipliers are left unchanged.
pub fn admm_client_step(
    w_global: &GlobalModel,
    client: &ClientModel,
    data: &DatasetView,
    cfg: &ClientConfig,
    solver_cfg: &SolverConfig,
) -> Result<ClientModel, ClientError> {
    let qp = build_admm_qp(w_global, client, data, cfg)?;
    let sol = solver::solve(&qp, solver_cfg);
    if !sol.is_optimal() {
        return Err(ClientError::Solver {
            status: sol.status,
            message: sol.message.unwrap_or_default(),
        });
    }
    Ok(ClientModel {
        w_g: sol.x_star[..data.dim()].to_vec(),
        mu_g: client.mu_g.clone(),
    })
}

/// `mu_g <- mu_g + (w_g - w)`.
pub fn admm_multiplier_update(client: &ClientModel, w_global: &GlobalModel) -> ClientModel {
    let mu_g = client
        .mu_g
        .iter()
        .zip(&client.w_g)
        .zip(&w_global.w)
        .map(|((m, wg), w)| m + (wg - w))
        .collect();
    ClientModel {
        w_g: client.w_g.clone(),
        mu_g,
    }
}
