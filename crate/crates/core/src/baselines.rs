//! Reference models: the centralized distributionally robust SVM and the
//! FedSGD / FedAvg / FedProx family for an l2-regularized hinge-loss SVM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{build_dr_program, ClientError};
use crate::solver::{self, SolverConfig, SolverStatus};
use crate::svm::{dot, DatasetView, GlobalModel, NormKind, SvmError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid baseline config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] SvmError),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("solver returned {status:?}: {message}")]
    Solver { status: SolverStatus, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralDrConfig {
    pub epsilon: f64,
    pub kappa: f64,
    pub norm: NormKind,
}

/// Solves the pooled distributionally robust SVM as a single LP.
pub fn train_central_dr_svm(
    data: &DatasetView,
    cfg: &CentralDrConfig,
    solver_cfg: &SolverConfig,
) -> Result<GlobalModel, BaselineError> {
    if !(cfg.epsilon > 0.0) || !(cfg.kappa >= 0.0) {
        return Err(BaselineError::Config("epsilon must be positive and kappa nonnegative".into()));
    }
    let lp = build_dr_program(data, cfg.epsilon, cfg.kappa, cfg.norm, None)?;
    let sol = solver::solve(&lp, solver_cfg);
    if !sol.is_optimal() {
        return Err(BaselineError::Solver {
            status: sol.status,
            message: sol.message.unwrap_or_default(),
        });
    }
    Ok(GlobalModel::new(sol.x_star[..data.dim()].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FedVariant {
    FedSGD,
    FedAvg,
    FedProx,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FedBaselineConfig {
    pub variant: FedVariant,
    pub gamma0: f64,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_fraction: f64,
    pub prox_mu: f64,
}

impl FedBaselineConfig {
    pub fn new(variant: FedVariant, gamma0: f64, rounds: usize) -> Self {
        Self {
            variant,
            gamma0,
            rounds,
            local_epochs: 5,
            batch_fraction: 0.2,
            prox_mu: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |m: &str| Err(BaselineError::Config(m.into()));
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0 must be positive");
        }
        if !(self.batch_fraction > 0.0 && self.batch_fraction <= 1.0) {
            return bad("batch_fraction must lie in (0, 1]");
        }
        if self.local_epochs == 0 {
            return bad("local_epochs must be at least 1");
        }
        if !(self.prox_mu >= 0.0) {
            return bad("prox_mu must be nonnegative");
        }
        Ok(())
    }

    /// Epochs, batch fraction and proximal weight actually used.
    fn local_schedule(&self) -> (usize, f64, f64) {
        match self.variant {
            FedVariant::FedSGD => (1, 1.0, 0.0),
            FedVariant::FedAvg => (self.local_epochs, self.batch_fraction, 0.0),
            FedVariant::FedProx => (self.local_epochs, self.batch_fraction, self.prox_mu),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedL2Run {
    pub model: GlobalModel,
    /// Global model after each round.
    pub snapshots: Vec<Vec<f64>>,
}

/// Subgradient of `1/|B| sum_B hinge + c ||w||^2 + mu/2 ||w - anchor||^2`
/// over the samples `batch` of `data`, in the order given.
fn local_subgradient(w: &[f64], data: &DatasetView, batch: &[usize], c: f64, mu: f64, anchor: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = w.iter().zip(anchor).map(|(wi, ai)| 2.0 * c * wi + mu * (wi - ai)).collect();
    let inv = 1.0 / batch.len() as f64;
    for &i in batch {
        let s = &data.samples()[i];
        let y = s.y.sign();
        if 1.0 - y * dot(w, &s.x) > 0.0 {
            for (gi, xi) in g.iter_mut().zip(&s.x) {
                *gi -= inv * y * xi;
            }
        }
    }
    g
}

/// Trains the l2-regularized SVM with federated (sub)gradient descent.
/// Clients are weighted equally and use the penalty
/// `c_g = 1 / (10 N_g)` and the step `gamma0 / t` in round `t`.
/// Minibatches are drawn without replacement, reshuffled every epoch; a
/// batch covering all local samples keeps the natural order.
pub fn train_fed_l2_svm(
    client_data: &[DatasetView],
    cfg: &FedBaselineConfig,
    seed: u64,
) -> Result<FedL2Run, BaselineError> {
    cfg.validate()?;
    if client_data.is_empty() || client_data.iter().any(|d| d.is_empty()) {
        return Err(SvmError::EmptyDataset.into());
    }
    let dim = client_data[0].dim();
    if let Some(d) = client_data.iter().find(|d| d.dim() != dim) {
        return Err(SvmError::DimensionMismatch {
            expected: dim,
            got: d.dim(),
        }
        .into());
    }
    let alpha = 1.0 / client_data.len() as f64;
    let (epochs, fraction, mu) = cfg.local_schedule();
    let mut rngs: Vec<ChaCha8Rng> = (0..client_data.len())
        .map(|g| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(g as u64);
            r
        })
        .collect();

    let mut w = vec![0.0; dim];
    let mut snapshots = Vec::with_capacity(cfg.rounds);
    for t in 1..=cfg.rounds {
        let step = cfg.gamma0 / t as f64;
        let anchor = w.clone();
        let locals: Vec<Vec<f64>> = client_data
            .par_iter()
            .zip(rngs.par_iter_mut())
            .map(|(data, rng)| {
                let n = data.len();
                let c = 1.0 / (10.0 * n as f64);
                let batch = ((fraction * n as f64).ceil() as usize).clamp(1, n);
                let mut order: Vec<usize> = (0..n).collect();
                let mut wl = anchor.clone();
                for _ in 0..epochs {
                    if batch < n {
                        order.shuffle(rng);
                    }
                    for chunk in order.chunks(batch) {
                        let g = local_subgradient(&wl, data, chunk, c, mu, &anchor);
                        for (wi, gi) in wl.iter_mut().zip(&g) {
                            *wi -= step * gi;
                        }
                    }
                }
                wl
            })
            .collect();
        w = vec![0.0; dim];
        for wl in &locals {
            for (wi, li) in w.iter_mut().zip(wl) {
                *wi += alpha * li;
            }
        }
        snapshots.push(w.clone());
    }
    Ok(FedL2Run {
        model: GlobalModel::new(w),
        snapshots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::{Label, LabeledSample};

    fn toy() -> DatasetView {
        DatasetView::from_samples(vec![
            LabeledSample::new(vec![0.9, 0.8, 1.0], Label::Positive),
            LabeledSample::new(vec![0.1, 0.3, 1.0], Label::Negative),
            LabeledSample::new(vec![0.7, 0.9, 1.0], Label::Positive),
            LabeledSample::new(vec![0.2, 0.1, 1.0], Label::Negative),
        ])
        .unwrap()
    }

    #[test]
    fn fedsgd_ignores_local_schedule() {
        let mut a = FedBaselineConfig::new(FedVariant::FedSGD, 1.0, 4);
        let run_a = train_fed_l2_svm(&[toy()], &a, 3).unwrap();
        a.local_epochs = 9;
        a.batch_fraction = 0.1;
        assert_eq!(train_fed_l2_svm(&[toy()], &a, 99).unwrap(), run_a);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut c = FedBaselineConfig::new(FedVariant::FedAvg, 1.0, 4);
        c.batch_fraction = 0.0;
        assert!(train_fed_l2_svm(&[toy()], &c, 0).is_err());
        let c = CentralDrConfig {
            epsilon: 0.0,
            kappa: 1.0,
            norm: NormKind::L1,
        };
        assert!(train_central_dr_svm(&toy(), &c, &SolverConfig::default()).is_err());
    }
}
