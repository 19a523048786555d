//! Per-client computations: local worst-case risk, the worst-case
//! distribution LP with its subgradient, and the ADMM local update.

mod admm;
mod dual;
mod radius;
mod sm;

pub use admm::{
    admm_client_step, admm_multiplier_update, admm_objective, build_admm_qp, build_dr_program, AdmmQpLayout,
    Proximal,
};
pub use dual::{worst_case_risk_dual, worst_case_risk_dual_with_lambda};
pub use radius::{wasserstein_radius, RadiusError};
pub use sm::{
    build_sm_lp, extract_worst_case, sm_client_step, sm_subgradient, SampleAtoms, SmLpLayout, WorstCaseDistribution,
    ATOM_DROP_TOL, KINK_TOL,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::solver::SolverStatus;
use crate::svm::{NormKind, SvmError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error(transparent)]
    Data(#[from] SvmError),
    #[error("invalid client config: {0}")]
    Config(String),
    #[error("sample {sample} feature {feature} = {value} lies outside [0, 1]")]
    OutsideUnitBox { sample: usize, feature: usize, value: f64 },
    #[error("solver returned {status:?}: {message}")]
    Solver { status: SolverStatus, message: String },
    #[error("solution does not match the program layout")]
    Layout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Wasserstein radius.
    pub epsilon: f64,
    /// Label-flip cost.
    pub kappa: f64,
    pub alpha: f64,
    pub norm: NormKind,
    /// Strong-convexity weight; zero gives plain ADMM.
    pub tau: f64,
    pub rho: f64,
}

impl ClientConfig {
    pub fn new(epsilon: f64, kappa: f64, norm: NormKind) -> Self {
        Self {
            epsilon,
            kappa,
            alpha: 1.0,
            norm,
            tau: 0.0,
            rho: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        let bad = |m: &str| Err(ClientError::Config(m.to_string()));
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be positive");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be nonnegative");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad("tau must be nonnegative");
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        Ok(())
    }
}

/// Local ADMM state: the local model and its scaled multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientModel {
    pub w_g: Vec<f64>,
    pub mu_g: Vec<f64>,
}

impl ClientModel {
    pub fn new(w_g: Vec<f64>, mu_g: Vec<f64>) -> Self {
        Self { w_g, mu_g }
    }

    pub fn is_finite(&self) -> bool {
        self.w_g.iter().chain(&self.mu_g).all(|v| v.is_finite())
    }
}

fn check_dims(w_len: usize, data_dim: usize) -> Result<(), ClientError> {
    if w_len != data_dim {
        return Err(SvmError::DimensionMismatch {
            expected: data_dim,
            got: w_len,
        }
        .into());
    }
    Ok(())
}
