//! Synchronous federated training: every round the server sends the global
//! model to all clients, waits for all of their results and updates.

mod node;
pub mod tcp;
pub mod wire;

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use node::ClientNode;
pub use tcp::{run_tcp_client, TcpServerTransport};
pub use wire::{WireError, WireMessage};

use crate::client::{admm_multiplier_update, worst_case_risk_dual, ClientConfig, ClientError, ClientModel};
use crate::solver::SolverConfig;
use crate::svm::{DatasetView, GlobalModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "ADMM")]
    Admm,
    #[serde(rename = "ADMM_SC")]
    AdmmSc,
}

impl Algorithm {
    pub fn is_admm(self) -> bool {
        matches!(self, Algorithm::Admm | Algorithm::AdmmSc)
    }
}

#[derive(Debug, Error)]
pub enum FederationError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("client {g} failed: {source}")]
    Client { g: usize, source: ClientError },
    #[error("round {round}: expected {expected} client results, got {got}")]
    Barrier { round: usize, expected: usize, got: usize },
    #[error("{peer}: {source}")]
    Wire { peer: String, source: WireError },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Data(#[from] ClientError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub algorithm: Algorithm,
    /// SM step size at round 1; round `t` uses `gamma0 / t`.
    pub gamma0: f64,
    pub rho: f64,
    /// One entry per client; the weights are the `alpha` fields.
    pub clients: Vec<ClientConfig>,
    /// Defaults to zeros.
    pub w0: Option<Vec<f64>>,
    /// Initial multipliers shared by all clients; defaults to ones.
    pub mu0: Option<Vec<f64>>,
    pub solver: SolverConfig,
}

impl FederationConfig {
    pub fn new(algorithm: Algorithm, rounds: usize, clients: Vec<ClientConfig>) -> Self {
        Self {
            rounds,
            algorithm,
            gamma0: 1.0,
            rho: 1.0,
            clients,
            w0: None,
            mu0: None,
            solver: SolverConfig::default(),
        }
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn alphas(&self) -> Vec<f64> {
        self.clients.iter().map(|c| c.alpha).collect()
    }

    pub fn initial_model(&self, dim: usize) -> GlobalModel {
        GlobalModel::new(self.w0.clone().unwrap_or_else(|| vec![0.0; dim]))
    }

    pub fn initial_multipliers(&self, dim: usize) -> Vec<f64> {
        self.mu0.clone().unwrap_or_else(|| vec![1.0; dim])
    }

    /// Client `g`'s config as used in the run: ADMM modes take the
    /// federation's `rho`, and plain ADMM drops `tau`.
    pub fn effective_client(&self, g: usize) -> ClientConfig {
        let mut c = self.clients[g];
        c.rho = self.rho;
        if self.algorithm == Algorithm::Admm {
            c.tau = 0.0;
        }
        c
    }

    pub fn validate(&self, dim: usize) -> Result<(), FederationError> {
        let bad = |m: String| Err(FederationError::Config(m));
        if self.clients.is_empty() {
            return bad("at least one client is required".into());
        }
        let sum: f64 = self.alphas().iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return bad(format!("client weights sum to {sum}, not 1"));
        }
        for g in 0..self.clients.len() {
            self.effective_client(g)
                .validate()
                .map_err(|e| FederationError::Config(format!("client {g}: {e}")))?;
        }
        match self.algorithm {
            Algorithm::Sm if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) => {
                return bad("gamma0 must be positive".into());
            }
            Algorithm::Admm | Algorithm::AdmmSc if !(self.rho > 0.0 && self.rho.is_finite()) => {
                return bad("rho must be positive".into());
            }
            Algorithm::AdmmSc if self.clients.iter().any(|c| !(c.tau > 0.0)) => {
                return bad("ADMM_SC needs tau > 0 for every client".into());
            }
            _ => {}
        }
        if self.w0.as_ref().is_some_and(|w| w.len() != dim) {
            return bad(format!("w0 must have length {dim}"));
        }
        if self.mu0.as_ref().is_some_and(|m| m.len() != dim) {
            return bad(format!("mu0 must have length {dim}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub t: usize,
    pub w_after: Vec<f64>,
    /// `sum_g alpha_g * worst_case_risk_dual(w_after)`.
    pub global_objective: f64,
    /// `max_g ||w_g - w||_2`; zero for SM.
    pub consensus_residual: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationRun {
    /// Model after the last round.
    pub model: GlobalModel,
    /// Model with the lowest recorded global objective (`w0` when no round ran).
    pub best: GlobalModel,
    pub best_round: usize,
    pub traces: Vec<RoundTrace>,
}

/// `w - gamma0 / t * sum_g alpha_g v_g`.
pub fn sm_server_update(
    w: &GlobalModel,
    alphas: &[f64],
    subgradients: &[Vec<f64>],
    t: usize,
    gamma0: f64,
) -> Result<GlobalModel, FederationError> {
    if subgradients.len() != alphas.len() {
        return Err(FederationError::Barrier {
            round: t,
            expected: alphas.len(),
            got: subgradients.len(),
        });
    }
    if t == 0 {
        return Err(FederationError::Config("rounds are numbered from 1".into()));
    }
    let step = gamma0 / t as f64;
    let mut out = w.w.clone();
    for (a, v) in alphas.iter().zip(subgradients) {
        if v.len() != out.len() {
            return Err(FederationError::Protocol(format!("subgradient of length {}", v.len())));
        }
        for (o, vi) in out.iter_mut().zip(v) {
            *o -= step * a * vi;
        }
    }
    Ok(GlobalModel::new(out))
}

/// `sum_g alpha_g (w_g + mu_g)`.
pub fn admm_server_update(alphas: &[f64], clients: &[ClientModel]) -> Result<GlobalModel, FederationError> {
    if clients.len() != alphas.len() || clients.is_empty() {
        return Err(FederationError::Barrier {
            round: 0,
            expected: alphas.len(),
            got: clients.len(),
        });
    }
    let dim = clients[0].w_g.len();
    let mut out = vec![0.0; dim];
    for (a, c) in alphas.iter().zip(clients) {
        if c.w_g.len() != dim || c.mu_g.len() != dim {
            return Err(FederationError::Protocol("client vectors differ in length".into()));
        }
        for p in 0..dim {
            out[p] += a * (c.w_g[p] + c.mu_g[p]);
        }
    }
    Ok(GlobalModel::new(out))
}

/// Largest penalty for which the strongly convex ADMM variant is guaranteed
/// to converge:
/// `min{ 4 a_g tau_g / (g (2G + 1 - g)) for g < G,  4 a_G tau_G / ((G - 1)(G + 2)) }`.
pub fn rho_upper_bound(alphas: &[f64], taus: &[f64]) -> Result<f64, FederationError> {
    let big_g = alphas.len();
    if big_g < 2 {
        return Err(FederationError::Config("the bound needs at least two clients".into()));
    }
    if taus.len() != big_g {
        return Err(FederationError::Config("one tau per client is required".into()));
    }
    if alphas.iter().chain(taus).any(|v| !(*v > 0.0)) {
        return Err(FederationError::Config("weights and taus must be positive".into()));
    }
    let gf = big_g as f64;
    let last = 4.0 * alphas[big_g - 1] * taus[big_g - 1] / ((gf - 1.0) * (gf + 2.0));
    Ok((1..big_g)
        .map(|g| {
            let k = g as f64;
            4.0 * alphas[g - 1] * taus[g - 1] / (k * (2.0 * gf + 1.0 - k))
        })
        .fold(last, f64::min))
}

/// Server side of a round: delivers a message to every client and collects
/// exactly one reply from each.
pub trait Transport {
    fn num_clients(&self) -> usize;

    /// Sends `RoundStart` and returns the replies ordered by client index.
    fn round(&mut self, t: usize, w: &GlobalModel) -> Result<Vec<WireMessage>, FederationError>;

    fn broadcast(&mut self, t: usize, w: &GlobalModel) -> Result<(), FederationError>;

    fn shutdown(&mut self) -> Result<(), FederationError>;
}

/// Clients held in memory; their steps within a round run on the rayon pool.
pub struct InProcessTransport {
    nodes: Vec<ClientNode>,
}

impl InProcessTransport {
    pub fn new(nodes: Vec<ClientNode>) -> Self {
        Self { nodes }
    }

    /// One node per dataset, configured from `cfg`.
    pub fn from_config(cfg: &FederationConfig, data: &[DatasetView]) -> Result<Self, FederationError> {
        let nodes = (0..data.len())
            .map(|g| ClientNode::from_config(g, cfg, data[g].clone()))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(nodes))
    }

    pub fn nodes(&self) -> &[ClientNode] {
        &self.nodes
    }

    fn deliver(&mut self, msg: &WireMessage) -> Result<Vec<Option<WireMessage>>, FederationError> {
        use rayon::prelude::*;
        self.nodes
            .par_iter_mut()
            .map(|n| n.handle(msg).map_err(|source| FederationError::Client { g: n.index(), source }))
            .collect()
    }
}

impl Transport for InProcessTransport {
    fn num_clients(&self) -> usize {
        self.nodes.len()
    }

    fn round(&mut self, t: usize, w: &GlobalModel) -> Result<Vec<WireMessage>, FederationError> {
        let replies = self.deliver(&WireMessage::RoundStart {
            t: t as u64,
            w: w.w.clone(),
        })?;
        replies
            .into_iter()
            .enumerate()
            .map(|(g, r)| r.ok_or_else(|| FederationError::Protocol(format!("client {g} sent no result"))))
            .collect()
    }

    fn broadcast(&mut self, t: usize, w: &GlobalModel) -> Result<(), FederationError> {
        self.deliver(&WireMessage::Broadcast {
            t: t as u64,
            w: w.w.clone(),
        })
        .map(|_| ())
    }

    fn shutdown(&mut self) -> Result<(), FederationError> {
        self.deliver(&WireMessage::Shutdown).map(|_| ())
    }
}

/// `sum_g alpha_g * worst_case_risk_dual(w; data_g)`.
pub fn global_objective(w: &GlobalModel, cfg: &FederationConfig, data: &[DatasetView]) -> Result<f64, FederationError> {
    let mut total = 0.0;
    for (g, d) in data.iter().enumerate() {
        let c = &cfg.clients[g];
        total += c.alpha * worst_case_risk_dual(w, d, c).map_err(|source| FederationError::Client { g, source })?;
    }
    Ok(total)
}

/// Runs `cfg.rounds` synchronous rounds. `data` is used for validation and
/// the objective telemetry; the clients behind `transport` hold their own
/// copies.
pub fn run_federation(
    cfg: &FederationConfig,
    data: &[DatasetView],
    transport: &mut dyn Transport,
) -> Result<FederationRun, FederationError> {
    let big_g = cfg.num_clients();
    if data.len() != big_g || transport.num_clients() != big_g {
        return Err(FederationError::Config(format!(
            "{} client configs, {} datasets, {} connected clients",
            big_g,
            data.len(),
            transport.num_clients()
        )));
    }
    let dim = data.first().map(|d| d.dim()).unwrap_or(0);
    if data.iter().any(|d| d.dim() != dim) {
        return Err(FederationError::Config("client datasets differ in dimension".into()));
    }
    cfg.validate(dim)?;
    if cfg.algorithm == Algorithm::AdmmSc && big_g >= 2 {
        let taus: Vec<f64> = cfg.clients.iter().map(|c| c.tau).collect();
        let bound = rho_upper_bound(&cfg.alphas(), &taus)?;
        if cfg.rho > bound {
            log::warn!("rho = {} exceeds the convergence bound {bound}", cfg.rho);
        }
    }

    let alphas = cfg.alphas();
    let mut w = cfg.initial_model(dim);
    let mut mus = vec![cfg.initial_multipliers(dim); big_g];
    let mut best = w.clone();
    let mut best_round = 0;
    let mut best_obj = f64::INFINITY;
    let mut traces = Vec::with_capacity(cfg.rounds);

    let result = (|| {
        for t in 1..=cfg.rounds {
            let started = Instant::now();
            let replies = transport.round(t, &w)?;
            if replies.len() != big_g {
                return Err(FederationError::Barrier {
                    round: t,
                    expected: big_g,
                    got: replies.len(),
                });
            }
            let mut residual = 0.0;
            w = match cfg.algorithm {
                Algorithm::Sm => {
                    let vs = collect(replies, |m| match m {
                        WireMessage::SmResult { g, v_g } => Some((g, v_g)),
                        _ => None,
                    })?;
                    sm_server_update(&w, &alphas, &vs, t, cfg.gamma0)?
                }
                Algorithm::Admm | Algorithm::AdmmSc => {
                    let ws = collect(replies, |m| match m {
                        WireMessage::AdmmResult { g, w_g } => Some((g, w_g)),
                        _ => None,
                    })?;
                    let locals: Vec<ClientModel> =
                        ws.into_iter().zip(&mus).map(|(w_g, mu)| ClientModel::new(w_g, mu.clone())).collect();
                    let next = admm_server_update(&alphas, &locals)?;
                    for (g, local) in locals.iter().enumerate() {
                        let d: f64 = local.w_g.iter().zip(&next.w).map(|(a, b)| (a - b) * (a - b)).sum();
                        residual = f64::max(residual, d.sqrt());
                        mus[g] = admm_multiplier_update(local, &next).mu_g;
                    }
                    next
                }
            };
            transport.broadcast(t, &w)?;
            if !w.is_finite() {
                return Err(FederationError::Protocol(format!("global model became non-finite in round {t}")));
            }
            let objective = global_objective(&w, cfg, data)?;
            if objective < best_obj {
                best_obj = objective;
                best = w.clone();
                best_round = t;
            }
            traces.push(RoundTrace {
                t,
                w_after: w.w.clone(),
                global_objective: objective,
                consensus_residual: residual,
                wall_time: started.elapsed().as_secs_f64(),
            });
            log::debug!("round {t}: objective {objective:.6e}, residual {residual:.3e}");
        }
        Ok(())
    })();
    let closed = transport.shutdown();
    result?;
    closed?;
    Ok(FederationRun {
        model: w,
        best,
        best_round,
        traces,
    })
}

/// Orders replies by client index and checks that each client answered
/// exactly once with the expected kind of message.
fn collect(
    replies: Vec<WireMessage>,
    pick: impl Fn(WireMessage) -> Option<(u32, Vec<f64>)>,
) -> Result<Vec<Vec<f64>>, FederationError> {
    let n = replies.len();
    let mut out: Vec<Option<Vec<f64>>> = vec![None; n];
    for m in replies {
        let kind = format!("{m:?}");
        let (g, v) = pick(m).ok_or_else(|| FederationError::Protocol(format!("unexpected reply {kind}")))?;
        let slot = out
            .get_mut(g as usize)
            .ok_or_else(|| FederationError::Protocol(format!("reply from unknown client {g}")))?;
        if slot.replace(v).is_some() {
            return Err(FederationError::Protocol(format!("client {g} replied twice")));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(g, v)| v.ok_or_else(|| FederationError::Protocol(format!("no reply from client {g}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sm_update_examples() {
        let w = GlobalModel::new(vec![0.3, -1.0]);
        let same = sm_server_update(&w, &[0.5, 0.5], &[vec![0.0, 0.0], vec![0.0, 0.0]], 3, 10.0).unwrap();
        assert_eq!(same, w);
        let step = sm_server_update(&w, &[1.0], &[vec![1.0, 0.0]], 2, 1.0).unwrap();
        assert_eq!(step.w, vec![0.3 - 0.5, -1.0]);
        assert!(matches!(
            sm_server_update(&w, &[0.5, 0.5], &[vec![0.0, 0.0]], 1, 1.0),
            Err(FederationError::Barrier { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn admm_update_examples() {
        let a = [0.5, 0.5];
        let w = admm_server_update(
            &a,
            &[ClientModel::new(vec![1.0, 0.0], vec![0.0; 2]), ClientModel::new(vec![0.0, 1.0], vec![0.0; 2])],
        )
        .unwrap();
        assert_eq!(w.w, vec![0.5, 0.5]);

        let bar = vec![0.25, -4.0];
        let consensus = admm_server_update(&a, &[ClientModel::new(bar.clone(), vec![0.0; 2]), ClientModel::new(bar.clone(), vec![0.0; 2])]).unwrap();
        assert_eq!(consensus.w, bar);

        let mus = [vec![0.2, 0.6], vec![-1.0, 0.4]];
        let with = admm_server_update(&a, &[ClientModel::new(bar.clone(), mus[0].clone()), ClientModel::new(bar.clone(), mus[1].clone())]).unwrap();
        for p in 0..2 {
            let shift = 0.5 * mus[0][p] + 0.5 * mus[1][p];
            assert!((with.w[p] - consensus.w[p] - shift).abs() < 1e-15);
        }
        assert!(admm_server_update(&a, &[ClientModel::new(bar, vec![0.0; 2])]).is_err());
    }

    #[test]
    fn rho_bound_examples() {
        assert_eq!(rho_upper_bound(&[0.5, 0.5], &[1.0, 1.0]).unwrap(), 0.5);
        let a = [0.7, 0.15, 0.1, 0.05];
        let b1 = rho_upper_bound(&a, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b2 = rho_upper_bound(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!(b1 > 0.0 && (b2 - 2.0 * b1).abs() < 1e-15);
        assert!(rho_upper_bound(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn config_checks_the_weights() {
        let mut c = ClientConfig::new(0.1, 1.0, crate::svm::NormKind::L1);
        c.alpha = 0.4;
        let cfg = FederationConfig::new(Algorithm::Sm, 1, vec![c, c]);
        assert!(matches!(cfg.validate(2), Err(FederationError::Config(_))));
    }
}
