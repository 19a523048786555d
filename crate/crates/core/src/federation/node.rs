use super::{Algorithm, FederationConfig, FederationError, WireMessage};
use crate::client::{admm_client_step, admm_multiplier_update, sm_client_step, ClientConfig, ClientError, ClientModel};
use crate::solver::SolverConfig;
use crate::svm::{DatasetView, GlobalModel};

/// Client side of the protocol. Holds the local data and, for the ADMM
/// modes, the local model and multipliers between rounds.
#[derive(Debug, Clone)]
pub struct ClientNode {
    index: usize,
    algorithm: Algorithm,
    cfg: ClientConfig,
    solver: SolverConfig,
    data: DatasetView,
    state: ClientModel,
    finished: bool,
}

impl ClientNode {
    pub fn new(
        index: usize,
        algorithm: Algorithm,
        cfg: ClientConfig,
        solver: SolverConfig,
        data: DatasetView,
        state: ClientModel,
    ) -> Self {
        Self {
            index,
            algorithm,
            cfg,
            solver,
            data,
            state,
            finished: false,
        }
    }

    pub fn from_config(index: usize, fed: &FederationConfig, data: DatasetView) -> Result<Self, FederationError> {
        if index >= fed.num_clients() {
            return Err(FederationError::Config(format!("no config for client {index}")));
        }
        let dim = data.dim();
        let state = ClientModel::new(fed.initial_model(dim).w, fed.initial_multipliers(dim));
        Ok(Self::new(index, fed.algorithm, fed.effective_client(index), fed.solver, data, state))
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn state(&self) -> &ClientModel {
        &self.state
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Reacts to one server message; `RoundStart` yields the reply to send back.
    pub fn handle(&mut self, msg: &WireMessage) -> Result<Option<WireMessage>, ClientError> {
        let g = self.index as u32;
        match msg {
            WireMessage::RoundStart { w, .. } => {
                let w = GlobalModel::new(w.clone());
                match self.algorithm {
                    Algorithm::Sm => {
                        let (v_g, _) = sm_client_step(&w, &self.data, &self.cfg, &self.solver)?;
                        Ok(Some(WireMessage::SmResult { g, v_g }))
                    }
                    Algorithm::Admm | Algorithm::AdmmSc => {
                        self.state = admm_client_step(&w, &self.state, &self.data, &self.cfg, &self.solver)?;
                        Ok(Some(WireMessage::AdmmResult {
                            g,
                            w_g: self.state.w_g.clone(),
                        }))
                    }
                }
            }
            WireMessage::Broadcast { w, .. } => {
                if self.algorithm.is_admm() {
                    self.state = admm_multiplier_update(&self.state, &GlobalModel::new(w.clone()));
                }
                Ok(None)
            }
            WireMessage::Shutdown => {
                self.finished = true;
                Ok(None)
            }
            WireMessage::SmResult { .. } | WireMessage::AdmmResult { .. } => {
                Err(ClientError::Config("clients do not accept result messages".into()))
            }
        }
    }
}
