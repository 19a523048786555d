//! Experiment pipeline: data preparation, hyperparameter search by k-fold
//! cross-validation, repeated train/test runs and result files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{
    train_central_dr_svm, train_fed_l2_svm, BaselineError, CentralDrConfig, FedBaselineConfig, FedVariant,
};
use crate::client::ClientConfig;
use crate::data::{
    apply_client_shift, generate_synthetic, load_csv, partition, train_test_split, with_intercept, DataError,
    MinMax, PartitionPlan, PartitionScheme, SyntheticSpec,
};
use crate::federation::{run_federation, Algorithm, FederationConfig, FederationError, InProcessTransport};
use crate::metrics::{evaluate, Metrics};
use crate::solver::SolverConfig;
use crate::svm::{DatasetView, GlobalModel, Label, NormKind, SvmError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Federation(#[from] FederationError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "SM")]
    Sm,
    #[serde(rename = "ADMM")]
    Admm,
    #[serde(rename = "ADMM_SC")]
    AdmmSc,
    CentralDR,
    FedSGD,
    FedAvg,
    FedProx,
}

impl ModelKind {
    pub fn algorithm(self) -> Option<Algorithm> {
        match self {
            ModelKind::Sm => Some(Algorithm::Sm),
            ModelKind::Admm => Some(Algorithm::Admm),
            ModelKind::AdmmSc => Some(Algorithm::AdmmSc),
            _ => None,
        }
    }

    fn fed_variant(self) -> Option<FedVariant> {
        match self {
            ModelKind::FedSGD => Some(FedVariant::FedSGD),
            ModelKind::FedAvg => Some(FedVariant::FedAvg),
            ModelKind::FedProx => Some(FedVariant::FedProx),
            _ => None,
        }
    }

    /// L-infinity transport cost for SM, L1 otherwise.
    pub fn default_norm(self) -> NormKind {
        match self {
            ModelKind::Sm => NormKind::LInf,
            _ => NormKind::L1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_column: String,
        positive_label: String,
        /// Share of the rows used for training.
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
    },
    Synthetic {
        /// Training samples.
        n: usize,
        p: usize,
        /// Test samples; defaults to `round(n * 3 / 7)`, a 70/30 split.
        test_size: Option<usize>,
        #[serde(default = "default_side")]
        side: f64,
        #[serde(default)]
        client_shift: f64,
    },
}

fn default_train_fraction() -> f64 {
    0.7
}

fn default_side() -> f64 {
    2.4
}

/// Candidate values per knob; missing knobs take the model's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub rounds: Option<Vec<usize>>,
    pub rho: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    /// Radius factor: `eps_g = 1 / (beta * N_g)`.
    pub beta: Option<Vec<f64>>,
    pub kappa: Option<Vec<f64>>,
    /// Radius of the centralized model.
    pub epsilon: Option<Vec<f64>>,
}

/// One point of the grid. Knobs a model does not use keep their defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub rounds: usize,
    pub rho: f64,
    pub gamma: f64,
    pub beta: f64,
    pub kappa: f64,
    pub epsilon: f64,
}

/// Grid with every knob resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub rounds: Vec<usize>,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
    pub epsilon: Vec<f64>,
}

const ADMM_ROUNDS: [usize; 8] = [5, 10, 20, 60, 100, 140, 180, 220];

impl Grid {
    pub fn defaults(model: ModelKind) -> Self {
        let base = Grid {
            rounds: vec![0],
            rho: vec![1e-2],
            gamma: vec![1.0],
            beta: vec![10.0],
            kappa: vec![1.0],
            epsilon: vec![1e-2],
        };
        match model {
            ModelKind::Sm => Grid {
                rounds: vec![100, 140, 180, 220],
                gamma: vec![1e0, 1e1, 1e2, 1e3],
                ..base
            },
            ModelKind::Admm | ModelKind::AdmmSc => Grid {
                rounds: ADMM_ROUNDS.to_vec(),
                rho: vec![1e-3, 1e-2, 1e-1, 1e0],
                ..base
            },
            ModelKind::CentralDR => Grid {
                epsilon: vec![1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
                kappa: vec![0.1, 0.25, 0.5, 0.75, 1.0],
                ..base
            },
            ModelKind::FedSGD | ModelKind::FedAvg | ModelKind::FedProx => Grid {
                rounds: ADMM_ROUNDS.to_vec(),
                gamma: vec![1e-3, 1e-2, 1e-1, 1e0],
                ..base
            },
        }
    }

    pub fn resolve(model: ModelKind, spec: &GridSpec) -> Self {
        let d = Self::defaults(model);
        Grid {
            rounds: spec.rounds.clone().unwrap_or(d.rounds),
            rho: spec.rho.clone().unwrap_or(d.rho),
            gamma: spec.gamma.clone().unwrap_or(d.gamma),
            beta: spec.beta.clone().unwrap_or(d.beta),
            kappa: spec.kappa.clone().unwrap_or(d.kappa),
            epsilon: spec.epsilon.clone().unwrap_or(d.epsilon),
        }
    }

    /// Points with everything but `rounds` fixed, in grid order.
    fn bases(&self) -> Vec<HyperParams> {
        let mut out = Vec::new();
        for &rho in &self.rho {
            for &gamma in &self.gamma {
                for &beta in &self.beta {
                    for &kappa in &self.kappa {
                        for &epsilon in &self.epsilon {
                            out.push(HyperParams {
                                rounds: 0,
                                rho,
                                gamma,
                                beta,
                                kappa,
                                epsilon,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// All points; `rounds` varies fastest.
    pub fn points(&self) -> Vec<HyperParams> {
        self.bases()
            .into_iter()
            .flat_map(|b| self.rounds.iter().map(move |&rounds| HyperParams { rounds, ..b }))
            .collect()
    }

    pub fn validate(&self, model: ModelKind) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        let lists: [(&str, &[f64]); 5] = [
            ("rho", &self.rho),
            ("gamma", &self.gamma),
            ("beta", &self.beta),
            ("kappa", &self.kappa),
            ("epsilon", &self.epsilon),
        ];
        for (name, l) in lists {
            if l.is_empty() {
                return bad(&format!("grid.{name} is empty"));
            }
            if l.iter().any(|v| !v.is_finite() || (*v <= 0.0 && name != "kappa") || *v < 0.0) {
                return bad(&format!("grid.{name} needs positive values (kappa may be 0)"));
            }
        }
        if self.rounds.is_empty() {
            return bad("grid.rounds is empty");
        }
        if model != ModelKind::CentralDR && self.rounds.contains(&0) {
            return bad("grid.rounds must be positive for federated models");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dataset: DatasetSource,
    #[serde(default = "default_partition")]
    pub partition: PartitionScheme,
    #[serde(default = "default_clients")]
    pub clients: usize,
    /// Transport-cost norm; defaults per model.
    pub norm: Option<NormKind>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default = "default_true")]
    pub cv: bool,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub seed: u64,
    /// Explicit per-repetition seeds; otherwise `seed + i`.
    pub seeds: Option<Vec<u64>>,
    /// Append a constant-1 feature after scaling.
    #[serde(default = "default_true")]
    pub intercept: bool,
    pub local_epochs: Option<usize>,
    pub batch_fraction: Option<f64>,
    pub prox_mu: Option<f64>,
    /// Strong-convexity weight per client for ADMM_SC, as a multiple of rho.
    #[serde(default = "default_tau_factor")]
    pub tau_factor: f64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    /// Result document path; the per-round CSV is written next to it.
    pub output: Option<PathBuf>,
    #[serde(skip)]
    pub source_text: String,
}

fn default_partition() -> PartitionScheme {
    PartitionScheme::Even
}

fn default_clients() -> usize {
    4
}

fn default_true() -> bool {
    true
}

fn default_folds() -> usize {
    5
}

fn default_repetitions() -> usize {
    10
}

fn default_tau_factor() -> f64 {
    18.0
}

impl ExperimentConfig {
    /// Parses TOML and keeps the text for the result document.
    pub fn from_toml_str(text: &str) -> Result<Self, ExperimentError> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
        cfg.source_text = text.to_string();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn grid(&self) -> Grid {
        Grid::resolve(self.model, &self.grid)
    }

    pub fn norm(&self) -> NormKind {
        self.norm.unwrap_or_else(|| self.model.default_norm())
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.unwrap_or_default()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.repetitions as u64).map(|i| self.seed + i).collect())
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.clients == 0 {
            return bad("clients must be at least 1".into());
        }
        if self.cv && self.cv_folds < 2 {
            return bad("cv_folds must be at least 2 when cv is enabled".into());
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.repetitions {
                return bad(format!("{} seeds for {} repetitions", s.len(), self.repetitions));
            }
        }
        if let DatasetSource::Csv { train_fraction, .. } = &self.dataset {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return bad("train_fraction must lie in (0, 1)".into());
            }
        }
        if !(self.tau_factor > 0.0) {
            return bad("tau_factor must be positive".into());
        }
        self.grid().validate(self.model)?;
        if let Some(v) = self.model.fed_variant() {
            self.fed_config(v, 1.0, 1)?.validate()?;
        }
        Ok(())
    }

    fn fed_config(&self, variant: FedVariant, gamma0: f64, rounds: usize) -> Result<FedBaselineConfig, ExperimentError> {
        let mut c = FedBaselineConfig::new(variant, gamma0, rounds);
        if let Some(e) = self.local_epochs {
            c.local_epochs = e;
        }
        if let Some(b) = self.batch_fraction {
            c.batch_fraction = b;
        }
        if let Some(m) = self.prox_mu {
            c.prox_mu = m;
        }
        Ok(c)
    }
}

/// Training and test data of one repetition, scaled into the unit box.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub clients: Vec<DatasetView>,
    pub test: DatasetView,
    pub scaler: MinMax,
    pub class_counts: Vec<(usize, usize)>,
    pub flipped: usize,
}

/// Split, partition (and corrupt), then scale with statistics of the
/// training clients only. The test split is never modified.
pub fn prepare_data(cfg: &ExperimentConfig, seed: u64) -> Result<PreparedData, ExperimentError> {
    let (train, test, shift) = match &cfg.dataset {
        DatasetSource::Csv {
            path,
            label_column,
            positive_label,
            train_fraction,
        } => {
            let all = load_csv(path, label_column, positive_label)?.to_dataset()?;
            let n_train = (train_fraction * all.len() as f64).round() as usize;
            let (a, b) = train_test_split(&all, n_train, seed);
            (a, b, 0.0)
        }
        DatasetSource::Synthetic {
            n,
            p,
            test_size,
            side,
            client_shift,
        } => {
            let n_test = test_size.unwrap_or_else(|| (*n as f64 * 3.0 / 7.0).round() as usize);
            let spec = SyntheticSpec {
                n: n + n_test,
                p: *p,
                clients: cfg.clients,
                side: *side,
                seed,
                client_shift: *client_shift,
            };
            let all = generate_synthetic(&spec)?;
            let (a, b) = train_test_split(&all, *n, seed);
            (a, b, *client_shift)
        }
    };
    let plan = PartitionPlan {
        scheme: cfg.partition.clone(),
        clients: cfg.clients,
        seed,
    };
    let part = partition(&train, &plan)?;
    let clients = if shift != 0.0 {
        apply_client_shift(&part.clients, shift)?
    } else {
        part.clients
    };
    let scaler = MinMax::fit(&DatasetView::concat(&clients)?);
    let finish = |d: &DatasetView| -> Result<DatasetView, SvmError> {
        let s = scaler.apply(d)?;
        if cfg.intercept {
            with_intercept(&s)
        } else {
            Ok(s)
        }
    };
    Ok(PreparedData {
        clients: clients.iter().map(finish).collect::<Result<_, _>>()?,
        test: finish(&test)?,
        scaler,
        class_counts: part.class_counts,
        flipped: part.flipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    /// Training objective of the distributionally robust models.
    pub objective: Option<f64>,
    pub consensus_residual: f64,
    pub wall_time: f64,
}

/// A model trained for `rounds` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub params: HyperParams,
    pub model: GlobalModel,
    pub trace: Vec<TraceRow>,
}

/// Client configs of a federated run: equal weights, `eps_g = 1 / (beta N_g)`.
pub fn federated_clients(clients: &[DatasetView], params: &HyperParams, norm: NormKind, tau: f64) -> Vec<ClientConfig> {
    let g = clients.len() as f64;
    clients
        .iter()
        .map(|d| ClientConfig {
            epsilon: 1.0 / (params.beta * d.len() as f64),
            kappa: params.kappa,
            alpha: 1.0 / g,
            norm,
            tau,
            rho: params.rho,
        })
        .collect()
}

/// Trains once with the largest round count in `rounds` and returns the
/// model at each requested count (SM: the best iterate so far).
pub fn train_path(
    cfg: &ExperimentConfig,
    base: &HyperParams,
    rounds: &[usize],
    clients: &[DatasetView],
    seed: u64,
) -> Result<Vec<Trained>, ExperimentError> {
    let t_max = rounds.iter().copied().max().unwrap_or(0);
    let norm = cfg.norm();
    let at = |t: usize| HyperParams { rounds: t, ..*base };
    if let Some(alg) = cfg.model.algorithm() {
        let tau = if alg == Algorithm::AdmmSc { cfg.tau_factor * base.rho } else { 0.0 };
        let mut fed = FederationConfig::new(alg, t_max, federated_clients(clients, base, norm, tau));
        fed.gamma0 = base.gamma;
        fed.rho = base.rho;
        fed.solver = cfg.solver();
        let mut transport = InProcessTransport::from_config(&fed, clients)?;
        let run = run_federation(&fed, clients, &mut transport)?;
        let rows: Vec<TraceRow> = run
            .traces
            .iter()
            .map(|t| TraceRow {
                round: t.t,
                objective: Some(t.global_objective),
                consensus_residual: t.consensus_residual,
                wall_time: t.wall_time,
            })
            .collect();
        return Ok(rounds
            .iter()
            .map(|&t| {
                let upto = &run.traces[..t];
                let w = if alg == Algorithm::Sm {
                    upto.iter()
                        .min_by(|a, b| a.global_objective.total_cmp(&b.global_objective))
                        .map(|r| r.w_after.clone())
                } else {
                    upto.last().map(|r| r.w_after.clone())
                };
                Trained {
                    params: at(t),
                    model: w.map(GlobalModel::new).unwrap_or_else(|| fed.initial_model(clients[0].dim())),
                    trace: rows[..t].to_vec(),
                }
            })
            .collect());
    }
    if let Some(variant) = cfg.model.fed_variant() {
        let fc = cfg.fed_config(variant, base.gamma, t_max)?;
        let run = train_fed_l2_svm(clients, &fc, seed)?;
        return Ok(rounds
            .iter()
            .map(|&t| Trained {
                params: at(t),
                model: GlobalModel::new(run.snapshots[t - 1].clone()),
                trace: (1..=t)
                    .map(|round| TraceRow {
                        round,
                        objective: None,
                        consensus_residual: 0.0,
                        wall_time: 0.0,
                    })
                    .collect(),
            })
            .collect());
    }
    let pooled = DatasetView::concat(clients)?;
    let central = CentralDrConfig {
        epsilon: base.epsilon,
        kappa: base.kappa,
        norm,
    };
    let model = train_central_dr_svm(&pooled, &central, &cfg.solver())?;
    Ok(rounds
        .iter()
        .map(|&t| Trained {
            params: at(t),
            model: model.clone(),
            trace: Vec::new(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub chosen: HyperParams,
    /// Mean validation F1 per grid point, in grid order.
    pub scores: Vec<(HyperParams, f64)>,
    /// Fold assignments redrawn because a split lacked a class.
    pub resampled: usize,
}

const MAX_FOLD_DRAWS: usize = 20;

/// Per-client k-fold split: fold `f` validates on the `f`-th part of every
/// client and trains on the rest. Redraws the assignment (seed + 1, ...)
/// until every validation and training union holds both classes.
fn draw_folds(clients: &[DatasetView], k: usize, seed: u64) -> Result<(Vec<Vec<Vec<usize>>>, usize), ExperimentError> {
    if let Some(g) = clients.iter().position(|c| c.len() < k) {
        return Err(ExperimentError::Config(format!("client {g} has fewer samples than the {k} folds")));
    }
    for attempt in 0..MAX_FOLD_DRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt as u64));
        // folds[g][i] = fold of sample i at client g
        let folds: Vec<Vec<usize>> = clients
            .iter()
            .map(|c| {
                let mut idx: Vec<usize> = (0..c.len()).collect();
                idx.shuffle(&mut rng);
                let mut f = vec![0; c.len()];
                for (pos, &i) in idx.iter().enumerate() {
                    f[i] = pos % k;
                }
                f
            })
            .collect();
        let both = |pick: &dyn Fn(usize, usize) -> bool, fold: usize| {
            let mut seen = [false; 2];
            for (g, c) in clients.iter().enumerate() {
                for (i, s) in c.samples().iter().enumerate() {
                    if pick(folds[g][i], fold) {
                        seen[(s.y == Label::Positive) as usize] = true;
                    }
                }
            }
            seen[0] && seen[1]
        };
        let ok = (0..k).all(|f| both(&|a, b| a == b, f) && both(&|a, b| a != b, f));
        if ok {
            let grouped = (0..k)
                .map(|f| {
                    folds
                        .iter()
                        .map(|fg| (0..fg.len()).filter(|&i| fg[i] == f).collect())
                        .collect()
                })
                .collect();
            if attempt > 0 {
                log::info!("fold assignment redrawn {attempt} time(s)");
            }
            return Ok((grouped, attempt));
        }
    }
    Err(ExperimentError::Config(format!(
        "no {k}-fold split with both classes in every fold after {MAX_FOLD_DRAWS} draws"
    )))
}

/// Exhaustive grid search; the point with the highest mean validation F1
/// wins, ties going to the earlier grid point.
pub fn cross_validate(cfg: &ExperimentConfig, clients: &[DatasetView], seed: u64) -> Result<CvOutcome, ExperimentError> {
    let grid = cfg.grid();
    let k = cfg.cv_folds;
    let (folds, resampled) = draw_folds(clients, k, seed)?;
    let bases = grid.bases();
    let mut sums = vec![0.0; bases.len() * grid.rounds.len()];
    for val_idx in &folds {
        let mut train = Vec::with_capacity(clients.len());
        let mut val = Vec::new();
        for (g, c) in clients.iter().enumerate() {
            let held: std::collections::HashSet<usize> = val_idx[g].iter().copied().collect();
            let keep: Vec<usize> = (0..c.len()).filter(|i| !held.contains(i)).collect();
            train.push(c.subset(&keep));
            val.push(c.subset(&val_idx[g]));
        }
        let val = DatasetView::concat(&val)?;
        let scores: Vec<Vec<f64>> = bases
            .par_iter()
            .map(|b| -> Result<Vec<f64>, ExperimentError> {
                train_path(cfg, b, &grid.rounds, &train, seed)?
                    .iter()
                    .map(|t| Ok(score(&t.model, &val)?))
                    .collect()
            })
            .collect::<Result<_, _>>()?;
        for (bi, row) in scores.iter().enumerate() {
            for (ti, s) in row.iter().enumerate() {
                sums[bi * grid.rounds.len() + ti] += s;
            }
        }
    }
    let points = grid.points();
    let scores: Vec<(HyperParams, f64)> = points.iter().zip(&sums).map(|(p, s)| (*p, s / k as f64)).collect();
    let mut best = 0;
    for (i, (_, s)) in scores.iter().enumerate() {
        if *s > scores[best].1 {
            best = i;
        }
    }
    Ok(CvOutcome {
        chosen: scores[best].0,
        scores,
        resampled,
    })
}

fn score(model: &GlobalModel, data: &DatasetView) -> Result<f64, SvmError> {
    Ok(evaluate(model, data)?.f1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub seed: u64,
    pub metrics: Option<Metrics>,
    pub error: Option<String>,
    pub chosen: Option<HyperParams>,
    pub cv_resampled: usize,
    pub class_counts: Vec<(usize, usize)>,
    pub flipped: usize,
    pub model: Option<Vec<f64>>,
    pub trace: Vec<TraceRow>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); absent with fewer than two values.
    pub std: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.len() > 1)
            .then(|| (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt());
        Some(Self { mean, std })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// The configuration text exactly as given.
    pub config: String,
    pub model: ModelKind,
    pub repetitions: Vec<RepResult>,
    pub f1: Option<Summary>,
    pub mccr: Option<Summary>,
    pub failures: usize,
}

impl RunResult {
    /// More than 10% of the repetitions failed.
    pub fn partial_failure(&self) -> bool {
        self.failures * 10 > self.repetitions.len()
    }

    pub fn all_failed(&self) -> bool {
        self.failures == self.repetitions.len()
    }
}

/// Chosen hyperparameters for one repetition: by cross-validation, or the
/// first grid point when it is disabled.
pub fn choose_params(cfg: &ExperimentConfig, clients: &[DatasetView], seed: u64) -> Result<(HyperParams, usize), ExperimentError> {
    if cfg.cv {
        let cv = cross_validate(cfg, clients, seed)?;
        Ok((cv.chosen, cv.resampled))
    } else {
        Ok((cfg.grid().points()[0], 0))
    }
}

pub fn run_repetition(cfg: &ExperimentConfig, seed: u64) -> RepResult {
    let started = Instant::now();
    let mut rep = RepResult {
        seed,
        metrics: None,
        error: None,
        chosen: None,
        cv_resampled: 0,
        class_counts: Vec::new(),
        flipped: 0,
        model: None,
        trace: Vec::new(),
        wall_time: 0.0,
    };
    let outcome = (|| -> Result<(), ExperimentError> {
        let data = prepare_data(cfg, seed)?;
        rep.class_counts = data.class_counts.clone();
        rep.flipped = data.flipped;
        let (params, resampled) = choose_params(cfg, &data.clients, seed)?;
        rep.chosen = Some(params);
        rep.cv_resampled = resampled;
        let trained = train_path(cfg, &params, &[params.rounds], &data.clients, seed)?
            .pop()
            .expect("one requested round count");
        rep.metrics = Some(evaluate(&trained.model, &data.test)?);
        rep.model = Some(trained.model.w);
        rep.trace = trained.trace;
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("repetition with seed {seed} failed: {e}");
        rep.error = Some(e.to_string());
    }
    rep.wall_time = started.elapsed().as_secs_f64();
    rep
}

/// Runs every repetition (in parallel) and aggregates the test metrics.
/// Failed repetitions are recorded and excluded from the aggregates.
pub fn run_experiment(cfg: &ExperimentConfig) -> RunResult {
    let reps: Vec<RepResult> = cfg.seeds().par_iter().map(|&s| run_repetition(cfg, s)).collect();
    let ok: Vec<&Metrics> = reps.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let f1: Vec<f64> = ok.iter().map(|m| m.f1).collect();
    let mccr: Vec<f64> = ok.iter().map(|m| m.mccr).collect();
    RunResult {
        config: cfg.source_text.clone(),
        model: cfg.model,
        failures: reps.len() - ok.len(),
        f1: Summary::of(&f1),
        mccr: Summary::of(&mccr),
        repetitions: reps,
    }
}

/// Tunes on one repetition's training split, refits with the chosen
/// parameters and scores the held-out split.
pub fn train_model(cfg: &ExperimentConfig, seed: u64) -> Result<(SavedModel, Metrics), ExperimentError> {
    cfg.validate()?;
    let data = prepare_data(cfg, seed)?;
    let (params, _) = choose_params(cfg, &data.clients, seed)?;
    let trained = train_path(cfg, &params, &[params.rounds], &data.clients, seed)?
        .pop()
        .expect("one round count requested");
    let metrics = evaluate(&trained.model, &data.test)?;
    let saved = SavedModel {
        kind: cfg.model,
        params,
        w: trained.model.w,
        scaler: data.scaler,
        intercept: cfg.intercept,
    };
    Ok((saved, metrics))
}

/// A trained model together with the preprocessing it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub kind: ModelKind,
    pub params: HyperParams,
    pub w: Vec<f64>,
    pub scaler: MinMax,
    pub intercept: bool,
}

impl SavedModel {
    /// Scales raw features the way the training data was scaled.
    pub fn transform(&self, raw: &DatasetView) -> Result<DatasetView, SvmError> {
        let s = self.scaler.apply(raw)?;
        if self.intercept {
            with_intercept(&s)
        } else {
            Ok(s)
        }
    }

    pub fn evaluate_raw(&self, raw: &DatasetView) -> Result<Metrics, SvmError> {
        evaluate(&GlobalModel::new(self.w.clone()), &self.transform(raw)?)
    }
}

/// Path of the per-round CSV written next to a result document.
pub fn rounds_csv_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    path.with_file_name(format!("{stem}_rounds.csv"))
}

/// Writes the JSON result document and the flat per-round CSV.
pub fn emit_results(result: &RunResult, path: &Path) -> Result<(PathBuf, PathBuf), ExperimentError> {
    let out_err = |p: &Path, e: &dyn std::fmt::Display| ExperimentError::Output {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| out_err(dir, &e))?;
    }
    let json = serde_json::to_string_pretty(result).map_err(|e| out_err(path, &e))?;
    std::fs::write(path, json).map_err(|e| out_err(path, &e))?;

    let csv_path = rounds_csv_path(path);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| out_err(&csv_path, &e))?;
    w.write_record(["repetition", "seed", "round", "objective", "consensus_residual", "wall_time"])
        .map_err(|e| out_err(&csv_path, &e))?;
    for (i, rep) in result.repetitions.iter().enumerate() {
        for row in &rep.trace {
            w.write_record([
                i.to_string(),
                rep.seed.to_string(),
                row.round.to_string(),
                row.objective.map(|o| o.to_string()).unwrap_or_default(),
                row.consensus_residual.to_string(),
                row.wall_time.to_string(),
            ])
            .map_err(|e| out_err(&csv_path, &e))?;
        }
    }
    w.flush().map_err(|e| out_err(&csv_path, &e))?;
    Ok((path.to_path_buf(), csv_path))
}

pub fn read_results(path: &Path) -> Result<RunResult, ExperimentError> {
    let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Output {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| ExperimentError::Config(e.to_string()))
}
