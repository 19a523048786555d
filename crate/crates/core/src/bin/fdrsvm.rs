use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use fdrsvm::data::load_csv;
use fdrsvm::experiment::{
    cross_validate, emit_results, prepare_data, run_experiment, train_model, ExperimentConfig, ExperimentError,
    HyperParams, SavedModel,
};
use fdrsvm::federation::wire::DEFAULT_MAX_FRAME;
use fdrsvm::federation::{run_federation, run_tcp_client, ClientNode, FederationConfig, TcpServerTransport};
use fdrsvm::metrics::{evaluate, Metrics};

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser)]
#[command(name = "fdrsvm", version, about = "Federated distributionally robust SVM experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on one repetition's training split and report test metrics.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Seed of the data split (defaults to the config seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Where to save the trained model as JSON.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Evaluate a saved model on a CSV file or on a config's test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, conflicts_with = "csv")]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, requires_all = ["label_column", "positive_label"])]
        csv: Option<PathBuf>,
        #[arg(long)]
        label_column: Option<String>,
        #[arg(long)]
        positive_label: Option<String>,
    },
    /// Run the hyperparameter search and print the scores.
    Cv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run all repetitions and write the result files.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Coordinate a federated run over TCP.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_MAX_FRAME)]
        max_frame: usize,
    },
    /// Act as client `index` of a federated run over TCP.
    Client {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        index: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_MAX_FRAME)]
        max_frame: usize,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 30)]
        wait: u64,
    },
}

/// A failure together with the exit code it maps to.
struct Failure(u8, anyhow::Error);

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_CONFIG, e.into())
}

fn run_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure(EXIT_RUN, e.into())
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Failure> {
    ExperimentConfig::from_file(path)
        .with_context(|| format!("loading {}", path.display()))
        .map_err(config_err)
}

fn print_metrics(m: &Metrics) {
    println!("f1 = {:.4}, mccr = {:.4}", m.f1, m.mccr);
}

fn federation_for(cfg: &ExperimentConfig, params: &HyperParams, clients: &[fdrsvm::svm::DatasetView]) -> Result<FederationConfig> {
    let Some(alg) = cfg.model.algorithm() else {
        bail!("model {:?} does not run over the federation transport", cfg.model);
    };
    let tau = if alg == fdrsvm::federation::Algorithm::AdmmSc { cfg.tau_factor * params.rho } else { 0.0 };
    let mut fed = FederationConfig::new(
        alg,
        params.rounds,
        fdrsvm::experiment::federated_clients(clients, params, cfg.norm(), tau),
    );
    fed.gamma0 = params.gamma;
    fed.rho = params.rho;
    fed.solver = cfg.solver();
    Ok(fed)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { config, seed, model_out } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let (saved, m) = train_model(&cfg, seed).map_err(classify)?;
            println!("chosen: {}", serde_json::to_string(&saved.params).map_err(run_err)?);
            print_metrics(&m);
            if let Some(path) = model_out {
                let json = serde_json::to_string_pretty(&saved).map_err(run_err)?;
                std::fs::write(&path, json)
                    .with_context(|| format!("writing {}", path.display()))
                    .map_err(run_err)?;
            }
        }
        Command::Evaluate {
            model,
            config,
            seed,
            csv,
            label_column,
            positive_label,
        } => {
            let text = std::fs::read_to_string(&model)
                .with_context(|| format!("reading {}", model.display()))
                .map_err(config_err)?;
            let saved: SavedModel = serde_json::from_str(&text).context("parsing the model").map_err(config_err)?;
            let metrics = if let Some(csv) = csv {
                let raw = load_csv(&csv, &label_column.unwrap_or_default(), &positive_label.unwrap_or_default())
                    .map_err(config_err)?
                    .to_dataset()
                    .map_err(config_err)?;
                saved.evaluate_raw(&raw).map_err(run_err)?
            } else if let Some(config) = config {
                let cfg = load(&config)?;
                let data = prepare_data(&cfg, seed.unwrap_or(cfg.seed)).map_err(classify)?;
                evaluate(&fdrsvm::svm::GlobalModel::new(saved.w.clone()), &data.test).map_err(run_err)?
            } else {
                return Err(config_err(anyhow::anyhow!("give --csv or --config")));
            };
            print_metrics(&metrics);
        }
        Command::Cv { config, seed } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let data = prepare_data(&cfg, seed).map_err(classify)?;
            let out = cross_validate(&cfg, &data.clients, seed).map_err(classify)?;
            println!("{}", serde_json::to_string_pretty(&out).map_err(run_err)?);
        }
        Command::Bench { config, output } => {
            let cfg = load(&config)?;
            let result = run_experiment(&cfg);
            if let Some(path) = output.or_else(|| cfg.output.clone()) {
                let (doc, csv) = emit_results(&result, &path).map_err(run_err)?;
                log::info!("wrote {} and {}", doc.display(), csv.display());
            }
            if let (Some(f1), Some(mccr)) = (&result.f1, &result.mccr) {
                println!(
                    "{:?}: f1 = {:.4} +- {:.4}, mccr = {:.4} +- {:.4} over {} repetitions",
                    result.model,
                    f1.mean,
                    f1.std.unwrap_or(0.0),
                    mccr.mean,
                    mccr.std.unwrap_or(0.0),
                    result.repetitions.len() - result.failures
                );
            }
            if result.all_failed() {
                return Err(run_err(anyhow::anyhow!("every repetition failed")));
            }
            if result.partial_failure() {
                return Err(Failure(
                    EXIT_PARTIAL,
                    anyhow::anyhow!("{} of {} repetitions failed", result.failures, result.repetitions.len()),
                ));
            }
        }
        Command::Serve {
            config,
            addr,
            seed,
            max_frame,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let data = prepare_data(&cfg, seed).map_err(classify)?;
            let params = cfg.grid().points()[0];
            let fed = federation_for(&cfg, &params, &data.clients).map_err(config_err)?;
            log::info!("waiting for {} clients on {addr}", data.clients.len());
            let mut server = TcpServerTransport::bind(addr.as_str(), data.clients.len(), max_frame).map_err(run_err)?;
            let run = run_federation(&fed, &data.clients, &mut server).map_err(run_err)?;
            let m = evaluate(&run.model, &data.test).map_err(run_err)?;
            println!("w = {:?}", run.model.w);
            print_metrics(&m);
        }
        Command::Client {
            config,
            addr,
            index,
            seed,
            max_frame,
            wait,
        } => {
            let cfg = load(&config)?;
            let seed = seed.unwrap_or(cfg.seed);
            let data = prepare_data(&cfg, seed).map_err(classify)?;
            if index >= data.clients.len() {
                return Err(config_err(anyhow::anyhow!("client index {index} out of range")));
            }
            let params = cfg.grid().points()[0];
            let fed = federation_for(&cfg, &params, &data.clients).map_err(config_err)?;
            let mut node = ClientNode::from_config(index, &fed, data.clients[index].clone()).map_err(config_err)?;
            run_tcp_client(addr.as_str(), &mut node, max_frame, Duration::from_secs(wait)).map_err(run_err)?;
        }
    }
    Ok(())
}

fn classify(e: ExperimentError) -> Failure {
    match e {
        ExperimentError::Config(_) | ExperimentError::Data(_) => config_err(e),
        other => run_err(other),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
