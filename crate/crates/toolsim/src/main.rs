//! `toolsim run | serve | inspect`.

use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use toolsim::config::RunConfig;
use toolsim::orchestrator::Environment;
use toolsim::persist::{trace_csv, RunStore};
use toolsim::server::{serve, AppState};

#[derive(Debug, Parser)]
#[command(version, about = "Simulated tool-calling environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run steps with the configured agent backend, resuming if the output
    /// directory already holds steps.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Total number of steps the run should reach.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the session API for an external agent.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Persist finalized steps here; overrides `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a run's difficulty trace as CSV.
    Inspect {
        #[arg(long)]
        run: PathBuf,
    },
}

fn load(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> toolsim::Result<Environment> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    Environment::from_config(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, steps, seed, out } => (|| {
            let env = load(&config, seed, out)?;
            let store = RunStore::create(&env.config.output_dir)?;
            let total = steps.unwrap_or(env.config.total_steps);
            let state = toolsim::run(&env, &store, total)?;
            log::info!("done: {} steps, difficulty {}", state.step_index, state.difficulty);
            Ok(())
        })(),
        Command::Serve { config, port, host, out } => (|| {
            let env = load(&config, None, out)?;
            let store = RunStore::create(&env.config.output_dir)?;
            let app = Arc::new(AppState::new(env, Some(store))?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| toolsim::Error::io("<runtime>", e))?;
            let addr = SocketAddr::new(host, port);
            rt.block_on(serve(app, addr)).map_err(|e| toolsim::Error::io(addr.to_string(), e))
        })(),
        Command::Inspect { run } => RunStore::open(run).load_trace().map(|trace| print!("{}", trace_csv(&trace))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
