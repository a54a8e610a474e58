mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use invplan::{Error, ErrorKind};

use config::RunConfig;

/// Weekly replenishment planning: forecasting, ordering and replay.
#[derive(Parser, Debug)]
#[command(name = "invplan", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Wide weekly sales CSV.
    #[arg(long, global = true)]
    sales: Option<PathBuf>,
    /// Wide weekly in-stock flag CSV.
    #[arg(long, global = true)]
    flags: Option<PathBuf>,
    /// Inventory snapshot CSV.
    #[arg(long, global = true)]
    inventory: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Load and validate the panel, write diagnostics.
    Ingest,
    /// Generate a synthetic panel with a warm-start inventory file.
    Synth,
    /// Write the feature matrix.
    Features,
    /// Search hyperparameters and fit the live models on all history.
    Train,
    /// Forecast the next weeks and, given inventory, place orders.
    Forecast {
        /// Directory holding model_h*.json (and calibration.json).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Buffer multiplier; overrides config and calibration.
        #[arg(long)]
        phi: Option<f64>,
    },
    /// Calibrate the buffer multiplier on the validation weeks.
    Calibrate,
    /// Holdout backtest of the policy against the coverage benchmark.
    Backtest,
    /// Replay order files against historical demand.
    Simulate {
        /// One order file per round, in order.
        #[arg(long, num_args = 1.., required = true)]
        orders: Vec<PathBuf>,
        /// Decision week of the first order file (default: the latest that fits).
        #[arg(long)]
        first_week: Option<usize>,
    },
    /// Compare episode reports; deltas are relative to the first.
    Compare {
        #[arg(long, num_args = 2.., required = true)]
        reports: Vec<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(p) = &cli.sales {
        cfg.sales = Some(p.clone());
    }
    if let Some(p) = &cli.flags {
        cfg.flags = Some(p.clone());
    }
    if let Some(p) = &cli.inventory {
        cfg.inventory = Some(p.clone());
    }
    if let Command::Forecast { phi: Some(phi), .. } = cli.command {
        cfg.phi = Some(phi);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Synth => commands::synth(&cfg),
        Command::Features => commands::features(&cfg),
        Command::Train => commands::train(&cfg),
        Command::Forecast { models, .. } => commands::forecast(&cfg, models.as_deref()),
        Command::Calibrate => commands::calibrate(&cfg),
        Command::Backtest => commands::backtest(&cfg),
        Command::Simulate { orders, first_week } => commands::simulate(&cfg, orders, *first_week),
        Command::Compare { reports } => commands::compare(&cfg, reports),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map(Error::kind);
    match kind {
        Some(ErrorKind::Data) => 1,
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Internal) => 3,
        // Serialization and other foreign failures count as internal.
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !msg.contains(&text) {
                    if !msg.is_empty() {
                        msg.push_str(": ");
                    }
                    msg.push_str(&text);
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
