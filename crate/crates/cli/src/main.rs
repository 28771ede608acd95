use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dupot::pipeline::{self, Domain, PipelineConfig};
use dupot::Result;

/// Cross-domain rating prediction by optimal transport of user preference
/// mixtures.
#[derive(Debug, Parser)]
#[command(name = "dupot", version)]
struct Cli {
    /// Pipeline configuration file (`key = value` lines).
    #[arg(long, global = true, default_value = "dupot.conf")]
    config: PathBuf,

    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
}

impl From<DomainArg> for Domain {
    fn from(d: DomainArg) -> Self {
        match d {
            DomainArg::Source => Domain::Source,
            DomainArg::Target => Domain::Target,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split interactions into train/valid/test.
    Split,
    /// Train the shared autoencoder, then encode both domains.
    TrainAe,
    /// Encode both domains with an already trained autoencoder.
    Encode,
    /// Fit a domain's Gaussian mixture (both domains if --domain is omitted).
    FitGmm {
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
    },
    /// Train a domain's w-learner and r-predictor (both if --domain is omitted).
    TrainDomain {
        #[arg(long, value_enum)]
        domain: Option<DomainArg>,
    },
    /// Compute the W2 cost matrix and the transport plan.
    Transport,
    /// Predict test ratings through the transport plan.
    Predict,
    /// Compute RMSE and MAE of the predictions.
    Evaluate,
}

fn domains(arg: Option<DomainArg>) -> Vec<Domain> {
    match arg {
        Some(d) => vec![d.into()],
        None => Domain::BOTH.to_vec(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut entries = PipelineConfig::read_entries(&cli.config)?;
    if let Some(seed) = cli.seed {
        entries.set("seed", seed.to_string());
    }
    let base = cli.config.parent().unwrap_or(std::path::Path::new("."));
    let config = PipelineConfig::from_entries(&entries, base)?;
    match cli.command {
        Command::Split => pipeline::cmd_split(&config).map(drop),
        Command::TrainAe => pipeline::cmd_train_ae(&config),
        Command::Encode => pipeline::cmd_encode(&config),
        Command::FitGmm { domain } => domains(domain)
            .into_iter()
            .try_for_each(|d| pipeline::cmd_fit_gmm(&config, d).map(drop)),
        Command::TrainDomain { domain } => domains(domain)
            .into_iter()
            .try_for_each(|d| pipeline::cmd_train_domain(&config, d).map(drop)),
        Command::Transport => pipeline::cmd_transport(&config).map(drop),
        Command::Predict => pipeline::cmd_predict(&config).map(drop),
        Command::Evaluate => {
            let report = pipeline::cmd_evaluate(&config)?;
            println!(
                "rmse={:.6} mae={:.6} count={}",
                report.rmse, report.mae, report.count
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
