use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use liftrec::cli::{self, Action, ExperimentConfig, ExperimentKind, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "liftrec", version, about = "Lifted convex recovery of coefficients from interior and boundary data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InternalAction {
    Certify,
    Recover,
    Sweep,
}

#[derive(Clone, Copy, ValueEnum)]
enum CalderonAction {
    Forward,
    Recover,
    Certify,
    Baseline,
}

#[derive(Subcommand)]
enum Command {
    /// One-dimensional internal measurements.
    Internal {
        #[arg(value_enum)]
        action: InternalAction,
        #[command(flatten)]
        common: Common,
    },
    /// Two-dimensional boundary (Neumann) measurements.
    Calderon {
        #[arg(value_enum)]
        action: CalderonAction,
        #[command(flatten)]
        common: Common,
    },
    /// Phase retrieval by lifting.
    Phaselift {
        #[command(flatten)]
        common: Common,
    },
    /// Build and check a dual certificate.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Run every acceptance check.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("LIFTREC_LOG")).init();
    let args = Cli::parse();
    let (kind, action, common) = match args.command {
        Command::Internal { action, common } => {
            let a = match action {
                InternalAction::Certify => Action::Certify,
                InternalAction::Recover => Action::Recover,
                InternalAction::Sweep => Action::Sweep,
            };
            (ExperimentKind::Internal, Some(a), common)
        }
        Command::Calderon { action, common } => {
            let a = match action {
                CalderonAction::Forward => Action::Forward,
                CalderonAction::Recover => Action::Recover,
                CalderonAction::Certify => Action::Certify,
                CalderonAction::Baseline => Action::Baseline,
            };
            (ExperimentKind::Calderon, Some(a), common)
        }
        Command::Phaselift { common } => (ExperimentKind::Phaselift, None, common),
        Command::Certify { common } => (ExperimentKind::Certify, None, common),
        Command::Selftest { common } => (ExperimentKind::Selftest, None, common),
    };
    let mut cfg = match &common.config {
        Some(p) => match ExperimentConfig::from_path(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("{e}");
                return ExitCode::from(EXIT_CONFIG as u8);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(k) = cfg.experiment {
        if k != kind {
            eprintln!("config error: configuration is for {k}, command is {kind}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    cfg.experiment = Some(kind);
    if action.is_some() {
        cfg.action = action;
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = common.out {
        cfg.output.dir = Some(o);
    }
    if let Some(j) = common.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            log::warn!("thread pool: {e}");
        }
    }
    ExitCode::from(cli::run_to_exit_code(&cfg) as u8)
}
