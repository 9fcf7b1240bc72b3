//! `drifter`: streaming feature monitoring from the command line.

mod commands;
mod config;
mod interrupt;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use drifter_core::ranking::bench::DEFAULT_DENSITIES;

/// Exit 1: runtime or IO failure. Exit 2: usage or configuration error.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "drifter", version, about = "Profile sparse feature streams, rank features and alert on drift")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Long-running service: ingest, process and serve metrics until SIGTERM.
    Run {
        #[command(flatten)]
        common: Common,
        /// Input path, `-` for stdin [default: source.path]
        #[arg(long, env = "DRIFTER_INPUT")]
        input: Option<String>,
        /// Metrics port [default: export.port = 9464]
        #[arg(long, env = "DRIFTER_PORT")]
        port: Option<u16>,
    },
    /// Process a whole input in record time and dump every window.
    Replay {
        #[command(flatten)]
        common: Common,
        /// Input path, `-` for stdin [default: source.path]
        #[arg(long, env = "DRIFTER_INPUT")]
        input: Option<String>,
        /// Output directory for windows/*.prom and alerts.jsonl
        #[arg(long, env = "DRIFTER_OUT")]
        out: PathBuf,
    },
    /// Time sparse against dense mutual information; prints CSV.
    BenchMi {
        /// Column length
        #[arg(long, default_value_t = 1_000_000)]
        n: usize,
        /// Fractions of present values, each in (0, 1]
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DENSITIES.to_vec())]
        densities: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        repeats: usize,
        #[arg(long, env = "DRIFTER_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Validate a configuration and print it with every default filled in.
    Check {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults apply when omitted
    #[arg(long, env = "DRIFTER_CONFIG")]
    config: Option<PathBuf>,
    /// Seed for pair sampling [default: engine.seed = 0]
    #[arg(long, env = "DRIFTER_SEED")]
    seed: Option<u64>,
}

fn load(common: &Common) -> Result<config::CliConfig, Failure> {
    let env: Vec<(String, String)> = std::env::vars().collect();
    let mut cfg = config::load(common.config.as_deref(), &env).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    for w in &cfg.warnings {
        log::warn!("{w}");
    }
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run { common, input, port } => {
            let mut cfg = load(&common)?;
            if let Some(p) = port {
                cfg.set_port(p);
            }
            if let Some(i) = input {
                cfg.set_input(&i);
            }
            commands::run(&cfg)
        }
        Command::Replay { common, input, out } => {
            let cfg = load(&common)?;
            let input = input.unwrap_or_else(|| cfg.source.path.clone());
            let s = commands::replay(&cfg, &input, &out)?;
            log::info!("{} windows, {} records, {} alerts", s.windows, s.records, s.alerts);
            Ok(())
        }
        Command::BenchMi { n, densities, repeats, seed } => {
            print!("{}", commands::bench(n, &densities, repeats, seed)?);
            Ok(())
        }
        Command::Check { common } => {
            let cfg = load(&common)?;
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let help = format!(
        "Configuration is TOML; any scalar key can be overridden with \
         DRIFTER_<SECTION>__<KEY>, e.g. DRIFTER_EXPORT__PORT=9100.\n\nDefaults:\n\n{}",
        config::defaults_toml()
    );
    let matches = Cli::command().after_long_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
            }
            ExitCode::from(f.code())
        }
    }
}
