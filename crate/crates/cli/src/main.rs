mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::RunConfig;

/// Bad or contradictory invocation; exits with the usage status.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

const USAGE_EXIT: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(USAGE_EXIT)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    cfg.apply_seed(cli.seed);

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;

    pool.install(|| match &cli.command {
        Command::Simulate(a) => {
            cfg.apply_simulate(a)?;
            commands::simulate(&cfg)
        }
        Command::BuildEras(a) => {
            cfg.apply_data(a);
            commands::build_eras(&cfg)
        }
        Command::Fit(a) => {
            cfg.apply_fit(a);
            commands::fit(&cfg)
        }
        Command::Pm(a) => {
            cfg.apply_pm(a);
            commands::fit(&cfg)
        }
        Command::Evaluate(a) => {
            cfg.apply_evaluate(a);
            commands::evaluate(&cfg)
        }
        Command::Report(a) => {
            cfg.apply_report(a);
            commands::report(&cfg)
        }
    })
}
