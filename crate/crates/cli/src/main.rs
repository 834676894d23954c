//! `nsk`: stationary solves, stability runs, inequality audits and
//! manufactured-solution checks driven by a TOML scenario file.

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nsk_core::NskError;

use config::ScenarioConfig;
use run::Run;

const EXIT_CONFIG: i32 = 2;
const EXIT_SOLVER: i32 = 3;

#[derive(Parser)]
#[command(name = "nsk", version = run::VERSION, about = "Navier-Stokes-Korteweg stationary and stability solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario file; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory, overriding the scenario's `out`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Comma-separated audit ids for `verify`.
    #[arg(long, global = true, value_name = "LIST")]
    audits: Option<String>,
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Fixed-point solve of the stationary problem.
    Stationary,
    /// Stability run about the computed stationary state.
    Evolve,
    /// Inequality and structural audits.
    Verify,
    /// Manufactured-solution recovery table.
    Mms,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Stationary => "stationary",
            Command::Evolve => "evolve",
            Command::Verify => "verify",
            Command::Mms => "mms",
        }
    }
}

fn exit_code(e: &NskError) -> i32 {
    match e {
        NskError::Config(_) => EXIT_CONFIG,
        _ => EXIT_SOLVER,
    }
}

fn resolve(cli: &Cli) -> Result<ScenarioConfig, NskError> {
    let mut c = match &cli.config {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = o.clone();
    }
    if let Some(a) = &cli.audits {
        c.verification.audits = config::parse_audits(a)?;
    }
    c.validate()?;
    Ok(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            let dir = cli.out.clone().unwrap_or_else(|| ScenarioConfig::default().out);
            run::write_error(&dir, &e, Some("config"), EXIT_CONFIG);
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    let mut run = match Run::create(&cfg.out, cli.command.name(), cli.quiet) {
        Ok(r) => r,
        Err(e) => {
            run::write_error(&cfg.out, &e, None, EXIT_SOLVER);
            return ExitCode::from(EXIT_SOLVER as u8);
        }
    };
    let result = match cli.command {
        Command::Stationary => commands::stationary(&mut run, &cfg),
        Command::Evolve => commands::evolve(&mut run, &cfg),
        Command::Verify => commands::verify(&mut run, &cfg),
        Command::Mms => commands::mms(&mut run, &cfg),
    };
    let code = match result {
        Ok(code) => match run.finish(&cfg, code) {
            Ok(()) => code,
            Err(e) => {
                run.fail(&cfg, &e, EXIT_SOLVER);
                EXIT_SOLVER
            }
        },
        Err(e) => {
            let code = exit_code(&e);
            run.fail(&cfg, &e, code);
            code
        }
    };
    ExitCode::from(code as u8)
}
