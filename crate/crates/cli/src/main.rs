use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::Outcome;
use config::RunConfig;

/// Bad or missing input: exit code 1.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Parser)]
#[command(
    name = "lowgain",
    version,
    about = "Low-gain integral control analysis, synthesis and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify robust performance of a given gain K.
    Analyze(RunConfig),
    /// Design K (H-infinity for LTI data, robust for an LFR with a cone).
    Synthesize(RunConfig),
    /// Simulate the closed loop and write CSV.
    Simulate(RunConfig),
    /// Slow-sensitivity frequency response as CSV.
    Freqresp(RunConfig),
    /// Write a built-in example as a problem document.
    Example(RunConfig),
}

const EXIT_INPUT: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<InputError>().is_some() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<lowgain::Error>() {
            use lowgain::Error as E;
            return match e {
                _ if e.is_infeasibility() => EXIT_INFEASIBLE,
                E::Parse(_)
                | E::DimensionMismatch(_)
                | E::InvalidArgument(_)
                | E::InvalidWeight(_)
                | E::SectorViolation(_)
                | E::DualConeInvalid(_)
                | E::DualUnavailable
                | E::SingularBasis => EXIT_INPUT,
                _ => EXIT_NUMERIC,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_INPUT;
        }
    }
    EXIT_INPUT
}

fn describe(err: &anyhow::Error) -> String {
    let last_time = err.chain().find_map(|c| match c.downcast_ref::<lowgain::Error>() {
        Some(lowgain::Error::NonFiniteState(t) | lowgain::Error::StepSizeUnderflow(t)) => Some(*t),
        _ => None,
    });
    match last_time {
        Some(t) => format!("integration failed ({err:#}); last valid time t = {t}"),
        None => format!("{err:#}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LOWGAIN_LOG", "error")).init();
    let cli = Cli::parse();
    type Runner = fn(&RunConfig) -> anyhow::Result<Outcome>;
    let (cfg, run, needs_input): (RunConfig, Runner, bool) = match cli.command {
        Command::Analyze(c) => (c, commands::analyze, true),
        Command::Synthesize(c) => (c, commands::synthesize, true),
        Command::Simulate(c) => (c, commands::simulate, true),
        Command::Freqresp(c) => (c, commands::freqresp, true),
        Command::Example(c) => (c, commands::example, false),
    };
    let result = cfg
        .resolve()
        .and_then(|c| c.validate(needs_input).map(|_| c))
        .map_err(anyhow::Error::from)
        .and_then(|c| run(&c));
    match result {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {}", describe(&e));
            ExitCode::from(code)
        }
    }
}
