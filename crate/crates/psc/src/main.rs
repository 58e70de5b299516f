use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use psc::config::{parse_hex32, Config};
use psc::run;

#[derive(Parser)]
#[command(name = "psc", version, about = "Private set-cardinality measurement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the calibrated noise size and its standard deviation.
    Params {
        /// Privacy budget per measurement.
        #[arg(long)]
        epsilon: f64,
        /// Failure probability bound.
        #[arg(long)]
        delta: f64,
    },
    /// Generate a long-term signing key pair.
    Keygen {
        /// Secret key file to write; the public half lands next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every party of a session in one process and print the outcome.
    Simulate {
        #[arg(long, short)]
        config: PathBuf,
        /// Hex session seed, overriding the config.
        #[arg(long)]
        seed: Option<String>,
    },
    /// Run one computation party over sockets.
    Cp {
        #[arg(long, short)]
        config: PathBuf,
        /// Position in the cps roster.
        #[arg(long)]
        index: u16,
        /// Secret key file; omit for rosters with derived keys.
        #[arg(long)]
        key: Option<PathBuf>,
    },
    /// Run one data provider over sockets.
    Dp {
        #[arg(long, short)]
        config: PathBuf,
        /// Position in the dps roster.
        #[arg(long)]
        index: u16,
        /// Secret key file; omit for rosters with derived keys.
        #[arg(long)]
        key: Option<PathBuf>,
        /// Observation feed, one "observe <identifier>" per line.
        #[arg(long)]
        feed: Option<PathBuf>,
    },
    /// Run the scripted misbehavior matrix and check every verdict.
    Scenarios {
        #[arg(long, short)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("psc: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Params { epsilon, delta } => {
            println!("{}", run::params_json(epsilon, delta)?);
            Ok(0)
        }
        Command::Keygen { out } => {
            let public = run::keygen(&out)?;
            println!("{{\"public\":\"{public}\"}}");
            Ok(0)
        }
        Command::Simulate { config, seed } => {
            let config = Config::load(&config)?;
            let seed = seed.map(|s| parse_hex32("--seed", &s)).transpose()?;
            let (json, code) = run::run_simulate(&config, seed)?;
            println!("{}", json.to_line());
            Ok(code as u8)
        }
        Command::Cp { config, index, key } => {
            let config = Config::load(&config)?;
            let (json, code) = run::run_cp(&config, index, key.as_deref())?;
            println!("{}", json.to_line());
            Ok(code as u8)
        }
        Command::Dp {
            config,
            index,
            key,
            feed,
        } => {
            let config = Config::load(&config)?;
            let (json, code) = run::run_dp(&config, index, key.as_deref(), feed.as_deref())?;
            println!("{}", json.to_line());
            Ok(code as u8)
        }
        Command::Scenarios { config } => {
            let config = Config::load(&config)?;
            let (results, all_ok) = run::run_scenarios(&config)?;
            for result in results {
                println!(
                    "{{\"scenario\":\"{}\",\"ok\":{},\"outcome\":{}}}",
                    result.name,
                    result.ok,
                    result.outcome.to_line()
                );
            }
            Ok(if all_ok { 0 } else { 3 })
        }
    }
}
