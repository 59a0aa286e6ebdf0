use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lookahead_arz::config::{parse_config, RunConfig};
use lookahead_arz::run::{parse_range, run_simulate, run_stability, run_sweep, CliError};
use lookahead_arz::scenarios::Preset;

/// Two-class ARZ traffic simulator with a look-ahead equilibrium speed.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one scenario and write fields.csv, metrics.csv and manifest.txt.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Tabulate the linear stability criterion over a parameter grid.
    Stability {
        #[arg(long)]
        config: PathBuf,
        /// Base density range, start:end:count (veh/km).
        #[arg(long)]
        rho: String,
        /// Wavenumber range, start:end:count (1/m).
        #[arg(long)]
        k: String,
        /// Look-ahead distance range, start:end:count (m).
        #[arg(long)]
        ld: String,
    },
    /// Run a named preset of scenarios concurrently.
    Sweep {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &PathBuf) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(parse_config(&text)?)
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load_config(&config)?;
            let report = run_simulate(&cfg)?;
            println!("{}", report.summary_line());
        }
        Command::Stability { config, rho, k, ld } => {
            let cfg = load_config(&config)?;
            let (rho, k, ld) = (parse_range(&rho)?, parse_range(&k)?, parse_range(&ld)?);
            let points = run_stability(&cfg, &rho, &k, &ld)?;
            let disagreements = points.iter().filter(|p| !p.agrees()).count();
            println!("rows={} disagreements={disagreements}", points.len());
        }
        Command::Sweep { preset, out } => {
            let preset: Preset = preset.parse().map_err(CliError::Usage)?;
            for row in run_sweep(preset, &out)? {
                let m = row.metrics.as_ref().expect("successful sweep rows carry metrics");
                println!(
                    "{} final_amplitude={} convergence_time={} mass_drift={}",
                    row.label,
                    lookahead_arz::run::format_number(m.final_amplitude),
                    m.convergence_time.map_or_else(|| "none".to_string(), lookahead_arz::run::format_number),
                    lookahead_arz::run::format_number(row.mass_drift),
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
