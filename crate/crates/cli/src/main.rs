mod commands;
mod files;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Simulate, calibrate, reconstruct and evaluate a dual-galvanometer
/// light-section scanner.
#[derive(Parser, Debug)]
#[command(name = "dynscan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Scenario TOML file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Noise override `key=value` (pixel_sigma, angle_jitter_deg,
    /// plane_coeff_sigma, transform_sigma); repeatable.
    #[arg(long = "noise-override", value_name = "KEY=VALUE")]
    pub noise_override: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the scenario scan: schedule, stripe pixels, truth cloud, images.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract stripe centers from the PGM images of a simulated scan.
    Extract {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Directory with schedule.csv and images/.
        #[arg(long)]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one calibration stage.
    Calibrate {
        #[arg(value_enum)]
        stage: commands::Stage,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Parameter file to start from instead of the scenario's model rig.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Laser-plane CSV (axis stage).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a scan into a PLY cloud in the neutral frame.
    Reconstruct {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Parameter file; defaults to the scenario's model rig.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Directory with schedule.csv and stripes.csv.
        #[arg(long)]
        input: PathBuf,
        /// Per-step correction CSV from `calibrate joint`.
        #[arg(long)]
        corrections: Option<PathBuf>,
        /// Output PLY file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a cloud or the calibrated camera model.
    Evaluate {
        #[arg(value_enum)]
        protocol: commands::Protocol,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Cloud to evaluate (stair, flatness, reference).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Reference cloud (reference protocol).
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Parameter file (matrix protocol); defaults to the model rig.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Nominal step height for the stair protocol, mm.
        #[arg(long, default_value_t = 30.0)]
        nominal: f64,
        /// Output CSV report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { scenario, out } => commands::simulate(&scenario, &out),
        Command::Extract { scenario, input, out } => commands::extract(&scenario, &input, &out),
        Command::Calibrate { stage, scenario, params, input, out } => {
            commands::calibrate(stage, &scenario, params.as_deref(), input.as_deref(), &out)
        }
        Command::Reconstruct { scenario, params, input, corrections, out } => {
            commands::reconstruct(&scenario, params.as_deref(), &input, corrections.as_deref(), &out)
        }
        Command::Evaluate { protocol, scenario, input, reference, params, nominal, out } => {
            commands::evaluate(
                protocol,
                &scenario,
                commands::EvalInputs {
                    input: input.as_deref(),
                    reference: reference.as_deref(),
                    params: params.as_deref(),
                    nominal,
                },
                &out,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
