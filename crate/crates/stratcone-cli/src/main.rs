//! Command line front end.
//!
//! Exit codes: 0 when the checked property holds, 1 when a check fails
//! (the stdout report pinpoints which), 2 for unusable input or usage
//! errors. Errors leave one JSON object on stderr.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stratcone_cli::run::{
    distance_cmd, generate_cmd, parameterize_cmd, parse_point, stratify_cmd, validate_cone_cmd,
    verify_cmd, CliError,
};

#[derive(Parser)]
#[command(
    name = "stratcone",
    version,
    about = "Cone models, stratification, and certified parameterization of sampled sets"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a cone description: complex validity and the non-flat margin.
    ValidateCone {
        /// Cone JSON file or catalog name (t, y_times_1, plane2, ...).
        cone: String,
        #[arg(long, default_value_t = 3)]
        ambient_dim: usize,
    },
    /// Normalized local Hausdorff distance between two sets over a ball.
    Distance {
        /// Cloud file (csv/ply) or cone file/name.
        a: String,
        b: String,
        #[arg(long, allow_hyphen_values = true)]
        center: String,
        #[arg(long)]
        radius: f64,
        /// Sampling radius assumed for cloud inputs.
        #[arg(long, default_value_t = 0.05)]
        h: f64,
        #[arg(long, default_value_t = 3)]
        ambient_dim: usize,
    },
    /// Label a cloud by smallest persistently fitting type.
    Stratify {
        cloud: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Labels CSV destination.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Validate an existing labels file instead of computing one.
        #[arg(long)]
        check_labels: Option<PathBuf>,
    },
    /// Build the parameterization of a cloud over a reference cone.
    Parameterize {
        cone: String,
        cloud: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Reuse a labels CSV instead of stratifying here.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Recheck a finished run directory against the theorem conclusion.
    Verify { run_dir: PathBuf },
    /// Sample a cone, optionally perturb it, write cloud and truth files.
    Generate { spec: PathBuf },
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    match cli.cmd {
        Cmd::ValidateCone { cone, ambient_dim } => validate_cone_cmd(&cone, ambient_dim),
        Cmd::Distance { a, b, center, radius, h, ambient_dim } => {
            let c = parse_point(&center)?;
            distance_cmd(&a, &b, &c, radius, h, ambient_dim)
        }
        Cmd::Stratify { cloud, config, out, report, check_labels } => stratify_cmd(
            &cloud,
            &config,
            &out,
            report.as_deref(),
            check_labels.as_deref(),
        ),
        Cmd::Parameterize { cone, cloud, config, out_dir, labels } => {
            parameterize_cmd(&cone, &cloud, &config, &out_dir, labels.as_deref())
        }
        Cmd::Verify { run_dir } => verify_cmd(&run_dir),
        Cmd::Generate { spec } => generate_cmd(&spec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                let err = CliError::input(e.to_string());
                eprintln!("{}", serde_json::to_string(&err).unwrap_or_default());
                return ExitCode::from(2);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(err) => {
            eprintln!("{}", serde_json::to_string(&err).unwrap_or_default());
            ExitCode::from(2)
        }
    }
}
