//! `kreinmap`: command-line front end for the Krein mapping and its inverse.

mod commands;
mod exit;
mod fieldfile;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use exit::CliError;

#[derive(Parser)]
#[command(name = "kreinmap", version, about = "Krein mapping between accelerants and Dirac potentials")]
#[command(after_help = "Exit codes: 0 ok, 2 mathematical rejection, 3 input error, 4 convergence failure, 1 internal.\n\
KREINMAP_THREADS caps the number of worker threads.")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Input field file (JSON).
    #[arg(long = "in", value_name = "FILE")]
    input: PathBuf,
    /// Decimate the input to N cells first (N must divide the file's N).
    #[arg(long)]
    n: Option<usize>,
    /// Recorded in reports; every command is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Accelerant -> potential.
    Theta {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Accelerant test threshold, relative to the largest singular value.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Potential -> accelerant.
    Upsilon {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Picard stopping tolerance.
        #[arg(long, default_value_t = kreinmap_core::inverse_map::PICARD_TOL)]
        tol: f64,
    },
    /// Test whether a function is an accelerant.
    CheckAccelerant {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Print per-alpha singular value margins as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Round trip over a ladder of grids.
    Roundtrip {
        #[command(flatten)]
        common: Common,
        /// Comma-separated cell counts, each dividing the input N.
        #[arg(long, value_delimiter = ',')]
        ladder: Option<Vec<usize>>,
        #[arg(long, default_value_t = kreinmap_core::dirac_verify::DEFAULT_ROUNDTRIP_TOL)]
        tol: f64,
        /// Write the JSON report here instead of standard output.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Residuals of the identities behind the construction.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Spectral parameters for the solution representation check.
        #[arg(long, allow_hyphen_values = true)]
        lambda: Vec<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Also write the transformation kernel K_Q as a kernel file.
        #[arg(long, value_name = "FILE")]
        kernel_out: Option<PathBuf>,
    },
    /// Matrix solution of the Cauchy problem as CSV.
    SolveDirac {
        #[command(flatten)]
        common: Common,
        /// Spectral parameter "a+bi"; repeat for several.
        #[arg(long, allow_hyphen_values = true, required = true)]
        lambda: Vec<String>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

fn threads_from_env() -> Result<usize, CliError> {
    match std::env::var("KREINMAP_THREADS") {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| CliError::Input(format!("KREINMAP_THREADS must be a non-negative integer, got '{v}'"))),
    }
}

fn run(cmd: Cmd) -> Result<i32, CliError> {
    match cmd {
        Cmd::Theta { common, out, tol } => {
            commands::theta_cmd(&common.input, &out, common.n, tol).map(|_| exit::OK)
        }
        Cmd::Upsilon { common, out, tol } => {
            commands::upsilon_cmd(&common.input, &out, common.n, tol).map(|_| exit::OK)
        }
        Cmd::CheckAccelerant { common, tol, csv } => {
            commands::check_accelerant_cmd(&common.input, common.n, tol, csv)
        }
        Cmd::Roundtrip { common, ladder, tol, out } => {
            commands::roundtrip_cmd(&common.input, common.n, ladder, tol, out.as_deref(), common.seed)
        }
        Cmd::Verify { common, lambda, out, kernel_out } => commands::verify_cmd(
            &common.input,
            common.n,
            &lambda,
            out.as_deref(),
            kernel_out.as_deref(),
            common.seed,
        ),
        Cmd::SolveDirac { common, lambda, out } => {
            commands::solve_dirac_cmd(&common.input, common.n, &lambda, out).map(|_| exit::OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(exit::INPUT as u8),
            };
        }
    };
    let code = threads_from_env().and_then(|t| kreinmap_core::par::with_threads(t, || run(cli.cmd)));
    match code {
        Ok(c) => ExitCode::from(c as u8),
        Err(e) => {
            eprintln!("kreinmap: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
