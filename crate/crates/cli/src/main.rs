use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ntvcbf_cli::config::parse_state;
use ntvcbf_cli::{init_threads, CliError, SimulateArgs, VerifyArgs, EXIT_USAGE};

/// Synthesize and check neural time-varying barrier certificates and controllers.
#[derive(Parser)]
#[command(
    name = "ntvcbf",
    version,
    after_help = "Exit codes: 0 ok, 1 not converged or invalid certificate, \
2 empty safe set, 64 configuration/usage error, 65 data/model/CSV error.\nNTVCBF_THREADS sets the worker count."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a barrier and controller pair and certify it on the training grid.
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Certify saved networks on a freshly labeled grid.
    Verify {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        barrier: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        /// Grid covering radius; defaults to the configured one.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Skip the refinement pass before certifying.
        #[arg(long)]
        no_refine: bool,
        /// Certificate path; defaults to certificate_verify.json in the output directory.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Roll out the trained controller and write one CSV per initial state.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        barrier: Option<PathBuf>,
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Initial state such as "-1,-1"; repeatable.
        #[arg(long, allow_hyphen_values = true)]
        x0: Vec<String>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Score a trajectory CSV against a specification file.
    Robustness {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        traj: PathBuf,
    },
}

fn run(cli: Cli) -> Result<u8, CliError> {
    init_threads()?;
    match cli.command {
        Command::Train { config } => ntvcbf_cli::train(&config),
        Command::Verify {
            config,
            barrier,
            controller,
            epsilon,
            no_refine,
            output,
        } => ntvcbf_cli::verify(&VerifyArgs {
            config,
            barrier,
            controller,
            epsilon,
            no_refine,
            output,
        }),
        Command::Simulate {
            config,
            barrier,
            controller,
            x0,
            horizon,
            dt,
        } => {
            let x0 = x0.iter().map(|s| parse_state(s)).collect::<Result<_, _>>()?;
            ntvcbf_cli::simulate(&SimulateArgs {
                config,
                barrier,
                controller,
                x0,
                horizon,
                dt,
            })
        }
        Command::Robustness { spec, traj } => ntvcbf_cli::robustness(&spec, &traj),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
