use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsa_cli::{cmd_bound, cmd_run, cmd_sweep, cmd_validate, cmd_verify, BoundArgs, CliError, Outcome, RunArgs};
use dsa_core::engine::{CapMode, StepRule};

#[derive(Parser)]
#[command(name = "dsa", version, about = "Decentralized stochastic approximation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the network, chain and problem assumptions of a configuration.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the configured ensemble and write its outputs.
    Run(RunFlags),
    /// Check a run directory against its certificate.
    Verify {
        /// Directory written by `dsa run`.
        #[arg(long = "out", alias = "dir")]
        out: PathBuf,
    },
    /// Print the certificate for a constants file and a step schedule.
    Bound(BoundFlags),
    /// Run the configuration at several horizons and fit the decay rates.
    Sweep(RunFlags),
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Record the per-step error decomposition diagnostics.
    #[arg(long)]
    diagnostics: bool,
    /// Comma-separated horizons for `sweep`.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CapFlag {
    Off,
    Check,
    Enforce,
}

#[derive(Args)]
struct BoundFlags {
    /// Constants JSON, as written to `constants.json` by `dsa run`.
    #[arg(long)]
    constants: PathBuf,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    a1: f64,
    /// Constant step size instead of `a0/sqrt(t + a1)`.
    #[arg(long, conflicts_with = "a0")]
    gamma: Option<f64>,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_enum, default_value = "check")]
    cap_mode: CapFlag,
    #[arg(long)]
    v0: Option<f64>,
    #[arg(long)]
    grad0: Option<f64>,
}

impl RunFlags {
    fn args(self) -> RunArgs {
        RunArgs { out: self.out, seed: self.seed, jobs: self.jobs, diagnostics: self.diagnostics, horizons: self.horizons }
    }
}

fn bound(flags: BoundFlags) -> Result<Outcome, CliError> {
    let step = match (flags.a0, flags.gamma) {
        (Some(a0), None) => StepRule::Decaying { a0, a1: flags.a1 },
        (None, Some(gamma)) => StepRule::Constant { gamma },
        _ => return Err(CliError::Input("pass either --a0 or --gamma".into())),
    };
    let cap_mode = match flags.cap_mode {
        CapFlag::Off => CapMode::Off,
        CapFlag::Check => CapMode::Check,
        CapFlag::Enforce => CapMode::Enforce,
    };
    cmd_bound(&BoundArgs {
        constants: flags.constants,
        step,
        horizon: flags.horizon,
        cap_mode,
        v0: flags.v0,
        grad0: flags.grad0,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => cmd_validate(&config),
        Command::Run(flags) => cmd_run(&flags.config.clone(), &flags.args()),
        Command::Verify { out } => cmd_verify(&out),
        Command::Bound(flags) => bound(flags),
        Command::Sweep(flags) => cmd_sweep(&flags.config.clone(), &flags.args()),
    };
    match result {
        Ok(outcome) => {
            print!("{}", outcome.text);
            ExitCode::from(outcome.code as u8)
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
