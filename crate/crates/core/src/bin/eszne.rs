use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eszne::config::{Config, DEFAULT_CONFIG};
use eszne::runner::{Outcome, Runner};
use eszne::Error;

#[derive(Parser)]
#[command(name = "eszne", version, about = "Energy-scaled extrapolation of finite-energy GKP codes under photon loss")]
struct Cli {
    /// Print the default configuration with comments and exit.
    #[arg(long)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Single-qubit sweeps and power-law fits.
    Sweep(Common),
    /// Extrapolated limit over a grid of loss depths.
    Threshold(Common),
    /// Bell-pair correlator sweeps through the product channel.
    TwoQubit(Common),
    /// Random two-qubit states: coherence error, its limit and parity points.
    RandomCoherence(Common),
    /// Parity analysis of the random-state coherence error.
    Parity(Common),
    /// Wigner grids of the code space and the pipeline stages.
    Wigner(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent cells.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse cells already stored in the output directory.
    #[arg(long)]
    resume: bool,
}

impl Common {
    fn config(&self) -> eszne::Result<Config> {
        let mut cfg = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cmd: &Command) -> eszne::Result<Outcome> {
    let (common, f): (&Common, fn(&Runner) -> eszne::Result<Outcome>) = match cmd {
        Command::Sweep(c) => (c, Runner::sweep),
        Command::Threshold(c) => (c, Runner::threshold),
        Command::TwoQubit(c) => (c, Runner::two_qubit),
        Command::RandomCoherence(c) => (c, Runner::random_coherence),
        Command::Parity(c) => (c, Runner::parity),
        Command::Wigner(c) => (c, Runner::wigner),
    };
    let runner = Runner::new(common.config()?, common.resume)?;
    f(&runner)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.print_config {
        print!("{DEFAULT_CONFIG}");
        return ExitCode::SUCCESS;
    }
    let Some(cmd) = cli.command else {
        eprintln!("no command given; see --help");
        return ExitCode::from(1);
    };
    match run(&cmd) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if outcome.violations > 0 {
                log::error!("{} rows violate physical bounds", outcome.violations);
            }
            if outcome.numerical_failures + outcome.fit_failures > 0 {
                log::warn!("{} numerical and {} fit failures", outcome.numerical_failures, outcome.fit_failures);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e @ (Error::Config(_) | Error::Schedule(_) | Error::Parameter(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
