use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use spinpop::{execute, CliError, Command, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "spinpop", version, about = "Population coding experiments with superparamagnetic tunnel junctions")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML experiment file. Without one, every section takes its defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; defaults to `out_dir` from the config, then `out/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// How rates are obtained.
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Tuning curves of a population, analytic and sampled.
    Rates,
    /// Fit barrier, critical bias and offset to measured rates.
    Fit,
    /// Least-squares function synthesis on a population basis.
    Basis,
    /// Train a transformation between populations.
    Learn,
    /// Variability, energy and fault sweeps.
    Sweep,
    /// Fixed-point hardware datapath with an energy ledger.
    Datapath,
}

#[derive(ValueEnum, Clone, Copy)]
enum ModeArg {
    Mc,
    Analytic,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Rates => Command::Rates,
            Cmd::Fit => Command::Fit,
            Cmd::Basis => Command::Basis,
            Cmd::Learn => Command::Learn,
            Cmd::Sweep => Command::Sweep,
            Cmd::Datapath => Command::Datapath,
        }
    }
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    let command = Command::from(cli.command);
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = cli.mode {
        cfg.mode = Some(match mode {
            ModeArg::Mc => Mode::Mc,
            ModeArg::Analytic => Mode::Analytic,
        });
    }
    let out = cli.out.or_else(|| cfg.out_dir.as_ref().map(|p| cfg.resolve(p))).unwrap_or_else(|| PathBuf::from("out").join(command.name()));
    execute(command, &cfg, &out)?;
    Ok(out)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            eprintln!("wrote {}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("spinpop: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
