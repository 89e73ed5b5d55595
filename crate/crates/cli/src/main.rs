use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use treemc::cli::{run_from_path, Command, OutputFormat, RunOptions, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "treemc", version, about = "Tree-indexed Markov chain experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Sub {
    /// Simulate a full tree and/or a walk path.
    Simulate(Common),
    /// Compare the empirical measure with the limit law.
    Lln(Common),
    /// Compensated martingale of a pairing.
    Martingale(Common),
    /// Covariance of φ at two distinct random leaves.
    Paircov(Common),
    /// Variance of the pairing across scales.
    Variance(Common),
    /// Generator approximation gaps on a grid.
    Genchk(Common),
    /// Most-recent-common-ancestor depth law.
    Mrca(Common),
    /// Exact enumeration against simulation.
    Oracle(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let (command, common) = match cli.command {
        Sub::Simulate(c) => (Command::Simulate, c),
        Sub::Lln(c) => (Command::Lln, c),
        Sub::Martingale(c) => (Command::Martingale, c),
        Sub::Paircov(c) => (Command::Paircov, c),
        Sub::Variance(c) => (Command::Variance, c),
        Sub::Genchk(c) => (Command::Genchk, c),
        Sub::Mrca(c) => (Command::Mrca, c),
        Sub::Oracle(c) => (Command::Oracle, c),
    };
    let opts = RunOptions {
        seed: common.seed,
        workers: common.workers,
        out_dir: common.out,
        format: common.format.map(|f| match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }),
    };
    ExitCode::from(run_from_path(command, &common.config, &opts) as u8)
}
