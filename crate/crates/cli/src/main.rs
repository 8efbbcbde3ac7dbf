use std::path::PathBuf;

use clap::Parser;
use mfc_lab::{run_cli, Overrides, Subcommand};

/// Mean-field control laboratory.
#[derive(Parser, Debug)]
#[command(name = "mfc-lab", version)]
struct Args {
    #[arg(value_enum)]
    command: Subcommand,
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single seed; replaces `seeds`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn main() {
    let args = Args::parse();
    let overrides = Overrides { out: args.out, seed: args.seed, threads: args.threads };
    std::process::exit(run_cli(args.command, &args.config, &overrides));
}
