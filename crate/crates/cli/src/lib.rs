//! Command-line front end: `validate`, `run`, `falsify` and `simulate`.
//!
//! Exit codes: 0 success, 2 manifest, 3 data, 4 fit, 5 balance,
//! 6 estimation or variance.

pub mod analysis;
pub mod commands;
pub mod manifest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{exit_code, stage_name, Global, OutSlot};

#[derive(Debug, Parser)]
#[command(
    name = "ordrd",
    version,
    about = "Ordinal regression discontinuity analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Manifest file (TOML).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Output directory; overrides the manifest.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed; overrides the manifest.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Reject the table on any incomplete row instead of dropping it.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the data, apply exclusions and summarize.
    Validate,
    /// Full pipeline: probit, balance search, estimates, influence.
    Run,
    /// The same pipeline on a negative-control sample.
    Falsify {
        #[arg(long)]
        control_data: Option<PathBuf>,
    },
    /// Monte Carlo and bootstrap from a simulation manifest.
    Simulate,
}

/// Parse `args` and execute; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let Some(manifest) = cli.manifest.clone() else {
        eprintln!("error\tmanifest\t--manifest <path> is required");
        return 2;
    };
    let global = Global {
        manifest,
        out: cli.out.clone(),
        seed: cli.seed,
        strict: cli.strict,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error\tmanifest\t--workers must be at least 1");
            return 2;
        }
        builder = builder.num_threads(w);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error\tmanifest\tcannot start worker pool: {e}");
            return 2;
        }
    };
    let mut slot: OutSlot = None;
    let result = pool.install(|| match &cli.command {
        Command::Validate => commands::validate(&global, &mut slot),
        Command::Run => commands::run(&global, None, false, &mut slot),
        Command::Falsify { control_data } => {
            commands::run(&global, control_data.as_deref(), true, &mut slot)
        }
        Command::Simulate => commands::simulate(&global, &mut slot),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            let stage = stage_name(e.stage());
            let message = e.to_string().replace(['\t', '\n'], " ");
            eprintln!("error\t{stage}\t{message}");
            if let Some(out) = &slot {
                let _ = out.write(
                    "errors.tsv",
                    &format!("stage\tmessage\n{stage}\t{message}\n"),
                );
            }
            exit_code(e.stage())
        }
    }
}
