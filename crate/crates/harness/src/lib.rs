//! Experiment plumbing behind the `mkdv-lab` binary: TOML configuration,
//! the six subcommands, and CSV/JSON/text output with provenance headers.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Exit code for a run whose checks all passed.
pub const EXIT_PASS: i32 = 0;
/// Exit code for a failed check or a numerical error from the core.
pub const EXIT_FAIL: i32 = 1;
/// Exit code for bad arguments or an unusable config.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mkdv-lab", version, about = "Experiments and verification suites for real-valued mKdV")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment config; omitted sections take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for random initial data and the corpus.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parameter sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Multiplier applied to every magnitude tolerance.
    #[arg(long = "tol-scale", global = true)]
    pub tol_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Run one flow and log conserved quantities.
    Evolve,
    /// Identity, resolvent, bracket and conservation suites.
    Verify,
    /// Expansion, remainder or commuting-flow scans over kappa.
    SweepKappa,
    /// Invert q -> (mu / 4 kappa) r and check round trips.
    InvertR,
    /// Equicontinuity profile, w identity and sandwich constants.
    Equicontinuity,
    /// Compare the gauged renormalized flow with the mKdV flow.
    GaugeCheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Verify => "verify",
            Command::SweepKappa => "sweep-kappa",
            Command::InvertR => "invert-r",
            Command::Equicontinuity => "equicontinuity",
            Command::GaugeCheck => "gauge-check",
        }
    }
}

/// Parse-free entry point: runs `cli`, prints a summary, returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let cfg = match &cli.config {
        Some(p) => config::ExperimentConfig::load(p),
        None => Ok(config::ExperimentConfig::default()),
    };
    let overrides = config::Overrides { out: cli.out.clone(), seed: cli.seed, tol_scale: cli.tol_scale };
    let cfg = match cfg.and_then(|c| c.apply(&overrides)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mkdv-lab: {e}");
            return EXIT_USAGE;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.jobs.max(1)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("mkdv-lab: cannot start {} workers: {e}", cli.jobs);
            return EXIT_USAGE;
        }
    };
    let result = match cli.command {
        Command::Evolve => experiments::run_evolve(&cfg),
        Command::Verify => experiments::run_verify(&cfg, &pool),
        Command::SweepKappa => experiments::run_sweep(&cfg, &pool),
        Command::InvertR => experiments::run_invert(&cfg),
        Command::Equicontinuity => experiments::run_equicontinuity(&cfg),
        Command::GaugeCheck => experiments::run_gauge(&cfg),
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("mkdv-lab {}: error in {}: {e}", cli.command.name(), e.module());
            return EXIT_FAIL;
        }
    };
    match experiments::emit(&outcome, &cfg.output_dir()) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("mkdv-lab: cannot write outputs to {}: {e}", cfg.output_dir().display());
            return EXIT_FAIL;
        }
    }
    for r in &outcome.rows {
        let verdict = if r.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {} [{}] {:.3e} (tol {:.1e})", r.metric, r.params, r.value, r.tolerance);
    }
    if outcome.all_pass() { EXIT_PASS } else { EXIT_FAIL }
}
