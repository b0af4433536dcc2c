//! Command-line interface of the `cpc` binary.

pub mod config;
pub mod runs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use config::{parse_alpha_list, Overrides, RunConfig};
use runs::{CalibrateInputs, ProposalChoice, RunOutcome, SampleInputs};

use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "cpc", version, about = "Conformal risk control and conformal policy control experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Target risk levels, comma separated.
    #[arg(long, global = true, value_parser = parse_alpha_list)]
    pub alpha: Option<AlphaList>,
    /// Loss bound B.
    #[arg(long, global = true)]
    pub bound: Option<f64>,
    #[arg(long, global = true)]
    pub trials: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory (default: $CPC_OUT_DIR/<command>).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// TOML run configuration; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

pub type AlphaList = Vec<f64>;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CRC versus gCRC test loss on synthetic non-monotonic losses.
    GcrcSynthetic,
    /// Bag-conditional risk of the three-curve counterexample.
    Counterexample,
    /// Claim filtering: FDR and recall per method.
    Fdr {
        /// Claims JSON; synthetic claims when absent.
        #[arg(long)]
        claims: Option<PathBuf>,
    },
    /// GP active learning under a PCA feasibility constraint.
    ActiveLearning {
        /// CSV with a header row; the last column is the target.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Multi-round sequence optimization with banned bigrams.
    SequenceOpt,
    /// Calibrate the clip β from serialized policies and samples.
    Calibrate {
        #[arg(long)]
        safe: PathBuf,
        #[arg(long)]
        optimized: PathBuf,
        /// Density of the policies that produced the calibration data
        /// (default: the safe policy).
        #[arg(long)]
        mixture: Option<PathBuf>,
        /// JSON list of {"point", "loss", "round"}.
        #[arg(long)]
        cal: PathBuf,
        /// JSON list of draws from the optimized policy.
        #[arg(long)]
        proposals: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        n_proposals: usize,
    },
    /// Draw from the clipped policy by accept-reject.
    Sample {
        #[arg(long)]
        safe: PathBuf,
        #[arg(long)]
        optimized: PathBuf,
        #[arg(long, conflicts_with = "report")]
        beta: Option<f64>,
        /// A beta_report.json written by `calibrate`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value = "auto")]
        proposal: ProposalChoice,
        /// Weight of the safe policy in the mixture proposal.
        #[arg(long, default_value_t = 0.5)]
        weight: f64,
        #[arg(long, default_value_t = 1_000_000)]
        budget: usize,
        /// Envelope probes for the mixture proposal.
        #[arg(long, default_value_t = 10_000)]
        probes: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::GcrcSynthetic => "gcrc-synthetic",
            Self::Counterexample => "counterexample",
            Self::Fdr { .. } => "fdr",
            Self::ActiveLearning { .. } => "active-learning",
            Self::SequenceOpt => "sequence-opt",
            Self::Calibrate { .. } => "calibrate",
            Self::Sample { .. } => "sample",
        }
    }
}

fn dispatch(command: &Command, config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    match command {
        Command::GcrcSynthetic => runs::run_gcrc_synthetic(config, out),
        Command::Counterexample => runs::run_counterexample(config, out),
        Command::Fdr { claims } => runs::run_fdr(config, out, claims.as_deref()),
        Command::ActiveLearning { data } => runs::run_active_learning(config, out, data.as_deref()),
        Command::SequenceOpt => runs::run_sequence_opt(config, out),
        Command::Calibrate {
            safe,
            optimized,
            mixture,
            cal,
            proposals,
            n_proposals,
        } => runs::run_calibrate(
            config,
            out,
            &CalibrateInputs {
                safe: safe.clone(),
                optimized: optimized.clone(),
                mixture: mixture.clone(),
                cal: cal.clone(),
                proposals: proposals.clone(),
                n_proposals: *n_proposals,
            },
        ),
        Command::Sample {
            safe,
            optimized,
            beta,
            report,
            n,
            proposal,
            weight,
            budget,
            probes,
        } => runs::run_sample(
            config,
            out,
            &SampleInputs {
                safe: safe.clone(),
                optimized: optimized.clone(),
                beta: *beta,
                report: report.clone(),
                n: *n,
                proposal: *proposal,
                weight: *weight,
                budget: *budget,
                probes: *probes,
            },
        ),
    }
}

/// Run a parsed command line. Writes `manifest.json` before the run and
/// `failures.json` when the run errors or a self-check fails.
pub fn execute(cli: &Cli, args: &[String]) -> ExitCode {
    let overrides = Overrides {
        alpha: cli.common.alpha.clone(),
        bound: cli.common.bound,
        trials: cli.common.trials,
        seed: cli.common.seed,
        jobs: cli.common.jobs,
        out: cli.common.out.clone(),
    };
    let config = match RunConfig::resolve(cli.common.config.as_deref(), overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let name = cli.command.name();
    let out = config.out_dir(name);
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: cannot create {}: {e}", out.display());
        return ExitCode::from(2);
    }
    let manifest = json!({
        "command": name,
        "version": env!("CARGO_PKG_VERSION"),
        "args": args,
        "seed": config.seed,
        "config": &config,
    });
    if let Err(e) = runs::write_json(&out.join("manifest.json"), &manifest) {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }

    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.jobs).build();
    let result = match pool {
        Ok(pool) => pool.install(|| dispatch(&cli.command, &config, &out)),
        Err(e) => Err(crate::error::invalid(format!("thread pool: {e}"))),
    };
    let failures_path = out.join("failures.json");
    match result {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            if outcome.failures.is_empty() {
                let _ = std::fs::remove_file(&failures_path);
                println!("outputs written to {}", out.display());
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("check failed: {f}");
                }
                let _ = runs::write_json(&failures_path, &json!({ "command": name, "failures": outcome.failures }));
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            let _ = runs::write_json(&failures_path, &json!({ "command": name, "error": e.to_string() }));
            ExitCode::from(2)
        }
    }
}

/// Parse `std::env::args` and run.
pub fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse_from(&args);
    execute(&cli, &args)
}
