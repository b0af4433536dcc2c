//! Experiment drivers behind each subcommand. Every driver writes its CSV or
//! JSON outputs into the run directory and returns the self-check failures.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use super::config::RunConfig;
use crate::calibration::{calibrate_beta, BetaReport, CalSample, CalibrationData};
use crate::environments::active_learning::{active_learning_run, summarize_arms, TabularData, Trajectory};
use crate::environments::fdr::{fdr_trials, summarize, FdrMethod, FdrSummary};
use crate::environments::risk_synthetic::{risk_synthetic_trials, summarize_risk, RiskMethod};
use crate::environments::sequence::{sequence_opt_run, SequenceEnv, SequenceRunConfig};
use crate::environments::RoundLog;
use crate::error::{invalid, Result};
use crate::losses::{counterexample_losses, load_claims, LossCurve};
use crate::numeric::{trial_rng, MeanSe};
use crate::policies::{Action, AnyPolicy, ClippedPolicy, Policy, PolicySpec};
use crate::risk_control::gcrc_lambda_plus;
use crate::samplers::{
    estimate_envelope, rejection_sample, rejection_sample_mixture, rejection_sample_optimized, rejection_sample_safe,
    split_probes, ProposalKind, SampleBatch,
};

/// What a driver produced.
#[derive(Debug, Default)]
pub struct RunOutcome {
    /// Human-readable summary lines.
    pub lines: Vec<String>,
    /// Self-check failures; empty when every check passed.
    pub failures: Vec<String>,
}

impl RunOutcome {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }
}

fn csv_writer(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(dir.join(name))?)))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(dir, name)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn fmt_beta(b: f64) -> String {
    if b.is_infinite() { "inf".into() } else { format!("{b:.6}") }
}

/// CRC versus gCRC on synthetic non-monotonic losses.
pub fn run_gcrc_synthetic(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let mut cfg = config.gcrc.clone();
    cfg.alphas = config.alphas_or(&cfg.alphas);
    cfg.trials = config.trials_or(cfg.trials);
    cfg.bound = config.bound;
    let rows = risk_synthetic_trials(&cfg, config.seed)?;
    let summary = summarize_risk(&rows, &cfg);
    write_rows(out, "risk.csv", &summary)?;
    let mut outcome = RunOutcome::default();
    outcome.check(rows.iter().all(|r| r.rule_holds), || "a selected threshold violates its selection rule".into());
    for s in &summary {
        outcome.lines.push(format!(
            "alpha={:.3} method={} mean_test_loss={:.4} se={:.4}",
            s.alpha,
            s.method.name(),
            s.mean_test_loss,
            s.se_test_loss
        ));
        if s.method == RiskMethod::Gcrc {
            let bound = s.slack_bound(3.0);
            outcome.check(s.mean_test_loss <= bound, || {
                format!("gcrc mean test loss {} exceeds {} at alpha {}", s.mean_test_loss, bound, s.alpha)
            });
        }
    }
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct CounterexampleRow {
    alpha: f64,
    bound: f64,
    held_out: usize,
    lambda: f64,
    held_out_loss: f64,
}

/// Leave-one-out risk of gCRC on the three-curve construction.
pub fn counterexample_bag_risk(alpha: f64) -> Result<(f64, Vec<(f64, f64)>)> {
    let (grid, curves) = counterexample_losses(alpha)?;
    let bound = 1.5 * alpha;
    let mut cases = Vec::with_capacity(3);
    for held in 0..3 {
        let cal: Vec<LossCurve> = (0..3).filter(|&j| j != held).map(|j| curves[j].clone()).collect();
        let report = gcrc_lambda_plus(&grid, &cal, alpha, bound)?;
        cases.push((report.chosen, curves[held].at(report.chosen_index(&grid))));
    }
    let risk = cases.iter().map(|c| c.1).sum::<f64>() / 3.0;
    Ok((risk, cases))
}

pub fn run_counterexample(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let mut outcome = RunOutcome::default();
    let mut rows = Vec::new();
    for alpha in config.alphas_or(&[0.1, 0.4, 0.9]) {
        let (risk, cases) = counterexample_bag_risk(alpha)?;
        let bound = 1.5 * alpha;
        for (i, (lambda, loss)) in cases.into_iter().enumerate() {
            rows.push(CounterexampleRow {
                alpha,
                bound,
                held_out: i,
                lambda,
                held_out_loss: loss,
            });
        }
        outcome.lines.push(format!("alpha={alpha} B={bound} bag_conditional_risk={risk}"));
        outcome.check((risk - bound).abs() <= 4.0 * f64::EPSILON * bound, || {
            format!("bag risk {risk} differs from {bound} at alpha {alpha}")
        });
    }
    write_rows(out, "counterexample.csv", &rows)?;
    Ok(outcome)
}

#[derive(Debug, Serialize)]
struct FdrCsvRow {
    alpha: f64,
    method: &'static str,
    mean_fdr: f64,
    se_fdr: f64,
    mean_recall: f64,
    se_recall: f64,
}

impl From<&FdrSummary> for FdrCsvRow {
    fn from(s: &FdrSummary) -> Self {
        Self {
            alpha: s.alpha,
            method: s.method.name(),
            mean_fdr: s.mean_fdr,
            se_fdr: s.se_fdr,
            mean_recall: s.mean_recall,
            se_recall: s.se_recall,
        }
    }
}

pub fn run_fdr(config: &RunConfig, out: &Path, claims: Option<&Path>) -> Result<RunOutcome> {
    let records = match claims {
        Some(p) => load_claims(p)?,
        None => config.claims.generate(&mut trial_rng(config.seed, u64::MAX))?,
    };
    let mut cfg = config.fdr.clone();
    cfg.alphas = config.alphas_or(&cfg.alphas);
    cfg.trials = config.trials_or(cfg.trials);
    let rows = fdr_trials(&records, &cfg, config.seed)?;
    let summary = summarize(&rows, &cfg);
    write_rows(out, "fdr.csv", &summary.iter().map(FdrCsvRow::from).collect::<Vec<_>>())?;
    write_rows(out, "fdr_trials.csv", &rows)?;

    let mut outcome = RunOutcome::default();
    for s in &summary {
        outcome.lines.push(format!(
            "alpha={:.3} method={} fdr={:.4}±{:.4} recall={:.4}±{:.4}",
            s.alpha,
            s.method.name(),
            s.mean_fdr,
            s.se_fdr,
            s.mean_recall,
            s.se_recall
        ));
        if s.method == FdrMethod::Gcrc {
            outcome.check(s.mean_fdr <= s.alpha + 3.0 * s.se_fdr, || {
                format!("gcrc mean FDR {} exceeds alpha {} + 3 SE", s.mean_fdr, s.alpha)
            });
        }
    }
    for g in rows.iter().filter(|r| r.method == FdrMethod::Gcrc) {
        if let Some(m) = rows
            .iter()
            .find(|r| r.method == FdrMethod::MonotonizedCrc && r.trial == g.trial && r.alpha == g.alpha)
        {
            outcome.check(g.tau <= m.tau, || {
                format!("trial {} alpha {}: gcrc threshold above monotonized CRC", g.trial, g.alpha)
            });
        }
    }
    Ok(outcome)
}

/// One row per (trial, round, method) for trajectory experiments.
#[derive(Debug, Serialize)]
struct TrajectoryRow {
    trial: usize,
    round: usize,
    method: String,
    alpha: f64,
    beta_hat: String,
    mean_loss: f64,
    mean_reward: f64,
    best_reward: f64,
    accept_rate: f64,
    test_mse: Option<f64>,
}

fn trajectory_rows(alpha: f64, trajectories: &[Trajectory]) -> Vec<TrajectoryRow> {
    let mut rows = Vec::new();
    for t in trajectories {
        let mut best = f64::NEG_INFINITY;
        for s in &t.steps {
            best = best.max(-s.test_mse);
            rows.push(TrajectoryRow {
                trial: t.trial,
                round: s.iteration,
                method: t.arm.name().into(),
                alpha,
                beta_hat: fmt_beta(s.beta_hat),
                mean_loss: if s.infeasible { 1.0 } else { 0.0 },
                mean_reward: -s.test_mse,
                best_reward: best,
                accept_rate: s.acceptance_rate,
                test_mse: Some(s.test_mse),
            });
        }
    }
    rows
}

pub fn run_active_learning(config: &RunConfig, out: &Path, data: Option<&Path>) -> Result<RunOutcome> {
    let data = match data {
        Some(p) => TabularData::from_csv(p)?.standardized(),
        None => config.tabular.generate(&mut trial_rng(config.seed, u64::MAX))?,
    };
    let trials = config.trials_or(50);
    let mut outcome = RunOutcome::default();
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for alpha in config.alphas_or(&[config.active_learning.alpha]) {
        let cfg = crate::environments::active_learning::ActiveLearningConfig {
            alpha,
            calibration: config.calibration.clone(),
            ..config.active_learning.clone()
        };
        let trajectories = active_learning_run(&data, &cfg, config.seed, trials)?;
        rows.extend(trajectory_rows(alpha, &trajectories));
        for s in summarize_arms(&trajectories) {
            outcome.lines.push(format!(
                "alpha={alpha} arm={} violation_rate={:.4}±{:.4} final_test_mse={:.4}±{:.4}",
                s.arm.name(),
                s.violation.mean,
                s.violation.se,
                s.final_mse.mean,
                s.final_mse.se
            ));
            if s.arm == crate::environments::active_learning::AcquisitionArm::Cpc {
                outcome.check(s.violation.within(alpha, 3.0), || {
                    format!("CPC violation rate {} exceeds alpha {alpha} + 3 SE", s.violation.mean)
                });
            }
            summaries.push(json!({ "alpha": alpha, "summary": s }));
        }
    }
    write_rows(out, "results.csv", &rows)?;
    write_json(&out.join("summary.json"), &summaries)?;
    Ok(outcome)
}

fn sequence_rows(method: &str, alpha: f64, trial: usize, logs: &[RoundLog<Vec<usize>>]) -> Vec<TrajectoryRow> {
    let mut best = f64::NEG_INFINITY;
    logs.iter()
        .map(|l| {
            best = best.max(l.best_reward());
            TrajectoryRow {
                trial,
                round: l.round,
                method: method.into(),
                alpha,
                beta_hat: fmt_beta(l.beta_hat),
                mean_loss: l.mean_loss(),
                mean_reward: l.mean_reward(),
                best_reward: best,
                accept_rate: l.acceptance_rate,
                test_mse: None,
            }
        })
        .collect()
}

pub fn run_sequence_opt(config: &RunConfig, out: &Path) -> Result<RunOutcome> {
    let mut rng = trial_rng(config.seed, u64::MAX);
    let env = SequenceEnv::generate(&config.sequence_env, &mut rng)?;
    let seeds = env.seed_sequences(config.sequence_env.seeds, &mut rng)?;
    let safe = env.safe_policy(&seeds, config.sequence_env.smoothing)?;
    let alphas = config.alphas_or(&[0.2, 0.5, 0.8]);
    let trials = config.trials_or(20);
    let mut outcome = RunOutcome::default();
    let safe_risk = env.exact_infeasibility(&safe);
    let min_alpha = alphas.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome.lines.push(format!("safe policy infeasibility={safe_risk:.4}"));
    outcome.check(safe_risk <= min_alpha, || {
        format!("safe policy infeasibility {safe_risk} exceeds alpha {min_alpha}")
    });

    let mut arms: Vec<(String, f64, SequenceRunConfig)> = alphas
        .iter()
        .map(|&a| {
            let mut c = config.sequence.clone();
            c.round.calibration = config.calibration.clone();
            (format!("cpc_alpha_{a}"), a, c)
        })
        .collect();
    arms.push((
        "uncontrolled".into(),
        config.bound,
        SequenceRunConfig {
            uncontrolled: true,
            ..config.sequence.clone()
        },
    ));
    let mut rows = Vec::new();
    for (arm_index, (name, alpha, cfg)) in arms.iter().enumerate() {
        let logs: Vec<Vec<RoundLog<Vec<usize>>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = trial_rng(config.seed.wrapping_add(1 + arm_index as u64), t as u64);
                sequence_opt_run(&env, &safe, *alpha, cfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        let losses: Vec<f64> = logs
            .iter()
            .flatten()
            .filter(|l| !l.records.is_empty())
            .map(|l| l.mean_loss())
            .collect();
        let m = MeanSe::from_slice(&losses);
        let degenerate = logs.iter().flatten().filter(|l| l.degenerate).count();
        outcome.lines.push(format!(
            "{name}: infeasibility={:.4}±{:.4} degenerate_rounds={degenerate}",
            m.mean, m.se
        ));
        if !cfg.uncontrolled {
            outcome.check(m.within(*alpha, 3.0), || format!("{name}: infeasibility {} exceeds alpha + 3 SE", m.mean));
        }
        for (t, l) in logs.iter().enumerate() {
            rows.extend(sequence_rows(name, *alpha, t, l));
        }
    }
    write_rows(out, "results.csv", &rows)?;
    write_json(&out.join("environment.json"), &env)?;
    Ok(outcome)
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Inputs of the one-shot `calibrate` subcommand.
#[derive(Debug, Clone)]
pub struct CalibrateInputs {
    pub safe: PathBuf,
    pub optimized: PathBuf,
    pub mixture: Option<PathBuf>,
    pub cal: PathBuf,
    pub proposals: Option<PathBuf>,
    pub n_proposals: usize,
}

pub fn run_calibrate(config: &RunConfig, out: &Path, inputs: &CalibrateInputs) -> Result<RunOutcome> {
    let safe = PolicySpec::load(&inputs.safe)?.build()?;
    let optimized = PolicySpec::load(&inputs.optimized)?.build()?;
    let mixture = match &inputs.mixture {
        Some(p) => PolicySpec::load(p)?.build()?,
        None => safe.clone(),
    };
    let cal: Vec<CalSample<Action>> = load_json(&inputs.cal)?;
    let proposals: Vec<Action> = match &inputs.proposals {
        Some(p) => load_json(p)?,
        None => {
            let mut rng = trial_rng(config.seed, 0);
            (0..inputs.n_proposals).map(|_| optimized.sample(&mut rng)).collect()
        }
    };
    let alpha = *config.alphas_or(&[0.2]).first().expect("non-empty");
    let data = CalibrationData {
        cal: &cal,
        proposals: &proposals,
        extra_probes: &[],
    };
    let report = calibrate_beta(&safe, &optimized, &mixture, &data, alpha, config.bound, &config.calibration)?;
    write_json(&out.join("beta_report.json"), &report)?;
    report.write_csv(File::create(out.join("beta_trace.csv"))?)?;
    let mut outcome = RunOutcome::default();
    outcome.lines.push(format!(
        "beta_hat={} grid_points={} floor_violated={}",
        fmt_beta(report.beta_hat),
        report.grid.len(),
        report.floor_violated
    ));
    outcome.check(report.satisfies_scan_condition(), || "risk trace violates the scan condition at beta_hat".into());
    Ok(outcome)
}

/// How to choose the accept-reject proposal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalChoice {
    Auto,
    Safe,
    Optimized,
    Mixture,
}

impl std::str::FromStr for ProposalChoice {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Self::Auto),
            "safe" => Ok(Self::Safe),
            "optimized" => Ok(Self::Optimized),
            "mixture" => Ok(Self::Mixture),
            _ => Err(format!("unknown proposal {s:?} (auto|safe|optimized|mixture)")),
        }
    }
}

/// Inputs of the one-shot `sample` subcommand.
#[derive(Debug, Clone)]
pub struct SampleInputs {
    pub safe: PathBuf,
    pub optimized: PathBuf,
    pub beta: Option<f64>,
    pub report: Option<PathBuf>,
    pub n: usize,
    pub proposal: ProposalChoice,
    pub weight: f64,
    pub budget: usize,
    pub probes: usize,
}

pub fn run_sample(config: &RunConfig, out: &Path, inputs: &SampleInputs) -> Result<RunOutcome> {
    let safe = PolicySpec::load(&inputs.safe)?.build()?;
    let optimized = PolicySpec::load(&inputs.optimized)?.build()?;
    let beta = match (inputs.beta, &inputs.report) {
        (Some(b), None) => b,
        (None, Some(p)) => load_json::<BetaReport>(p)?.beta_hat,
        _ => return Err(invalid("give exactly one of --beta and --report")),
    };
    if !(beta > 0.0) {
        return Err(invalid(format!("beta must be > 0, got {beta}")));
    }
    let log_beta = beta.ln();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let budget = inputs.budget;
    let batch: SampleBatch<Action> = match inputs.proposal {
        ProposalChoice::Auto => {
            let policy: ClippedPolicy<AnyPolicy, AnyPolicy> = ClippedPolicy::new(safe, optimized, log_beta)?;
            rejection_sample(&policy, inputs.n, budget, &mut rng)?
        }
        ProposalChoice::Safe => rejection_sample_safe(&safe, &optimized, log_beta, inputs.n, budget, &mut rng)?,
        ProposalChoice::Optimized => {
            rejection_sample_optimized(&safe, &optimized, log_beta, inputs.n, budget, &mut rng)?
        }
        ProposalChoice::Mixture => {
            let probes = split_probes(&safe, &optimized, inputs.probes, config.probe_safe_fraction, &mut rng);
            let envelope = estimate_envelope(&safe, &optimized, log_beta, inputs.weight, &probes, config.envelope_inflation)?;
            rejection_sample_mixture(&safe, &optimized, log_beta, inputs.weight, envelope, inputs.n, budget, &mut rng)?
        }
    };
    write_json(&out.join("samples.json"), &batch.accepted)?;
    write_json(&out.join("diagnostics.json"), &batch.diagnostics())?;
    let mut outcome = RunOutcome::default();
    outcome.lines.push(format!(
        "accepted={} proposals={} rate={:.4} violations={}",
        batch.accepted.len(),
        batch.proposals,
        batch.acceptance_rate,
        batch.violations
    ));
    outcome.check(batch.accepted.len() == inputs.n, || {
        format!("budget exhausted after {} of {} accepts", batch.accepted.len(), inputs.n)
    });
    if batch.kind == ProposalKind::Mixture {
        outcome.check(batch.violations == 0, || format!("{} envelope violations", batch.violations));
    }
    Ok(outcome)
}
