//! Claim filtering: choose a confidence threshold `τ` so that the expected
//! false discovery rate of the retained claims is at most `α`.

use rand::{Rng, RngCore};
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CpcError, Result};
use crate::losses::{claim_loss_curve, fdr_loss, jitter_scores, monotonize, recall, ClaimLoss, ClaimRecord, Grid, LossCurve};
use crate::numeric::{trial_rng, MeanSe};
use crate::risk_control::{crc_lambda, gcrc_lambda_plus, ltt_hoeffding};

/// Threshold that retains no claim: every score lies in `[0, 1]`.
pub const TAU_MAX: f64 = 1.0 + 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrMethod {
    Gcrc,
    MonotonizedCrc,
    Ltt,
}

impl FdrMethod {
    pub const ALL: [FdrMethod; 3] = [FdrMethod::Gcrc, FdrMethod::MonotonizedCrc, FdrMethod::Ltt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gcrc => "gcrc",
            Self::MonotonizedCrc => "monotonized_crc",
            Self::Ltt => "ltt",
        }
    }
}

impl std::str::FromStr for FdrMethod {
    type Err = CpcError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FdrConfig {
    pub alphas: Vec<f64>,
    pub trials: usize,
    /// Fraction of records used for calibration.
    pub calibration_fraction: f64,
    /// Number of thresholds below `TAU_MAX`.
    pub grid_size: usize,
    pub jitter: f64,
    /// Family-wise error level for Learn-then-Test.
    pub ltt_delta: f64,
    pub methods: Vec<FdrMethod>,
}

impl Default for FdrConfig {
    fn default() -> Self {
        Self {
            alphas: (1..=20).map(|k| k as f64 * 0.005).collect(),
            trials: 25,
            calibration_fraction: 0.7,
            grid_size: 199,
            jitter: 1e-8,
            ltt_delta: 0.1,
            methods: FdrMethod::ALL.to_vec(),
        }
    }
}

impl FdrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(invalid("alphas must be non-empty and lie in (0, 1]"));
        }
        if self.trials == 0 || self.grid_size < 1 || self.methods.is_empty() {
            return Err(invalid("trials, grid size and methods must be non-empty"));
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction < 1.0) {
            return Err(invalid("calibration fraction must lie in (0, 1)"));
        }
        if !(self.ltt_delta > 0.0 && self.ltt_delta < 1.0) {
            return Err(invalid("ltt delta must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Generator for synthetic claim sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticClaims {
    pub records: usize,
    pub min_claims: usize,
    pub max_claims: usize,
    /// Probability that a claim is true.
    pub true_rate: f64,
    /// Beta parameters of true-claim scores.
    pub true_score: (f64, f64),
    /// Beta parameters of false-claim scores.
    pub false_score: (f64, f64),
}

impl Default for SyntheticClaims {
    fn default() -> Self {
        Self {
            records: 500,
            min_claims: 2,
            max_claims: 12,
            true_rate: 0.75,
            true_score: (4.0, 1.5),
            false_score: (1.5, 4.0),
        }
    }
}

impl SyntheticClaims {
    pub fn generate(&self, rng: &mut dyn RngCore) -> Result<Vec<ClaimRecord>> {
        if self.min_claims == 0 || self.max_claims < self.min_claims || !(0.0..=1.0).contains(&self.true_rate) {
            return Err(invalid("need 1 <= min_claims <= max_claims and true_rate in [0, 1]"));
        }
        let beta = |(a, b): (f64, f64)| Beta::new(a, b).map_err(|e| invalid(format!("score law: {e}")));
        let (t, f) = (beta(self.true_score)?, beta(self.false_score)?);
        (0..self.records)
            .map(|_| {
                let k = rng.random_range(self.min_claims..=self.max_claims);
                let labels: Vec<u8> = (0..k).map(|_| rng.random_bool(self.true_rate) as u8).collect();
                let scores = labels
                    .iter()
                    .map(|&l| if l == 1 { t.sample(rng) } else { f.sample(rng) })
                    .collect();
                ClaimRecord::new(scores, labels)
            })
            .collect()
    }
}

/// Test-split FDR and recall of one method at one `α` in one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrTrialRow {
    pub trial: usize,
    pub alpha: f64,
    pub method: FdrMethod,
    pub tau: f64,
    pub fdr: f64,
    pub recall: f64,
}

/// Mean and standard error across trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrSummary {
    pub alpha: f64,
    pub method: FdrMethod,
    pub mean_fdr: f64,
    pub se_fdr: f64,
    pub mean_recall: f64,
    pub se_recall: f64,
}

/// Thresholds at empirical quantiles of the calibration scores, plus `TAU_MAX`.
pub fn quantile_grid(records: &[ClaimRecord], size: usize) -> Result<Grid> {
    let mut scores: Vec<f64> = records.iter().flat_map(|r| r.scores.iter().copied()).collect();
    if scores.is_empty() {
        return Err(CpcError::Empty("claim scores"));
    }
    scores.sort_by(f64::total_cmp);
    let last = scores.len() - 1;
    let mut points: Vec<f64> = (0..size)
        .map(|k| {
            let q = if size == 1 { 0.0 } else { k as f64 / (size - 1) as f64 };
            scores[(q * last as f64).round() as usize]
        })
        .collect();
    points.dedup();
    points.push(TAU_MAX);
    Grid::with_safe_max(points)
}

/// One trial: jitter, split, calibrate every method at every `α`, evaluate.
pub fn fdr_trial(records: &[ClaimRecord], config: &FdrConfig, seed: u64, trial: usize) -> Result<Vec<FdrTrialRow>> {
    let mut rng = trial_rng(seed, trial as u64);
    let mut data = records.to_vec();
    jitter_scores(&mut data, config.jitter, &mut rng);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let n_cal = ((data.len() as f64) * config.calibration_fraction).round() as usize;
    if n_cal == 0 || n_cal >= data.len() {
        return Err(invalid(format!("degenerate split of {} records", data.len())));
    }
    let cal: Vec<ClaimRecord> = order[..n_cal].iter().map(|&i| data[i].clone()).collect();
    let test: Vec<ClaimRecord> = order[n_cal..].iter().map(|&i| data[i].clone()).collect();

    let grid = quantile_grid(&cal, config.grid_size)?;
    let raw: Vec<LossCurve> = cal.iter().map(|r| claim_loss_curve(r, &grid, ClaimLoss::Fdr)).collect();
    let mono: Vec<LossCurve> = raw.iter().map(monotonize).collect();

    let mut rows = Vec::with_capacity(config.alphas.len() * config.methods.len());
    for &alpha in &config.alphas {
        for &method in &config.methods {
            let tau = match method {
                FdrMethod::Gcrc => gcrc_lambda_plus(&grid, &raw, alpha, 1.0)?.chosen,
                FdrMethod::MonotonizedCrc => crc_lambda(&grid, &mono, alpha, 1.0)?.chosen,
                FdrMethod::Ltt => ltt_hoeffding(&grid, &raw, alpha, 1.0, config.ltt_delta)?.chosen,
            };
            let n = test.len() as f64;
            rows.push(FdrTrialRow {
                trial,
                alpha,
                method,
                tau,
                fdr: test.iter().map(|r| fdr_loss(r, tau)).sum::<f64>() / n,
                recall: test.iter().map(|r| recall(r, tau)).sum::<f64>() / n,
            });
        }
    }
    Ok(rows)
}

/// All trials in parallel; rows come back ordered by trial.
pub fn fdr_trials(records: &[ClaimRecord], config: &FdrConfig, seed: u64) -> Result<Vec<FdrTrialRow>> {
    config.validate()?;
    if records.len() < 2 {
        return Err(invalid("need at least 2 claim records"));
    }
    let per_trial: Vec<Vec<FdrTrialRow>> = (0..config.trials)
        .into_par_iter()
        .map(|t| fdr_trial(records, config, seed, t))
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Aggregate trial rows into one summary per `(α, method)`.
pub fn summarize(rows: &[FdrTrialRow], config: &FdrConfig) -> Vec<FdrSummary> {
    let mut out = Vec::new();
    for &alpha in &config.alphas {
        for &method in &config.methods {
            let sel: Vec<&FdrTrialRow> = rows.iter().filter(|r| r.alpha == alpha && r.method == method).collect();
            let fdr = MeanSe::from_slice(&sel.iter().map(|r| r.fdr).collect::<Vec<_>>());
            let rec = MeanSe::from_slice(&sel.iter().map(|r| r.recall).collect::<Vec<_>>());
            out.push(FdrSummary {
                alpha,
                method,
                mean_fdr: fdr.mean,
                se_fdr: fdr.se,
                mean_recall: rec.mean,
                se_recall: rec.se,
            });
        }
    }
    out
}

/// Run the experiment and aggregate.
pub fn fdr_experiment(records: &[ClaimRecord], config: &FdrConfig, seed: u64) -> Result<Vec<FdrSummary>> {
    Ok(summarize(&fdr_trials(records, config, seed)?, config))
}
