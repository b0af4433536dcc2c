//! Monte Carlo comparison of CRC and gCRC on synthetic loss families.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::losses::{grid_lipschitz, sample_smooth_family, sample_spike_family, Grid, LossCurve};
use crate::numeric::{trial_rng, MeanSe};
use crate::risk_control::{crc_lambda, gcrc_lambda_plus, replace_one_instability};

/// Which random losses to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossFamily {
    /// Smooth curves with a bump: a decreasing baseline plus a sigmoid bump.
    Smooth,
    /// Every non-safe threshold independently incurs `B` with probability `rate`.
    Spike { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskSyntheticConfig {
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub n_cal: usize,
    /// Fresh curves per trial used to measure the test loss.
    pub n_test: usize,
    pub grid_size: usize,
    pub bound: f64,
    pub family: LossFamily,
    /// Compute the replace-one instability of gCRC.
    pub instability: bool,
}

impl Default for RiskSyntheticConfig {
    fn default() -> Self {
        Self {
            alphas: (1..=10).map(|k| k as f64 * 0.05).collect(),
            trials: 2000,
            n_cal: 50,
            n_test: 100,
            grid_size: 50,
            bound: 1.0,
            family: LossFamily::Smooth,
            instability: true,
        }
    }
}

impl RiskSyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a <= self.bound)) {
            return Err(invalid("alphas must be non-empty and lie in (0, B]"));
        }
        if self.trials == 0 || self.n_cal < 2 || self.n_test == 0 || self.grid_size < 2 {
            return Err(invalid("need trials >= 1, n_cal >= 2, n_test >= 1 and grid_size >= 2"));
        }
        if let LossFamily::Spike { rate } = self.family {
            if !(0.0..=1.0).contains(&rate) {
                return Err(invalid(format!("spike rate must lie in [0, 1], got {rate}")));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::linspace_safe_max(0.0, 1.0, self.grid_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskMethod {
    Crc,
    Gcrc,
}

impl RiskMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Crc => "crc",
            Self::Gcrc => "gcrc",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskTrialRow {
    pub trial: usize,
    pub alpha: f64,
    pub method: RiskMethod,
    pub lambda: f64,
    pub test_loss: f64,
    /// Mean replace-one instability (gCRC only, `0` otherwise).
    pub epsilon_mean: f64,
    /// Grid Lipschitz constant of this trial's calibration curves.
    pub lipschitz: f64,
    /// The selected threshold satisfies the method's own selection rule.
    pub rule_holds: bool,
}

fn draw(config: &RiskSyntheticConfig, grid: &Grid, n: usize, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Vec<LossCurve>> {
    match config.family {
        LossFamily::Smooth => sample_smooth_family(rng, n, grid, config.bound),
        LossFamily::Spike { rate } => Ok(sample_spike_family(rng, n, grid.len(), rate, config.bound)),
    }
}

/// One trial: the same calibration and test curves serve every `α`.
pub fn risk_synthetic_trial(config: &RiskSyntheticConfig, seed: u64, trial: usize) -> Result<Vec<RiskTrialRow>> {
    let grid = config.grid()?;
    let mut rng = trial_rng(seed, trial as u64);
    let cal = draw(config, &grid, config.n_cal, &mut rng)?;
    let test = draw(config, &grid, config.n_test, &mut rng)?;
    let lipschitz = grid_lipschitz(&cal, &grid);
    let test_loss = |k: usize| test.iter().map(|c| c.at(k)).sum::<f64>() / test.len() as f64;
    let mut rows = Vec::with_capacity(2 * config.alphas.len());
    for &alpha in &config.alphas {
        let crc = crc_lambda(&grid, &cal, alpha, config.bound)?;
        let gcrc = gcrc_lambda_plus(&grid, &cal, alpha, config.bound)?;
        let (kc, kg) = (crc.chosen_index(&grid), gcrc.chosen_index(&grid));
        let last = grid.len() - 1;
        let crc_ok = kc == last || crc.risk_trace[kc] <= alpha * (1.0 + 1e-12);
        let gcrc_ok = kg == last || gcrc.risk_trace[kg..].iter().all(|r| *r <= alpha * (1.0 + 1e-12));
        let epsilon_mean = if config.instability {
            replace_one_instability(&grid, &cal, alpha, config.bound)?.mean
        } else {
            0.0
        };
        rows.push(RiskTrialRow {
            trial,
            alpha,
            method: RiskMethod::Crc,
            lambda: crc.chosen,
            test_loss: test_loss(kc),
            epsilon_mean: 0.0,
            lipschitz,
            rule_holds: crc_ok,
        });
        rows.push(RiskTrialRow {
            trial,
            alpha,
            method: RiskMethod::Gcrc,
            lambda: gcrc.chosen,
            test_loss: test_loss(kg),
            epsilon_mean,
            lipschitz,
            rule_holds: gcrc_ok,
        });
    }
    Ok(rows)
}

pub fn risk_synthetic_trials(config: &RiskSyntheticConfig, seed: u64) -> Result<Vec<RiskTrialRow>> {
    config.validate()?;
    let per: Vec<Vec<RiskTrialRow>> = (0..config.trials)
        .into_par_iter()
        .map(|t| risk_synthetic_trial(config, seed, t))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub alpha: f64,
    pub method: RiskMethod,
    pub mean_test_loss: f64,
    pub se_test_loss: f64,
    pub mean_lambda: f64,
    pub mean_epsilon: f64,
    /// Largest Lipschitz constant over trials.
    pub lipschitz: f64,
}

impl RiskSummary {
    /// Upper bound `α + K·mean(ε̂) + k·SE` for the gCRC test loss.
    pub fn slack_bound(&self, k: f64) -> f64 {
        self.alpha + self.lipschitz * self.mean_epsilon + k * self.se_test_loss
    }
}

pub fn summarize_risk(rows: &[RiskTrialRow], config: &RiskSyntheticConfig) -> Vec<RiskSummary> {
    let mut out = Vec::new();
    for &alpha in &config.alphas {
        for method in [RiskMethod::Crc, RiskMethod::Gcrc] {
            let sel: Vec<&RiskTrialRow> = rows.iter().filter(|r| r.alpha == alpha && r.method == method).collect();
            let loss = MeanSe::from_slice(&sel.iter().map(|r| r.test_loss).collect::<Vec<_>>());
            let n = sel.len().max(1) as f64;
            out.push(RiskSummary {
                alpha,
                method,
                mean_test_loss: loss.mean,
                se_test_loss: loss.se,
                mean_lambda: sel.iter().map(|r| r.lambda).sum::<f64>() / n,
                mean_epsilon: sel.iter().map(|r| r.epsilon_mean).sum::<f64>() / n,
                lipschitz: sel.iter().map(|r| r.lipschitz).fold(0.0, f64::max),
            });
        }
    }
    out
}
