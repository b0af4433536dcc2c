//! Experiment environments and the policy-control round loop.
//!
//! A round collects data from the safe policy, improves it, calibrates the
//! clip `β̂` on held-out data and deploys the constrained policy by
//! accept-reject:
//!
//! 1. draw `n` actions from `π_0`, observe rewards and losses, split into
//!    train and calibration sets;
//! 2. `π_t ← improve(π_0, train)`;
//! 3. `β̂ ← calibrate_beta(π_0, π_t, cal)`;
//! 4. draw actions from `π_t^(β̂)` and log their realized losses.

pub mod active_learning;
pub mod fdr;
pub mod gaussian;
pub mod improve;
pub mod risk_synthetic;
pub mod sequence;

use std::fmt::Debug;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::calibration::{calibrate_beta, BetaReport, CalSample, CalibrationConfig, CalibrationData};
use crate::error::{invalid, Result};
use crate::policies::{ClippedPolicy, Policy};
use crate::samplers::rejection_sample;

pub use improve::{improve_by_tilting, tilt_categorical};

/// Rewards and losses of actions.
pub trait Environment {
    type Point: Clone + PartialEq + Debug;

    /// Loss in `[0, bound()]`.
    fn loss(&self, x: &Self::Point) -> f64;

    fn reward(&self, x: &Self::Point) -> f64;

    fn bound(&self) -> f64 {
        1.0
    }
}

/// One action taken in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord<X> {
    pub context: usize,
    pub action: X,
    pub reward: f64,
    pub loss: f64,
}

impl<X: Clone> ActionRecord<X> {
    pub fn observe<E: Environment<Point = X>>(env: &E, context: usize, action: X) -> Self {
        Self {
            context,
            reward: env.reward(&action),
            loss: env.loss(&action),
            action,
        }
    }
}

/// What one round of constrained deployment produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog<X> {
    pub round: usize,
    #[serde(with = "crate::numeric::ext_float")]
    pub beta_hat: f64,
    /// Weighted risk at `β̂` estimated during calibration.
    pub risk_estimate: f64,
    pub records: Vec<ActionRecord<X>>,
    pub proposals: usize,
    pub accepts: usize,
    pub acceptance_rate: f64,
    /// The proposal budget ran out before every requested action was drawn.
    pub degenerate: bool,
}

impl<X> RoundLog<X> {
    pub fn mean_loss(&self) -> f64 {
        mean(self.records.iter().map(|r| r.loss))
    }

    pub fn mean_reward(&self) -> f64 {
        mean(self.records.iter().map(|r| r.reward))
    }

    pub fn best_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).fold(f64::NEG_INFINITY, f64::max)
    }
}

pub(crate) fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { f64::NAN } else { sum / n as f64 }
}

/// Sizes for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundConfig {
    /// Actions drawn from the safe policy in phase 1.
    pub n_safe: usize,
    /// Fraction of phase-1 data used to improve the policy.
    pub train_fraction: f64,
    /// Draws from `π_t` used to estimate `ψ` and probe `ŵ_max`.
    pub n_proposals: usize,
    /// Actions deployed in phase 4.
    pub n_deploy: usize,
    /// Accept-reject proposals allowed per deployed action.
    pub budget_per_action: usize,
    pub calibration: CalibrationConfig,
}

impl Default for RoundConfig {
    fn default() -> Self {
        Self {
            n_safe: 100,
            train_fraction: 0.5,
            n_proposals: 100,
            n_deploy: 100,
            budget_per_action: 10_000,
            calibration: CalibrationConfig::default(),
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_safe < 2 || self.n_proposals == 0 || self.n_deploy == 0 || self.budget_per_action == 0 {
            return Err(invalid("round sizes must be positive (and n_safe >= 2)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(invalid(format!("train fraction must lie in (0, 1), got {}", self.train_fraction)));
        }
        Ok(())
    }
}

/// Result of [`cpc_round`].
#[derive(Debug, Clone)]
pub struct RoundOutcome<S, T, X> {
    pub log: RoundLog<X>,
    pub report: BetaReport,
    pub train: Vec<ActionRecord<X>>,
    pub cal: Vec<CalSample<X>>,
    pub deployed: ClippedPolicy<S, T>,
}

/// Deterministic train/calibration split: records are shuffled and the first
/// `round(n · train_fraction)` go to training.
pub fn random_split<X: Clone>(
    records: &[ActionRecord<X>],
    train_fraction: f64,
    rng: &mut dyn RngCore,
) -> (Vec<ActionRecord<X>>, Vec<ActionRecord<X>>) {
    let mut order: Vec<usize> = (0..records.len()).collect();
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((records.len() as f64) * train_fraction).round() as usize;
    let (a, b) = order.split_at(n_train.min(records.len()));
    (
        a.iter().map(|&i| records[i].clone()).collect(),
        b.iter().map(|&i| records[i].clone()).collect(),
    )
}

/// Draw `n` actions from the constrained policy and log them.
pub fn deploy<E, S, T>(
    env: &E,
    policy: &ClippedPolicy<S, T>,
    round: usize,
    report: &BetaReport,
    n: usize,
    budget_per_action: usize,
    rng: &mut dyn RngCore,
) -> Result<RoundLog<E::Point>>
where
    E: Environment,
    S: Policy<Point = E::Point>,
    T: Policy<Point = E::Point>,
{
    let batch = rejection_sample(policy, n, n.saturating_mul(budget_per_action), rng)?;
    let records = batch
        .accepted
        .into_iter()
        .enumerate()
        .map(|(i, a)| ActionRecord::observe(env, i, a))
        .collect::<Vec<_>>();
    Ok(RoundLog {
        round,
        beta_hat: report.beta_hat,
        risk_estimate: report.weighted_risk[report.beta_index],
        degenerate: records.len() < n,
        accepts: records.len(),
        records,
        proposals: batch.proposals,
        acceptance_rate: batch.acceptance_rate,
    })
}

/// One round of constrained deployment starting from the safe policy.
///
/// `improve` receives the safe policy and the training records and returns
/// the optimized policy.
pub fn cpc_round<E, S, T, F>(
    env: &E,
    safe: &S,
    improve: F,
    alpha: f64,
    config: &RoundConfig,
    rng: &mut dyn RngCore,
) -> Result<RoundOutcome<S, T, E::Point>>
where
    E: Environment,
    S: Policy<Point = E::Point> + Clone,
    T: Policy<Point = E::Point> + Clone,
    F: FnOnce(&S, &[ActionRecord<E::Point>]) -> Result<T>,
{
    config.validate()?;
    let bound = env.bound();
    let phase1: Vec<ActionRecord<E::Point>> = (0..config.n_safe)
        .map(|i| ActionRecord::observe(env, i, safe.sample(rng)))
        .collect();
    let (train, cal_records) = random_split(&phase1, config.train_fraction, rng);

    let optimized = improve(safe, &train)?;

    let cal: Vec<CalSample<E::Point>> = cal_records
        .into_iter()
        .map(|r| CalSample {
            point: r.action,
            loss: r.loss,
            round: 0,
        })
        .collect();
    let proposals: Vec<E::Point> = (0..config.n_proposals).map(|_| optimized.sample(rng)).collect();
    let data = CalibrationData {
        cal: &cal,
        proposals: &proposals,
        extra_probes: &[],
    };
    let report = calibrate_beta(safe, &optimized, safe, &data, alpha, bound, &config.calibration)?;
    let log_psi = report.psi_hat[report.beta_index].ln();
    let deployed = ClippedPolicy::new(safe.clone(), optimized, report.log_beta_hat())?.with_log_psi(log_psi);

    let log = deploy(env, &deployed, 1, &report, config.n_deploy, config.budget_per_action, rng)?;
    Ok(RoundOutcome {
        log,
        report,
        train,
        cal,
        deployed,
    })
}
