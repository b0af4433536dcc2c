//! One-dimensional Gaussian pair: safe `N(0, 1)`, optimized `N(shift, 1)`,
//! loss `1{x > threshold}`.

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{cpc_round, Environment, RoundConfig, RoundOutcome};
use crate::error::{invalid, Result};
use crate::policies::DiagGaussian;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaussianPairEnv {
    /// Mean of the optimized policy.
    pub shift: f64,
    /// Actions above this value incur loss 1.
    pub threshold: f64,
}

impl Default for GaussianPairEnv {
    fn default() -> Self {
        Self {
            shift: 2.0,
            threshold: 1.645,
        }
    }
}

impl Environment for GaussianPairEnv {
    type Point = Vec<f64>;

    fn loss(&self, x: &Vec<f64>) -> f64 {
        if x[0] > self.threshold { 1.0 } else { 0.0 }
    }

    fn reward(&self, x: &Vec<f64>) -> f64 {
        x[0]
    }
}

impl GaussianPairEnv {
    pub fn validate(&self) -> Result<()> {
        if !(self.shift > 0.0 && self.shift.is_finite() && self.threshold.is_finite()) {
            return Err(invalid("gaussian env needs a positive finite shift and a finite threshold"));
        }
        Ok(())
    }

    pub fn safe(&self) -> DiagGaussian {
        DiagGaussian::standard(1).expect("dimension 1")
    }

    pub fn optimized(&self) -> DiagGaussian {
        self.safe().tilted_linear(&[self.shift]).expect("finite slope")
    }

    /// Expected loss of the clipped policy `∝ min(π_t, β·π_0)` in closed form.
    ///
    /// The likelihood ratio `exp(shift·x − shift²/2)` crosses `β` at
    /// `x* = ln β / shift + shift / 2`; below it the clipped density is `π_t`,
    /// above it `β·π_0`.
    pub fn expected_loss(&self, beta: f64) -> f64 {
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let tail = |mean: f64, from: f64| 1.0 - std.cdf(from - mean);
        let mass = |mean: f64, lo: f64, hi: f64| {
            if hi <= lo { 0.0 } else { std.cdf(hi - mean) - std.cdf(lo - mean) }
        };
        if beta == f64::INFINITY {
            return tail(self.shift, self.threshold);
        }
        let cross = beta.ln() / self.shift + self.shift / 2.0;
        let psi = std.cdf(cross - self.shift) + beta * tail(0.0, cross);
        let t = self.threshold;
        let lossy = mass(self.shift, t, cross) + beta * tail(0.0, cross.max(t));
        lossy / psi
    }

    /// One round from `N(0, 1)` with `π_t = N(shift, 1)`.
    pub fn round(
        &self,
        alpha: f64,
        config: &RoundConfig,
        rng: &mut dyn RngCore,
    ) -> Result<RoundOutcome<DiagGaussian, DiagGaussian, Vec<f64>>> {
        self.validate()?;
        let optimized = self.optimized();
        cpc_round(self, &self.safe(), |_, _| Ok(optimized), alpha, config, rng)
    }
}
