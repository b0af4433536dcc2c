use rand::{Rng, RngCore};

use super::Policy;
use crate::error::{invalid, Result};
use crate::numeric::logsumexp_iter;

/// `π_mix(x) = Σ_k w_k π_k(x)`.
#[derive(Debug, Clone)]
pub struct MixturePolicy<P> {
    components: Vec<P>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
}

impl<P: Policy> MixturePolicy<P> {
    /// Weights must be nonnegative and sum to one (within `1e-9`).
    pub fn new(components: Vec<P>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() || components.len() != weights.len() {
            return Err(invalid("mixture needs one weight per component and at least one component"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("mixture weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("mixture weights sum to {total}, not 1")));
        }
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self {
            components,
            weights,
            log_weights,
        })
    }

    /// Weights proportional to per-component sample counts.
    pub fn from_counts(components: Vec<P>, counts: &[usize]) -> Result<Self> {
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(invalid("mixture counts are all zero"));
        }
        let weights = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::new(components, weights)
    }

    pub fn components(&self) -> &[P] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl<P: Policy> Policy for MixturePolicy<P> {
    type Point = P::Point;

    fn log_density(&self, x: &P::Point) -> f64 {
        logsumexp_iter(
            self.components
                .iter()
                .zip(&self.log_weights)
                .filter(|(_, lw)| **lw > f64::NEG_INFINITY)
                .map(|(c, lw)| lw + c.log_density(x)),
        )
    }

    fn sample(&self, rng: &mut dyn RngCore) -> P::Point {
        let mut u = rng.random::<f64>();
        let mut pick = 0;
        for (k, w) in self.weights.iter().enumerate() {
            if *w > 0.0 {
                pick = k;
                if u < *w {
                    break;
                }
                u -= w;
            }
        }
        self.components[pick].sample(rng)
    }

    fn support(&self) -> Option<Vec<P::Point>> {
        let mut out: Vec<P::Point> = Vec::new();
        for (c, w) in self.components.iter().zip(&self.weights) {
            if *w == 0.0 {
                continue;
            }
            for x in c.support()? {
                if !out.contains(&x) {
                    out.push(x);
                }
            }
        }
        Some(out)
    }
}
