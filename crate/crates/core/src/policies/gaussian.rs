use std::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::error::{invalid, Result};

/// Independent normal coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(invalid("gaussian mean and std must be non-empty and equal length"));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
            return Err(invalid("gaussian parameters must be finite with std > 0"));
        }
        Ok(Self { mean, std })
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The exponential tilt `∝ π(x)·exp(slope·x)`, which for a Gaussian is
    /// again Gaussian with mean shifted by `σ²·slope`.
    pub fn tilted_linear(&self, slope: &[f64]) -> Result<Self> {
        if slope.len() != self.dim() {
            return Err(invalid("tilt slope has the wrong dimension"));
        }
        let mean = self
            .mean
            .iter()
            .zip(&self.std)
            .zip(slope)
            .map(|((m, s), w)| m + s * s * w)
            .collect();
        Self::new(mean, self.std.clone())
    }
}

impl Policy for DiagGaussian {
    type Point = Vec<f64>;

    fn log_density(&self, x: &Vec<f64>) -> f64 {
        if x.len() != self.dim() {
            return f64::NEG_INFINITY;
        }
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| {
                let z = (x - m) / s;
                -0.5 * z * z - s.ln() - 0.5 * (2.0 * PI).ln()
            })
            .sum()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| {
                let z: f64 = StandardNormal.sample(rng);
                m + s * z
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::trial_rng;
    use statrs::distribution::{Continuous, Normal};

    #[test]
    fn log_density_matches_reference() {
        let g = DiagGaussian::new(vec![1.0, -2.0], vec![0.5, 2.0]).unwrap();
        let x = vec![0.3, 0.7];
        let a = Normal::new(1.0, 0.5).unwrap().ln_pdf(0.3);
        let b = Normal::new(-2.0, 2.0).unwrap().ln_pdf(0.7);
        assert!((g.log_density(&x) - (a + b)).abs() < 1e-12);
        assert_eq!(g.log_density(&vec![0.0]), f64::NEG_INFINITY);
    }

    #[test]
    fn tilt_shifts_mean() {
        let g = DiagGaussian::standard(1).unwrap();
        let t = g.tilted_linear(&[2.0]).unwrap();
        assert_eq!(t.mean(), &[2.0]);
        // density ratio must be proportional to exp(2x)
        let r = |x: f64| t.log_density(&vec![x]) - g.log_density(&vec![x]) - 2.0 * x;
        assert!((r(0.3) - r(-1.7)).abs() < 1e-12);
    }

    #[test]
    fn sample_moments() {
        let g = DiagGaussian::new(vec![3.0], vec![2.0]).unwrap();
        let mut rng = trial_rng(5, 0);
        let xs: Vec<f64> = (0..40_000).map(|_| g.sample(&mut rng)[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((mean - 3.0).abs() < 0.05);
        assert!((var - 4.0).abs() < 0.15);
    }
}
