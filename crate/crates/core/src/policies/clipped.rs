use rand::{Rng, RngCore};

use super::categorical::EnumeratedPolicy;
use super::{enumerate, Policy};
use crate::error::{invalid, CpcError, Result};
use crate::numeric::logsumexp;

/// `min(log π_t(x), log β + log π_0(x))`, the unnormalized clipped
/// log-density. `log_beta = +inf` leaves `π_t` unclipped.
pub fn clipped_unnorm_log_density<S, T>(safe: &S, optimized: &T, log_beta: f64, x: &S::Point) -> f64
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let log_opt = optimized.log_density(x);
    if log_beta == f64::INFINITY {
        return log_opt;
    }
    log_opt.min(log_beta + safe.log_density(x))
}

/// The constrained policy `π^(β)(x) = min(π_t(x), β·π_0(x)) / ψ(β)`.
///
/// Without a cached `log ψ` the density is reported unnormalized.
#[derive(Debug, Clone)]
pub struct ClippedPolicy<S, T> {
    safe: S,
    optimized: T,
    log_beta: f64,
    log_psi: Option<f64>,
}

impl<S, T> ClippedPolicy<S, T>
where
    S: Policy,
    T: Policy<Point = S::Point>,
{
    pub fn new(safe: S, optimized: T, log_beta: f64) -> Result<Self> {
        if log_beta.is_nan() || log_beta == f64::NEG_INFINITY {
            return Err(invalid(format!("log beta must be a number above -inf, got {log_beta}")));
        }
        Ok(Self {
            safe,
            optimized,
            log_beta,
            log_psi: None,
        })
    }

    pub fn with_log_psi(mut self, log_psi: f64) -> Self {
        self.log_psi = Some(log_psi);
        self
    }

    pub fn safe(&self) -> &S {
        &self.safe
    }

    pub fn optimized(&self) -> &T {
        &self.optimized
    }

    pub fn log_beta(&self) -> f64 {
        self.log_beta
    }

    pub fn beta(&self) -> f64 {
        self.log_beta.exp()
    }

    pub fn log_psi(&self) -> Option<f64> {
        self.log_psi
    }

    /// `log π_t(x) − log π_0(x)` (`+inf` where only the safe density vanishes).
    pub fn log_lr(&self, x: &S::Point) -> f64 {
        let log_safe = self.safe.log_density(x);
        let log_opt = self.optimized.log_density(x);
        if log_safe == f64::NEG_INFINITY {
            return if log_opt == f64::NEG_INFINITY { f64::NAN } else { f64::INFINITY };
        }
        log_opt - log_safe
    }

    pub fn unnorm_log_density(&self, x: &S::Point) -> f64 {
        clipped_unnorm_log_density(&self.safe, &self.optimized, self.log_beta, x)
    }

    /// The same pair at another clip level (cached normalizer dropped).
    pub fn at_log_beta(&self, log_beta: f64) -> Result<Self>
    where
        S: Clone,
        T: Clone,
    {
        Self::new(self.safe.clone(), self.optimized.clone(), log_beta)
    }
}

impl<S, T> Policy for ClippedPolicy<S, T>
where
    S: Policy,
    T: Policy<Point = S::Point>,
{
    type Point = S::Point;

    fn log_density(&self, x: &S::Point) -> f64 {
        self.unnorm_log_density(x) - self.log_psi.unwrap_or(0.0)
    }

    /// Exact accept-reject draw: proposals from `π_0` when `β < 1`, from
    /// `π_t` otherwise. Loops until a proposal is accepted.
    fn sample(&self, rng: &mut dyn RngCore) -> S::Point {
        let from_safe = self.log_beta < 0.0;
        loop {
            let x = if from_safe {
                self.safe.sample(rng)
            } else {
                self.optimized.sample(rng)
            };
            let r = self.log_lr(&x);
            let log_accept = if from_safe {
                (r - self.log_beta).min(0.0)
            } else {
                (self.log_beta - r).min(0.0)
            };
            if log_accept.is_nan() {
                continue;
            }
            if rng.random::<f64>().ln() < log_accept || log_accept == 0.0 {
                return x;
            }
        }
    }

    fn support(&self) -> Option<Vec<S::Point>> {
        let mut pts = self.optimized.support()?;
        for x in self.safe.support()? {
            if !pts.contains(&x) {
                pts.push(x);
            }
        }
        pts.retain(|x| self.unnorm_log_density(x) > f64::NEG_INFINITY);
        Some(pts)
    }
}

/// Exact normalizer and normalized constrained law on a finite support.
#[derive(Debug, Clone)]
pub struct NormalizedClip<X> {
    pub log_psi: f64,
    pub policy: EnumeratedPolicy<X>,
}

impl<X> NormalizedClip<X> {
    pub fn psi(&self) -> f64 {
        self.log_psi.exp()
    }
}

/// `ψ(β) = Σ_x min(π_t(x), β·π_0(x))` by enumeration of both supports.
pub fn normalize_exact<S, T>(safe: &S, optimized: &T, log_beta: f64) -> Result<NormalizedClip<S::Point>>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let mut points = enumerate(optimized)?;
    for x in enumerate(safe)? {
        if !points.contains(&x) {
            points.push(x);
        }
    }
    let log_w: Vec<f64> = points
        .iter()
        .map(|x| clipped_unnorm_log_density(safe, optimized, log_beta, x))
        .collect();
    let log_psi = logsumexp(&log_w);
    if log_psi == f64::NEG_INFINITY {
        return Err(CpcError::Numerical("clipped policy has zero mass".into()));
    }
    Ok(NormalizedClip {
        log_psi,
        policy: EnumeratedPolicy::from_log_weights(points, log_w)?,
    })
}
