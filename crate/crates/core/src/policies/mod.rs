//! Probability models with exact log-densities.
//!
//! Every policy evaluates `log π(x)` (with `-inf` for points outside its
//! support) and draws samples from caller-owned randomness. The
//! [`ClippedPolicy`] combines a safe and an optimized policy into the
//! constrained density `∝ min(π_t(x), β·π_0(x))`.

mod categorical;
mod clipped;
mod gaussian;
mod markov;
mod mixture;
mod spec;

use std::fmt::Debug;
use std::sync::Arc;

use rand::RngCore;

pub use categorical::{tilted_acquisition, Categorical, EnumeratedPolicy};
pub use clipped::{clipped_unnorm_log_density, normalize_exact, ClippedPolicy, NormalizedClip};
pub use gaussian::DiagGaussian;
pub use markov::{fit_markov, BannedBigrams, MarkovSequencePolicy};
pub use mixture::MixturePolicy;
pub use spec::{Action, AnyPolicy, PolicySpec};

use crate::error::{CpcError, Result};

/// An evaluable, sampleable probability model.
pub trait Policy {
    type Point: Clone + PartialEq + Debug;

    /// `log π(x)`; `-inf` outside the support.
    fn log_density(&self, x: &Self::Point) -> f64;

    /// One draw. Never returns a point with `log_density = -inf`.
    fn sample(&self, rng: &mut dyn RngCore) -> Self::Point;

    /// Every point with positive mass, when the support is small enough to
    /// enumerate.
    fn support(&self) -> Option<Vec<Self::Point>> {
        None
    }
}

macro_rules! forward_policy {
    ($ty:ty) => {
        impl<P: Policy + ?Sized> Policy for $ty {
            type Point = P::Point;

            fn log_density(&self, x: &Self::Point) -> f64 {
                (**self).log_density(x)
            }

            fn sample(&self, rng: &mut dyn RngCore) -> Self::Point {
                (**self).sample(rng)
            }

            fn support(&self) -> Option<Vec<Self::Point>> {
                (**self).support()
            }
        }
    };
}

forward_policy!(&P);
forward_policy!(Box<P>);
forward_policy!(Arc<P>);

/// Shared, thread-safe policy over points of type `X`.
pub type SharedPolicy<X> = Arc<dyn Policy<Point = X> + Send + Sync>;

/// `log π_t(x) − log π_0(x)`.
///
/// Errors when the safe density vanishes at `x`; returns `-inf` when only the
/// optimized density does.
pub fn log_likelihood_ratio<S, T>(optimized: &T, safe: &S, x: &S::Point) -> Result<f64>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let log_safe = safe.log_density(x);
    if log_safe == f64::NEG_INFINITY {
        return Err(CpcError::ZeroDensity(format!("safe policy at {x:?}")));
    }
    Ok(optimized.log_density(x) - log_safe)
}

/// Enumerate a policy's support or fail.
pub(crate) fn enumerate<P: Policy + ?Sized>(p: &P) -> Result<Vec<P::Point>> {
    p.support().ok_or(CpcError::NotEnumerable)
}
