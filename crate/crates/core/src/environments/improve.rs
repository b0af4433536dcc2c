//! Policy improvement by exponential reward tilting.

use crate::error::{invalid, CpcError, Result};
use crate::policies::{enumerate, Categorical, EnumeratedPolicy, Policy};

/// `π'(x) ∝ π(x)·exp(temperature · reward(x))` on an enumerable support.
pub fn improve_by_tilting<P, F>(policy: &P, reward: F, temperature: f64) -> Result<EnumeratedPolicy<P::Point>>
where
    P: Policy + ?Sized,
    F: Fn(&P::Point) -> f64,
{
    if !(temperature >= 0.0) {
        return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    let points = enumerate(policy)?;
    let log_w = points
        .iter()
        .map(|x| policy.log_density(x) + temperature * reward(x))
        .collect();
    EnumeratedPolicy::from_log_weights(points, log_w)
        .map_err(|_| CpcError::Numerical("tilted policy has zero mass".into()))
}

/// [`improve_by_tilting`] for a categorical with one reward per outcome.
pub fn tilt_categorical(policy: &Categorical, rewards: &[f64], temperature: f64) -> Result<Categorical> {
    if rewards.len() != policy.len() {
        return Err(invalid("one reward per outcome is required"));
    }
    if !(temperature >= 0.0) {
        return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    Categorical::from_log_weights(
        policy
            .log_probs()
            .iter()
            .zip(rewards)
            .map(|(lp, r)| if *lp == f64::NEG_INFINITY { *lp } else { lp + temperature * r })
            .collect(),
    )
}
