use std::fmt::Debug;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::error::{invalid, Result};
use crate::numeric::logsumexp;

/// A distribution over `0..k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CategoricalRepr", into = "CategoricalRepr")]
pub struct Categorical {
    log_probs: Vec<f64>,
    cumulative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CategoricalRepr {
    probs: Vec<f64>,
}

impl TryFrom<CategoricalRepr> for Categorical {
    type Error = crate::CpcError;

    fn try_from(r: CategoricalRepr) -> Result<Self> {
        Self::new(r.probs)
    }
}

impl From<Categorical> for CategoricalRepr {
    fn from(c: Categorical) -> Self {
        Self { probs: c.probs() }
    }
}

impl Categorical {
    /// From probabilities summing to one (within `1e-9`; renormalized exactly).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("categorical needs at least one outcome"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("categorical probabilities must be finite and >= 0"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("categorical probabilities sum to {total}, not 1")));
        }
        Self::from_log_weights(probs.iter().map(|p| p.ln()).collect())
    }

    /// From unnormalized log-weights; `-inf` entries get zero mass.
    pub fn from_log_weights(log_weights: Vec<f64>) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(invalid("categorical needs at least one outcome"));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(invalid("log-weights must be finite or -inf"));
        }
        let norm = logsumexp(&log_weights);
        if norm == f64::NEG_INFINITY {
            return Err(invalid("all log-weights are -inf"));
        }
        let log_probs: Vec<f64> = log_weights.iter().map(|w| w - norm).collect();
        let mut acc = 0.0;
        let cumulative = log_probs
            .iter()
            .map(|lp| {
                acc += lp.exp();
                acc
            })
            .collect();
        Ok(Self {
            log_probs,
            cumulative,
        })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::from_log_weights(vec![0.0; k])
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }

    pub(crate) fn draw_index<R: Rng + ?Sized>(cumulative: &[f64], log_probs: &[f64], rng: &mut R) -> usize {
        let u = rng.random::<f64>() * cumulative[cumulative.len() - 1];
        let k = cumulative.partition_point(|&c| c <= u);
        let k = k.min(cumulative.len() - 1);
        if log_probs[k] > f64::NEG_INFINITY {
            return k;
        }
        // u landed on the edge of a zero-mass run: take the nearest live outcome
        (0..k)
            .rev()
            .chain(k + 1..log_probs.len())
            .find(|&j| log_probs[j] > f64::NEG_INFINITY)
            .expect("at least one outcome has mass")
    }
}

impl Policy for Categorical {
    type Point = usize;

    fn log_density(&self, x: &usize) -> f64 {
        self.log_probs.get(*x).copied().unwrap_or(f64::NEG_INFINITY)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> usize {
        Self::draw_index(&self.cumulative, &self.log_probs, rng)
    }

    fn support(&self) -> Option<Vec<usize>> {
        Some((0..self.len()).collect())
    }
}

/// `p(a) ∝ exp(temperature · (σ²_a − min σ²) / (max σ² − min σ²))`:
/// acquisition tilted toward high posterior variance. Uniform when all
/// variances are equal.
pub fn tilted_acquisition(variances: &[f64], temperature: f64) -> Result<Categorical> {
    if variances.is_empty() {
        return Err(invalid("acquisition needs at least one candidate"));
    }
    if !(temperature >= 0.0) {
        return Err(invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    let lo = variances.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = variances.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let logits = variances
        .iter()
        .map(|v| if span > 0.0 { temperature * (v - lo) / span } else { 0.0 })
        .collect();
    Categorical::from_log_weights(logits)
}

/// An explicit finite distribution over arbitrary points.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPolicy<X> {
    points: Vec<X>,
    log_probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<X: Clone + PartialEq + Debug> EnumeratedPolicy<X> {
    /// From points and unnormalized log-weights.
    pub fn from_log_weights(points: Vec<X>, log_weights: Vec<f64>) -> Result<Self> {
        if points.len() != log_weights.len() {
            return Err(invalid("points and weights differ in length"));
        }
        let cat = Categorical::from_log_weights(log_weights)?;
        Ok(Self {
            points,
            log_probs: cat.log_probs,
            cumulative: cat.cumulative,
        })
    }

    pub fn points(&self) -> &[X] {
        &self.points
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }
}

impl<X: Clone + PartialEq + Debug> Policy for EnumeratedPolicy<X> {
    type Point = X;

    fn log_density(&self, x: &X) -> f64 {
        self.points
            .iter()
            .position(|p| p == x)
            .map_or(f64::NEG_INFINITY, |k| self.log_probs[k])
    }

    fn sample(&self, rng: &mut dyn RngCore) -> X {
        self.points[Categorical::draw_index(&self.cumulative, &self.log_probs, rng)].clone()
    }

    fn support(&self) -> Option<Vec<X>> {
        Some(
            self.points
                .iter()
                .zip(&self.log_probs)
                .filter(|(_, lp)| **lp > f64::NEG_INFINITY)
                .map(|(p, _)| p.clone())
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::trial_rng;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_probs() {
        assert!(Categorical::new(vec![]).is_err());
        assert!(Categorical::new(vec![0.5, 0.6]).is_err());
        assert!(Categorical::new(vec![-0.1, 1.1]).is_err());
        assert!(Categorical::from_log_weights(vec![f64::NEG_INFINITY]).is_err());
    }

    #[test]
    fn sampling_matches_probs_and_skips_zero_mass() {
        let c = Categorical::new(vec![0.0, 0.7, 0.0, 0.3]).unwrap();
        let mut rng = trial_rng(1, 0);
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[c.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[0] + counts[2], 0);
        assert!((counts[1] as f64 / 20_000.0 - 0.7).abs() < 0.02);
    }

    #[test]
    fn acquisition_examples() {
        let flat = tilted_acquisition(&[1.0, 2.0, 4.0], 0.0).unwrap();
        for p in flat.probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let equal = tilted_acquisition(&[3.0, 3.0], 5.0).unwrap();
        assert_eq!(equal.probs(), vec![0.5, 0.5]);

        // normalized variances (0, 1/3, 1) times 10
        let t = tilted_acquisition(&[1.0, 2.0, 4.0], 10.0).unwrap();
        let logits = [0.0, 10.0 / 3.0, 10.0];
        let z: f64 = logits.iter().map(|l: &f64| l.exp()).sum();
        for (p, l) in t.probs().iter().zip(logits) {
            assert!((p - l.exp() / z).abs() < 1e-14);
        }
    }

    #[test]
    fn json_roundtrip() {
        let c = Categorical::new(vec![0.25, 0.75]).unwrap();
        let s = serde_json::to_string(&c).unwrap();
        let back: Categorical = serde_json::from_str(&s).unwrap();
        for (a, b) in back.probs().iter().zip(c.probs()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(serde_json::from_str::<Categorical>(r#"{"probs":[0.2,0.2]}"#).is_err());
    }

    proptest! {
        #[test]
        fn normalized(ws in prop::collection::vec(-20.0..20.0f64, 1..64)) {
            let c = Categorical::from_log_weights(ws).unwrap();
            let total: f64 = c.probs().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn acquisition_normalized(vs in prop::collection::vec(0.0..5.0f64, 1..30), t in 0.0..50.0f64) {
            let c = tilted_acquisition(&vs, t).unwrap();
            prop_assert!((c.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
