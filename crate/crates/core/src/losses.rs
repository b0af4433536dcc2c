//! Loss functions evaluated over hyperparameter grids.
//!
//! A [`LossCurve`] stores `L_i(λ)` at every point of a shared [`Grid`] as a
//! right-continuous step function; calibrators only ever query grid points.
//! Claim-filtering losses (false discovery rate, recall, any-false indicator)
//! map a [`ClaimRecord`] and a threshold `τ` to a value in `[0, 1]`; a claim is
//! included when `score >= τ`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CpcError, Result};
use crate::numeric::trial_rng;

/// Which end of a grid is declared safe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeEnd {
    /// `λ_max`: the largest point (threshold grids).
    Max,
    /// `β_min`: the smallest point (likelihood-ratio grids).
    Min,
}

/// Strictly increasing hyperparameter candidates.
///
/// Points are finite, except that the last point may be `+inf` (the
/// unconstrained sentinel of a `β` grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    #[serde(with = "crate::numeric::ext_float::vec")]
    points: Vec<f64>,
    safe: Option<SafeEnd>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        Self::build(points, None)
    }

    /// A threshold grid whose largest point is the safe `λ_max`.
    pub fn with_safe_max(points: Vec<f64>) -> Result<Self> {
        Self::build(points, Some(SafeEnd::Max))
    }

    /// A `β` grid whose smallest point is the floor `β_min`.
    pub fn with_safe_min(points: Vec<f64>) -> Result<Self> {
        Self::build(points, Some(SafeEnd::Min))
    }

    /// `n` evenly spaced points on `[lo, hi]`, the last one safe.
    pub fn linspace_safe_max(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) {
            return Err(CpcError::InvalidGrid(format!(
                "linspace needs n >= 2 and hi > lo (n={n}, lo={lo}, hi={hi})"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut points: Vec<f64> = (0..n).map(|k| lo + step * k as f64).collect();
        points[n - 1] = hi;
        Self::with_safe_max(points)
    }

    fn build(points: Vec<f64>, safe: Option<SafeEnd>) -> Result<Self> {
        if points.is_empty() {
            return Err(CpcError::InvalidGrid("grid is empty".into()));
        }
        let last = points.len() - 1;
        for (k, &p) in points.iter().enumerate() {
            let ok = p.is_finite() || (k == last && p == f64::INFINITY && k > 0);
            if !ok {
                return Err(CpcError::InvalidGrid(format!("non-finite point {p} at index {k}")));
            }
        }
        if let Some(k) = points.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(CpcError::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                k + 1
            )));
        }
        Ok(Self { points, safe })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn safe_end(&self) -> Option<SafeEnd> {
        self.safe
    }

    /// The declared safe value, if any.
    pub fn safe_value(&self) -> Option<f64> {
        match self.safe? {
            SafeEnd::Max => self.points.last().copied(),
            SafeEnd::Min => self.points.first().copied(),
        }
    }

    /// Largest point; the fallback of every `λ` selector.
    pub fn max_point(&self) -> f64 {
        *self.points.last().expect("grid is non-empty")
    }

    pub fn index_of(&self, value: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == value)
    }
}

/// `L_i(λ)` at every grid point, bounded by `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    values: Vec<f64>,
    bound: f64,
}

impl LossCurve {
    pub fn new(values: Vec<f64>, bound: f64) -> Result<Self> {
        if !(bound > 0.0 && bound.is_finite()) {
            return Err(CpcError::InvalidLoss(format!("bound must be finite and > 0, got {bound}")));
        }
        if values.is_empty() {
            return Err(CpcError::InvalidLoss("curve has no values".into()));
        }
        if let Some((k, v)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !(0.0..=bound).contains(&v))
        {
            return Err(CpcError::InvalidLoss(format!(
                "value {v} at index {k} outside [0, {bound}]"
            )));
        }
        Ok(Self { values, bound })
    }

    /// Constant curve `c` over `len` grid points.
    pub fn constant(c: f64, len: usize, bound: f64) -> Result<Self> {
        Self::new(vec![c; len], bound)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Nonincreasing over the grid.
    pub fn is_nonincreasing(&self) -> bool {
        self.values.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Suffix maximum `L̃(λ_k) = max_{j >= k} L(λ_j)`: the smallest nonincreasing
/// curve dominating the input.
pub fn monotonize(curve: &LossCurve) -> LossCurve {
    let mut out = curve.values.clone();
    for k in (0..out.len().saturating_sub(1)).rev() {
        out[k] = out[k].max(out[k + 1]);
    }
    LossCurve {
        values: out,
        bound: curve.bound,
    }
}

/// Largest absolute slope between adjacent grid points over a family of
/// curves: the grid Lipschitz constant in `λ` units.
pub fn grid_lipschitz(curves: &[LossCurve], grid: &Grid) -> f64 {
    let pts = grid.points();
    curves
        .iter()
        .flat_map(|c| {
            c.values
                .windows(2)
                .zip(pts.windows(2))
                .map(|(v, p)| ((v[1] - v[0]) / (p[1] - p[0])).abs())
        })
        .fold(0.0, f64::max)
}

/// One response's subclaims: confidence scores with factuality labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ClaimRecord {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        let r = Self { scores, labels };
        r.validate().map_err(|reason| CpcError::MalformedClaim { index: 0, reason })?;
        Ok(r)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.scores.len() != self.labels.len() {
            return Err(format!(
                "{} scores but {} labels",
                self.scores.len(),
                self.labels.len()
            ));
        }
        if let Some(s) = self.scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(format!("score {s} outside [0, 1]"));
        }
        if let Some(l) = self.labels.iter().find(|&&l| l > 1) {
            return Err(format!("label {l} is not 0 or 1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn included(&self, tau: f64) -> impl Iterator<Item = u8> + '_ {
        self.scores
            .iter()
            .zip(&self.labels)
            .filter(move |(&s, _)| s >= tau)
            .map(|(_, &l)| l)
    }
}

/// Fraction of included claims that are false; `0` when nothing is included.
pub fn fdr_loss(claims: &ClaimRecord, tau: f64) -> f64 {
    let (mut included, mut false_included) = (0usize, 0usize);
    for label in claims.included(tau) {
        included += 1;
        if label == 0 {
            false_included += 1;
        }
    }
    if included == 0 {
        0.0
    } else {
        false_included as f64 / included as f64
    }
}

/// Fraction of true claims retained; `1` when the record has no true claims.
pub fn recall(claims: &ClaimRecord, tau: f64) -> f64 {
    let total_true = claims.labels.iter().filter(|&&l| l == 1).count();
    if total_true == 0 {
        return 1.0;
    }
    let kept = claims.included(tau).filter(|&l| l == 1).count();
    kept as f64 / total_true as f64
}

/// `1` iff some included claim is false.
pub fn binary_loss(claims: &ClaimRecord, tau: f64) -> f64 {
    if claims.included(tau).any(|l| l == 0) {
        1.0
    } else {
        0.0
    }
}

/// Which claim loss to tabulate over a threshold grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClaimLoss {
    Fdr,
    Binary,
}

/// Tabulate a claim loss over the grid (bound `B = 1`).
pub fn claim_loss_curve(claims: &ClaimRecord, grid: &Grid, kind: ClaimLoss) -> LossCurve {
    let f = match kind {
        ClaimLoss::Fdr => fdr_loss,
        ClaimLoss::Binary => binary_loss,
    };
    LossCurve {
        values: grid.points().iter().map(|&t| f(claims, t)).collect(),
        bound: 1.0,
    }
}

/// Add `Uniform(-magnitude, magnitude)` noise to every score to break ties,
/// clamping back into `[0, 1]`.
pub fn jitter_scores<R: Rng + ?Sized>(records: &mut [ClaimRecord], magnitude: f64, rng: &mut R) {
    if magnitude <= 0.0 {
        return;
    }
    let noise = Uniform::new_inclusive(-magnitude, magnitude).expect("magnitude > 0");
    for r in records {
        for s in &mut r.scores {
            *s = (*s + noise.sample(rng)).clamp(0.0, 1.0);
        }
    }
}

/// Parse the claims JSON schema: `[{"scores": [...], "labels": [0|1, ...]}, ...]`.
///
/// Reports the index of the first malformed record.
pub fn parse_claims(json: &str) -> Result<Vec<ClaimRecord>> {
    let raw: Vec<serde_json::Value> = serde_json::from_str(json)?;
    raw.into_iter()
        .enumerate()
        .map(|(index, v)| {
            let rec: ClaimRecord = serde_json::from_value(v).map_err(|e| CpcError::MalformedClaim {
                index,
                reason: e.to_string(),
            })?;
            rec.validate()
                .map_err(|reason| CpcError::MalformedClaim { index, reason })?;
            Ok(rec)
        })
        .collect()
}

pub fn load_claims(path: &Path) -> Result<Vec<ClaimRecord>> {
    parse_claims(&std::fs::read_to_string(path)?)
}

pub fn save_claims(path: &Path, records: &[ClaimRecord]) -> Result<()> {
    std::fs::write(path, serde_json::to_string(records)?)?;
    Ok(())
}

/// The three-curve bag on which the empirical gCRC selector over-spends:
/// with `B = 1.5 α` on the grid `(λ1, λ2, λ3, λ_max) = (1, 2, 3, 4)`,
///
/// ```text
/// l1 = (B,   B/2, 0, 0)
/// l2 = (B/2, B,   0, 0)
/// l3 = (B/2, 0,   B, 0)
/// ```
///
/// Holding out each curve in turn, the selected threshold lands on that
/// curve's peak, so the bag-conditional risk is `B > α`.
pub fn counterexample_losses(alpha: f64) -> Result<(Grid, [LossCurve; 3])> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1], got {alpha}")));
    }
    let b = 1.5 * alpha;
    let grid = Grid::with_safe_max(vec![1.0, 2.0, 3.0, 4.0])?;
    let curves = [
        LossCurve::new(vec![b, b / 2.0, 0.0, 0.0], b)?,
        LossCurve::new(vec![b / 2.0, b, 0.0, 0.0], b)?,
        LossCurve::new(vec![b / 2.0, 0.0, b, 0.0], b)?,
    ];
    Ok((grid, curves))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smooth non-monotonic losses: a decreasing baseline plus a sigmoid bump,
/// tapered to `0` at `λ_max` and clipped to `[0, B]`.
///
/// With `u ∈ [0, 1]` the position on the grid,
/// `L(u) = min(B, a(1-u) + h·σ((u-c₁)/w)·σ((c₂-u)/w)·min(1, 4(1-u)))`
/// with `a ~ U(0.2, 0.6)·B`, `h ~ U(0.5, 1)·B`, bump centre `c ~ U(0.35, 0.65)`,
/// half-width `U(0.08, 0.15)` and edge width `w ~ U(0.02, 0.05)`.
pub fn synthetic_nonmonotonic_family(
    seed: u64,
    n: usize,
    grid: &Grid,
    bound: f64,
) -> Result<Vec<LossCurve>> {
    let mut rng = trial_rng(seed, 0);
    sample_smooth_family(&mut rng, n, grid, bound)
}

/// Same recipe as [`synthetic_nonmonotonic_family`], drawing from a caller
/// stream so Monte Carlo trials can share one generator.
pub fn sample_smooth_family<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    grid: &Grid,
    bound: f64,
) -> Result<Vec<LossCurve>> {
    if grid.len() < 2 {
        return Err(CpcError::InvalidGrid("need at least two grid points".into()));
    }
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(CpcError::InvalidLoss(format!("bound must be finite and > 0, got {bound}")));
    }
    let pts = grid.points();
    let (lo, hi) = (pts[0], grid.max_point());
    if !hi.is_finite() {
        return Err(CpcError::InvalidGrid("loss grids must be finite".into()));
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let a = rng.random_range(0.2..0.6) * bound;
        let h = rng.random_range(0.5..1.0) * bound;
        let c = rng.random_range(0.35..0.65);
        let half = rng.random_range(0.08..0.15);
        let w = rng.random_range(0.02..0.05);
        let values = pts
            .iter()
            .map(|&p| {
                let u = (p - lo) / (hi - lo);
                let bump = sigmoid((u - (c - half)) / w) * sigmoid(((c + half) - u) / w);
                let taper = (4.0 * (1.0 - u)).min(1.0);
                (a * (1.0 - u) + h * bump * taper).clamp(0.0, bound)
            })
            .collect();
        out.push(LossCurve { values, bound });
    }
    Ok(out)
}

/// Spiky discrete losses: every grid point except `λ_max` independently takes
/// `B` with probability `rate` (else `0`); `λ_max` is always `0`.
///
/// Every non-safe threshold has the same true risk `rate·B`, so a selector
/// that stops at the first threshold whose empirical risk happens to dip
/// below `α` lands on a point with risk `rate·B`.
pub fn sample_spike_family<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    grid_len: usize,
    rate: f64,
    bound: f64,
) -> Vec<LossCurve> {
    (0..n)
        .map(|_| {
            let mut values: Vec<f64> = (0..grid_len)
                .map(|_| if rng.random::<f64>() < rate { bound } else { 0.0 })
                .collect();
            if let Some(last) = values.last_mut() {
                *last = 0.0;
            }
            LossCurve { values, bound }
        })
        .collect()
}
