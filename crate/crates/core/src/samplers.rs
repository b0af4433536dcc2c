//! Sampling the constrained policy without its normalizer.
//!
//! The target is the unnormalized density `p̃(x) = min(π_t(x), β·π_0(x))`.
//! Accept-reject with proposal `q` and envelope `M ≥ p̃/q` accepts with
//! probability `p̃(x)/(M q(x))` and has marginal rate `ψ(β)/M`:
//!
//! | proposal             | envelope `M` | acceptance                    |
//! |----------------------|--------------|-------------------------------|
//! | `π_0`                | `β`          | `min(LR/β, 1)`                |
//! | `π_t`                | `1`          | `min(β/LR, 1)`                |
//! | `w π_0 + (1-w) π_t`  | estimated    | `p̃/(M q_w)`, clamped at 1     |
//!
//! Every sampler takes a proposal budget and returns a partial batch when it
//! runs out.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, CpcError, Result};
use crate::numeric::log_add_exp;
use crate::policies::{clipped_unnorm_log_density, ClippedPolicy, Policy};

/// Default multiplier on an estimated envelope.
pub const DEFAULT_ENVELOPE_INFLATION: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProposalKind {
    Safe,
    Optimized,
    Mixture,
}

/// Accepted draws and accept-reject bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch<X> {
    pub accepted: Vec<X>,
    pub proposals: usize,
    pub acceptance_rate: f64,
    pub kind: ProposalKind,
    pub envelope: f64,
    /// Draws whose acceptance probability exceeded one and was clamped.
    pub violations: usize,
    pub log_beta: f64,
}

impl<X> SampleBatch<X> {
    /// Exact draws from the target: no envelope violations occurred.
    pub fn is_exact(&self) -> bool {
        self.violations == 0
    }

    pub fn diagnostics(&self) -> serde_json::Value {
        let f = |x: f64| crate::numeric::ext_float::to_repr(x);
        json!({
            "kind": self.kind,
            "beta": f(self.log_beta.exp()),
            "proposals": self.proposals,
            "accepts": self.accepted.len(),
            "rate": self.acceptance_rate,
            "envelope": f(self.envelope),
            "violations": self.violations,
        })
    }
}

fn check_budget(n_accept: usize, budget: usize) -> Result<()> {
    if budget == 0 {
        return Err(invalid("sampling budget must be >= 1"));
    }
    if n_accept == 0 {
        return Err(invalid("requested accept count must be >= 1"));
    }
    Ok(())
}

/// Shared accept-reject loop. `log_accept` returns the log acceptance
/// probability before clamping.
fn accept_reject<X>(
    n_accept: usize,
    budget: usize,
    rng: &mut dyn RngCore,
    mut propose: impl FnMut(&mut dyn RngCore) -> X,
    mut log_accept: impl FnMut(&X) -> f64,
) -> (Vec<X>, usize, usize) {
    let mut accepted = Vec::with_capacity(n_accept);
    let mut proposals = 0;
    let mut violations = 0;
    while accepted.len() < n_accept && proposals < budget {
        proposals += 1;
        let x = propose(rng);
        let mut la = log_accept(&x);
        if la.is_nan() {
            continue;
        }
        if la > 1e-12 {
            violations += 1;
        }
        la = la.min(0.0);
        if la == 0.0 || rng.random::<f64>().ln() < la {
            accepted.push(x);
        }
    }
    (accepted, proposals, violations)
}

fn batch<X>(
    (accepted, proposals, violations): (Vec<X>, usize, usize),
    kind: ProposalKind,
    envelope: f64,
    log_beta: f64,
) -> SampleBatch<X> {
    let acceptance_rate = if proposals == 0 { 0.0 } else { accepted.len() as f64 / proposals as f64 };
    SampleBatch {
        accepted,
        proposals,
        acceptance_rate,
        kind,
        envelope,
        violations,
        log_beta,
    }
}

fn log_lr<S, T>(safe: &S, optimized: &T, x: &S::Point) -> f64
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let ls = safe.log_density(x);
    let lo = optimized.log_density(x);
    if ls == f64::NEG_INFINITY {
        if lo == f64::NEG_INFINITY { f64::NAN } else { f64::INFINITY }
    } else {
        lo - ls
    }
}

/// Proposals from `π_0` with envelope `M = β`.
pub fn rejection_sample_safe<S, T>(
    safe: &S,
    optimized: &T,
    log_beta: f64,
    n_accept: usize,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<SampleBatch<S::Point>>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    check_budget(n_accept, budget)?;
    if !log_beta.is_finite() {
        return Err(invalid("the safe proposal needs a finite beta"));
    }
    let out = accept_reject(
        n_accept,
        budget,
        rng,
        |r| safe.sample(r),
        |x| (log_lr(safe, optimized, x) - log_beta).min(0.0),
    );
    Ok(batch(out, ProposalKind::Safe, log_beta.exp(), log_beta))
}

/// Proposals from `π_t` with envelope `M = 1`.
pub fn rejection_sample_optimized<S, T>(
    safe: &S,
    optimized: &T,
    log_beta: f64,
    n_accept: usize,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<SampleBatch<S::Point>>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    check_budget(n_accept, budget)?;
    let out = accept_reject(
        n_accept,
        budget,
        rng,
        |r| optimized.sample(r),
        |x| (log_beta - log_lr(safe, optimized, x)).min(0.0),
    );
    Ok(batch(out, ProposalKind::Optimized, 1.0, log_beta))
}

/// The cheaper of the safe and optimized proposals: `π_0` when `β < 1`
/// (marginal rate `ψ/β > ψ`), else `π_t`.
pub fn rejection_sample<S, T>(
    policy: &ClippedPolicy<S, T>,
    n_accept: usize,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<SampleBatch<S::Point>>
where
    S: Policy,
    T: Policy<Point = S::Point>,
{
    let lb = policy.log_beta();
    if lb < 0.0 {
        rejection_sample_safe(policy.safe(), policy.optimized(), lb, n_accept, budget, rng)
    } else {
        rejection_sample_optimized(policy.safe(), policy.optimized(), lb, n_accept, budget, rng)
    }
}

fn log_mixture_density<S, T>(safe: &S, optimized: &T, w: f64, x: &S::Point) -> f64
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let a = if w > 0.0 { w.ln() + safe.log_density(x) } else { f64::NEG_INFINITY };
    let b = if w < 1.0 { (1.0 - w).ln() + optimized.log_density(x) } else { f64::NEG_INFINITY };
    log_add_exp(a, b)
}

fn check_weight(w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(invalid(format!("mixture weight must lie in [0, 1], got {w}")));
    }
    Ok(())
}

/// Proposals from `q_w = w π_0 + (1 − w) π_t` with envelope `envelope`.
/// Acceptance probabilities above one are clamped and counted.
#[allow(clippy::too_many_arguments)]
pub fn rejection_sample_mixture<S, T>(
    safe: &S,
    optimized: &T,
    log_beta: f64,
    w: f64,
    envelope: f64,
    n_accept: usize,
    budget: usize,
    rng: &mut dyn RngCore,
) -> Result<SampleBatch<S::Point>>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    check_budget(n_accept, budget)?;
    check_weight(w)?;
    if !(envelope > 0.0 && envelope.is_finite()) {
        return Err(invalid(format!("envelope must be finite and > 0, got {envelope}")));
    }
    let log_m = envelope.ln();
    let out = accept_reject(
        n_accept,
        budget,
        rng,
        |r| {
            if r.random::<f64>() < w {
                safe.sample(r)
            } else {
                optimized.sample(r)
            }
        },
        |x| {
            clipped_unnorm_log_density(safe, optimized, log_beta, x)
                - log_m
                - log_mixture_density(safe, optimized, w, x)
        },
    );
    Ok(batch(out, ProposalKind::Mixture, envelope, log_beta))
}

/// `inflation · max_probe p̃(x)/q_w(x)`: an empirical envelope for the
/// mixture proposal.
pub fn estimate_envelope<S, T>(
    safe: &S,
    optimized: &T,
    log_beta: f64,
    w: f64,
    probes: &[S::Point],
    inflation: f64,
) -> Result<f64>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    check_weight(w)?;
    if probes.is_empty() {
        return Err(CpcError::Empty("envelope probes"));
    }
    if !(inflation >= 1.0 && inflation.is_finite()) {
        return Err(invalid(format!("inflation must be finite and >= 1, got {inflation}")));
    }
    let max = probes
        .iter()
        .map(|x| {
            let p = clipped_unnorm_log_density(safe, optimized, log_beta, x);
            if p == f64::NEG_INFINITY {
                0.0
            } else {
                (p - log_mixture_density(safe, optimized, w, x)).exp()
            }
        })
        .fold(0.0, f64::max);
    Ok(max * inflation)
}

/// Probe points for envelope search: `round(n · safe_fraction)` draws from
/// `π_0`, the rest from `π_t`.
pub fn split_probes<S, T>(
    safe: &S,
    optimized: &T,
    n: usize,
    safe_fraction: f64,
    rng: &mut dyn RngCore,
) -> Vec<S::Point>
where
    S: Policy + ?Sized,
    T: Policy<Point = S::Point> + ?Sized,
{
    let n_safe = ((n as f64) * safe_fraction.clamp(0.0, 1.0)).round() as usize;
    (0..n)
        .map(|i| if i < n_safe { safe.sample(rng) } else { optimized.sample(rng) })
        .collect()
}

/// Which component the overlap samples came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Safe,
    Optimized,
}

/// Monte Carlo overlap `∫ min(π^(β), π_c)` from samples of component `c`:
/// the mean of `min(π^(β)(x_i)/π_c(x_i), 1)`.
pub fn estimate_overlap<S, T>(
    constrained: &ClippedPolicy<S, T>,
    component: Component,
    samples: &[S::Point],
) -> Result<f64>
where
    S: Policy,
    T: Policy<Point = S::Point>,
{
    if samples.is_empty() {
        return Err(CpcError::Empty("overlap samples"));
    }
    let log_psi = constrained
        .log_psi()
        .ok_or_else(|| invalid("overlap needs a normalized constrained policy"))?;
    let total: f64 = samples
        .iter()
        .map(|x| {
            let log_c = match component {
                Component::Safe => constrained.safe().log_density(x),
                Component::Optimized => constrained.optimized().log_density(x),
            };
            let ratio = constrained.unnorm_log_density(x) - log_psi - log_c;
            if ratio.is_nan() { 0.0 } else { ratio.min(0.0).exp() }
        })
        .sum();
    Ok(total / samples.len() as f64)
}

/// `w = ovl_safe / (ovl_safe + ovl_opt)`. When both overlaps vanish the
/// weight falls back to `0.5` and the flag is set.
pub fn mixture_weight_heuristic(ovl_safe: f64, ovl_opt: f64) -> Result<(f64, bool)> {
    if !(0.0..=1.0).contains(&ovl_safe) || !(0.0..=1.0).contains(&ovl_opt) {
        return Err(invalid("overlaps must lie in [0, 1]"));
    }
    let total = ovl_safe + ovl_opt;
    if total == 0.0 {
        return Ok((0.5, true));
    }
    Ok((ovl_safe / total, false))
}

/// `clamp(w + step · (rate_safe − rate_opt), 0, 1)`: move weight toward the
/// component whose proposals are accepted more often.
pub fn adaptive_mixture_update(w: f64, rate_safe: f64, rate_opt: f64, step: f64) -> f64 {
    (w + step * (rate_safe - rate_opt)).clamp(0.0, 1.0)
}

/// An independence Metropolis-Hastings run.
#[derive(Debug, Clone, PartialEq)]
pub struct ImhChain<X> {
    /// States after burn-in.
    pub states: Vec<X>,
    /// Whether each step (burn-in included) accepted its proposal.
    pub accepted: Vec<bool>,
    pub acceptance_rate: f64,
}

/// Independence Metropolis-Hastings with importance ratio
/// `r(x) = p̃(x)/q(x)`: the proposal `x'` replaces the state `x` with
/// probability `min(1, r(x')/r(x))`; otherwise the state is kept.
pub fn imh_chain<P, F>(
    target_log_density: F,
    proposal: &P,
    initial: P::Point,
    steps: usize,
    burn_in: usize,
    rng: &mut dyn RngCore,
) -> Result<ImhChain<P::Point>>
where
    P: Policy + ?Sized,
    F: Fn(&P::Point) -> f64,
{
    let log_ratio = |x: &P::Point| target_log_density(x) - proposal.log_density(x);
    let mut current_ratio = log_ratio(&initial);
    if target_log_density(&initial) == f64::NEG_INFINITY || current_ratio.is_nan() {
        return Err(CpcError::ZeroDensity("initial state has zero target density".into()));
    }
    let mut state = initial;
    let mut states = Vec::with_capacity(steps.saturating_sub(burn_in));
    let mut accepted = Vec::with_capacity(steps);
    for step in 0..steps {
        let candidate = proposal.sample(rng);
        let r = log_ratio(&candidate);
        let log_a = (r - current_ratio).min(0.0);
        let take = !log_a.is_nan() && (log_a == 0.0 || rng.random::<f64>().ln() < log_a);
        if take {
            state = candidate;
            current_ratio = r;
        }
        accepted.push(take);
        if step >= burn_in {
            states.push(state.clone());
        }
    }
    let acceptance_rate = if steps == 0 {
        0.0
    } else {
        accepted.iter().filter(|&&a| a).count() as f64 / steps as f64
    };
    Ok(ImhChain {
        states,
        accepted,
        acceptance_rate,
    })
}

/// The IMH transition matrix on an enumerated support:
/// `P(x → y) = q(y)·min(1, r(y)/r(x))` for `y ≠ x`, rejected mass on the
/// diagonal.
pub fn imh_transition_matrix<P, F>(
    target_log_density: F,
    proposal: &P,
    support: &[P::Point],
) -> Vec<Vec<f64>>
where
    P: Policy + ?Sized,
    F: Fn(&P::Point) -> f64,
{
    let log_q: Vec<f64> = support.iter().map(|x| proposal.log_density(x)).collect();
    let log_r: Vec<f64> = support
        .iter()
        .zip(&log_q)
        .map(|(x, q)| target_log_density(x) - q)
        .collect();
    let n = support.len();
    let mut matrix = vec![vec![0.0; n]; n];
    for i in 0..n {
        let mut off = 0.0;
        for j in 0..n {
            if i == j {
                continue;
            }
            let a = (log_r[j] - log_r[i]).min(0.0);
            let p = if a.is_nan() { 0.0 } else { (log_q[j] + a).exp() };
            matrix[i][j] = p;
            off += p;
        }
        matrix[i][i] = 1.0 - off;
    }
    matrix
}
