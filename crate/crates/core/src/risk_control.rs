//! Threshold selection on parameterized losses.
//!
//! Every selector scans a finite [`Grid`] and works with the adjusted
//! empirical risk `(B + Σ_i L_i(λ)) / (n + 1)`, in which the unseen test loss
//! is replaced by its worst case `B`. [`crc_lambda`] returns the first grid
//! point whose adjusted risk is below target; [`gcrc_lambda_plus`] also
//! requires every larger point to be below target, which keeps it valid for
//! non-monotone losses.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CpcError, Result};
use crate::losses::{Grid, LossCurve};
use crate::numeric::{ext_float, le_tol};

/// Outcome of a threshold selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub target: f64,
    pub bound: f64,
    pub chosen: f64,
    /// Adjusted empirical risk at each grid point.
    pub risk_trace: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub epsilon_hat: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none", with = "ext_float::option")]
    pub alpha_hat: Option<f64>,
}

impl RiskReport {
    pub fn chosen_index(&self, grid: &Grid) -> usize {
        grid.index_of(self.chosen)
            .expect("selectors only choose grid points")
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Column sums `Σ_i L_i(λ_k)` after checking shapes, bound and target.
fn column_sums(grid: &Grid, curves: &[LossCurve], alpha: f64, bound: f64) -> Result<Vec<f64>> {
    check_target(alpha, bound)?;
    let mut sums = vec![0.0; grid.len()];
    for (index, c) in curves.iter().enumerate() {
        check_curve(grid, c, index, bound)?;
        for (s, v) in sums.iter_mut().zip(c.values()) {
            *s += v;
        }
    }
    Ok(sums)
}

fn check_target(alpha: f64, bound: f64) -> Result<()> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(invalid(format!("bound must be finite and > 0, got {bound}")));
    }
    if !(alpha > 0.0 && alpha <= bound) {
        return Err(invalid(format!("alpha must lie in (0, B = {bound}], got {alpha}")));
    }
    Ok(())
}

fn check_curve(grid: &Grid, c: &LossCurve, index: usize, bound: f64) -> Result<()> {
    if c.len() != grid.len() {
        return Err(CpcError::MismatchedGrid {
            expected: grid.len(),
            index,
            found: c.len(),
        });
    }
    if c.values().iter().any(|&v| v > bound) {
        return Err(CpcError::InvalidLoss(format!("curve {index} exceeds the bound {bound}")));
    }
    Ok(())
}

/// First index whose risk is at most `alpha`, else the last index.
pub(crate) fn first_below(trace: &[f64], alpha: f64) -> usize {
    trace
        .iter()
        .position(|&r| le_tol(r, alpha))
        .unwrap_or(trace.len() - 1)
}

/// Smallest index `k0` such that every `k >= k0` has risk at most `alpha`;
/// the last index when even that one fails.
pub(crate) fn suffix_below(trace: &[f64], alpha: f64) -> usize {
    let mut k0 = trace.len() - 1;
    for k in (0..trace.len()).rev() {
        if le_tol(trace[k], alpha) {
            k0 = k;
        } else {
            break;
        }
    }
    k0
}

fn adjusted_trace(sums: &[f64], n: usize, bound: f64) -> Vec<f64> {
    let denom = (n + 1) as f64;
    sums.iter().map(|s| (bound + s) / denom).collect()
}

fn report(grid: &Grid, alpha: f64, bound: f64, trace: Vec<f64>, k: usize) -> RiskReport {
    RiskReport {
        target: alpha,
        bound,
        chosen: grid.points()[k],
        risk_trace: trace,
        epsilon_hat: Vec::new(),
        alpha_hat: None,
    }
}

/// Conformal risk control: the smallest grid `λ` whose adjusted risk is at
/// most `alpha`; `λ_max` if none is.
pub fn crc_lambda(grid: &Grid, curves: &[LossCurve], alpha: f64, bound: f64) -> Result<RiskReport> {
    if curves.is_empty() {
        return Err(CpcError::Empty("calibration losses"));
    }
    let sums = column_sums(grid, curves, alpha, bound)?;
    let trace = adjusted_trace(&sums, curves.len(), bound);
    let k = first_below(&trace, alpha);
    Ok(report(grid, alpha, bound, trace, k))
}

/// Generalized CRC: the smallest grid `λ0` such that the adjusted risk is at
/// most `alpha` at `λ0` and at every larger grid point; `λ_max` if none is.
pub fn gcrc_lambda_plus(
    grid: &Grid,
    curves: &[LossCurve],
    alpha: f64,
    bound: f64,
) -> Result<RiskReport> {
    if curves.is_empty() {
        return Err(CpcError::Empty("calibration losses"));
    }
    let sums = column_sums(grid, curves, alpha, bound)?;
    let trace = adjusted_trace(&sums, curves.len(), bound);
    let k = suffix_below(&trace, alpha);
    Ok(report(grid, alpha, bound, trace, k))
}

/// The gCRC rule applied to the full bag of `n + 1` curves (test included),
/// with no worst-case substitution. Only computable in simulation.
pub fn oracle_lambda_plus(grid: &Grid, bag: &[LossCurve], alpha: f64) -> Result<f64> {
    if bag.is_empty() {
        return Err(CpcError::Empty("loss bag"));
    }
    let bound = bag.iter().map(LossCurve::bound).fold(0.0, f64::max);
    let sums = column_sums(grid, bag, alpha.min(bound), bound)?;
    let denom = bag.len() as f64;
    let trace: Vec<f64> = sums.iter().map(|s| s / denom).collect();
    Ok(grid.points()[suffix_below(&trace, alpha)])
}

/// Per-sample replace-one deviations `ε̂_i` and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instability {
    pub per_sample: Vec<f64>,
    pub mean: f64,
}

/// `ε̂_i = max_{b ∈ {0, B}} |λ̂_+(l_{1:n}, B) − λ̂_+(l_{1:n \ i}, b, B)|`:
/// how far the selected threshold moves when curve `i` is swapped for a
/// constant extreme curve.
pub fn replace_one_instability(
    grid: &Grid,
    curves: &[LossCurve],
    alpha: f64,
    bound: f64,
) -> Result<Instability> {
    if curves.len() < 2 {
        return Err(invalid("replace-one instability needs at least two curves"));
    }
    let sums = column_sums(grid, curves, alpha, bound)?;
    let n = curves.len();
    let pts = grid.points();
    let base = pts[suffix_below(&adjusted_trace(&sums, n, bound), alpha)];
    let denom = (n + 1) as f64;

    let mut scratch = vec![0.0; grid.len()];
    let per_sample: Vec<f64> = curves
        .iter()
        .map(|c| {
            [0.0, bound]
                .iter()
                .map(|&b| {
                    for ((r, s), v) in scratch.iter_mut().zip(&sums).zip(c.values()) {
                        *r = (bound + s - v + b) / denom;
                    }
                    (pts[suffix_below(&scratch, alpha)] - base).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / n as f64;
    Ok(Instability { per_sample, mean })
}

/// Result of the conservative level search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeLevel {
    pub alpha_hat: f64,
    /// `false` when no scanned level satisfied the condition and `alpha_hat`
    /// is the most conservative level scanned.
    pub satisfied: bool,
    pub report: RiskReport,
}

/// Number of points in the descending `α'` scan.
pub const ALPHA_SCAN_STEPS: usize = 100;

/// The largest `α' = α·k/100` with `α' + K/(n+1)·Σ_i ε̂_i(α') ≤ α`, and the
/// gCRC threshold selected at that level.
///
/// `lipschitz` is the grid Lipschitz constant `K` of the losses in `λ` units.
pub fn conservative_alpha_hat(
    grid: &Grid,
    curves: &[LossCurve],
    alpha: f64,
    bound: f64,
    lipschitz: f64,
) -> Result<ConservativeLevel> {
    if !(lipschitz >= 0.0) {
        return Err(invalid(format!("Lipschitz constant must be >= 0, got {lipschitz}")));
    }
    check_target(alpha, bound)?;
    let denom = (curves.len() + 1) as f64;
    let mut last = None;
    for k in (1..=ALPHA_SCAN_STEPS).rev() {
        let level = alpha * k as f64 / ALPHA_SCAN_STEPS as f64;
        let eps = replace_one_instability(grid, curves, level, bound)?;
        let penalty = lipschitz / denom * eps.per_sample.iter().sum::<f64>();
        if le_tol(level + penalty, alpha) {
            return Ok(finish(grid, curves, level, bound, eps, true));
        }
        last = Some((level, eps));
    }
    let (level, eps) = last.expect("scan has at least one step");
    Ok(finish(grid, curves, level, bound, eps, false))
}

fn finish(
    grid: &Grid,
    curves: &[LossCurve],
    level: f64,
    bound: f64,
    eps: Instability,
    satisfied: bool,
) -> ConservativeLevel {
    let mut report = gcrc_lambda_plus(grid, curves, level, bound)
        .expect("inputs were validated by the instability scan");
    report.epsilon_hat = eps.per_sample;
    report.alpha_hat = Some(level);
    ConservativeLevel {
        alpha_hat: level,
        satisfied,
        report,
    }
}

/// Fixed-sequence Learn-then-Test outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LttReport {
    pub target: f64,
    pub delta: f64,
    pub chosen: f64,
    /// Grid indices whose null `risk > α` was rejected, largest first.
    pub rejected: Vec<usize>,
    pub empirical_risk: Vec<f64>,
    pub p_values: Vec<f64>,
}

/// Hoeffding p-value for `H0: risk > α` given an empirical mean of `n`
/// losses bounded by `B`.
pub fn hoeffding_p_value(empirical: f64, n: usize, alpha: f64, bound: f64) -> f64 {
    if empirical >= alpha {
        return 1.0;
    }
    let gap = (alpha - empirical) / bound;
    (-2.0 * n as f64 * gap * gap).exp()
}

/// Learn-then-Test with fixed-sequence testing from `λ_max` downward: each
/// null is rejected when its Hoeffding p-value is at most `delta`, and
/// testing stops at the first non-rejection. The most aggressive rejected
/// threshold is selected, or `λ_max` when nothing is rejected.
pub fn ltt_hoeffding(
    grid: &Grid,
    curves: &[LossCurve],
    alpha: f64,
    bound: f64,
    delta: f64,
) -> Result<LttReport> {
    if curves.is_empty() {
        return Err(CpcError::Empty("calibration losses"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    let sums = column_sums(grid, curves, alpha, bound)?;
    let n = curves.len();
    let empirical_risk: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let p_values: Vec<f64> = empirical_risk
        .iter()
        .map(|&r| hoeffding_p_value(r, n, alpha, bound))
        .collect();
    let rejected: Vec<usize> = (0..grid.len())
        .rev()
        .take_while(|&k| p_values[k] <= delta)
        .collect();
    let chosen = rejected
        .last()
        .map_or(grid.max_point(), |&k| grid.points()[k]);
    Ok(LttReport {
        target: alpha,
        delta,
        chosen,
        rejected,
        empirical_risk,
        p_values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::{counterexample_losses, monotonize};
    use crate::numeric::trial_rng;
    use proptest::prelude::*;
    use rand::Rng;

    /// Brute-force selectors written directly from their definitions.
    fn brute_adjusted(curves: &[LossCurve], k: usize, bound: f64) -> f64 {
        (bound + curves.iter().map(|c| c.at(k)).sum::<f64>()) / (curves.len() + 1) as f64
    }

    fn brute_gcrc(grid: &Grid, curves: &[LossCurve], alpha: f64, bound: f64) -> f64 {
        let g = grid.len();
        (0..g)
            .find(|&k0| (k0..g).all(|k| brute_adjusted(curves, k, bound) <= alpha + 1e-12))
            .map_or(grid.max_point(), |k0| grid.points()[k0])
    }

    fn brute_oracle(grid: &Grid, bag: &[LossCurve], alpha: f64) -> f64 {
        let g = grid.len();
        let mean = |k: usize| bag.iter().map(|c| c.at(k)).sum::<f64>() / bag.len() as f64;
        (0..g)
            .find(|&k0| (k0..g).all(|k| mean(k) <= alpha + 1e-12))
            .map_or(grid.max_point(), |k0| grid.points()[k0])
    }

    fn curves(rows: &[&[f64]], bound: f64) -> Vec<LossCurve> {
        rows.iter()
            .map(|r| LossCurve::new(r.to_vec(), bound).unwrap())
            .collect()
    }

    #[test]
    fn crc_all_zero() {
        let grid = Grid::with_safe_max(vec![0.0, 0.5, 1.0]).unwrap();
        let zeros = curves(&[&[0.0; 3], &[0.0; 3], &[0.0; 3]], 1.0);
        // B/(n+1) = 0.25
        assert_eq!(crc_lambda(&grid, &zeros, 0.3, 1.0).unwrap().chosen, 0.0);
        assert_eq!(crc_lambda(&grid, &zeros, 0.2, 1.0).unwrap().chosen, 1.0);
    }

    #[test]
    fn counterexample_crc_matches_brute_force() {
        let alpha = 0.4;
        let (grid, [l1, l2, _]) = counterexample_losses(alpha).unwrap();
        let b = l1.bound();
        let cal = vec![l1, l2];
        // adjusted risks: (0.6+0.9)/3, (0.6+0.9)/3, 0.2, 0.2
        let expect: Vec<f64> = (0..4).map(|k| brute_adjusted(&cal, k, b)).collect();
        let r = crc_lambda(&grid, &cal, alpha, b).unwrap();
        assert_eq!(r.risk_trace, expect);
        let first = (0..4).find(|&k| expect[k] <= alpha).unwrap();
        assert_eq!(r.chosen, grid.points()[first]);
        assert_eq!(r.chosen, 3.0);
    }

    #[test]
    fn counterexample_case_one_selects_lambda1() {
        for alpha in [0.1, 0.4, 0.9] {
            let (grid, [_, l2, l3]) = counterexample_losses(alpha).unwrap();
            let b = l2.bound();
            let r = gcrc_lambda_plus(&grid, &[l2, l3], alpha, b).unwrap();
            assert_eq!(r.chosen, 1.0, "alpha={alpha}");
        }
    }

    #[test]
    fn counterexample_bag_conditional_risk_is_b() {
        for alpha in [0.1, 0.4, 0.9] {
            let (grid, ls) = counterexample_losses(alpha).unwrap();
            let b = ls[0].bound();
            let mut total = 0.0;
            for held in 0..3 {
                let cal: Vec<LossCurve> = (0..3).filter(|&j| j != held).map(|j| ls[j].clone()).collect();
                let r = gcrc_lambda_plus(&grid, &cal, alpha, b).unwrap();
                total += ls[held].at(r.chosen_index(&grid));
            }
            let risk = total / 3.0;
            assert!((risk - b).abs() <= 4.0 * f64::EPSILON * b, "{risk} vs {b}");
        }
    }

    #[test]
    fn counterexample_oracle_matches_scan() {
        let alpha = 0.4;
        let (grid, ls) = counterexample_losses(alpha).unwrap();
        // bag means: (2B/3, B/2, B/3, 0) = (0.4, 0.3, 0.2, 0) -> all <= 0.4
        let got = oracle_lambda_plus(&grid, &ls, alpha).unwrap();
        assert_eq!(got, brute_oracle(&grid, &ls, alpha));
        assert_eq!(got, 1.0);
    }

    #[test]
    fn all_losses_at_bound_choose_lambda_max() {
        let grid = Grid::with_safe_max(vec![0.0, 1.0, 2.0]).unwrap();
        let full = curves(&[&[1.0; 3], &[1.0; 3]], 1.0);
        assert_eq!(gcrc_lambda_plus(&grid, &full, 0.5, 1.0).unwrap().chosen, 2.0);
    }

    #[test]
    fn selector_errors() {
        let grid = Grid::with_safe_max(vec![0.0, 1.0]).unwrap();
        assert!(matches!(gcrc_lambda_plus(&grid, &[], 0.5, 1.0), Err(CpcError::Empty(_))));
        let bad = curves(&[&[0.0, 0.0, 0.0]], 1.0);
        assert!(matches!(
            crc_lambda(&grid, &bad, 0.5, 1.0),
            Err(CpcError::MismatchedGrid { found: 3, .. })
        ));
        let ok = curves(&[&[0.0, 0.0]], 1.0);
        assert!(crc_lambda(&grid, &ok, 1.5, 1.0).is_err());
        assert!(crc_lambda(&grid, &ok, 0.0, 1.0).is_err());
        assert!(replace_one_instability(&grid, &ok, 0.5, 1.0).is_err());
    }

    #[test]
    fn instability_identical_curves_is_zero() {
        let grid = Grid::with_safe_max(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let same = curves(&[&[0.0; 4] as &[f64]; 5], 1.0);
        // alpha high enough that swapping in one B curve does not move λ̂
        let eps = replace_one_instability(&grid, &same, 0.5, 1.0).unwrap();
        assert!(eps.per_sample.iter().all(|&e| e == 0.0));
        assert_eq!(eps.mean, 0.0);
    }

    #[test]
    fn instability_counterexample_brute_force() {
        let alpha = 0.4;
        let (grid, [l1, l2, _]) = counterexample_losses(alpha).unwrap();
        let b = l1.bound();
        let cal = vec![l1, l2];
        let base = brute_gcrc(&grid, &cal, alpha, b);
        let expect: Vec<f64> = (0..2)
            .map(|i| {
                [0.0, b]
                    .iter()
                    .map(|&c| {
                        let mut swapped = cal.clone();
                        swapped[i] = LossCurve::constant(c, 4, b).unwrap();
                        (brute_gcrc(&grid, &swapped, alpha, b) - base).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let eps = replace_one_instability(&grid, &cal, alpha, b).unwrap();
        assert_eq!(eps.per_sample, expect);
    }

    #[test]
    fn alpha_hat_trivial_cases() {
        let grid = Grid::with_safe_max(vec![0.0, 1.0, 2.0]).unwrap();
        let cal = curves(&[&[0.5, 0.2, 0.0], &[0.1, 0.7, 0.0], &[0.3, 0.3, 0.0]], 1.0);
        let r = conservative_alpha_hat(&grid, &cal, 0.5, 1.0, 0.0).unwrap();
        assert_eq!(r.alpha_hat, 0.5);
        assert!(r.satisfied);
        let zeros = curves(&[&[0.0; 3] as &[f64]; 3], 1.0);
        // every scanned level above B/(n+1) = 0.25 keeps λ̂ at the grid bottom
        // under either swap, so ε̂ = 0 at α' = α.
        let r = conservative_alpha_hat(&grid, &zeros, 0.6, 1.0, 10.0).unwrap();
        assert_eq!(r.alpha_hat, 0.6);
    }

    #[test]
    fn alpha_hat_counterexample_exhaustive() {
        let alpha = 0.4;
        let (grid, ls) = counterexample_losses(alpha).unwrap();
        let b = ls[0].bound();
        let k = crate::losses::grid_lipschitz(&ls, &grid);
        assert!((k - b).abs() < 1e-15);
        let cal = vec![ls[0].clone(), ls[1].clone()];
        let expect = (1..=100)
            .rev()
            .map(|j| alpha * j as f64 / 100.0)
            .find(|&a| {
                let e = replace_one_instability(&grid, &cal, a, b).unwrap();
                a + k / 3.0 * e.per_sample.iter().sum::<f64>() <= alpha + 1e-12
            });
        let got = conservative_alpha_hat(&grid, &cal, alpha, b, k).unwrap();
        match expect {
            Some(a) => {
                assert_eq!(got.alpha_hat, a);
                assert!(got.satisfied);
            }
            None => assert!(!got.satisfied),
        }
    }

    #[test]
    fn report_json_keys() {
        let grid = Grid::with_safe_max(vec![0.0, 1.0]).unwrap();
        let cal = curves(&[&[0.0, 0.0], &[0.0, 0.0]], 1.0);
        let r = conservative_alpha_hat(&grid, &cal, 0.5, 1.0, 0.0).unwrap().report;
        let v: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        for key in ["target", "bound", "chosen", "risk_trace", "epsilon_hat", "alpha_hat"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn ltt_trivial_cases() {
        let grid = Grid::with_safe_max((0..10).map(f64::from).collect()).unwrap();
        let zeros: Vec<LossCurve> = (0..200).map(|_| LossCurve::constant(0.0, 10, 1.0).unwrap()).collect();
        let r = ltt_hoeffding(&grid, &zeros, 0.2, 1.0, 0.1).unwrap();
        assert!(r.chosen < 9.0);
        let one = curves(&[&[0.0; 10]], 1.0);
        assert_eq!(ltt_hoeffding(&grid, &one, 0.1, 1.0, 0.1).unwrap().chosen, 9.0);
    }

    #[test]
    fn ltt_at_least_naive_threshold() {
        let grid = Grid::with_safe_max((0..12).map(f64::from).collect()).unwrap();
        let mut rng = trial_rng(11, 0);
        for _ in 0..200 {
            let n = rng.random_range(5..60);
            let cal: Vec<LossCurve> = (0..n)
                .map(|_| {
                    let mut v: Vec<f64> = (0..12).map(|_| rng.random::<f64>() * 0.6).collect();
                    v[11] = 0.0;
                    LossCurve::new(v, 1.0).unwrap()
                })
                .collect();
            let alpha = rng.random_range(0.1..0.5);
            let r = ltt_hoeffding(&grid, &cal, alpha, 1.0, 0.1).unwrap();
            // naive: stop at the first point (from the top) whose empirical
            // mean exceeds alpha
            let naive_k = (0..12)
                .rev()
                .take_while(|&k| r.empirical_risk[k] < alpha)
                .last()
                .unwrap_or(11);
            assert!(r.chosen >= grid.points()[naive_k]);
        }
    }

    fn arb_instance() -> impl Strategy<Value = (Vec<LossCurve>, Vec<LossCurve>, f64)> {
        (1usize..8, 2usize..12, 0.05..1.0f64).prop_flat_map(|(n, g, alpha)| {
            let curve = prop::collection::vec(0.0..=1.0f64, g).prop_map(move |mut v| {
                v[g - 1] = 0.0;
                LossCurve::new(v, 1.0).unwrap()
            });
            (
                prop::collection::vec(curve.clone(), n),
                prop::collection::vec(curve, 1),
                Just(alpha),
            )
        })
    }

    proptest! {
        #[test]
        fn gcrc_matches_definition((cal, _test, alpha) in arb_instance()) {
            let grid = Grid::with_safe_max((0..cal[0].len()).map(|k| k as f64).collect()).unwrap();
            let r = gcrc_lambda_plus(&grid, &cal, alpha, 1.0).unwrap();
            prop_assert_eq!(r.chosen, brute_gcrc(&grid, &cal, alpha, 1.0));
        }

        #[test]
        fn gcrc_dominates_oracle((cal, test, alpha) in arb_instance()) {
            let grid = Grid::with_safe_max((0..cal[0].len()).map(|k| k as f64).collect()).unwrap();
            let r = gcrc_lambda_plus(&grid, &cal, alpha, 1.0).unwrap();
            let mut bag = cal.clone();
            bag.extend(test);
            prop_assert!(r.chosen >= oracle_lambda_plus(&grid, &bag, alpha).unwrap());
        }

        #[test]
        fn monotone_curves_reduce_to_crc((cal, _test, alpha) in arb_instance()) {
            let grid = Grid::with_safe_max((0..cal[0].len()).map(|k| k as f64).collect()).unwrap();
            let mono: Vec<LossCurve> = cal.iter().map(monotonize).collect();
            let a = gcrc_lambda_plus(&grid, &mono, alpha, 1.0).unwrap();
            let b = crc_lambda(&grid, &mono, alpha, 1.0).unwrap();
            prop_assert_eq!(a.chosen, b.chosen);
        }

        #[test]
        fn instability_nonnegative((cal, test, alpha) in arb_instance()) {
            let grid = Grid::with_safe_max((0..cal[0].len()).map(|k| k as f64).collect()).unwrap();
            let mut all = cal;
            all.extend(test);
            let e = replace_one_instability(&grid, &all, alpha, 1.0).unwrap();
            prop_assert!(e.per_sample.iter().all(|&x| x >= 0.0));
        }
    }
}
