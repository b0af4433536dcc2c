//! C ABI over `cpc-core` for finite (categorical) policies.
//!
//! Every function returns a [`CpcStatus`]; on failure the message is
//! available from [`cpc_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cpc_core::calibration::{calibrate_beta, BetaReport, CalSample, CalibrationConfig, CalibrationData};
use cpc_core::losses::{Grid, LossCurve};
use cpc_core::policies::{Categorical, ClippedPolicy};
use cpc_core::risk_control::{crc_lambda, gcrc_lambda_plus, RiskReport};
use cpc_core::samplers::rejection_sample;
use cpc_core::CpcError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Panic = 4,
}

/// Safe and optimized categorical policies over `0..len`.
pub struct CpcPolicyPair {
    safe: Categorical,
    optimized: Categorical,
}

/// Outcome of `β` calibration.
pub struct CpcBetaReport {
    inner: BetaReport,
}

/// Outcome of a CRC or gCRC threshold selection.
pub struct CpcRiskReport {
    inner: RiskReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(CpcStatus, String);

impl From<CpcError> for Failure {
    fn from(e: CpcError) -> Self {
        let status = match e {
            CpcError::Numerical(_) | CpcError::ZeroDensity(_) => CpcStatus::Numerical,
            _ => CpcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(CpcStatus::NullPointer, format!("{what} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> CpcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => CpcStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {message}"));
            CpcStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass handles created by this library.
    unsafe { ptr.as_ref() }.ok_or_else(|| null(what))
}

fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller owns the slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null.
    unsafe { *out = value };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Build a policy pair from two probability vectors of length `len`.
///
/// # Safety
/// `safe` and `optimized` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpc_policy_pair_new(
    safe: *const f64,
    optimized: *const f64,
    len: usize,
    out: *mut *mut CpcPolicyPair,
) -> CpcStatus {
    guard(|| {
        let safe = Categorical::new(slice(safe, len, "safe")?.to_vec())?;
        let optimized = Categorical::new(slice(optimized, len, "optimized")?.to_vec())?;
        emit(out, CpcPolicyPair { safe, optimized })
    })
}

/// # Safety
/// `pair` must be null or a handle from [`cpc_policy_pair_new`], freed once.
#[no_mangle]
pub unsafe extern "C" fn cpc_policy_pair_free(pair: *mut CpcPolicyPair) {
    if !pair.is_null() {
        drop(Box::from_raw(pair));
    }
}

/// Calibrate `β` from labeled samples of the safe policy and draws from the
/// optimized policy. `beta_min <= 0` selects the default floor.
///
/// # Safety
/// Array arguments must hold the stated number of elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cpc_calibrate_beta(
    pair: *const CpcPolicyPair,
    cal_points: *const usize,
    cal_losses: *const f64,
    n_cal: usize,
    proposals: *const usize,
    n_proposals: usize,
    alpha: f64,
    bound: f64,
    beta_min: f64,
    out: *mut *mut CpcBetaReport,
) -> CpcStatus {
    guard(|| {
        let pair = handle(pair, "policy pair")?;
        let points = slice(cal_points, n_cal, "cal_points")?;
        let losses = slice(cal_losses, n_cal, "cal_losses")?;
        let proposals = slice(proposals, n_proposals, "proposals")?;
        let cal: Vec<CalSample<usize>> = points
            .iter()
            .zip(losses)
            .map(|(&point, &loss)| CalSample { point, loss, round: 0 })
            .collect();
        let mut config = CalibrationConfig::default();
        if beta_min > 0.0 {
            config.beta_min = beta_min;
        }
        let data = CalibrationData {
            cal: &cal,
            proposals,
            extra_probes: &[],
        };
        let report = calibrate_beta(&pair.safe, &pair.optimized, &pair.safe, &data, alpha, bound, &config)?;
        emit(out, CpcBetaReport { inner: report })
    })
}

/// `β̂`; `+inf` when no clip is needed.
///
/// # Safety
/// `report` must be a live handle; `beta_hat` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpc_beta_report_beta_hat(report: *const CpcBetaReport, beta_hat: *mut f64) -> CpcStatus {
    guard(|| write(beta_hat, handle(report, "report")?.inner.beta_hat))
}

/// Number of scanned grid points.
///
/// # Safety
/// `report` must be a live handle; `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpc_beta_report_len(report: *const CpcBetaReport, len: *mut usize) -> CpcStatus {
    guard(|| write(len, handle(report, "report")?.inner.grid.len()))
}

/// Copy the `β` grid and weighted risk trace into arrays of `capacity`
/// doubles (at least [`cpc_beta_report_len`]).
///
/// # Safety
/// `grid` and `risk` must hold `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cpc_beta_report_trace(
    report: *const CpcBetaReport,
    grid: *mut f64,
    risk: *mut f64,
    capacity: usize,
) -> CpcStatus {
    guard(|| {
        let r = &handle(report, "report")?.inner;
        if capacity < r.grid.len() {
            return Err(Failure(
                CpcStatus::InvalidArgument,
                format!("capacity {capacity} below trace length {}", r.grid.len()),
            ));
        }
        if grid.is_null() || risk.is_null() {
            return Err(null("trace output"));
        }
        ptr::copy_nonoverlapping(r.grid.as_ptr(), grid, r.grid.len());
        ptr::copy_nonoverlapping(r.weighted_risk.as_ptr(), risk, r.grid.len());
        Ok(())
    })
}

/// # Safety
/// `report` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn cpc_beta_report_free(report: *mut CpcBetaReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Draw up to `n` points from the clipped policy at `beta` by accept-reject
/// with at most `budget` proposals. Writes the draws to `points` and their
/// count to `accepted`.
///
/// # Safety
/// `points` must hold `n` writable elements; `accepted` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpc_sample(
    pair: *const CpcPolicyPair,
    beta: f64,
    n: usize,
    budget: usize,
    seed: u64,
    points: *mut usize,
    accepted: *mut usize,
) -> CpcStatus {
    guard(|| {
        let pair = handle(pair, "policy pair")?;
        if !(beta > 0.0) {
            return Err(Failure(CpcStatus::InvalidArgument, format!("beta must be > 0, got {beta}")));
        }
        if points.is_null() {
            return Err(null("points"));
        }
        let policy = ClippedPolicy::new(pair.safe.clone(), pair.optimized.clone(), beta.ln())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = rejection_sample(&policy, n, budget, &mut rng)?;
        ptr::copy_nonoverlapping(batch.accepted.as_ptr(), points, batch.accepted.len());
        write(accepted, batch.accepted.len())
    })
}

#[allow(clippy::too_many_arguments)]
unsafe fn select_threshold(
    gcrc: bool,
    grid: *const f64,
    grid_len: usize,
    losses: *const f64,
    n_curves: usize,
    alpha: f64,
    bound: f64,
    out: *mut *mut CpcRiskReport,
) -> CpcStatus {
    guard(|| {
        let points = slice(grid, grid_len, "grid")?;
        let values = slice(losses, grid_len * n_curves, "losses")?;
        let grid = Grid::with_safe_max(points.to_vec())?;
        let curves: Vec<LossCurve> = values
            .chunks(grid_len.max(1))
            .map(|row| LossCurve::new(row.to_vec(), bound))
            .collect::<Result<_, _>>()?;
        let report = if gcrc {
            gcrc_lambda_plus(&grid, &curves, alpha, bound)?
        } else {
            crc_lambda(&grid, &curves, alpha, bound)?
        };
        emit(out, CpcRiskReport { inner: report })
    })
}

/// Generalized CRC threshold. `losses` is row-major, one row of `grid_len`
/// values per calibration curve; the largest grid value is the safe end.
///
/// # Safety
/// `grid` holds `grid_len` doubles, `losses` holds `grid_len * n_curves`.
#[no_mangle]
pub unsafe extern "C" fn cpc_gcrc(
    grid: *const f64,
    grid_len: usize,
    losses: *const f64,
    n_curves: usize,
    alpha: f64,
    bound: f64,
    out: *mut *mut CpcRiskReport,
) -> CpcStatus {
    select_threshold(true, grid, grid_len, losses, n_curves, alpha, bound, out)
}

/// Plain CRC threshold; same layout as [`cpc_gcrc`].
///
/// # Safety
/// As for [`cpc_gcrc`].
#[no_mangle]
pub unsafe extern "C" fn cpc_crc(
    grid: *const f64,
    grid_len: usize,
    losses: *const f64,
    n_curves: usize,
    alpha: f64,
    bound: f64,
    out: *mut *mut CpcRiskReport,
) -> CpcStatus {
    select_threshold(false, grid, grid_len, losses, n_curves, alpha, bound, out)
}

/// The selected threshold.
///
/// # Safety
/// `report` must be a live handle; `lambda` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cpc_risk_report_lambda(report: *const CpcRiskReport, lambda: *mut f64) -> CpcStatus {
    guard(|| write(lambda, handle(report, "report")?.inner.chosen))
}

/// # Safety
/// `report` must be null or a live handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn cpc_risk_report_free(report: *mut CpcRiskReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
