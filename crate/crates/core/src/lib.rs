//! Conformal risk control for non-monotone losses and conformal policy
//! control: calibrate a likelihood-ratio clip `β` so that a constrained
//! policy's expected loss stays at or below a user level `α`.
//!
//! Modules, bottom up:
//! - [`losses`]: grids, loss curves, claim-filtering losses.
//! - [`risk_control`]: CRC, generalized CRC, instability and LTT baselines.
//! - [`policies`]: densities and samplers, including the clipped policy.
//! - [`calibration`]: the `β` calibration pipeline.
//! - [`samplers`]: accept-reject and independence Metropolis-Hastings.
//! - [`environments`]: experiment loops on synthetic environments.
//! - [`cli`]: configuration and result emission for the `cpc` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod cli;
pub mod environments;
pub mod error;
pub mod losses;
pub mod numeric;
pub mod policies;
pub mod risk_control;
pub mod samplers;

pub use error::{CpcError, Result};
