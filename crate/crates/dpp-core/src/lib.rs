// Index loops mirror the math (parallel arrays indexed by coordinate);
// iterator rewrites would obscure it.
#![allow(clippy::needless_range_loop)]

//! Drift-plus-penalty engines for time-average optimization.
//!
//! The crate provides four engines built on the same virtual-queue core:
//!
//! - [`stochastic`]: i.i.d. random events with finite decision-option sets,
//! - [`convex`]: deterministic convex programs with time-average inequality
//!   and equality constraints,
//! - [`lp`]: the linear-program specialization with exact bang-bang slot
//!   decisions,
//! - [`graph`]: decentralized consensus optimization over a directed graph,
//!
//! plus [`oracle`], an independent brute-force ground truth used to verify
//! the O(eps) approximation / O(1/eps^2) convergence-time guarantees: with
//! V = 1/eps, time-averaged objectives land within O(eps) of optimal and
//! constraint violations decay like O(eps) by t = 1/eps^2.

pub mod convex;
pub mod error;
pub mod graph;
pub mod lp;
pub mod oracle;
pub mod queue;
pub mod stochastic;

pub use error::{Error, Result};

/// Fixed float formatting for reproducible reports.
pub mod format {
    /// 17 significant digits, `.` decimal, locale-independent: enough to
    /// round-trip any f64 byte-identically.
    pub fn fmt_f64(x: f64) -> String {
        format!("{x:.16e}")
    }

}
