//! Thresholds that turn the strict inequalities of the model into decisions.

use serde::{Deserialize, Serialize};

/// Every tolerance used by sign tests, stability classification and fixed
/// point checks lives here so that callers can tighten or relax them together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NumericPolicy {
    /// Invasion fitness values with `|f| <= tau_sign` count as zero.
    pub tau_sign: f64,
    /// Eigenvalue real parts within `tau_eig` of zero are marginal.
    pub tau_eig: f64,
    /// A point is a fixed point when the sup norm of the vector field is below this.
    pub tau_fp: f64,
    /// Lotka-Volterra determinants below this are degenerate.
    pub tau_den: f64,
}

impl NumericPolicy {
    pub const DEFAULT: NumericPolicy = NumericPolicy {
        tau_sign: 1e-12,
        tau_eig: 1e-9,
        tau_fp: 1e-9,
        tau_den: 1e-12,
    };
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Sign of `value` under a symmetric dead zone of half-width `tau`.
pub(crate) fn strict_sign(value: f64, tau: f64) -> i8 {
    if value > tau {
        1
    } else if value < -tau {
        -1
    } else {
        0
    }
}
