//! Log-gamma and digamma with domain checking.

use crate::error::{Error, Result};

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || x.is_infinite() {
        return Err(Error::Domain {
            func: "log_gamma",
            value: x,
            expected: "finite x > 0",
        });
    }
    Ok(statrs::function::gamma::ln_gamma(x))
}

/// Digamma function ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || x.is_infinite() {
        return Err(Error::Domain {
            func: "digamma",
            value: x,
            expected: "finite x > 0",
        });
    }
    Ok(statrs::function::gamma::digamma(x))
}

// Unchecked variants for hot paths where the argument is positive by construction.
#[inline]
pub(crate) fn ln_gamma_unchecked(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

#[inline]
pub(crate) fn digamma_unchecked(x: f64) -> f64 {
    statrs::function::gamma::digamma(x)
}
