//! Logarithm through its binomial series.

use crate::error::{Error, Result};

/// log(x) for 0 < x < 2 as the partial sum of −Σ_{r≥1} (1 − x)^r / r.
///
/// The double sum Σ_r Σ_s ((−1)^{2r−s−1}/r) C(r, s) x^s collapses term by term
/// to −(1 − x)^r / r. Summation stops after the first term whose magnitude is
/// below `tol`, or after `r_max` terms.
pub fn log_via_series(x: f64, tol: f64, r_max: usize) -> Result<f64> {
    if !(x > 0.0 && x < 2.0) {
        return Err(Error::Domain {
            func: "log_via_series",
            value: x,
            expected: "0 < x < 2",
        });
    }
    let u = 1.0 - x;
    let mut pow = 1.0;
    let mut sum = 0.0;
    for r in 1..=r_max.max(1) {
        pow *= u;
        let term = -pow / r as f64;
        sum += term;
        if term.abs() < tol {
            break;
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_values() {
        assert_eq!(log_via_series(1.0, 1e-8, 100).unwrap(), 0.0);
        assert!((log_via_series(1.5, 1e-8, 10_000).unwrap() - 1.5f64.ln()).abs() < 1e-8);
        assert!((log_via_series(0.5, 1e-8, 10_000).unwrap() - 0.5f64.ln()).abs() < 1e-8);
    }

    #[test]
    fn domain() {
        assert!(log_via_series(0.0, 1e-8, 10).is_err());
        assert!(log_via_series(2.0, 1e-8, 10).is_err());
        assert!(log_via_series(-0.3, 1e-8, 10).is_err());
    }

    #[test]
    fn matches_double_sum() {
        // Direct alternating-binomial form for small r.
        let x: f64 = 0.7;
        let mut direct = 0.0;
        for r in 1..=12u32 {
            let mut binom = 1.0;
            for s in 0..=r {
                if s > 0 {
                    binom *= (r - s + 1) as f64 / s as f64;
                }
                let sign = if (2 * r - s - 1) % 2 == 0 { 1.0 } else { -1.0 };
                direct += sign / r as f64 * binom * x.powi(s as i32);
            }
        }
        let collapsed = log_via_series(x, 0.0, 12).unwrap();
        assert!((direct - collapsed).abs() < 1e-13);
    }

    #[test]
    fn truncation_budget() {
        let v = log_via_series(0.1, 1e-8, 5).unwrap();
        let want: f64 = -(1..=5).map(|r| 0.9f64.powi(r) / r as f64).sum::<f64>();
        assert!((v - want).abs() < 1e-15);
    }
}
