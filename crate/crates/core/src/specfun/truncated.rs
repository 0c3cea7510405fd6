//! First and second moments of a multivariate t restricted to the positive
//! orthant.
//!
//! Write X = μ + Z/√W with Z ~ N(0, Σ) and W ~ Gamma(ν/2, rate ν/2). Given W,
//! Stein's identity turns E[(X − μ) 1{X > 0}] into Σ times boundary terms, each
//! a marginal density at zero times the orthant probability of the remaining
//! coordinates conditioned on that boundary. Integrating over W collapses every
//! piece into a t quantity with one fewer degree of freedom (boundary terms) or
//! two fewer (the bulk term of the second moment), so both moments need only
//! t CDFs of dimension q, q − 1 and q − 2.

use nalgebra::{DMatrix, DVector};

use super::gamma::ln_gamma_unchecked;
use super::mvt::{check_df, CdfPrecision, Reduced};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedTMoments {
    /// P(X > 0).
    pub prob: f64,
    /// E[X | X > 0].
    pub m1: DVector<f64>,
    /// E[X Xᵀ | X > 0]; non-finite when ν ≤ 2.
    pub m2: DMatrix<f64>,
}

/// Moments of t_q(center, scale, nu) conditioned on the positive orthant.
pub fn trunc_mvt_moments(
    center: &DVector<f64>,
    scale: &DMatrix<f64>,
    nu: f64,
    precision: &CdfPrecision,
) -> Result<TruncatedTMoments> {
    let q = center.len();
    if scale.nrows() != q || scale.ncols() != q || q == 0 {
        return Err(Error::Dimension(format!(
            "trunc_mvt_moments: center has length {q}, scale {}x{}",
            scale.nrows(),
            scale.ncols()
        )));
    }
    check_df(nu)?;
    if scale.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("trunc_mvt_moments scale"));
    }
    moments_with(center, scale, nu, None, None, precision)
}

/// As [`trunc_mvt_moments`] with P(X > 0) and, for ν > 2, the orthant
/// probability of t(center, scale·ν/(ν−2), ν−2) already known. Inputs are
/// assumed valid.
pub(crate) fn trunc_mvt_moments_hinted(
    center: &DVector<f64>,
    scale: &DMatrix<f64>,
    nu: f64,
    prob: f64,
    p_star: f64,
    precision: &CdfPrecision,
) -> Result<TruncatedTMoments> {
    moments_with(center, scale, nu, Some(prob), Some(p_star), precision)
}

fn moments_with(
    center: &DVector<f64>,
    scale: &DMatrix<f64>,
    nu: f64,
    prob: Option<f64>,
    p_star: Option<f64>,
    precision: &CdfPrecision,
) -> Result<TruncatedTMoments> {
    let q = center.len();
    let prob = prob.unwrap_or_else(|| orthant(center, scale, nu, precision));
    if !(prob >= 1e-300) {
        return Err(Error::OrthantUnderflow { prob });
    }
    if nu <= 1.0 {
        return Ok(TruncatedTMoments {
            prob,
            m1: DVector::from_element(q, f64::INFINITY),
            m2: DMatrix::from_element(q, q, f64::INFINITY),
        });
    }
    let bounds: Vec<Boundary> = (0..q).map(|l| Boundary::new(center, scale, nu, l)).collect();

    let mut c = DVector::zeros(q);
    let mut cond_first = Vec::with_capacity(q);
    for (l, bd) in bounds.iter().enumerate() {
        let (pc, vc) = if nu > 2.0 && q > 1 {
            raw_first(&bd.loc, &bd.scale, nu - 1.0, precision)
        } else {
            (orthant(&bd.loc, &bd.scale, nu - 1.0, precision), DVector::zeros(q - 1))
        };
        c[l] = bd.dens * pc;
        cond_first.push((pc, vc));
    }
    let v = center * prob + scale * &c;
    let m1 = &v / prob;

    if nu <= 2.0 {
        return Ok(TruncatedTMoments {
            prob,
            m1,
            m2: DMatrix::from_element(q, q, f64::NAN),
        });
    }
    let p_star = p_star.unwrap_or_else(|| orthant(center, &(scale * (nu / (nu - 2.0))), nu - 2.0, precision));
    let mut h = DMatrix::zeros(q, q);
    for l in 0..q {
        h[(l, l)] = nu / (nu - 2.0) * p_star - center[l] * c[l];
        let (pc, ref vc) = cond_first[l];
        if pc <= 0.0 {
            continue;
        }
        let ratio = bounds[l].dens;
        for (k, j) in (0..q).filter(|&j| j != l).enumerate() {
            h[(l, j)] = ratio * (vc[k] - center[j] * pc);
        }
    }
    let m2c = scale * h;
    let raw = m2c + center * v.transpose() + &v * center.transpose() - center * center.transpose() * prob;
    let m2 = (&raw + raw.transpose()) * (0.5 / prob);
    Ok(TruncatedTMoments { prob, m1, m2 })
}

/// P(X > 0) for X ~ t(center, scale, nu).
fn orthant(center: &DVector<f64>, scale: &DMatrix<f64>, nu: f64, precision: &CdfPrecision) -> f64 {
    let q = center.len();
    if q == 0 {
        return 1.0;
    }
    let zero = DVector::zeros(q);
    Reduced::new(center, &zero, scale)
        .expect("scale validated by caller")
        .cdf(nu, precision)
        .value
}

/// (P(X > 0), E[X 1{X > 0}]) for X ~ t(center, scale, nu), nu > 1.
fn raw_first(center: &DVector<f64>, scale: &DMatrix<f64>, nu: f64, precision: &CdfPrecision) -> (f64, DVector<f64>) {
    let q = center.len();
    let prob = orthant(center, scale, nu, precision);
    let mut c = DVector::zeros(q);
    for l in 0..q {
        let bd = Boundary::new(center, scale, nu, l);
        c[l] = bd.dens * orthant(&bd.loc, &bd.scale, nu - 1.0, precision);
    }
    (prob, center * prob + scale * c)
}

/// The face {x_l = 0}: weight of the boundary term and the law of the other
/// coordinates on it.
struct Boundary {
    /// Γ((ν−1)/2) √ν / (2 Γ(ν/2) √(π Σ_ll)) · (1 + μ_l²/(ν Σ_ll))^{−(ν−1)/2}
    dens: f64,
    loc: DVector<f64>,
    /// Conditional scale inflated for df ν − 1.
    scale: DMatrix<f64>,
}

impl Boundary {
    fn new(center: &DVector<f64>, scale: &DMatrix<f64>, nu: f64, l: usize) -> Self {
        let q = center.len();
        let sll = scale[(l, l)];
        let a = center[l] * center[l] / sll;
        let ln_dens = ln_gamma_unchecked(0.5 * (nu - 1.0)) - ln_gamma_unchecked(0.5 * nu) + 0.5 * nu.ln()
            - std::f64::consts::LN_2
            - 0.5 * (std::f64::consts::PI * sll).ln()
            - 0.5 * (nu - 1.0) * (a / nu).ln_1p();
        let others: Vec<usize> = (0..q).filter(|&j| j != l).collect();
        let m = others.len();
        let loc = DVector::from_fn(m, |r, _| center[others[r]] - scale[(others[r], l)] * center[l] / sll);
        let inflate = (nu + a) / (nu - 1.0);
        let cond = DMatrix::from_fn(m, m, |r, s| {
            let (i, j) = (others[r], others[s]);
            inflate * (scale[(i, j)] - scale[(i, l)] * scale[(l, j)] / sll)
        });
        Self {
            dens: ln_dens.exp(),
            loc,
            scale: cond,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pr() -> CdfPrecision {
        CdfPrecision::default()
    }

    #[test]
    fn half_t_symmetry() {
        for &nu in &[2.5, 5.0, 17.0] {
            let m = trunc_mvt_moments(&DVector::zeros(1), &DMatrix::identity(1, 1), nu, &pr()).unwrap();
            assert_eq!(m.prob, 0.5);
            assert!((m.m2[(0, 0)] - nu / (nu - 2.0)).abs() < 1e-12);
            let mean = (nu / std::f64::consts::PI).sqrt()
                * (ln_gamma_unchecked(0.5 * (nu - 1.0)) - ln_gamma_unchecked(0.5 * nu)).exp();
            assert!((m.m1[0] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn nonexistent_second_moment_is_flagged() {
        let m = trunc_mvt_moments(&DVector::zeros(2), &DMatrix::identity(2, 2), 1.7, &pr()).unwrap();
        assert!(m.m1.iter().all(|v| v.is_finite() && *v > 0.0));
        assert!(m.m2.iter().all(|v| !v.is_finite()));
    }

    #[test]
    fn underflow_is_an_error() {
        let c = DVector::from_element(1, -1e200);
        let r = trunc_mvt_moments(&c, &DMatrix::identity(1, 1), 5.0, &pr());
        assert!(matches!(r, Err(Error::OrthantUnderflow { .. })));
    }

    // Reference moments from 30-digit quadrature of the truncated density.
    #[test]
    fn univariate_reference() {
        let m = trunc_mvt_moments(
            &DVector::from_element(1, 0.7),
            &DMatrix::from_element(1, 1, 2.0),
            4.5,
            &pr(),
        )
        .unwrap();
        assert!((m.prob - REF1[0]).abs() < 1e-13);
        assert!((m.m1[0] - REF1[1]).abs() < 1e-11);
        assert!((m.m2[(0, 0)] - REF1[2]).abs() < 1e-10);
    }

    #[test]
    fn bivariate_reference() {
        let center = DVector::from_column_slice(&[0.3, -0.5]);
        let scale = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let m = trunc_mvt_moments(&center, &scale, 6.5, &pr()).unwrap();
        assert!((m.prob - REF2[0]).abs() < 1e-12, "{}", m.prob);
        let got = [m.m1[0], m.m1[1], m.m2[(0, 0)], m.m2[(0, 1)], m.m2[(1, 1)]];
        for (g, w) in got.iter().zip(&REF2[1..]) {
            assert!((g - w).abs() < 1e-9, "{g} vs {w}");
        }
        assert_eq!(m.m2[(0, 1)], m.m2[(1, 0)]);
    }

    #[test]
    fn hints_reproduce_plain_call() {
        let center = DVector::from_column_slice(&[0.3, -0.5]);
        let scale = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.8]);
        let plain = trunc_mvt_moments(&center, &scale, 6.5, &pr()).unwrap();
        let p_star = orthant(&center, &(&scale * (6.5 / 4.5)), 4.5, &pr());
        let hinted = trunc_mvt_moments_hinted(&center, &scale, 6.5, plain.prob, p_star, &pr()).unwrap();
        assert_eq!(plain, hinted);
    }

    const REF1: [f64; 3] = [0.678_087_732_158_236_53, 1.622_683_846_310_617_7, 4.477_527_215_450_459_4];
    const REF2: [f64; 6] = [
        0.223_035_571_600_505_63,
        1.494_433_064_399_206_1,
        0.732_456_798_242_152_04,
        3.518_677_011_951_018_7,
        1.334_207_171_876_787_7,
        1.013_435_764_502_994_8,
    ];
}
