//! Brute-force references: importance sampling of the latent variables,
//! rejection sampling of truncated t moments and grid quadrature of the
//! density. Slow and simple on purpose.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{sample_cfust, CfustParams, Prepared};
use crate::seed::derive_seed;
use crate::specfun::CdfPrecision;

const BLOCK: usize = 8192;
const MIN_ESS: f64 = 100.0;
pub const MIN_ACCEPTANCE: f64 = 1e-4;

/// A Monte Carlo estimate with its standard error (same shape as the value).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleEstimate<T> {
    pub value: T,
    pub std_error: T,
    pub n_samples: usize,
}

/// Self-normalized importance sampling estimates of the posterior moments of
/// (W, U) given y.
#[derive(Debug, Clone)]
pub struct PosteriorMc {
    /// E[W | y].
    pub w: OracleEstimate<f64>,
    /// E[log W | y].
    pub e1: OracleEstimate<f64>,
    /// E[W U | y].
    pub e2: OracleEstimate<DVector<f64>>,
    /// E[W U Uᵀ | y].
    pub e3: OracleEstimate<DMatrix<f64>>,
    pub ess: f64,
    /// Effective sample size below 100.
    pub low_ess: bool,
}

struct Draw {
    log_weight: f64,
    w: f64,
    u: DVector<f64>,
}

/// Draws (w, u) from the prior W ~ Gamma(ν/2, rate ν/2), U | W ~ |N(0, I/W)|
/// and weights them by the normal density of y given (u, w).
pub fn posterior_expectations_mc(y: &DVector<f64>, params: &CfustParams, n_samples: usize, seed: u64) -> Result<PosteriorMc> {
    posterior_mc(y, params, n_samples, seed, false)
}

/// As [`posterior_expectations_mc`] but with draws placed near the posterior:
/// W ~ Gamma((ν+p)/2, rate (ν+d)/2 + t), its posterior when Δ = 0 apart from
/// the tail term t = Σ_{q_i<0} q_i²/(2Λ_ii), and each U_i
/// from the normal N(q_i, Λ_ii/w) truncated to U_i > 0, where q = ΔᵀΩ⁻¹(y−μ)
/// and Λ = I − ΔᵀΩ⁻¹Δ. Usable far in the tails, where prior draws leave an
/// effective sample size near 1.
pub fn posterior_expectations_tilted_mc(
    y: &DVector<f64>,
    params: &CfustParams,
    n_samples: usize,
    seed: u64,
) -> Result<PosteriorMc> {
    posterior_mc(y, params, n_samples, seed, true)
}

/// log Φ(x), with the asymptotic series far in the lower tail.
fn ln_normal_cdf(x: f64) -> f64 {
    if x > -20.0 {
        return (0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)).ln();
    }
    let x2 = x * x;
    -0.5 * x2 - (-x * (2.0 * std::f64::consts::PI).sqrt()).ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)).ln()
}

/// Standard normal truncated to (a, ∞): plain rejection near the centre,
/// exponential proposals in the tail.
fn truncated_standard_normal(a: f64, rng: &mut ChaCha8Rng) -> f64 {
    if a < 0.5 {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a {
                return z;
            }
        }
    }
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let z = a - rng.random::<f64>().ln() / alpha;
        if rng.random::<f64>() <= (-0.5 * (z - alpha).powi(2)).exp() {
            return z;
        }
    }
}

fn posterior_mc(y: &DVector<f64>, params: &CfustParams, n_samples: usize, seed: u64, tilted: bool) -> Result<PosteriorMc> {
    params.validate()?;
    let (p, q) = (params.p(), params.q());
    if y.len() != p {
        return Err(Error::Dimension(format!("observation has length {}, expected {p}", y.len())));
    }
    if n_samples < 2 {
        return Err(Error::InvalidParameter("n_samples must be at least 2".into()));
    }
    let chol = params.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite("sigma"))?;
    let r0 = y - &params.mu;
    let omega = &params.sigma + &params.delta * params.delta.transpose();
    let omega_chol = omega.cholesky().ok_or(Error::NotPositiveDefinite("omega"))?;
    let d = r0.dot(&omega_chol.solve(&r0));
    let center = params.delta.transpose() * omega_chol.solve(&r0);
    let lambda = DMatrix::identity(q, q) - params.delta.transpose() * omega_chol.solve(&params.delta);
    let lambda_inv = lambda.clone().try_inverse().ok_or(Error::NotPositiveDefinite("lambda"))?;
    let sd: Vec<f64> = (0..q).map(|i| lambda[(i, i)].sqrt()).collect();
    // A negative q_i makes P(U_i > 0 | w) fall off like exp(−w q_i²/(2Λ_ii));
    // the proposal rate absorbs that and the weight gives it back.
    let tail_rate: f64 = (0..q).map(|i| 0.5 * center[i].min(0.0).powi(2) / lambda[(i, i)]).sum();
    let (shape, rate) = if tilted {
        (0.5 * (params.nu + p as f64), 0.5 * (params.nu + d) + tail_rate)
    } else {
        (0.5 * params.nu, 0.5 * params.nu)
    };
    let gamma = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::InvalidParameter(format!("gamma mixing law: {e}")))?;
    let blocks = n_samples.div_ceil(BLOCK);
    let draws: Vec<Draw> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b as u64]));
            let count = BLOCK.min(n_samples - b * BLOCK);
            (0..count)
                .map(|_| {
                    let w: f64 = gamma.sample(&mut rng);
                    let s = 1.0 / w.sqrt();
                    if !tilted {
                        // Prior draws: the weight is the normal density of y.
                        let u = DVector::from_fn(q, |_, _| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            z.abs() * s
                        });
                        let r = &r0 - &params.delta * &u;
                        let maha = r.dot(&chol.solve(&r));
                        return Draw {
                            log_weight: 0.5 * p as f64 * w.ln() - 0.5 * w * maha,
                            w,
                            u,
                        };
                    }
                    // The target is proportional to
                    // w^((ν+p+q)/2 − 1) exp(−w(ν+d)/2) exp(−w (u−q)ᵀΛ⁻¹(u−q)/2) on u > 0.
                    let mut log_weight = w * tail_rate;
                    let mut u = DVector::zeros(q);
                    for i in 0..q {
                        let scale = sd[i] * s;
                        let a = -center[i] / scale;
                        u[i] = center[i] + scale * truncated_standard_normal(a, &mut rng);
                        log_weight += ln_normal_cdf(-a) + 0.5 * ((u[i] - center[i]) / scale).powi(2);
                    }
                    let e = &u - &center;
                    log_weight -= 0.5 * w * e.dot(&(&lambda_inv * &e));
                    Draw { log_weight, w, u }
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();

    let top = draws.iter().map(|d| d.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let omega: Vec<f64> = draws.iter().map(|d| (d.log_weight - top).exp()).collect();
    let total: f64 = omega.iter().sum();
    let ess = total * total / omega.iter().map(|o| o * o).sum::<f64>();

    // Ratio estimator with delta-method standard error.
    let estimate = |f: &dyn Fn(&Draw) -> f64| -> (f64, f64) {
        let mean = draws.iter().zip(&omega).map(|(d, o)| o * f(d)).sum::<f64>() / total;
        let var = draws.iter().zip(&omega).map(|(d, o)| (o * (f(d) - mean)).powi(2)).sum::<f64>() / (total * total);
        (mean, var.sqrt())
    };
    let (w, w_se) = estimate(&|d| d.w);
    let (e1, e1_se) = estimate(&|d| d.w.ln());
    let mut e2 = DVector::zeros(q);
    let mut e2_se = DVector::zeros(q);
    let mut e3 = DMatrix::zeros(q, q);
    let mut e3_se = DMatrix::zeros(q, q);
    for a in 0..q {
        (e2[a], e2_se[a]) = estimate(&|d| d.w * d.u[a]);
        for b in a..q {
            let (v, se) = estimate(&|d| d.w * d.u[a] * d.u[b]);
            e3[(a, b)] = v;
            e3[(b, a)] = v;
            e3_se[(a, b)] = se;
            e3_se[(b, a)] = se;
        }
    }
    if ess < MIN_ESS {
        log::warn!("importance sampling effective sample size {ess:.1} below {MIN_ESS}");
    }
    let est = |value, std_error| OracleEstimate {
        value,
        std_error,
        n_samples,
    };
    Ok(PosteriorMc {
        w: est(w, w_se),
        e1: est(e1, e1_se),
        e2: OracleEstimate {
            value: e2,
            std_error: e2_se,
            n_samples,
        },
        e3: OracleEstimate {
            value: e3,
            std_error: e3_se,
            n_samples,
        },
        ess,
        low_ess: ess < MIN_ESS,
    })
}

/// Rejection-sampling moments of t(center, scale, nu) on the positive orthant.
#[derive(Debug, Clone)]
pub struct TruncatedMc {
    pub m1: OracleEstimate<DVector<f64>>,
    pub m2: OracleEstimate<DMatrix<f64>>,
    pub acceptance: f64,
}

/// `n_samples` proposals from the untruncated law; the accepted ones give the
/// moment estimates.
pub fn truncated_moments_mc(
    center: &DVector<f64>,
    scale: &DMatrix<f64>,
    nu: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TruncatedMc> {
    let q = center.len();
    if scale.nrows() != q || scale.ncols() != q {
        return Err(Error::Dimension("truncated_moments_mc: scale shape".into()));
    }
    crate::specfun::mvt::check_df(nu)?;
    let l = scale.clone().cholesky().ok_or(Error::NotPositiveDefinite("scale"))?.unpack();
    let gamma =
        Gamma::new(0.5 * nu, 2.0 / nu).map_err(|e| Error::InvalidParameter(format!("gamma mixing law: {e}")))?;
    let blocks = n_samples.div_ceil(BLOCK);
    let accepted: Vec<DVector<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[b as u64]));
            let count = BLOCK.min(n_samples - b * BLOCK);
            let mut out = Vec::new();
            for _ in 0..count {
                let w: f64 = gamma.sample(&mut rng);
                let z = DVector::from_fn(q, |_, _| StandardNormal.sample(&mut rng));
                let x = center + &l * z / w.sqrt();
                if x.iter().all(|v| *v > 0.0) {
                    out.push(x);
                }
            }
            out
        })
        .flatten()
        .collect();
    let acceptance = accepted.len() as f64 / n_samples.max(1) as f64;
    if acceptance < MIN_ACCEPTANCE || accepted.len() < 2 {
        return Err(Error::AcceptanceTooLow {
            rate: acceptance,
            threshold: MIN_ACCEPTANCE,
        });
    }
    let k = accepted.len() as f64;
    let mut m1 = DVector::zeros(q);
    let mut m2 = DMatrix::zeros(q, q);
    for x in &accepted {
        m1 += x;
        m2 += x * x.transpose();
    }
    m1 /= k;
    m2 /= k;
    let mut v1 = DVector::zeros(q);
    let mut v2 = DMatrix::zeros(q, q);
    for x in &accepted {
        v1 += (x - &m1).map(|v| v * v);
        let outer = x * x.transpose();
        v2 += (outer - &m2).map(|v| v * v);
    }
    let se1 = (v1 / (k * (k - 1.0))).map(f64::sqrt);
    let se2 = (v2 / (k * (k - 1.0))).map(f64::sqrt);
    Ok(TruncatedMc {
        m1: OracleEstimate {
            value: m1,
            std_error: se1,
            n_samples: accepted.len(),
        },
        m2: OracleEstimate {
            value: m2,
            std_error: se2,
            n_samples: accepted.len(),
        },
        acceptance,
    })
}

/// Grid for [`density_normalization_quadrature`].
#[derive(Debug, Clone)]
pub struct GridSpec {
    /// Simpson nodes per axis (made odd).
    pub points: usize,
    /// Probability mass the box may leave out.
    pub tail_mass: f64,
    /// Draws used to place the box.
    pub samples: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points: 201,
            tail_mass: 1e-4,
            samples: 100_000,
            seed: 0,
        }
    }
}

/// Composite Simpson integral of the density over a box placed from sample
/// quantiles. Only p ≤ 2.
pub fn density_normalization_quadrature(params: &CfustParams, grid: &GridSpec) -> Result<f64> {
    let p = params.p();
    if p > 2 {
        return Err(Error::Dimension(format!("grid quadrature supports p ≤ 2, got {p}")));
    }
    let prep = Prepared::new(params)?;
    let sample = sample_cfust(params, grid.samples, grid.seed)?;
    // Per-axis tail mass split so that the union bound covers the box; the
    // sample interval is then widened to absorb quantile noise.
    let tail = grid.tail_mass / (2.0 * p as f64);
    let ranges: Vec<(f64, f64)> = (0..p)
        .map(|i| {
            let mut col: Vec<f64> = sample.column(i).iter().copied().collect();
            col.sort_by(f64::total_cmp);
            let at = |prob: f64| col[((prob * (col.len() - 1) as f64).round() as usize).min(col.len() - 1)];
            let (lo, hi) = (at(tail), at(1.0 - tail));
            let mid = at(0.5);
            (mid - 1.5 * (mid - lo), mid + 1.5 * (hi - mid))
        })
        .collect();
    let n = grid.points.max(3) | 1;
    let axis: Vec<(Vec<f64>, Vec<f64>)> = ranges
        .iter()
        .map(|&(a, b)| {
            let h = (b - a) / (n - 1) as f64;
            let x = (0..n).map(|k| a + h * k as f64).collect();
            let w = (0..n)
                .map(|k| {
                    let c = if k == 0 || k == n - 1 {
                        1.0
                    } else if k % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * h / 3.0
                })
                .collect();
            (x, w)
        })
        .collect();
    let precision = CdfPrecision::default();
    let dens = |y: DVector<f64>| prep.logpdf_terms(&prep.point(&y), &precision).value.exp();
    let total = if p == 1 {
        axis[0].0.iter().zip(&axis[0].1).map(|(x, w)| w * dens(DVector::from_element(1, *x))).sum()
    } else {
        let (xs, wx) = &axis[0];
        let (ys, wy) = &axis[1];
        let rows: Vec<f64> = xs
            .par_iter()
            .zip(wx)
            .map(|(x, w)| w * ys.iter().zip(wy).map(|(y, v)| v * dens(DVector::from_column_slice(&[*x, *y]))).sum::<f64>())
            .collect();
        rows.iter().sum()
    };
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::digamma;

    fn t_params(nu: f64) -> CfustParams {
        CfustParams::new(
            DVector::from_column_slice(&[0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            DMatrix::zeros(2, 2),
            nu,
        )
        .unwrap()
    }

    #[test]
    fn gamma_posterior_without_skewness() {
        let params = t_params(5.0);
        let y = DVector::from_column_slice(&[1.2, 0.4]);
        let pt = Prepared::new(&params).unwrap().point(&y);
        let mc = posterior_expectations_mc(&y, &params, 100_000, 11).unwrap();
        let w = (5.0 + 2.0) / (5.0 + pt.d);
        let e1 = digamma(3.5).unwrap() - (0.5 * (5.0 + pt.d)).ln();
        assert!((mc.w.value - w).abs() < 3.0 * mc.w.std_error, "{:?} vs {w}", mc.w);
        assert!((mc.e1.value - e1).abs() < 3.0 * mc.e1.std_error);
        assert!(!mc.low_ess);
    }

    #[test]
    fn tilted_sampler_agrees_with_prior_draws() {
        let params = CfustParams::new(
            DVector::from_column_slice(&[0.5, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, -0.4, 0.2, 0.8]),
            4.0,
        )
        .unwrap();
        let y = DVector::from_column_slice(&[1.5, 0.2]);
        let a = posterior_expectations_mc(&y, &params, 100_000, 3).unwrap();
        let b = posterior_expectations_tilted_mc(&y, &params, 100_000, 4).unwrap();
        let close = |x: &OracleEstimate<f64>, z: &OracleEstimate<f64>| {
            (x.value - z.value).abs() < 4.0 * (x.std_error.hypot(z.std_error))
        };
        assert!(close(&a.w, &b.w), "{:?} {:?}", a.w, b.w);
        assert!(close(&a.e1, &b.e1), "{:?} {:?}", a.e1, b.e1);
        assert!(b.ess > a.ess);
    }

    #[test]
    fn tilted_sampler_in_the_far_tail() {
        let params = t_params(3.0);
        let y = DVector::from_column_slice(&[40.0, -60.0]);
        let pt = Prepared::new(&params).unwrap().point(&y);
        let mc = posterior_expectations_tilted_mc(&y, &params, 20_000, 5).unwrap();
        // Δ = 0 makes the proposal exact: all weights equal.
        assert!((mc.ess - 20_000.0).abs() < 1e-6);
        assert!((mc.w.value - 5.0 / (3.0 + pt.d)).abs() < 3.0 * mc.w.std_error);
    }

    #[test]
    fn reproducible_under_seed() {
        let params = t_params(3.0);
        let y = DVector::from_column_slice(&[0.0, 0.0]);
        let a = posterior_expectations_mc(&y, &params, 20_000, 3).unwrap();
        let b = posterior_expectations_mc(&y, &params, 20_000, 3).unwrap();
        assert_eq!(a.e3.value, b.e3.value);
        assert_eq!(a.e1.std_error, b.e1.std_error);
    }

    #[test]
    fn half_t_second_moment() {
        let mc = truncated_moments_mc(&DVector::zeros(1), &DMatrix::identity(1, 1), 5.0, 200_000, 5).unwrap();
        assert!((mc.m2.value[(0, 0)] - 5.0 / 3.0).abs() < 3.0 * mc.m2.std_error[(0, 0)]);
        assert!((mc.acceptance - 0.5).abs() < 0.01);
    }

    #[test]
    fn rare_orthant_is_rejected() {
        let r = truncated_moments_mc(&DVector::from_element(2, -40.0), &DMatrix::identity(2, 2), 30.0, 10_000, 1);
        assert!(matches!(r, Err(Error::AcceptanceTooLow { .. })));
    }

    #[test]
    fn symmetric_t_normalizes() {
        let params = CfustParams::new(
            DVector::from_element(1, 0.3),
            DMatrix::from_element(1, 1, 1.7),
            DMatrix::zeros(1, 1),
            6.0,
        )
        .unwrap();
        let v = density_normalization_quadrature(&params, &GridSpec::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }
}
