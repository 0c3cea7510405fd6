//! Univariate Student t distribution: density, CDF and quantile.
//!
//! The CDF goes through the regularized incomplete beta function evaluated by
//! a modified Lentz continued fraction. Both tails are returned so that the
//! lower tail keeps full relative precision far from the centre.

use std::f64::consts::PI;

use super::gamma::ln_gamma_unchecked;

/// Degrees of freedom above which the t law is replaced by the standard normal.
const NORMAL_LIMIT_DF: f64 = 1e8;

const CF_MAX_ITER: usize = 10_000;
const CF_EPS: f64 = 1e-16;
const CF_TINY: f64 = 1e-300;

/// Standard (location 0, scale 1) Student t with fixed degrees of freedom.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    df: f64,
    ln_beta: f64,
    log_norm: f64,
}

impl StudentT {
    /// `df` must be positive; this is checked by callers.
    pub fn new(df: f64) -> Self {
        debug_assert!(df > 0.0);
        let half = 0.5 * df;
        let ln_beta = ln_gamma_unchecked(half) + 0.5 * PI.ln() - ln_gamma_unchecked(half + 0.5);
        Self {
            df,
            ln_beta,
            log_norm: -ln_beta - 0.5 * df.ln(),
        }
    }

    pub fn df(&self) -> f64 {
        self.df
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if self.df > NORMAL_LIMIT_DF {
            return -0.5 * x * x - 0.5 * (2.0 * PI).ln();
        }
        self.log_norm - 0.5 * (self.df + 1.0) * (x * x / self.df).ln_1p()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// P(X ≤ x).
    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_pair(x).0
    }

    /// (P(X ≤ x), P(X > x)), each accurate in relative terms.
    pub fn cdf_pair(&self, x: f64) -> (f64, f64) {
        if x.is_nan() {
            return (f64::NAN, f64::NAN);
        }
        if x == 0.0 {
            return (0.5, 0.5);
        }
        if x == f64::INFINITY {
            return (1.0, 0.0);
        }
        if x == f64::NEG_INFINITY {
            return (0.0, 1.0);
        }
        if self.df > NORMAL_LIMIT_DF {
            let lo = 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
            let hi = 0.5 * statrs::function::erf::erfc(x / std::f64::consts::SQRT_2);
            return (lo, hi);
        }
        let x2 = x * x;
        let denom = self.df + x2;
        // P(|X| > |x|) = I_{df/(df+x²)}(df/2, 1/2)
        let (tail2, _) = beta_reg_pair(0.5 * self.df, 0.5, self.df / denom, x2 / denom, self.ln_beta);
        let tail = 0.5 * tail2;
        if x < 0.0 {
            (tail, 1.0 - tail)
        } else {
            (1.0 - tail, tail)
        }
    }

    /// Inverse CDF.
    pub fn quantile(&self, p: f64) -> f64 {
        if !(0.0..=1.0).contains(&p) {
            return f64::NAN;
        }
        if p == 0.0 {
            return f64::NEG_INFINITY;
        }
        if p == 1.0 {
            return f64::INFINITY;
        }
        if p == 0.5 {
            return 0.0;
        }
        if self.df > NORMAL_LIMIT_DF {
            return -std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * p);
        }
        let lower = p < 0.5;
        let tail = if lower { p } else { 1.0 - p };
        let y = statrs::function::beta::inv_beta_reg(0.5 * self.df, 0.5, 2.0 * tail);
        let mut x = -(self.df * (1.0 - y) / y).sqrt();
        if !x.is_finite() {
            x = -1e300;
        }
        // Polish P(X ≤ x) = tail on x < 0. Beyond |x| = 1 the iteration runs on
        // log|x| against log P, which is nearly linear in the power-law tail.
        let ln_tail = tail.ln();
        for _ in 0..100 {
            let lo = self.cdf_pair(x).0;
            let dens = self.pdf(x);
            if !(dens > 0.0) || !(lo > 0.0) {
                break;
            }
            let next = if x < -1.0 {
                let g = lo.ln() - ln_tail;
                let slope = dens * x / lo;
                -(((-x).ln()) - g / slope).exp()
            } else {
                x - (lo - tail) / dens
            };
            if !next.is_finite() || next >= 0.0 {
                break;
            }
            let done = (next - x).abs() <= 1e-15 * x.abs();
            x = next;
            if done {
                break;
            }
        }
        if lower {
            x
        } else {
            -x
        }
    }
}

/// Student t CDF at `x` with `df` degrees of freedom.
pub fn t_cdf(x: f64, df: f64) -> f64 {
    StudentT::new(df).cdf(x)
}

/// Regularized incomplete beta I_x(a, b) and its complement, given `y = 1 - x`
/// computed independently and `ln_beta = ln B(a, b)`.
pub(crate) fn beta_reg_pair(a: f64, b: f64, x: f64, y: f64, ln_beta: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if y <= 0.0 {
        return (1.0, 0.0);
    }
    let log_front = a * x.ln() + b * y.ln() - ln_beta;
    if x < (a + 1.0) / (a + b + 2.0) {
        let v = (log_front.exp() * beta_cf(a, b, x) / a).min(1.0);
        (v, 1.0 - v)
    } else {
        let v = (log_front.exp() * beta_cf(b, a, y) / b).min(1.0);
        (1.0 - v, v)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}
