//! Multivariate Student t density and distribution function.
//!
//! The CDF is reduced to standardized bounds and a correlation matrix first.
//! Coordinates with an infinite upper bound are marginalized out, and a
//! coordinate with zero bound that is uncorrelated with the rest contributes an
//! exact factor 1/2. What remains is handled by dimension:
//!
//! * one coordinate: the univariate t CDF;
//! * two coordinates: a deterministic angular quadrature (see [`PolarOrthant`]);
//! * three or more: randomized quasi-Monte Carlo over the sequential
//!   conditional t decomposition, with a rank-1 Kronecker lattice and random
//!   shifts for the error estimate.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gamma::ln_gamma_unchecked;
use super::quadrature::tanh_sinh_rule_bounded;

/// Typical node count of a polar rule.
const NODE_CAPACITY: usize = 512;
use super::student::StudentT;
use crate::error::{Error, Result};

/// Accuracy controls for [`mvt_cdf`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdfPrecision {
    /// Target absolute error of the quasi-Monte Carlo path (3 standard errors).
    pub abs_tol: f64,
    /// Relative tolerance of the deterministic two-dimensional quadrature.
    pub rel_tol: f64,
    /// Total integrand evaluations allowed to the quasi-Monte Carlo path.
    pub max_points: usize,
    /// Number of independent random shifts (at least 2).
    pub shifts: usize,
    /// Fixes the number of lattice points per shift, disabling adaptivity.
    /// With the same seed this makes the estimate a smooth function of the
    /// inputs, which finite differences rely on.
    pub fixed_points: Option<usize>,
    pub seed: u64,
}

impl Default for CdfPrecision {
    fn default() -> Self {
        Self {
            abs_tol: 1e-6,
            rel_tol: 1e-13,
            max_points: 100_000,
            shifts: 10,
            fixed_points: None,
            seed: 0,
        }
    }
}

impl CdfPrecision {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfEstimate {
    pub value: f64,
    pub error_estimate: f64,
    pub samples_used: usize,
}

impl CdfEstimate {
    fn exact(value: f64) -> Self {
        Self {
            value,
            error_estimate: 0.0,
            samples_used: 0,
        }
    }
}

/// Log density of the p-variate t with location `mu`, scale `omega` and `nu` df.
pub fn mvt_logpdf(y: &DVector<f64>, mu: &DVector<f64>, omega: &DMatrix<f64>, nu: f64) -> Result<f64> {
    let p = y.len();
    if mu.len() != p || omega.nrows() != p || omega.ncols() != p {
        return Err(Error::Dimension(format!(
            "mvt_logpdf: y has length {p}, mu {}, omega {}x{}",
            mu.len(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    check_df(nu)?;
    let chol = omega
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite("mvt_logpdf scale"))?;
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let r = y - mu;
    let z = chol.l().solve_lower_triangular(&r).expect("triangular solve");
    let maha = z.norm_squared();
    Ok(mvt_logpdf_parts(p, maha, log_det, nu))
}

/// Log t density from the Mahalanobis distance and log-determinant.
pub(crate) fn mvt_logpdf_parts(p: usize, maha: f64, log_det: f64, nu: f64) -> f64 {
    let pf = p as f64;
    ln_gamma_unchecked(0.5 * (nu + pf)) - ln_gamma_unchecked(0.5 * nu) - 0.5 * pf * (nu * PI).ln() - 0.5 * log_det
        - 0.5 * (nu + pf) * (maha / nu).ln_1p()
}

pub(crate) fn check_df(nu: f64) -> Result<()> {
    if nu > 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain {
            func: "student t",
            value: nu,
            expected: "finite df > 0",
        })
    }
}

/// P(X ≤ a) for X ~ t_q(center, scale, nu).
pub fn mvt_cdf(
    a: &DVector<f64>,
    center: &DVector<f64>,
    scale: &DMatrix<f64>,
    nu: f64,
    precision: &CdfPrecision,
) -> Result<CdfEstimate> {
    check_df(nu)?;
    let red = Reduced::new(a, center, scale)?;
    Ok(red.cdf(nu, precision))
}

/// A CDF problem in standardized form: P(T_i ≤ b_i for all i) · factor,
/// with T a standard t vector with correlation `corr`.
#[derive(Debug, Clone)]
pub(crate) struct Reduced {
    pub b: Vec<f64>,
    pub corr: DMatrix<f64>,
    pub factor: f64,
}

impl Reduced {
    pub fn new(a: &DVector<f64>, center: &DVector<f64>, scale: &DMatrix<f64>) -> Result<Self> {
        let q = a.len();
        if center.len() != q || scale.nrows() != q || scale.ncols() != q {
            return Err(Error::Dimension(format!(
                "mvt_cdf: bound has length {q}, center {}, scale {}x{}",
                center.len(),
                scale.nrows(),
                scale.ncols()
            )));
        }
        if scale.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("mvt_cdf scale"));
        }
        let sd: Vec<f64> = (0..q).map(|i| scale[(i, i)].sqrt()).collect();
        let b: Vec<f64> = (0..q).map(|i| (a[i] - center[i]) / sd[i]).collect();
        if b.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidParameter("mvt_cdf: NaN bound".into()));
        }
        let corr = DMatrix::from_fn(q, q, |i, j| if i == j { 1.0 } else { scale[(i, j)] / (sd[i] * sd[j]) });
        Ok(Self::from_standard(b, corr))
    }

    /// Applies the exact reductions to an already standardized problem.
    pub fn from_standard(b: Vec<f64>, corr: DMatrix<f64>) -> Self {
        if b.iter().any(|v| *v == f64::NEG_INFINITY) {
            return Self {
                b: Vec::new(),
                corr: DMatrix::zeros(0, 0),
                factor: 0.0,
            };
        }
        let finite: Vec<usize> = (0..b.len()).filter(|&i| b[i] < f64::INFINITY).collect();
        let mut factor = 1.0;
        let mut keep = Vec::with_capacity(finite.len());
        for &i in &finite {
            let isolated = finite.iter().all(|&j| j == i || corr[(i, j)] == 0.0);
            if b[i] == 0.0 && isolated {
                factor *= 0.5;
            } else {
                keep.push(i);
            }
        }
        let m = keep.len();
        let kb = keep.iter().map(|&i| b[i]).collect();
        let kc = DMatrix::from_fn(m, m, |r, c| corr[(keep[r], keep[c])]);
        Self {
            b: kb,
            corr: kc,
            factor,
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn cdf(&self, nu: f64, precision: &CdfPrecision) -> CdfEstimate {
        if self.factor == 0.0 {
            return CdfEstimate::exact(0.0);
        }
        let est = match self.dim() {
            0 => CdfEstimate::exact(1.0),
            1 => CdfEstimate::exact(StudentT::new(nu).cdf(self.b[0])),
            2 => {
                let s = nu.sqrt();
                let po = PolarOrthant::new([self.b[0] / s, self.b[1] / s], self.corr[(0, 1)], &[nu], precision.rel_tol);
                let v = po.prob(nu);
                CdfEstimate {
                    value: v,
                    error_estimate: po.rel_error * v,
                    samples_used: po.evaluations,
                }
            }
            _ => rqmc_cdf(&self.b, &self.corr, nu, precision),
        };
        CdfEstimate {
            value: (est.value * self.factor).clamp(0.0, 1.0),
            error_estimate: est.error_estimate * self.factor,
            samples_used: est.samples_used,
        }
    }
}

/// Bivariate orthant probability P(Z ≤ c·√V) for Z ~ N₂(0, [[1, ρ], [ρ, 1]])
/// and V ~ χ²_k, tabulated so that it can be re-evaluated at any k.
///
/// Writing Z = r·(cos θ, cos(θ − β)) with cos β = ρ, r² ~ χ²₂ and θ uniform,
/// each direction admits an interval [s_lo, s_hi] for s = r/√V, and
/// P(r/√V ≤ s) = 1 − (1 + s²)^{−k/2}. The θ integral is split at the points
/// where a constraint changes sign or the binding constraint switches, so every
/// piece is smooth inside, and integrated by tanh-sinh.
///
/// A standard bivariate t CDF at bounds b with df ν is `prob(ν)` with c = b/√ν.
#[derive(Debug, Clone)]
pub(crate) struct PolarOrthant {
    weights: Vec<f64>,
    /// ln(1 + s²) at both ends of each direction's interval.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// (1 + s²)^{−k_ref/2}.
    lo_ref: Vec<f64>,
    hi_ref: Vec<f64>,
    /// (1 + s²)^{−1}.
    lo_step: Vec<f64>,
    hi_step: Vec<f64>,
    k_ref: f64,
    pub rel_error: f64,
    pub evaluations: usize,
}

impl PolarOrthant {
    /// `ks` lists the df values at which the rule must be accurate; the first
    /// is the reference df with cached node values.
    pub fn new(c: [f64; 2], rho: f64, ks: &[f64], rel_tol: f64) -> Self {
        let sigma = (1.0 - rho * rho).max(0.0).sqrt();
        let beta = sigma.atan2(rho);
        let cs_beta = (beta.cos(), beta.sin());
        let mut cuts = vec![-FRAC_PI_2, FRAC_PI_2, beta - FRAC_PI_2, beta + FRAC_PI_2];
        let aa = c[0] * rho - c[1];
        let bb = c[0] * sigma;
        if aa != 0.0 || bb != 0.0 {
            let phi0 = bb.atan2(aa);
            cuts.push(phi0 - FRAC_PI_2);
            cuts.push(phi0 + FRAC_PI_2);
        }
        let mut cuts: Vec<f64> = cuts.into_iter().map(wrap_angle).collect();
        cuts.push(-PI);
        cuts.push(PI);
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-15);

        let k_ref = ks[0];
        // Extra df values enter the integrand as powers of (1 + s²)^{−1/2}
        // relative to the reference.
        let offsets: Vec<f64> = ks[1..].iter().map(|k| 0.5 * (k - k_ref)).collect();
        let mut po = Self {
            weights: Vec::with_capacity(NODE_CAPACITY),
            lo: Vec::with_capacity(NODE_CAPACITY),
            hi: Vec::with_capacity(NODE_CAPACITY),
            lo_ref: Vec::with_capacity(NODE_CAPACITY),
            hi_ref: Vec::with_capacity(NODE_CAPACITY),
            lo_step: Vec::with_capacity(NODE_CAPACITY),
            hi_step: Vec::with_capacity(NODE_CAPACITY),
            k_ref,
            rel_error: 0.0,
            evaluations: 0,
        };
        let mut total = 0.0;
        let mut err = 0.0;
        for w in cuts.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 - t0 <= 0.0 {
                continue;
            }
            // Emptiness of the direction set cannot change inside a piece.
            let (l, h) = direction_interval(0.5 * (t0 + t1), c, cs_beta);
            if l >= h {
                continue;
            }
            if l == 0.0 && h == f64::INFINITY {
                // The whole ray lies in the orthant for every direction here.
                let mass = 1.0 + offsets.len() as f64;
                total += mass * (t1 - t0);
                po.push(t1 - t0, &Node::new(l, h, k_ref));
                continue;
            }
            let start = po.weights.len();
            let bound = offsets.iter().all(|&o| o >= 0.0).then_some(1.0 + offsets.len() as f64);
            let (res, wts) = tanh_sinh_rule_bounded(t0, t1, rel_tol, bound, |theta, _, _| {
                let (l, h) = direction_interval(theta, c, cs_beta);
                let node = Node::new(l, h, k_ref);
                let mut v = node.a - node.b;
                for &o in &offsets {
                    v += if o == 1.0 {
                        node.a * node.rl - node.b * node.rh
                    } else {
                        node.a * node.rl.powf(o) - node.b * node.rh.powf(o)
                    };
                }
                po.push(0.0, &node);
                v
            });
            total += res.value;
            err += res.error;
            po.weights[start..].copy_from_slice(&wts);
        }
        po.evaluations = po.weights.len();
        po.rel_error = if total > 0.0 { err / total } else { 0.0 };
        po
    }

    fn push(&mut self, weight: f64, nd: &Node) {
        self.weights.push(weight);
        self.lo.push(nd.l);
        self.hi.push(nd.h);
        self.lo_ref.push(nd.a);
        self.hi_ref.push(nd.b);
        self.lo_step.push(nd.rl);
        self.hi_step.push(nd.rh);
    }

    fn finish(s: f64) -> f64 {
        (s / (2.0 * PI)).clamp(0.0, 1.0)
    }

    pub fn prob(&self, k: f64) -> f64 {
        let mut s = 0.0;
        if k == self.k_ref {
            for i in 0..self.weights.len() {
                s += self.weights[i] * (self.lo_ref[i] - self.hi_ref[i]);
            }
        } else if k == self.k_ref + 2.0 {
            for i in 0..self.weights.len() {
                s += self.weights[i] * (self.lo_ref[i] * self.lo_step[i] - self.hi_ref[i] * self.hi_step[i]);
            }
        } else {
            for i in 0..self.weights.len() {
                s += self.weights[i] * mass(self.lo[i], self.hi[i], k);
            }
        }
        Self::finish(s)
    }

    /// d/dk of `prob(k)`.
    #[cfg(test)]
    pub fn dprob_dk(&self, k: f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.weights.len() {
            let (l, h) = (self.lo[i], self.hi[i]);
            let el = if l.is_finite() { -0.5 * l * (-0.5 * k * l).exp() } else { 0.0 };
            let eh = if h.is_finite() { -0.5 * h * (-0.5 * k * h).exp() } else { 0.0 };
            s += self.weights[i] * (el - eh);
        }
        s / (2.0 * PI)
    }
}

struct Node {
    l: f64,
    h: f64,
    a: f64,
    b: f64,
    rl: f64,
    rh: f64,
}

impl Node {
    /// From the squared interval ends.
    fn new(sl: f64, sh: f64, k: f64) -> Self {
        if sl >= sh {
            let (l, h) = (f64::INFINITY, f64::INFINITY);
            return Self {
                l,
                h,
                a: 0.0,
                b: 0.0,
                rl: 0.0,
                rh: 0.0,
            };
        }
        let end = |s2: f64| {
            if s2.is_finite() {
                let l = s2.ln_1p();
                (l, (-0.5 * k * l).exp(), 1.0 / (1.0 + s2))
            } else {
                (f64::INFINITY, 0.0, 0.0)
            }
        };
        let (l, a, rl) = end(sl);
        let (h, b, rh) = end(sh);
        Self { l, h, a, b, rl, rh }
    }
}

/// Successive values of [`PolarOrthant::prob`] at k_ref, k_ref + dk, …,
/// updated multiplicatively.
pub(crate) struct PolarGrid<'a> {
    po: &'a PolarOrthant,
    lo: Vec<f64>,
    hi: Vec<f64>,
    lo_step: Vec<f64>,
    hi_step: Vec<f64>,
}

impl<'a> PolarGrid<'a> {
    fn new(po: &'a PolarOrthant, dk: f64) -> Self {
        let step = |v: &[f64]| v.iter().map(|x| if x.is_finite() { (-0.5 * dk * x).exp() } else { 0.0 }).collect();
        Self {
            po,
            lo: po.lo_ref.clone(),
            hi: po.hi_ref.clone(),
            lo_step: step(&po.lo),
            hi_step: step(&po.hi),
        }
    }

    fn next_value(&mut self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.lo.len() {
            s += self.po.weights[i] * (self.lo[i] - self.hi[i]);
            self.lo[i] *= self.lo_step[i];
            self.hi[i] *= self.hi_step[i];
        }
        PolarOrthant::finish(s)
    }
}

#[inline]
fn mass(l: f64, h: f64, k: f64) -> f64 {
    if l >= h {
        return 0.0;
    }
    (-0.5 * k * l).exp() - (-0.5 * k * h).exp()
}

fn wrap_angle(t: f64) -> f64 {
    let mut t = t;
    while t < -PI {
        t += 2.0 * PI;
    }
    while t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// (s_lo², s_hi²) for direction θ; equal infinities when empty.
fn direction_interval(theta: f64, c: [f64; 2], cs_beta: (f64, f64)) -> (f64, f64) {
    let (sin, cos) = theta.sin_cos();
    let dirs = [cos, cos * cs_beta.0 + sin * cs_beta.1];
    let mut s_lo: f64 = 0.0;
    let mut s_hi = f64::INFINITY;
    for i in 0..2 {
        let (d, ci) = (dirs[i], c[i]);
        if d > 0.0 {
            if ci < 0.0 {
                return (f64::INFINITY, f64::INFINITY);
            }
            s_hi = s_hi.min(ci / d);
        } else if d < 0.0 {
            if ci < 0.0 {
                s_lo = s_lo.max(ci / d);
            }
        } else if ci < 0.0 {
            return (f64::INFINITY, f64::INFINITY);
        }
    }
    if s_lo >= s_hi {
        return (f64::INFINITY, f64::INFINITY);
    }
    (s_lo * s_lo, s_hi * s_hi)
}

/// The standard t orthant probability P(T ≤ c·√k) with fixed unit bounds c
/// and correlation, viewed as a function of the df k. Every evaluation shares
/// the same quadrature rule or lattice, so the values are smooth in k.
#[derive(Debug, Clone)]
pub(crate) struct DfFamily {
    kind: FamilyKind,
    factor: f64,
}

#[derive(Debug, Clone)]
enum FamilyKind {
    Constant,
    Uni(f64),
    Polar(PolarOrthant),
    Lattice { c: Vec<f64>, corr: DMatrix<f64>, precision: CdfPrecision },
}

impl DfFamily {
    /// `ks` lists df values at which the family must be accurate; the first
    /// one also calibrates the lattice size in three or more dimensions.
    pub fn new(c: &[f64], corr: &DMatrix<f64>, ks: &[f64], precision: &CdfPrecision) -> Self {
        let red = Reduced::from_standard(c.to_vec(), corr.clone());
        if red.factor == 0.0 {
            return Self {
                kind: FamilyKind::Constant,
                factor: 0.0,
            };
        }
        let kind = match red.dim() {
            0 => FamilyKind::Constant,
            1 => FamilyKind::Uni(red.b[0]),
            2 => FamilyKind::Polar(PolarOrthant::new([red.b[0], red.b[1]], red.corr[(0, 1)], ks, precision.rel_tol)),
            _ => {
                let k = ks[0];
                let b: Vec<f64> = red.b.iter().map(|v| v * k.sqrt()).collect();
                let first = rqmc_cdf(&b, &red.corr, k, precision);
                let per_shift = (first.samples_used / (2 * precision.shifts.max(2))).max(1);
                FamilyKind::Lattice {
                    c: red.b.clone(),
                    corr: red.corr.clone(),
                    precision: CdfPrecision {
                        fixed_points: Some(per_shift),
                        ..precision.clone()
                    },
                }
            }
        };
        Self { kind, factor: red.factor }
    }

    pub fn prob(&self, k: f64) -> f64 {
        self.factor
            * match &self.kind {
                FamilyKind::Constant => 1.0,
                FamilyKind::Uni(c) => StudentT::new(k).cdf(c * k.sqrt()),
                FamilyKind::Polar(po) => po.prob(k),
                FamilyKind::Lattice { c, corr, precision } => {
                    let b: Vec<f64> = c.iter().map(|v| v * k.sqrt()).collect();
                    rqmc_cdf(&b, corr, k, precision).value
                }
            }
    }

    /// Values at k0, k0 + dk, k0 + 2dk, … on demand.
    pub fn grid(&self, k0: f64, dk: f64) -> DfGrid<'_> {
        DfGrid {
            family: self,
            polar: match &self.kind {
                FamilyKind::Polar(po) if po.k_ref == k0 => Some(PolarGrid::new(po, dk)),
                _ => None,
            },
            k: k0,
            dk,
        }
    }

    #[cfg(test)]
    pub fn dprob_dk(&self, k: f64) -> Option<f64> {
        match &self.kind {
            FamilyKind::Polar(po) => Some(self.factor * po.dprob_dk(k)),
            FamilyKind::Constant => Some(0.0),
            _ => None,
        }
    }
}

pub(crate) struct DfGrid<'a> {
    family: &'a DfFamily,
    polar: Option<PolarGrid<'a>>,
    k: f64,
    dk: f64,
}

impl Iterator for DfGrid<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let v = match &mut self.polar {
            Some(g) => self.family.factor * g.next_value(),
            None => self.family.prob(self.k),
        };
        self.k += self.dk;
        Some(v)
    }
}

const LATTICE_PRIMES: [f64; 20] = [
    2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0, 43.0, 47.0, 53.0, 59.0, 61.0, 67.0, 71.0,
];

/// Sequential conditional t integrand over the unit cube of dimension q − 1.
struct Sequential {
    b: Vec<f64>,
    l: DMatrix<f64>,
    nu: f64,
    students: Vec<StudentT>,
}

impl Sequential {
    fn new(b: &[f64], corr: &DMatrix<f64>, nu: f64) -> Self {
        let q = b.len();
        // Integrate the most restrictive coordinates first.
        let mut order: Vec<usize> = (0..q).collect();
        order.sort_by(|&i, &j| b[i].partial_cmp(&b[j]).unwrap());
        let pb: Vec<f64> = order.iter().map(|&i| b[i]).collect();
        let pc = DMatrix::from_fn(q, q, |r, c| corr[(order[r], order[c])]);
        let l = pc.cholesky().expect("correlation is positive definite").l();
        let students = (0..q).map(|k| StudentT::new(nu + k as f64)).collect();
        Self {
            b: pb,
            l,
            nu,
            students,
        }
    }

    fn eval(&self, w: &[f64], y: &mut [f64]) -> f64 {
        let q = self.b.len();
        let mut s = 0.0;
        let mut prod = 1.0;
        for k in 0..q {
            let mut dev = 0.0;
            for i in 0..k {
                dev += self.l[(k, i)] * y[i];
            }
            let kf = k as f64;
            let sc = ((self.nu + s) / (self.nu + kf)).sqrt();
            let lim = (self.b[k] - dev) / (self.l[(k, k)] * sc);
            let e = self.students[k].cdf(lim);
            prod *= e;
            if prod == 0.0 || k + 1 == q {
                break;
            }
            let u = (w[k] * e).max(f64::MIN_POSITIVE);
            y[k] = sc * self.students[k].quantile(u);
            s += y[k] * y[k];
        }
        prod
    }
}

fn rqmc_cdf(b: &[f64], corr: &DMatrix<f64>, nu: f64, precision: &CdfPrecision) -> CdfEstimate {
    let q = b.len();
    let dim = q - 1;
    let integrand = Sequential::new(b, corr, nu);
    let alpha: Vec<f64> = (0..dim).map(|i| LATTICE_PRIMES[i % 20].sqrt().fract()).collect();
    let n_shifts = precision.shifts.max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(precision.seed);
    let shifts: Vec<Vec<f64>> = (0..n_shifts).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();

    let mut sums = vec![0.0; n_shifts];
    let mut n_done = 0usize;
    let mut target = precision.fixed_points.unwrap_or(128).max(1);
    let mut used = 0usize;
    let mut w = vec![0.0; dim];
    let mut w2 = vec![0.0; dim];
    let mut y = vec![0.0; q];
    loop {
        for j in n_done..target {
            let jf = (j + 1) as f64;
            for (s, shift) in shifts.iter().enumerate() {
                for i in 0..dim {
                    let x = (jf * alpha[i] + shift[i]).fract();
                    let x = 1.0 - (2.0 * x - 1.0).abs();
                    w[i] = x;
                    w2[i] = 1.0 - x;
                }
                let v = 0.5 * (integrand.eval(&w, &mut y) + integrand.eval(&w2, &mut y));
                sums[s] += v;
            }
        }
        used += 2 * n_shifts * (target - n_done);
        n_done = target;
        let means: Vec<f64> = sums.iter().map(|s| s / n_done as f64).collect();
        let mean = means.iter().sum::<f64>() / n_shifts as f64;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / ((n_shifts - 1) * n_shifts) as f64;
        let err = 3.0 * var.sqrt();
        let next_cost = 2 * n_shifts * target;
        if precision.fixed_points.is_some() || err <= precision.abs_tol || used + next_cost > precision.max_points {
            return CdfEstimate {
                value: mean.clamp(0.0, 1.0),
                error_estimate: err,
                samples_used: used,
            };
        }
        target *= 2;
    }
}
