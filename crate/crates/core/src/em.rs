//! EM fitting of finite CFUST mixtures: E-step conditional expectations,
//! conditional M-step updates, the df equation, initialization and the
//! multi-start driver.
//!
//! Given y, write m = ν + p and κ = ν + d(y). The skewing CDF at df k,
//! P(k) = T_q(q(y)·√(k/κ); 0, Λ, k), drives every expectation:
//! E[W^t | y] = Γ(m/2 + t)/Γ(m/2) · (κ/2)^{−t} · P(m + 2t)/P(m), so that
//! w = (m/κ)·P(m + 2)/P(m) and E[log W | y] = ψ(m/2) − log(κ/2) + π′(0) with
//! π(t) = P(m + 2t)/P(m). The correction π′(0) is summed as a Newton forward
//! difference series, each group of which needs one more T_q at an inflated df.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{log_sum_exp, CfustParams, MixtureParams, PointTerms, Prepared, SkewStructure, CDF_FLOOR};
use crate::oracle::posterior_expectations_mc;
use crate::seed::derive_seed;
use crate::specfun::gamma::{digamma_unchecked, ln_gamma_unchecked};
use crate::specfun::mvt::DfFamily;
use crate::specfun::{trunc_mvt_moments_hinted, CdfPrecision};

/// Responsibilities below this skip the conditional expectations; their
/// contribution to every M-step sum is weighted by z anyway.
pub const Z_SKIP: f64 = 1e-12;

/// A component whose density bound (CDF ≤ 1) sits this many nats below the
/// best component gets z = 0 without evaluating its CDF.
const FAR_SKIP: f64 = 40.0;

/// Smallest step of the forward differences in the e1 series.
const SERIES_MIN_STEP: f64 = 1.0 / 256.0;
/// Relative rounding per multiplicative update of the T_q values.
const SERIES_NOISE: f64 = 1.2e-16;
const COLLAPSE_RETRIES: usize = 3;
const KMEANS_TRIES: usize = 10;
const KMEANS_ITER: usize = 100;
const RIDGE_TRIES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum E1Method {
    Series,
    /// The one-step-late approximation; fast but not exact.
    Osl,
    MonteCarlo,
}

impl E1Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            E1Method::Series => "series",
            E1Method::Osl => "osl",
            E1Method::MonteCarlo => "monte-carlo",
        }
    }
}

impl FromStr for E1Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "series" => Ok(E1Method::Series),
            "osl" => Ok(E1Method::Osl),
            "mc" | "monte-carlo" => Ok(E1Method::MonteCarlo),
            _ => Err(Error::InvalidParameter(format!("unknown e1 method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMethod {
    Kmeans,
    Random,
}

impl InitMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitMethod::Kmeans => "kmeans",
            InitMethod::Random => "random",
        }
    }
}

impl FromStr for InitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(InitMethod::Kmeans),
            "random" => Ok(InitMethod::Random),
            _ => Err(Error::InvalidParameter(format!("unknown init method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub g: usize,
    pub skew_structure: SkewStructure,
    pub q: usize,
    pub max_iter: usize,
    /// Stop when |ℓ_k − ℓ_{k−1}| < tol·|ℓ_{k−1}|.
    pub tol: f64,
    pub e1_method: E1Method,
    pub series_r_max: usize,
    pub series_tol: f64,
    /// Replace a non-converged e1 series by importance sampling.
    pub mc_fallback: bool,
    /// Importance samples per Monte Carlo e1 evaluation.
    pub mc_samples: usize,
    pub df_bounds: (f64, f64),
    pub init: InitMethod,
    pub n_starts: usize,
    /// With several starts, EM iterations given to every start before only
    /// the best one is run to convergence. 0 runs every start to the end.
    pub start_iter: usize,
    pub seed: u64,
    pub cdf_precision: CdfPrecision,
    /// Hold every ν at this value instead of estimating it.
    pub fixed_nu: Option<f64>,
    /// Hold Δ at zero (symmetric t mixture).
    pub zero_skew: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            g: 1,
            skew_structure: SkewStructure::Full,
            q: 1,
            max_iter: 500,
            tol: 1e-6,
            e1_method: E1Method::Series,
            series_r_max: 60,
            series_tol: 1e-9,
            mc_fallback: true,
            mc_samples: 100_000,
            df_bounds: (1.0, 1000.0),
            init: InitMethod::Kmeans,
            n_starts: 1,
            start_iter: 20,
            seed: 0,
            cdf_precision: CdfPrecision::default(),
            fixed_nu: None,
            zero_skew: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self, p: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.g == 0 {
            return bad("g must be at least 1".into());
        }
        if self.q == 0 {
            return bad("q must be at least 1".into());
        }
        self.skew_structure.validate(p, self.q)?;
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        let (lo, hi) = self.df_bounds;
        if !(lo >= 0.5 && hi <= 1e4 && lo < hi) {
            return bad(format!("df_bounds must satisfy 0.5 ≤ lo < hi ≤ 1e4, got ({lo}, {hi})"));
        }
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1".into());
        }
        if self.series_r_max < 2 || !(self.series_tol > 0.0) {
            return bad("series_r_max must be ≥ 2 and series_tol positive".into());
        }
        if self.mc_samples < 2 {
            return bad("mc_samples must be at least 2".into());
        }
        if let Some(nu) = self.fixed_nu {
            if !(nu > 0.0 && nu.is_finite()) {
                return bad(format!("fixed_nu must be positive and finite, got {nu}"));
            }
        }
        Ok(())
    }
}

/// Result of the e1 series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    /// False when the terms did not fall below tolerance before `r_max` or
    /// before rounding noise in the differences reached the tolerance.
    pub converged: bool,
    pub terms: usize,
    /// Step h of the forward differences (df spacing 2h).
    pub step: f64,
}

/// Everything about one observation under one component that does not depend
/// on its responsibility.
struct ComponentPoint {
    pt: PointTerms,
    m: f64,
    kappa: f64,
    family: DfFamily,
    p_m: f64,
    log_f: f64,
}

impl ComponentPoint {
    fn new(prep: &Prepared, y: &DVector<f64>, precision: &CdfPrecision) -> Self {
        Self::from_terms(prep, prep.point(y), precision)
    }

    fn from_terms(prep: &Prepared, pt: PointTerms, precision: &CdfPrecision) -> Self {
        let m = prep.params.nu + prep.p() as f64;
        let kappa = prep.params.nu + pt.d;
        let c = prep.skew_unit_bounds(&pt);
        let family = DfFamily::new(&c, prep.lambda_corr(), &[m, m + 2.0], precision);
        let p_m = family.prob(m);
        let log_f = if p_m > CDF_FLOOR {
            prep.q() as f64 * std::f64::consts::LN_2 + pt.log_t + p_m.ln()
        } else {
            f64::NEG_INFINITY
        };
        Self {
            pt,
            m,
            kappa,
            family,
            p_m,
            log_f,
        }
    }

    /// ψ(m/2) − log(κ/2): E[log W | y] without skewness.
    fn lead(&self) -> f64 {
        digamma_unchecked(0.5 * self.m) - (0.5 * self.kappa).ln()
    }

    fn w(&self) -> Result<f64> {
        if !(self.p_m > CDF_FLOOR) {
            return Err(Error::OrthantUnderflow { prob: self.p_m });
        }
        Ok(self.m / self.kappa * self.family.prob(self.m + 2.0) / self.p_m)
    }

    fn e1_series(&self, r_max: usize, tol: f64) -> SeriesValue {
        series_correction(&self.family, self.m, self.p_m, r_max, tol, self.lead())
    }

    fn e1_osl(&self, w: f64) -> f64 {
        w - (0.5 * self.kappa).ln() + self.m / self.kappa - digamma_unchecked(0.5 * self.m)
    }

    fn e2_e3(&self, prep: &Prepared, w: f64, precision: &CdfPrecision) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let k = self.m + 2.0;
        let scale = &prep.derived.lambda * (self.kappa / k);
        let p_k = self.family.prob(k);
        let mom = trunc_mvt_moments_hinted(&self.pt.qy, &scale, k, p_k, self.p_m, precision)?;
        let e3 = mom.m2 * w;
        Ok((mom.m1 * w, (&e3 + e3.transpose()) * 0.5))
    }
}

/// lead + π′(0) with π(t) = P(m + 2t)/P(m), by the Newton series
/// π′(0) = (1/h) Σ_r (−1)^{r+1} Δ_h^r π(0) / r.
///
/// The terms decay like r^{−m/(2h)−1} against the singularity of π at
/// t = −m/2, and geometrically with ratio about 1 − π(h) otherwise, so h is
/// reduced until both are comfortable.
fn series_correction(family: &DfFamily, m: f64, p_m: f64, r_max: usize, tol: f64, lead: f64) -> SeriesValue {
    let alpha = 0.5 * m;
    let mut h = 1.0 / (32.0 / alpha).ceil().clamp(1.0, 32.0);
    if !(p_m > 0.0) {
        return SeriesValue {
            value: lead,
            converged: false,
            terms: 0,
            step: h,
        };
    }
    // The first step doubles as the check on π(h).
    let (mut grid, base, first) = loop {
        let mut grid = family.grid(m, 2.0 * h);
        let base = grid.next().unwrap_or(p_m);
        let first = grid.next().unwrap_or(f64::NAN) / base;
        if first.ln().abs() <= 0.25 || h <= SERIES_MIN_STEP {
            break (grid, base, first);
        }
        h *= 0.5;
    };
    let mut pending = Some(first);
    let mut values = vec![1.0];
    let mut diag = vec![1.0];
    let mut sum = 0.0;
    let mut small = 0;
    let mut converged = false;
    let mut terms = 0;
    for r in 1..=r_max {
        let v = match pending.take() {
            Some(v) => v,
            None => grid.next().unwrap_or(f64::NAN) / base,
        };
        values.push(v);
        let mut next = Vec::with_capacity(r + 1);
        next.push(v);
        for i in 1..=r {
            next.push(next[i - 1] - diag[i - 1]);
        }
        diag = next;
        let sign = if r % 2 == 1 { 1.0 } else { -1.0 };
        let term = sign * diag[r] / (r as f64 * h);
        if !term.is_finite() {
            break;
        }
        sum += term;
        terms = r;
        if term.abs() < tol {
            small += 1;
            if small >= 2 {
                converged = true;
                break;
            }
        } else {
            small = 0;
        }
        // Rounding in each value is relative to it and grows with the number
        // of multiplicative updates; Δ^r weights value k by C(r, k).
        let mut binom = 1.0;
        let mut var = 0.0;
        for (k, v) in values.iter().enumerate() {
            let eps = SERIES_NOISE * (8 + k) as f64;
            var += (binom * eps * v).powi(2);
            binom = binom * (r - k) as f64 / (k + 1) as f64;
        }
        if var.sqrt() / (r as f64 * h) > 0.1 * tol {
            break;
        }
    }
    SeriesValue {
        value: lead + sum,
        converged,
        terms,
        step: h,
    }
}

fn prepared_point(y: &DVector<f64>, params: &CfustParams, precision: &CdfPrecision) -> Result<(Prepared, ComponentPoint)> {
    let prep = Prepared::new(params)?;
    if y.len() != prep.p() {
        return Err(Error::Dimension(format!("observation has length {}, expected {}", y.len(), prep.p())));
    }
    let cp = ComponentPoint::new(&prep, y, precision);
    Ok((prep, cp))
}

/// z_h = π_h f_h(y) / Σ_l π_l f_l(y). When every component underflows, z is
/// uniform and the flag is set.
pub fn estep_responsibilities(y: &DVector<f64>, psi: &MixtureParams, precision: &CdfPrecision) -> Result<(DVector<f64>, bool)> {
    psi.validate()?;
    let preps = psi.prepare()?;
    if y.len() != psi.p() {
        return Err(Error::Dimension(format!("observation has length {}, expected {}", y.len(), psi.p())));
    }
    let logs: Vec<f64> = preps
        .iter()
        .zip(psi.weights.iter())
        .map(|(prep, pi)| pi.ln() + ComponentPoint::new(prep, y, precision).log_f)
        .collect();
    Ok(responsibilities_from_logs(&logs))
}

fn responsibilities_from_logs(logs: &[f64]) -> (DVector<f64>, bool) {
    let g = logs.len();
    let total = log_sum_exp(logs);
    if !total.is_finite() {
        return (DVector::from_element(g, 1.0 / g as f64), true);
    }
    (DVector::from_fn(g, |h, _| (logs[h] - total).exp()), false)
}

/// E[W | y] = ((ν+p)/(ν+d)) · P(ν+p+2)/P(ν+p).
pub fn estep_w(y: &DVector<f64>, params: &CfustParams, precision: &CdfPrecision) -> Result<f64> {
    prepared_point(y, params, precision)?.1.w()
}

/// E[log W | y] by the correction series, with its convergence flag.
pub fn estep_e1_series(y: &DVector<f64>, params: &CfustParams, config: &FitConfig) -> Result<SeriesValue> {
    let (_, cp) = prepared_point(y, params, &config.cdf_precision)?;
    Ok(cp.e1_series(config.series_r_max, config.series_tol))
}

/// The one-step-late value w − log(κ/2) + m/κ − ψ(m/2). Approximate.
pub fn estep_e1_osl(y: &DVector<f64>, params: &CfustParams, w: f64) -> Result<f64> {
    let prep = Prepared::new(params)?;
    if y.len() != prep.p() {
        return Err(Error::Dimension(format!("observation has length {}, expected {}", y.len(), prep.p())));
    }
    let pt = prep.point(y);
    let m = params.nu + prep.p() as f64;
    let kappa = params.nu + pt.d;
    Ok(w - (0.5 * kappa).ln() + m / kappa - digamma_unchecked(0.5 * m))
}

/// (E[W U | y], E[W U Uᵀ | y]) from the moments of U | y, W-tilted: a
/// truncated t_q(q(y), (κ/(m+2))Λ, m+2).
pub fn estep_e2_e3(
    y: &DVector<f64>,
    params: &CfustParams,
    w: f64,
    precision: &CdfPrecision,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (prep, cp) = prepared_point(y, params, precision)?;
    cp.e2_e3(&prep, w, precision)
}

/// Conditional expectations for all observations and components.
#[derive(Debug, Clone)]
pub struct EStepCache {
    /// n × g responsibilities.
    pub z: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub e1: DMatrix<f64>,
    /// Per component, q × n with column j = e2_hj.
    pub e2: Vec<DMatrix<f64>>,
    /// Per component and observation.
    pub e3: Vec<Vec<DMatrix<f64>>>,
    /// Observed-data log-likelihood at the parameters used.
    pub loglik: f64,
    pub stats: EStepStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EStepStats {
    pub series_nonconverged: usize,
    pub mc_evaluations: usize,
    /// Observations at which every component's CDF underflowed.
    pub degenerate_points: usize,
    /// (j, h) pairs whose moments underflowed despite a non-negligible z.
    pub moment_underflows: usize,
}

impl std::ops::AddAssign for EStepStats {
    fn add_assign(&mut self, o: Self) {
        self.series_nonconverged += o.series_nonconverged;
        self.mc_evaluations += o.mc_evaluations;
        self.degenerate_points += o.degenerate_points;
        self.moment_underflows += o.moment_underflows;
    }
}

struct RowOut {
    log_f: f64,
    z: DVector<f64>,
    w: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<DVector<f64>>,
    e3: Vec<DMatrix<f64>>,
    stats: EStepStats,
}

/// Runs the E-step at `psi`. Observations are processed in parallel; every
/// random stream is keyed by (seed, j, h), so the result does not depend on
/// the schedule.
pub fn estep(data: &DMatrix<f64>, psi: &MixtureParams, config: &FitConfig) -> Result<EStepCache> {
    psi.validate()?;
    if data.ncols() != psi.p() {
        return Err(Error::Dimension(format!("data has {} columns, model expects {}", data.ncols(), psi.p())));
    }
    let preps = psi.prepare()?;
    estep_prepared(data, psi, &preps, config)
}

fn estep_prepared(data: &DMatrix<f64>, psi: &MixtureParams, preps: &[Prepared], config: &FitConfig) -> Result<EStepCache> {
    let (n, g, q) = (data.nrows(), psi.g(), psi.q());
    let rows: Vec<RowOut> = (0..n)
        .into_par_iter()
        .map(|j| estep_row(j, &data.row(j).transpose(), psi, preps, config))
        .collect::<Result<_>>()?;
    let mut cache = EStepCache {
        z: DMatrix::zeros(n, g),
        w: DMatrix::zeros(n, g),
        e1: DMatrix::zeros(n, g),
        e2: vec![DMatrix::zeros(q, n); g],
        e3: vec![Vec::with_capacity(n); g],
        loglik: 0.0,
        stats: EStepStats::default(),
    };
    for (j, row) in rows.into_iter().enumerate() {
        cache.loglik += row.log_f;
        cache.stats += row.stats;
        for h in 0..g {
            cache.z[(j, h)] = row.z[h];
            cache.w[(j, h)] = row.w[h];
            cache.e1[(j, h)] = row.e1[h];
            cache.e2[h].set_column(j, &row.e2[h]);
        }
        for (h, e3) in row.e3.into_iter().enumerate() {
            cache.e3[h].push(e3);
        }
    }
    Ok(cache)
}

fn estep_row(j: usize, y: &DVector<f64>, psi: &MixtureParams, preps: &[Prepared], config: &FitConfig) -> Result<RowOut> {
    let (g, q) = (psi.g(), psi.q());
    let precisions: Vec<CdfPrecision> = (0..g)
        .map(|h| config.cdf_precision.with_seed(derive_seed(config.seed, &[j as u64, h as u64])))
        .collect();
    let ln2q = q as f64 * std::f64::consts::LN_2;
    let terms: Vec<PointTerms> = preps.iter().map(|prep| prep.point(y)).collect();
    let bounds: Vec<f64> = (0..g).map(|h| psi.weights[h].ln() + ln2q + terms[h].log_t).collect();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| bounds[b].total_cmp(&bounds[a]));
    let mut points: Vec<Option<ComponentPoint>> = (0..g).map(|_| None).collect();
    let mut best = f64::NEG_INFINITY;
    for &h in &order {
        if bounds[h] < best - FAR_SKIP {
            continue;
        }
        let cp = ComponentPoint::from_terms(&preps[h], terms[h].clone(), &precisions[h]);
        best = best.max(psi.weights[h].ln() + cp.log_f);
        points[h] = Some(cp);
    }
    let logs: Vec<f64> = (0..g)
        .map(|h| points[h].as_ref().map_or(f64::NEG_INFINITY, |cp| psi.weights[h].ln() + cp.log_f))
        .collect();
    let (z, degenerate) = responsibilities_from_logs(&logs);
    let mut stats = EStepStats::default();
    let log_f = if degenerate {
        stats.degenerate_points = 1;
        // Score the point at the CDF floor rather than −∞.
        let floored: Vec<f64> = bounds.iter().map(|b| b + CDF_FLOOR.ln()).collect();
        log_sum_exp(&floored)
    } else {
        log_sum_exp(&logs)
    };
    let mut out = RowOut {
        log_f,
        z,
        w: Vec::with_capacity(g),
        e1: Vec::with_capacity(g),
        e2: Vec::with_capacity(g),
        e3: Vec::with_capacity(g),
        stats,
    };
    for h in 0..g {
        let (m, kappa) = (psi.components[h].nu + y.len() as f64, psi.components[h].nu + terms[h].d);
        let fallback = (
            m / kappa,
            digamma_unchecked(0.5 * m) - (0.5 * kappa).ln(),
            DVector::zeros(q),
            DMatrix::zeros(q, q),
        );
        let (w, e1, e2, e3) = match &points[h] {
            Some(cp) if out.z[h] >= Z_SKIP => {
                match component_expectations(j, h, y, &preps[h], cp, config, &precisions[h], &mut out.stats) {
                    Ok(v) => v,
                    Err(Error::OrthantUnderflow { .. }) => {
                        out.stats.moment_underflows += 1;
                        fallback
                    }
                    Err(e) => return Err(e),
                }
            }
            _ => fallback,
        };
        out.w.push(w);
        out.e1.push(e1);
        out.e2.push(e2);
        out.e3.push(e3);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
fn component_expectations(
    j: usize,
    h: usize,
    y: &DVector<f64>,
    prep: &Prepared,
    cp: &ComponentPoint,
    config: &FitConfig,
    precision: &CdfPrecision,
    stats: &mut EStepStats,
) -> Result<(f64, f64, DVector<f64>, DMatrix<f64>)> {
    let w = cp.w()?;
    let mc = |stats: &mut EStepStats| -> Result<f64> {
        stats.mc_evaluations += 1;
        let seed = derive_seed(config.seed, &[j as u64, h as u64, 1]);
        Ok(posterior_expectations_mc(y, &prep.params, config.mc_samples, seed)?.e1.value)
    };
    let e1 = match config.e1_method {
        E1Method::Series => {
            let s = cp.e1_series(config.series_r_max, config.series_tol);
            if s.converged {
                s.value
            } else {
                stats.series_nonconverged += 1;
                if config.mc_fallback {
                    mc(stats)?
                } else {
                    s.value
                }
            }
        }
        E1Method::Osl => cp.e1_osl(w),
        E1Method::MonteCarlo => mc(stats)?,
    };
    let (e2, e3) = cp.e2_e3(prep, w, precision)?;
    Ok((w, e1, e2, e3))
}

/// Root of G(ν) = log(ν/2) + 1 − ψ(ν/2) + mean(e1 − w), with the clamp flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfSolution {
    pub nu: f64,
    pub clamped: bool,
}

/// Solves the df equation for one component from its cache column.
pub fn solve_df(z: &[f64], w: &[f64], e1: &[f64], bounds: (f64, f64)) -> Result<DfSolution> {
    let nz: f64 = z.iter().sum();
    if !(nz > 0.0) {
        return Err(Error::DegenerateComponent {
            component: 0,
            reason: "no responsibility mass for the df update".into(),
        });
    }
    let s: f64 = z.iter().zip(w).zip(e1).map(|((z, w), e)| z * (e - w)).sum();
    Ok(solve_df_mean(s / nz, bounds))
}

/// As [`solve_df`] given the z-weighted mean of e1 − w.
pub fn solve_df_mean(mean: f64, bounds: (f64, f64)) -> DfSolution {
    // G decreases in ν; iterate on x = log ν.
    let g = |x: f64| {
        let nu = x.exp();
        (0.5 * nu).ln() + 1.0 - digamma_unchecked(0.5 * nu) + mean
    };
    let (mut a, mut b) = (bounds.0.ln(), bounds.1.ln());
    let (mut ga, mut gb) = (g(a), g(b));
    if !(ga > 0.0) {
        return DfSolution {
            nu: bounds.0,
            clamped: true,
        };
    }
    if !(gb < 0.0) {
        return DfSolution {
            nu: bounds.1,
            clamped: true,
        };
    }
    // Illinois false position.
    let mut side = 0;
    for _ in 0..200 {
        let x = (a * gb - b * ga) / (gb - ga);
        let gx = g(x);
        if gx == 0.0 {
            return DfSolution {
                nu: x.exp(),
                clamped: false,
            };
        }
        if gx > 0.0 {
            a = x;
            ga = gx;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        } else {
            b = x;
            gb = gx;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        }
        if b - a < 1e-13 {
            break;
        }
    }
    DfSolution {
        nu: (0.5 * (a + b)).exp(),
        clamped: false,
    }
}

/// Σ_j z_hj (y_j − μ) e2_hjᵀ and Σ_j z_hj e3_hj.
fn skew_sums(data: &DMatrix<f64>, cache: &EStepCache, h: usize, mu: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, p) = data.shape();
    let q = cache.e2[h].nrows();
    let mut a = DMatrix::zeros(p, q);
    let mut b = DMatrix::zeros(q, q);
    for j in 0..n {
        let z = cache.z[(j, h)];
        if z == 0.0 {
            continue;
        }
        let r = data.row(j).transpose() - mu;
        a += (r * cache.e2[h].column(j).transpose()) * z;
        b += &cache.e3[h][j] * z;
    }
    (a, b)
}

/// Diagonal Δ update: (Σ⁻¹ ∘ Σ z e3) δ = diag(Σ⁻¹ Σ z (y − μ) e2ᵀ).
pub fn mstep_delta_diagonal(
    data: &DMatrix<f64>,
    cache: &EStepCache,
    h: usize,
    mu_new: &DVector<f64>,
    sigma_current: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let (a, b) = skew_sums(data, cache, h, mu_new);
    delta_diagonal_from_sums(&a, &b, sigma_current, h)
}

fn delta_diagonal_from_sums(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: &DMatrix<f64>, h: usize) -> Result<DVector<f64>> {
    let sigma_inv = sigma.clone().try_inverse().ok_or_else(|| degenerate(h, "singular Σ in the diagonal Δ update"))?;
    let lhs = sigma_inv.component_mul(b);
    let rhs = (&sigma_inv * a).diagonal();
    lhs.lu().solve(&rhs).ok_or_else(|| degenerate(h, "singular diagonal Δ system"))
}

/// Single-column Δ update: δ = Σ z [e2]₁ (y − μ) / Σ z [e3]₁₁.
pub fn mstep_delta_single_column(data: &DMatrix<f64>, cache: &EStepCache, h: usize, mu_new: &DVector<f64>) -> Result<DVector<f64>> {
    let (a, b) = skew_sums(data, cache, h, mu_new);
    delta_single_from_sums(&a, &b, h)
}

fn delta_single_from_sums(a: &DMatrix<f64>, b: &DMatrix<f64>, h: usize) -> Result<DVector<f64>> {
    if !(b[(0, 0)] > 0.0) {
        return Err(degenerate(h, "zero denominator in the single-column Δ update"));
    }
    Ok(a.column(0) / b[(0, 0)])
}

fn degenerate(h: usize, reason: &str) -> Error {
    Error::DegenerateComponent {
        component: h,
        reason: reason.into(),
    }
}

/// Book-keeping from one M-step.
#[derive(Debug, Clone, Copy, Default)]
struct MStepNotes {
    df_clamped: usize,
    ridge_repairs: usize,
}

/// One conditional M-step: π, μ (with the previous Δ), Δ (with the new μ),
/// Σ (with both), then ν.
pub fn mstep_update(data: &DMatrix<f64>, cache: &EStepCache, psi: &MixtureParams, config: &FitConfig) -> Result<MixtureParams> {
    Ok(mstep_inner(data, cache, psi, config)?.0)
}

fn mstep_inner(data: &DMatrix<f64>, cache: &EStepCache, psi: &MixtureParams, config: &FitConfig) -> Result<(MixtureParams, MStepNotes)> {
    let (n, p) = data.shape();
    let g = psi.g();
    let q = psi.q();
    let mut notes = MStepNotes::default();
    let mut weights = DVector::zeros(g);
    let mut comps = Vec::with_capacity(g);
    for (h, old) in psi.components.iter().enumerate() {
        let z = cache.z.column(h);
        let nz: f64 = z.iter().sum();
        if nz < (p + 1) as f64 {
            return Err(degenerate(h, &format!("responsibility mass {nz:.3} below p + 1")));
        }
        weights[h] = nz / n as f64;

        let mut swy = DVector::zeros(p);
        let mut sw = 0.0;
        let mut se2 = DVector::zeros(q);
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            let zw = zj * cache.w[(j, h)];
            swy += data.row(j).transpose() * zw;
            sw += zw;
            se2 += cache.e2[h].column(j) * zj;
        }
        let mu = (swy - &old.delta * se2) / sw;

        let (a, b) = skew_sums(data, cache, h, &mu);
        let delta = if config.zero_skew {
            DMatrix::zeros(p, q)
        } else {
            match config.skew_structure {
                SkewStructure::Full => {
                    let b_inv = b.clone().try_inverse().ok_or_else(|| degenerate(h, "singular Σ z e3"))?;
                    &a * b_inv
                }
                SkewStructure::Diagonal => DMatrix::from_diagonal(&delta_diagonal_from_sums(&a, &b, &old.sigma, h)?),
                SkewStructure::SingleColumn => {
                    let mut d = DMatrix::zeros(p, q);
                    d.set_column(0, &delta_single_from_sums(&a, &b, h)?);
                    d
                }
            }
        };

        let mut sww = DMatrix::zeros(p, p);
        for j in 0..n {
            let zj = z[j];
            if zj == 0.0 {
                continue;
            }
            let r = data.row(j).transpose() - &mu;
            sww += (&r * r.transpose()) * (zj * cache.w[(j, h)]);
        }
        let dat = &delta * a.transpose();
        let mut sigma = (sww - &dat - dat.transpose() + &delta * &b * delta.transpose()) / nz;
        sigma = (&sigma + sigma.transpose()) * 0.5;
        notes.ridge_repairs += ridge_repair(&mut sigma);

        let nu = match config.fixed_nu {
            Some(nu) => nu,
            None => {
                let e1 = cache.e1.column(h);
                let w = cache.w.column(h);
                let s: f64 = (0..n).map(|j| z[j] * (e1[j] - w[j])).sum();
                let sol = solve_df_mean(s / nz, config.df_bounds);
                notes.df_clamped += sol.clamped as usize;
                sol.nu
            }
        };
        let comp = CfustParams::new(mu, sigma, delta, nu)?;
        Prepared::new(&comp).map_err(|_| degenerate(h, "updated component is not positive definite"))?;
        comps.push(comp);
    }
    // Renormalize away rounding in Σ z / n.
    let total = weights.sum();
    weights /= total;
    Ok((MixtureParams::new(weights, comps)?, notes))
}

/// Adds 1e-8·trace/p to the diagonal (growing tenfold) until Cholesky
/// succeeds; returns the number of additions.
fn ridge_repair(sigma: &mut DMatrix<f64>) -> usize {
    let p = sigma.nrows();
    let mut eps = 1e-8 * (sigma.trace() / p as f64).abs().max(f64::MIN_POSITIVE);
    for k in 0..RIDGE_TRIES {
        if sigma.clone().cholesky().is_some() && sigma.iter().all(|v| v.is_finite()) {
            return k;
        }
        for i in 0..p {
            sigma[(i, i)] += eps;
        }
        eps *= 10.0;
    }
    RIDGE_TRIES
}

/// Expected complete-data log-likelihood at `psi` under `cache`, up to terms
/// free of parameters.
pub fn q_function(data: &DMatrix<f64>, cache: &EStepCache, psi: &MixtureParams) -> Result<f64> {
    let (n, p) = data.shape();
    let mut total = 0.0;
    for (h, c) in psi.components.iter().enumerate() {
        let chol = c.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite("sigma"))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let si_delta = chol.solve(&c.delta);
        let dt_si_d = c.delta.transpose() * &si_delta;
        let half_nu = 0.5 * c.nu;
        let nu_const = half_nu * half_nu.ln() - ln_gamma_unchecked(half_nu);
        let ln_pi = psi.weights[h].ln();
        for j in 0..n {
            let z = cache.z[(j, h)];
            if z == 0.0 {
                continue;
            }
            let r = data.row(j).transpose() - &c.mu;
            let si_r = chol.solve(&r);
            let (w, e1) = (cache.w[(j, h)], cache.e1[(j, h)]);
            let e2 = cache.e2[h].column(j);
            let quad = w * r.dot(&si_r) - 2.0 * si_delta.tr_mul(&r).dot(&e2) + (&dt_si_d * &cache.e3[h][j]).trace();
            total += z
                * (ln_pi - 0.5 * log_det + 0.5 * p as f64 * e1 - 0.5 * quad + nu_const + (half_nu - 1.0) * e1
                    - half_nu * w);
        }
    }
    Ok(total)
}

/// Free parameters: (g − 1) + g·(p + p(p+1)/2 + p·q_free + 1).
pub fn parameter_count(g: usize, p: usize, q: usize, structure: SkewStructure) -> usize {
    let q_free = match structure {
        SkewStructure::Full => q,
        SkewStructure::Diagonal | SkewStructure::SingleColumn => 1,
    };
    (g - 1) + g * (p + p * (p + 1) / 2 + p * q_free + 1)
}

/// (BIC, AIC).
pub fn information_criteria(loglik: f64, psi: &MixtureParams, structure: SkewStructure, n: usize) -> (f64, f64) {
    let m = parameter_count(psi.g(), psi.p(), psi.q(), structure) as f64;
    (-2.0 * loglik + m * (n as f64).ln(), -2.0 * loglik + 2.0 * m)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub e1_method: Option<E1Method>,
    /// Set when e1 came from the one-step-late approximation.
    pub e1_approximate: bool,
    /// Summed over all E-steps of the chosen run.
    pub estep: EStepStats,
    pub df_clamped: usize,
    pub ridge_repairs: usize,
    pub restarts: usize,
    /// Log-likelihood of each start when the best was chosen, `None` when
    /// every attempt collapsed.
    pub start_logliks: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub psi: MixtureParams,
    pub loglik_trace: Vec<f64>,
    /// n × g, columns in the reported component order.
    pub responsibilities: DMatrix<f64>,
    /// 0-based argmax of each row of `responsibilities`.
    pub labels: Vec<usize>,
    /// Number of M-steps performed.
    pub iterations: usize,
    pub converged: bool,
    pub loglik: f64,
    pub bic: f64,
    pub aic: f64,
    pub diagnostics: FitDiagnostics,
}

fn check_data(data: &DMatrix<f64>, config: &FitConfig) -> Result<()> {
    let (n, p) = data.shape();
    if p == 0 {
        return Err(Error::Dimension("data has no columns".into()));
    }
    if n <= config.g {
        return Err(Error::InvalidParameter(format!("need more observations ({n}) than components ({})", config.g)));
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite value in row {}", i % n)));
    }
    config.validate(p)
}

/// Best of `n_starts` EM runs by log-likelihood. A start whose components
/// collapse is retried with a fresh seed up to three times.
///
/// When `start_iter > 0` and there are several starts, every start runs
/// `start_iter` iterations and only the best is continued to convergence.
pub fn fit(data: &DMatrix<f64>, config: &FitConfig) -> Result<FitResult> {
    check_data(data, config)?;
    let short = config.n_starts > 1 && config.start_iter > 0;
    let start_config = if short {
        FitConfig {
            max_iter: config.start_iter.min(config.max_iter),
            ..config.clone()
        }
    } else {
        config.clone()
    };
    let mut runs: Vec<FitResult> = Vec::with_capacity(config.n_starts);
    let mut start_logliks = Vec::with_capacity(config.n_starts);
    let mut restarts = 0;
    for s in 0..config.n_starts {
        let mut outcome = None;
        for attempt in 0..=COLLAPSE_RETRIES {
            let seed = derive_seed(config.seed, &[s as u64, attempt as u64]);
            let run = initialize_seeded(data, config, seed).and_then(|init| run_em(data, init, &start_config));
            match run {
                Ok(r) => {
                    outcome = Some(r);
                    break;
                }
                Err(e @ Error::DegenerateComponent { .. }) => {
                    log::info!("start {s} attempt {attempt}: {e}");
                    restarts += 1;
                }
                Err(e) => return Err(e),
            }
        }
        start_logliks.push(outcome.as_ref().map(|r| r.loglik));
        runs.extend(outcome);
    }
    // Stable sort keeps the earlier start on ties.
    runs.sort_by(|a, b| b.loglik.total_cmp(&a.loglik));
    let mut best = None;
    for run in runs {
        if !short || run.converged || run.iterations >= config.max_iter {
            best = Some(run);
            break;
        }
        let remaining = FitConfig {
            max_iter: config.max_iter - run.iterations,
            ..config.clone()
        };
        match run_em(data, run.psi.clone(), &remaining) {
            Ok(tail) => {
                best = Some(join_runs(run, tail));
                break;
            }
            Err(e @ Error::DegenerateComponent { .. }) => {
                log::info!("continued start collapsed: {e}");
                restarts += 1;
            }
            Err(e) => return Err(e),
        }
    }
    let mut best = best.ok_or(Error::AllStartsCollapsed {
        starts: config.n_starts,
    })?;
    best.diagnostics.restarts = restarts;
    best.diagnostics.start_logliks = start_logliks;
    Ok(best)
}

/// Appends a continued run to the short run it started from. The first
/// log-likelihood of the continuation repeats the last of the head.
fn join_runs(head: FitResult, tail: FitResult) -> FitResult {
    let mut trace = head.loglik_trace;
    trace.extend_from_slice(&tail.loglik_trace[1..]);
    let mut diagnostics = tail.diagnostics;
    diagnostics.estep += head.diagnostics.estep;
    diagnostics.df_clamped += head.diagnostics.df_clamped;
    diagnostics.ridge_repairs += head.diagnostics.ridge_repairs;
    FitResult {
        loglik_trace: trace,
        iterations: head.iterations + tail.iterations,
        diagnostics,
        ..tail
    }
}

/// One EM run from given starting parameters.
pub fn fit_from(data: &DMatrix<f64>, init: MixtureParams, config: &FitConfig) -> Result<FitResult> {
    check_data(data, config)?;
    if init.g() != config.g || init.q() != config.q || init.p() != data.ncols() {
        return Err(Error::Dimension("starting parameters do not match the configuration".into()));
    }
    let mut r = run_em(data, init, config)?;
    r.diagnostics.start_logliks = vec![Some(r.loglik)];
    Ok(r)
}

fn run_em(data: &DMatrix<f64>, init: MixtureParams, config: &FitConfig) -> Result<FitResult> {
    init.validate()?;
    let mut psi = init;
    let mut trace = Vec::new();
    let mut diagnostics = FitDiagnostics {
        e1_method: Some(config.e1_method),
        e1_approximate: config.e1_method == E1Method::Osl,
        ..Default::default()
    };
    let mut iterations = 0;
    let mut converged = false;
    let cache = loop {
        let preps = psi.prepare()?;
        let cache = estep_prepared(data, &psi, &preps, config)?;
        diagnostics.estep += cache.stats;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if (cache.loglik - prev).abs() < config.tol * prev.abs() {
                converged = true;
            }
        }
        trace.push(cache.loglik);
        log::debug!("iteration {iterations}: loglik {}", cache.loglik);
        if converged || iterations >= config.max_iter {
            break cache;
        }
        let (next, notes) = mstep_inner(data, &cache, &psi, config)?;
        diagnostics.df_clamped += notes.df_clamped;
        diagnostics.ridge_repairs += notes.ridge_repairs;
        psi = next;
        iterations += 1;
    };
    Ok(report(data, psi, cache, trace, iterations, converged, config, diagnostics))
}

/// Sorts components by descending π (and, for Full Δ, columns by descending
/// norm) and assembles the result.
#[allow(clippy::too_many_arguments)]
fn report(
    data: &DMatrix<f64>,
    psi: MixtureParams,
    cache: EStepCache,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    config: &FitConfig,
    diagnostics: FitDiagnostics,
) -> FitResult {
    let g = psi.g();
    let n = data.nrows();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| psi.weights[b].total_cmp(&psi.weights[a]));
    let weights = DVector::from_fn(g, |h, _| psi.weights[order[h]]);
    let components: Vec<CfustParams> = order
        .iter()
        .map(|&h| {
            let mut c = psi.components[h].clone();
            if config.skew_structure == SkewStructure::Full {
                c.delta = sort_columns_by_norm(&c.delta);
            }
            c
        })
        .collect();
    let responsibilities = DMatrix::from_fn(n, g, |j, h| cache.z[(j, order[h])]);
    let labels = (0..n)
        .map(|j| {
            let row = responsibilities.row(j);
            (0..g).fold(0, |best, h| if row[h] > row[best] { h } else { best })
        })
        .collect();
    let psi = MixtureParams {
        weights,
        components,
    };
    let loglik = cache.loglik;
    let (bic, aic) = information_criteria(loglik, &psi, config.skew_structure, n);
    FitResult {
        psi,
        loglik_trace: trace,
        responsibilities,
        labels,
        iterations,
        converged,
        loglik,
        bic,
        aic,
        diagnostics,
    }
}

fn sort_columns_by_norm(delta: &DMatrix<f64>) -> DMatrix<f64> {
    let q = delta.ncols();
    let mut order: Vec<usize> = (0..q).collect();
    let norms: Vec<f64> = (0..q).map(|k| delta.column(k).norm()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    DMatrix::from_fn(delta.nrows(), q, |i, k| delta[(i, order[k])])
}

/// Starting parameters from `config.init`, deterministic in `config.seed`.
pub fn initialize(data: &DMatrix<f64>, config: &FitConfig) -> Result<MixtureParams> {
    check_data(data, config)?;
    initialize_seeded(data, config, config.seed)
}

fn initialize_seeded(data: &DMatrix<f64>, config: &FitConfig, seed: u64) -> Result<MixtureParams> {
    let (n, p) = data.shape();
    let g = config.g;
    let rows: Vec<DVector<f64>> = (0..n).map(|j| data.row(j).transpose()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match config.init {
        InitMethod::Kmeans => {
            let mut labels = None;
            for _ in 0..KMEANS_TRIES {
                let l = kmeans(&rows, g, &mut rng);
                let mut counts = vec![0usize; g];
                for &k in &l {
                    counts[k] += 1;
                }
                if counts.iter().all(|&c| c > p) {
                    labels = Some((l, counts));
                    break;
                }
            }
            let (labels, counts) = labels.ok_or_else(|| degenerate(0, "k-means left a cluster with at most p points"))?;
            let comps = (0..g)
                .map(|h| {
                    let members: Vec<&DVector<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == h).map(|(r, _)| r).collect();
                    let (mean, cov, skew) = moments(&members);
                    start_component(mean, cov * 0.9, &skew, config)
                })
                .collect::<Result<Vec<_>>>()?;
            let weights = DVector::from_fn(g, |h, _| counts[h] as f64 / n as f64);
            MixtureParams::new(weights, comps)
        }
        InitMethod::Random => {
            let all: Vec<&DVector<f64>> = rows.iter().collect();
            let (mean, cov, skew) = moments(&all);
            let l = ridge_chol(&cov);
            let comps = (0..g)
                .map(|_| {
                    let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
                    start_component(&mean + &l * z * 0.5, cov.clone(), &skew, config)
                })
                .collect::<Result<Vec<_>>>()?;
            MixtureParams::new(DVector::from_element(g, 1.0 / g as f64), comps)
        }
    }
}

fn ridge_chol(cov: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = cov.clone();
    ridge_repair(&mut c);
    c.cholesky().map(|ch| ch.unpack()).unwrap_or_else(|| DMatrix::zeros(cov.nrows(), cov.ncols()))
}

/// Mean, ML covariance and per-coordinate third central moment.
fn moments(rows: &[&DVector<f64>]) -> (DVector<f64>, DMatrix<f64>, DVector<f64>) {
    let p = rows[0].len();
    let k = rows.len() as f64;
    let mut mean = DVector::zeros(p);
    for r in rows {
        mean += *r;
    }
    mean /= k;
    let mut cov = DMatrix::zeros(p, p);
    let mut skew = DVector::zeros(p);
    for r in rows {
        let d = *r - &mean;
        cov += &d * d.transpose();
        skew += d.map(|v| v * v * v);
    }
    (mean, cov / k, skew / k)
}

fn start_component(mu: DVector<f64>, mut sigma: DMatrix<f64>, skew: &DVector<f64>, config: &FitConfig) -> Result<CfustParams> {
    let p = mu.len();
    let q = config.q;
    ridge_repair(&mut sigma);
    let mut delta = DMatrix::zeros(p, q);
    if !config.zero_skew {
        for i in 0..p {
            let sign = if skew[i] < 0.0 { -1.0 } else { 1.0 };
            delta[(i, i * q / p)] = sign * 0.1 * sigma[(i, i)].max(0.0).sqrt();
        }
        delta = config.skew_structure.project(&delta);
    }
    let nu = config.fixed_nu.unwrap_or_else(|| 30f64.clamp(config.df_bounds.0, config.df_bounds.1));
    CfustParams::new(mu, sigma, delta, nu)
}

/// k-means++ seeding followed by Lloyd iterations; returns labels.
fn kmeans(rows: &[DVector<f64>], g: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = rows.len();
    let mut centers = vec![rows[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = rows.iter().map(|r| (r - &centers[0]).norm_squared()).collect();
    while centers.len() < g {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut t = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if t < *d {
                    idx = i;
                    break;
                }
                t -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.push(rows[pick].clone());
        for (i, r) in rows.iter().enumerate() {
            d2[i] = d2[i].min((r - &centers[centers.len() - 1]).norm_squared());
        }
    }
    let nearest = |r: &DVector<f64>, centers: &[DVector<f64>]| {
        (0..g)
            .map(|h| (h, (r - &centers[h]).norm_squared()))
            .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
            .0
    };
    let mut labels: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
    for _ in 0..KMEANS_ITER {
        for (h, c) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = rows.iter().zip(&labels).filter(|(_, &l)| l == h).map(|(r, _)| r).collect();
            if !members.is_empty() {
                *c = members.iter().fold(DVector::zeros(c.len()), |acc, r| acc + *r) / members.len() as f64;
            }
        }
        let next: Vec<usize> = rows.iter().map(|r| nearest(r, &centers)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    labels
}
