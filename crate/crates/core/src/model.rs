//! The CFUST distribution: parameters, density, special cases, mixtures and
//! sampling from the convolution representation Y = μ + Δ|U₀| + U₁.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::specfun::mvt::{check_df, mvt_logpdf_parts, Reduced};
use crate::specfun::{mvt_logpdf, CdfEstimate, CdfPrecision, StudentT};

/// CDF values at or below this are treated as zero.
pub const CDF_FLOOR: f64 = 1e-300;

/// Constraint on the skewness matrix Δ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkewStructure {
    /// Unconstrained p×q matrix.
    Full,
    /// q = p and Δ = diag(δ): the unrestricted skew t.
    Diagonal,
    /// Only the first column is non-zero: the restricted skew t.
    SingleColumn,
}

impl SkewStructure {
    pub fn validate(&self, p: usize, q: usize) -> Result<()> {
        if q == 0 {
            return Err(Error::Dimension("skewness matrix needs at least one column".into()));
        }
        if *self == SkewStructure::Diagonal && q != p {
            return Err(Error::Dimension(format!("diagonal skewness requires q = p, got p = {p}, q = {q}")));
        }
        Ok(())
    }

    /// Zeroes the entries the structure does not allow.
    pub fn project(&self, delta: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SkewStructure::Full => delta.clone(),
            SkewStructure::Diagonal => {
                DMatrix::from_fn(delta.nrows(), delta.ncols(), |i, j| if i == j { delta[(i, j)] } else { 0.0 })
            }
            SkewStructure::SingleColumn => {
                DMatrix::from_fn(delta.nrows(), delta.ncols(), |i, j| if j == 0 { delta[(i, j)] } else { 0.0 })
            }
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SkewStructure::Full => "full",
            SkewStructure::Diagonal => "diagonal",
            SkewStructure::SingleColumn => "single-column",
        }
    }
}

impl std::str::FromStr for SkewStructure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(SkewStructure::Full),
            "diagonal" => Ok(SkewStructure::Diagonal),
            "single-column" => Ok(SkewStructure::SingleColumn),
            other => Err(Error::InvalidParameter(format!(
                "unknown skew structure '{other}' (expected full, diagonal or single-column)"
            ))),
        }
    }
}

/// Builds Δ from a p-vector δ. Full takes δ as its single column.
pub fn make_delta(structure: SkewStructure, delta_vec: &DVector<f64>, q: usize) -> Result<DMatrix<f64>> {
    let p = delta_vec.len();
    structure.validate(p, q)?;
    match structure {
        SkewStructure::Diagonal => Ok(DMatrix::from_diagonal(delta_vec)),
        SkewStructure::SingleColumn => {
            let mut d = DMatrix::zeros(p, q);
            d.set_column(0, delta_vec);
            Ok(d)
        }
        SkewStructure::Full => {
            if q != 1 {
                return Err(Error::Dimension(format!(
                    "a skewness vector fills a full p×q matrix only for q = 1, got q = {q}"
                )));
            }
            Ok(DMatrix::from_column_slice(p, 1, delta_vec.as_slice()))
        }
    }
}

/// Parameters of one CFUST component.
#[derive(Debug, Clone, PartialEq)]
pub struct CfustParams {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub nu: f64,
}

impl CfustParams {
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>, delta: DMatrix<f64>, nu: f64) -> Result<Self> {
        let params = Self { mu, sigma, delta, nu };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> usize {
        self.mu.len()
    }

    pub fn q(&self) -> usize {
        self.delta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 {
            return Err(Error::Dimension("location vector is empty".into()));
        }
        if self.sigma.nrows() != p || self.sigma.ncols() != p {
            return Err(Error::Dimension(format!(
                "sigma is {}x{}, expected {p}x{p}",
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if self.delta.nrows() != p || self.delta.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "delta is {}x{}, expected {p} rows and at least one column",
                self.delta.nrows(),
                self.delta.ncols()
            )));
        }
        let finite = self.mu.iter().chain(self.sigma.iter()).chain(self.delta.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("non-finite parameter entry".into()));
        }
        check_df(self.nu)?;
        let asym = (&self.sigma - self.sigma.transpose()).amax();
        if asym > 1e-10 * self.sigma.amax().max(1.0) {
            return Err(Error::NotPositiveDefinite("sigma"));
        }
        if self.sigma.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("sigma"));
        }
        Ok(())
    }
}

/// Ω = Σ + ΔΔᵀ and Λ = I_q − ΔᵀΩ⁻¹Δ with their by-products.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedQuantities {
    pub omega: DMatrix<f64>,
    pub omega_inv: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub log_det_omega: f64,
}

pub fn derived(params: &CfustParams) -> Result<DerivedQuantities> {
    Prepared::new(params).map(|p| p.derived)
}

/// Quantities of one observation under one component.
#[derive(Debug, Clone)]
pub struct PointTerms {
    /// Mahalanobis distance d(y) under Ω.
    pub d: f64,
    /// q(y) = ΔᵀΩ⁻¹(y − μ).
    pub qy: DVector<f64>,
    /// log t_p(y; μ, Ω, ν).
    pub log_t: f64,
}

/// Log density together with the CDF estimate behind it.
#[derive(Debug, Clone, Copy)]
pub struct LogDensity {
    pub value: f64,
    pub cdf: CdfEstimate,
    /// Set when the skewing CDF fell below [`CDF_FLOOR`]; `value` is then −∞.
    pub underflow: bool,
}

/// A component with all parameter-only work done once.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub params: CfustParams,
    pub derived: DerivedQuantities,
    omega_l: DMatrix<f64>,
    /// Ω⁻¹Δ.
    omega_inv_delta: DMatrix<f64>,
    lambda_sd: Vec<f64>,
    lambda_corr: DMatrix<f64>,
}

impl Prepared {
    pub fn new(params: &CfustParams) -> Result<Self> {
        params.validate()?;
        let q = params.q();
        let mut omega = &params.sigma + &params.delta * params.delta.transpose();
        omega = (&omega + omega.transpose()) * 0.5;
        let chol = omega.clone().cholesky().ok_or(Error::NotPositiveDefinite("omega"))?;
        let log_det_omega = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let omega_inv = chol.inverse();
        let omega_inv_delta = chol.solve(&params.delta);
        let mut lambda = DMatrix::identity(q, q) - params.delta.transpose() * &omega_inv_delta;
        lambda = (&lambda + lambda.transpose()) * 0.5;
        if lambda.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("lambda"));
        }
        let lambda_sd: Vec<f64> = (0..q).map(|i| lambda[(i, i)].sqrt()).collect();
        let lambda_corr = DMatrix::from_fn(q, q, |i, j| {
            if i == j {
                1.0
            } else {
                lambda[(i, j)] / (lambda_sd[i] * lambda_sd[j])
            }
        });
        Ok(Self {
            params: params.clone(),
            derived: DerivedQuantities {
                omega,
                omega_inv,
                lambda,
                log_det_omega,
            },
            omega_l: chol.unpack(),
            omega_inv_delta,
            lambda_sd,
            lambda_corr,
        })
    }

    pub fn p(&self) -> usize {
        self.params.p()
    }

    pub fn q(&self) -> usize {
        self.params.q()
    }

    pub fn point(&self, y: &DVector<f64>) -> PointTerms {
        let r = y - &self.params.mu;
        let z = self.omega_l.solve_lower_triangular(&r).expect("triangular solve");
        let d = z.norm_squared();
        let qy = self.omega_inv_delta.transpose() * &r;
        let log_t = mvt_logpdf_parts(self.p(), d, self.derived.log_det_omega, self.params.nu);
        PointTerms { d, qy, log_t }
    }

    /// The skewing CDF T_q(q(y)·√(k/(ν+d)); 0, Λ, k) in reduced form,
    /// evaluated at df k by the caller.
    pub(crate) fn skew_problem(&self, pt: &PointTerms, k: f64) -> Reduced {
        let s = (k / (self.params.nu + pt.d)).sqrt();
        let b = (0..self.q()).map(|i| pt.qy[i] * s / self.lambda_sd[i]).collect();
        Reduced::from_standard(b, self.lambda_corr.clone())
    }

    pub(crate) fn lambda_corr(&self) -> &DMatrix<f64> {
        &self.lambda_corr
    }

    /// Standardized skewing bounds q(y)_i / (sd_i √(ν+d)), so that the CDF at
    /// df k has bounds `c·√k`.
    pub(crate) fn skew_unit_bounds(&self, pt: &PointTerms) -> Vec<f64> {
        let s = (self.params.nu + pt.d).sqrt();
        (0..self.q()).map(|i| pt.qy[i] / (s * self.lambda_sd[i])).collect()
    }

    pub fn logpdf_terms(&self, pt: &PointTerms, precision: &CdfPrecision) -> LogDensity {
        let k = self.params.nu + self.p() as f64;
        let cdf = self.skew_problem(pt, k).cdf(k, precision);
        let q = self.q() as f64;
        if cdf.value <= CDF_FLOOR {
            return LogDensity {
                value: f64::NEG_INFINITY,
                cdf,
                underflow: true,
            };
        }
        LogDensity {
            value: q * std::f64::consts::LN_2 + pt.log_t + cdf.value.ln(),
            cdf,
            underflow: false,
        }
    }

    pub fn logpdf(&self, y: &DVector<f64>, precision: &CdfPrecision) -> Result<LogDensity> {
        if y.len() != self.p() {
            return Err(Error::Dimension(format!("observation has length {}, expected {}", y.len(), self.p())));
        }
        Ok(self.logpdf_terms(&self.point(y), precision))
    }
}

/// log f(y; μ, Σ, Δ, ν); −∞ when the skewing CDF underflows.
pub fn cfust_logpdf(y: &DVector<f64>, params: &CfustParams, precision: &CdfPrecision) -> Result<f64> {
    Ok(Prepared::new(params)?.logpdf(y, precision)?.value)
}

/// Restricted skew t log density, evaluated from its own closed form.
pub fn rmst_logpdf(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    delta_vec: &DVector<f64>,
    nu: f64,
) -> Result<f64> {
    let p = y.len();
    if mu.len() != p || delta_vec.len() != p {
        return Err(Error::Dimension("rmst_logpdf: y, mu and delta lengths differ".into()));
    }
    let omega = sigma + delta_vec * delta_vec.transpose();
    let log_t = mvt_logpdf(y, mu, &omega, nu)?;
    let chol = omega.cholesky().ok_or(Error::NotPositiveDefinite("omega"))?;
    let r = y - mu;
    let oi_r = chol.solve(&r);
    let d = r.dot(&oi_r);
    let loc = delta_vec.dot(&oi_r);
    let oi_delta = chol.solve(delta_vec);
    let scale = (nu + d) / (nu + p as f64) * (1.0 - delta_vec.dot(&oi_delta));
    if !(scale > 0.0) {
        return Err(Error::NotPositiveDefinite("lambda"));
    }
    let cdf = StudentT::new(nu + p as f64).cdf(loc / scale.sqrt());
    if cdf <= CDF_FLOOR {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(std::f64::consts::LN_2 + log_t + cdf.ln())
}

/// Unrestricted skew t log density with Δ = diag(δ), from its own closed form.
pub fn umst_logpdf(
    y: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    delta_vec: &DVector<f64>,
    nu: f64,
    precision: &CdfPrecision,
) -> Result<f64> {
    let p = y.len();
    if mu.len() != p || delta_vec.len() != p {
        return Err(Error::Dimension("umst_logpdf: y, mu and delta lengths differ".into()));
    }
    let mut omega = sigma.clone();
    for i in 0..p {
        omega[(i, i)] += delta_vec[i] * delta_vec[i];
    }
    let log_t = mvt_logpdf(y, mu, &omega, nu)?;
    let chol = omega.cholesky().ok_or(Error::NotPositiveDefinite("omega"))?;
    let r = y - mu;
    let oi_r = chol.solve(&r);
    let d = r.dot(&oi_r);
    let oi = chol.inverse();
    let qy = delta_vec.component_mul(&oi_r);
    let lambda = DMatrix::from_fn(p, p, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - delta_vec[i] * oi[(i, j)] * delta_vec[j]
    });
    let lambda = (&lambda + lambda.transpose()) * 0.5;
    let k = nu + p as f64;
    let a = qy * (k / (nu + d)).sqrt();
    let cdf = crate::specfun::mvt_cdf(&a, &DVector::zeros(p), &lambda, k, precision)?;
    if cdf.value <= CDF_FLOOR {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(p as f64 * std::f64::consts::LN_2 + log_t + cdf.value.ln())
}

/// Mixing proportions and components of a finite CFUST mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub weights: DVector<f64>,
    pub components: Vec<CfustParams>,
}

impl MixtureParams {
    pub fn new(weights: DVector<f64>, components: Vec<CfustParams>) -> Result<Self> {
        let m = Self { weights, components };
        m.validate()?;
        Ok(m)
    }

    pub fn g(&self) -> usize {
        self.components.len()
    }

    pub fn p(&self) -> usize {
        self.components[0].p()
    }

    pub fn q(&self) -> usize {
        self.components[0].q()
    }

    /// Weights must be non-negative and sum to one within 1e-12; all components
    /// share p and q.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() || self.weights.len() != self.components.len() {
            return Err(Error::Dimension(format!(
                "{} weights for {} components",
                self.weights.len(),
                self.components.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidParameter("mixing weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("mixing weights sum to {total}, not 1")));
        }
        let (p, q) = (self.components[0].p(), self.components[0].q());
        for (h, c) in self.components.iter().enumerate() {
            c.validate()?;
            if c.p() != p || c.q() != q {
                return Err(Error::Dimension(format!(
                    "component {h} has p = {}, q = {}; expected p = {p}, q = {q}",
                    c.p(),
                    c.q()
                )));
            }
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<Vec<Prepared>> {
        self.components.iter().map(Prepared::new).collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        ModelDocument {
            p: self.p(),
            q: self.q(),
            g: self.g(),
            weights: self.weights.iter().copied().collect(),
            components: self
                .components
                .iter()
                .map(|c| ComponentDocument {
                    mu: c.mu.iter().copied().collect(),
                    sigma: row_major(&c.sigma),
                    delta: row_major(&c.delta),
                    nu: c.nu,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        if doc.components.len() != doc.g || doc.weights.len() != doc.g {
            return Err(Error::Serialization(format!(
                "g = {} but {} components and {} weights",
                doc.g,
                doc.components.len(),
                doc.weights.len()
            )));
        }
        let (p, q) = (doc.p, doc.q);
        let mut comps = Vec::with_capacity(doc.g);
        for (h, c) in doc.components.iter().enumerate() {
            if c.mu.len() != p || c.sigma.len() != p * p || c.delta.len() != p * q {
                return Err(Error::Serialization(format!(
                    "component {h}: expected mu of length {p}, sigma of {} and delta of {} entries",
                    p * p,
                    p * q
                )));
            }
            comps.push(CfustParams::new(
                DVector::from_column_slice(&c.mu),
                DMatrix::from_row_slice(p, p, &c.sigma),
                DMatrix::from_row_slice(p, q, &c.delta),
                c.nu,
            )?);
        }
        Self::new(DVector::from_column_slice(&doc.weights), comps)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_document(&doc)
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

/// JSON form of a mixture; matrices are stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub p: usize,
    pub q: usize,
    pub g: usize,
    pub weights: Vec<f64>,
    pub components: Vec<ComponentDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDocument {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub delta: Vec<f64>,
    pub nu: f64,
}

/// log Σ_h exp(v_h), with −∞ entries allowed.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-component log π_h f_h(y).
pub fn weighted_component_logpdfs(
    y: &DVector<f64>,
    psi: &MixtureParams,
    prepared: &[Prepared],
    precision: &CdfPrecision,
) -> Result<Vec<f64>> {
    prepared
        .iter()
        .zip(psi.weights.iter())
        .map(|(c, &w)| Ok(w.ln() + c.logpdf(y, precision)?.value))
        .collect()
}

/// log Σ_h π_h f(y; θ_h).
pub fn mixture_logpdf(y: &DVector<f64>, psi: &MixtureParams, precision: &CdfPrecision) -> Result<f64> {
    psi.validate()?;
    let prepared = psi.prepare()?;
    let terms = weighted_component_logpdfs(y, psi, &prepared, precision)?;
    Ok(log_sum_exp(&terms))
}

/// Draws together with the latent variables that produced them.
#[derive(Debug, Clone)]
pub struct LatentSample {
    /// n×p observations.
    pub y: DMatrix<f64>,
    /// n×q magnitudes |U₀|.
    pub u: DMatrix<f64>,
    /// Mixing weights W.
    pub w: DVector<f64>,
}

/// n draws of Y = μ + Δ|U₀| + U₁ with W ~ Gamma(ν/2, rate ν/2),
/// U₀ | W ~ N(0, I/W), U₁ | W ~ N(0, Σ/W).
pub fn sample_cfust_latent(params: &CfustParams, n: usize, seed: u64) -> Result<LatentSample> {
    params.validate()?;
    let (p, q) = (params.p(), params.q());
    let l = params.sigma.clone().cholesky().ok_or(Error::NotPositiveDefinite("sigma"))?.unpack();
    let gamma = Gamma::new(0.5 * params.nu, 2.0 / params.nu)
        .map_err(|e| Error::InvalidParameter(format!("gamma mixing law: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::zeros(n, p);
    let mut u = DMatrix::zeros(n, q);
    let mut w = DVector::zeros(n);
    let mut z0 = DVector::zeros(q);
    let mut z1 = DVector::zeros(p);
    for i in 0..n {
        let wi: f64 = gamma.sample(&mut rng);
        let s = 1.0 / wi.sqrt();
        for k in 0..q {
            let v: f64 = StandardNormal.sample(&mut rng);
            z0[k] = (v * s).abs();
        }
        for k in 0..p {
            z1[k] = StandardNormal.sample(&mut rng);
        }
        let row = &params.mu + &params.delta * &z0 + (&l * &z1) * s;
        y.set_row(i, &row.transpose());
        u.set_row(i, &z0.transpose());
        w[i] = wi;
    }
    Ok(LatentSample { y, u, w })
}

/// n×p matrix of draws; deterministic given `seed`.
pub fn sample_cfust(params: &CfustParams, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    Ok(sample_cfust_latent(params, n, seed)?.y)
}

/// Ancestral sampling: labels (0-based) with probability π_h, then draws from
/// each component's own stream, so a one-component mixture reproduces
/// [`sample_cfust`] exactly.
pub fn sample_mixture(psi: &MixtureParams, n: usize, seed: u64) -> Result<(DMatrix<f64>, Vec<usize>)> {
    psi.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[u64::MAX]));
    let g = psi.g();
    let labels: Vec<usize> = if g == 1 {
        vec![0; n]
    } else {
        let dist = rand_distr::weighted::WeightedIndex::new(psi.weights.iter().copied())
            .map_err(|e| Error::InvalidParameter(format!("mixing weights: {e}")))?;
        (0..n).map(|_| dist.sample(&mut rng)).collect()
    };
    let mut counts = vec![0usize; g];
    for &l in &labels {
        counts[l] += 1;
    }
    let draws: Vec<DMatrix<f64>> = (0..g)
        .map(|h| {
            let s = if h == 0 { seed } else { derive_seed(seed, &[h as u64]) };
            sample_cfust(&psi.components[h], counts[h], s)
        })
        .collect::<Result<_>>()?;
    let mut next = vec![0usize; g];
    let mut y = DMatrix::zeros(n, psi.p());
    for (i, &l) in labels.iter().enumerate() {
        y.set_row(i, &draws[l].row(next[l]));
        next[l] += 1;
    }
    Ok((y, labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_pq(p: usize, q: usize) -> CfustParams {
        let mu = DVector::from_fn(p, |i, _| 0.3 * i as f64 - 0.2);
        let a = DMatrix::from_fn(p, p, |i, j| 0.2 * ((i + 2 * j) as f64).sin());
        let sigma = &a * a.transpose() + DMatrix::identity(p, p);
        let delta = DMatrix::from_fn(p, q, |i, j| 1.1 * ((3 * i + j) as f64 + 0.5).cos());
        CfustParams::new(mu, sigma, delta, 4.5).unwrap()
    }

    #[test]
    fn derived_scalar_case() {
        let p = CfustParams::new(
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            3.0,
        )
        .unwrap();
        let d = derived(&p).unwrap();
        assert!((d.omega[(0, 0)] - 2.0).abs() < 1e-15);
        assert!((d.lambda[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_skew_reduces_to_t() {
        let mut par = params_pq(3, 2);
        par.delta.fill(0.0);
        let d = derived(&par).unwrap();
        assert_eq!(d.omega, par.sigma);
        assert_eq!(d.lambda, DMatrix::identity(2, 2));
        let y = DVector::from_column_slice(&[0.4, -1.0, 2.0]);
        let pr = CdfPrecision::default();
        let a = cfust_logpdf(&y, &par, &pr).unwrap();
        let b = mvt_logpdf(&y, &par.mu, &par.sigma, par.nu).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn lambda_matches_inverse_form() {
        let par = params_pq(3, 2);
        let d = derived(&par).unwrap();
        let si = par.sigma.clone().try_inverse().unwrap();
        let alt = (DMatrix::identity(2, 2) + par.delta.transpose() * si * &par.delta).try_inverse().unwrap();
        assert!((d.lambda - alt).amax() < 1e-12);
    }

    // y = 1: 2 t_1(1; 0, 2, 4) T_1(0.5·√(5/4.5)/√0.5; 5) at 30 digits, which also
    // matches direct integration of the normal-gamma hierarchy over (u, w).
    #[test]
    fn scalar_reference_value() {
        let p = CfustParams::new(
            DVector::from_element(1, 0.0),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::from_element(1, 1, 1.0),
            4.0,
        )
        .unwrap();
        let y = DVector::from_element(1, 1.0);
        let v = cfust_logpdf(&y, &p, &CdfPrecision::default()).unwrap();
        assert!((v - SCALAR_REF).abs() < 1e-13, "{v}");
    }

    const SCALAR_REF: f64 = -1.209_479_126_166_066_2;

    #[test]
    fn restricted_constructions_agree() {
        let par = params_pq(3, 1);
        let dv = par.delta.column(0).into_owned();
        let pr = CdfPrecision::default();
        let sq = make_delta(SkewStructure::SingleColumn, &dv, 3).unwrap();
        let wide = CfustParams::new(par.mu.clone(), par.sigma.clone(), sq, par.nu).unwrap();
        for t in 0..5 {
            let y = DVector::from_fn(3, |i, _| ((i * 7 + t * 3) as f64).sin() * 2.0);
            let a = rmst_logpdf(&y, &par.mu, &par.sigma, &dv, par.nu).unwrap();
            let b = cfust_logpdf(&y, &par, &pr).unwrap();
            let c = cfust_logpdf(&y, &wide, &pr).unwrap();
            assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-10, "{a} {b} {c}");
        }
    }

    #[test]
    fn unrestricted_matches_diagonal() {
        let base = params_pq(2, 2);
        let dv = DVector::from_column_slice(&[1.3, -0.6]);
        let delta = make_delta(SkewStructure::Diagonal, &dv, 2).unwrap();
        let par = CfustParams::new(base.mu.clone(), base.sigma.clone(), delta, 6.0).unwrap();
        let pr = CdfPrecision::default();
        for t in 0..5 {
            let y = DVector::from_fn(2, |i, _| ((i * 5 + t * 2) as f64).cos() * 1.5);
            let a = umst_logpdf(&y, &par.mu, &par.sigma, &dv, par.nu, &pr).unwrap();
            let b = cfust_logpdf(&y, &par, &pr).unwrap();
            assert!((a - b).abs() < 1e-10, "{a} {b}");
        }
    }

    #[test]
    fn column_permutation_invariance() {
        let par = params_pq(2, 2);
        let mut swapped = par.clone();
        swapped.delta.swap_columns(0, 1);
        let pr = CdfPrecision::default();
        let y = DVector::from_column_slice(&[0.7, 1.9]);
        let a = cfust_logpdf(&y, &par, &pr).unwrap();
        let b = cfust_logpdf(&y, &swapped, &pr).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mixture_degenerate_cases() {
        let c = params_pq(2, 2);
        let pr = CdfPrecision::default();
        let y = DVector::from_column_slice(&[0.1, -0.4]);
        let single = cfust_logpdf(&y, &c, &pr).unwrap();
        let twin = MixtureParams::new(DVector::from_column_slice(&[0.3, 0.7]), vec![c.clone(), c.clone()]).unwrap();
        assert!((mixture_logpdf(&y, &twin, &pr).unwrap() - single).abs() < 1e-13);
        let mut other = c.clone();
        other.mu[0] += 3.0;
        let first = MixtureParams::new(DVector::from_column_slice(&[1.0, 0.0]), vec![c, other]).unwrap();
        assert!((mixture_logpdf(&y, &first, &pr).unwrap() - single).abs() < 1e-13);
    }

    #[test]
    fn document_round_trip() {
        let a = params_pq(2, 3);
        let mut b = params_pq(2, 3);
        b.nu = 11.25;
        b.mu[1] = 1.0 / 3.0;
        let m = MixtureParams::new(DVector::from_column_slice(&[0.25, 0.75]), vec![a, b]).unwrap();
        let back = MixtureParams::from_json(&m.to_json()).unwrap();
        assert_eq!(m, back);
        let doc = m.to_document();
        assert_eq!(doc.components[0].delta[1], m.components[0].delta[(0, 1)]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let c = params_pq(2, 2);
        let a = sample_cfust(&c, 50, 9).unwrap();
        assert_eq!(a, sample_cfust(&c, 50, 9).unwrap());
        assert_ne!(a, sample_cfust(&c, 50, 10).unwrap());
        let m = MixtureParams::new(DVector::from_element(1, 1.0), vec![c.clone()]).unwrap();
        let (y, labels) = sample_mixture(&m, 50, 9).unwrap();
        assert_eq!(y, a);
        assert!(labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn structure_validation() {
        assert!(SkewStructure::Diagonal.validate(3, 2).is_err());
        assert!(make_delta(SkewStructure::Full, &DVector::zeros(3), 2).is_err());
        let d = make_delta(SkewStructure::SingleColumn, &DVector::from_element(2, 1.5), 1).unwrap();
        assert_eq!(d.shape(), (2, 1));
        assert_eq!("single-column".parse::<SkewStructure>().unwrap(), SkewStructure::SingleColumn);
    }
}
