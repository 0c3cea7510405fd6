//! Special functions: gamma family, univariate and multivariate t, truncated
//! t moments and the logarithm series.

pub mod gamma;
pub mod mvt;
pub mod quadrature;
pub mod series;
pub mod student;
pub mod truncated;

pub use gamma::{digamma, log_gamma};
pub use mvt::{mvt_cdf, mvt_logpdf, CdfEstimate, CdfPrecision};
pub use series::log_via_series;
pub use student::{t_cdf, StudentT};
pub use truncated::{trunc_mvt_moments, TruncatedTMoments};
pub(crate) use truncated::trunc_mvt_moments_hinted;
