//! Finite mixtures of canonical fundamental skew t (CFUST) distributions,
//! fitted by an EM algorithm with closed-form conditional expectations.

pub mod em;
pub mod error;
pub mod model;
pub mod oracle;
pub mod seed;
pub mod specfun;

pub use error::{Error, Result};
