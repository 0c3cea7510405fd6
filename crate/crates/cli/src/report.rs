//! JSON run report written by `fit`.

use serde::{Deserialize, Serialize};
use skewtmix::em::{FitConfig, FitDiagnostics, FitResult};
use skewtmix::model::ModelDocument;

use crate::data::Dataset;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n: usize,
    pub p: usize,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub software_version: String,
    pub seed: u64,
    pub config: FitConfig,
    pub data: DataSummary,
    pub model: ModelDocument,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub bic: f64,
    pub aic: f64,
    /// 1-based component of largest responsibility.
    pub labels: Vec<usize>,
    /// One row per observation.
    pub responsibilities: Vec<Vec<f64>>,
    pub diagnostics: FitDiagnostics,
    /// Only present with `--record-time`, so that default reports are
    /// reproducible byte for byte.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_seconds: Option<f64>,
}

impl RunReport {
    pub fn new(config: &FitConfig, data: &Dataset, result: &FitResult, wall_time_seconds: Option<f64>) -> Self {
        let z = &result.responsibilities;
        Self {
            schema_version: SCHEMA_VERSION,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.seed,
            config: config.clone(),
            data: DataSummary {
                source: data.source.display().to_string(),
                n: data.n(),
                p: data.p(),
                columns: data.columns.clone(),
            },
            model: result.psi.to_document(),
            loglik: result.loglik,
            loglik_trace: result.loglik_trace.clone(),
            iterations: result.iterations,
            converged: result.converged,
            bic: result.bic,
            aic: result.aic,
            labels: result.labels.iter().map(|l| l + 1).collect(),
            responsibilities: (0..z.nrows()).map(|j| z.row(j).iter().copied().collect()).collect(),
            diagnostics: result.diagnostics.clone(),
            wall_time_seconds,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
