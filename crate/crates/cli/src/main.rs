//! `skewtmix`: fit, sample and evaluate CFUST mixtures from the command line.
//!
//! Exit codes: 0 success, 1 input error, 2 EM stopped at `max_iter`
//! (report still written), 3 every start collapsed.

mod data;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rayon::prelude::*;
use skewtmix::em::{self, E1Method, FitConfig};
use skewtmix::model::{self, MixtureParams, SkewStructure};
use skewtmix::specfun::CdfPrecision;

use data::{fmt_f64, read_csv, write_csv};
use report::RunReport;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Output(_) => 1,
            CliError::Degenerate(_) => 3,
        }
    }
}

impl From<skewtmix::Error> for CliError {
    fn from(e: skewtmix::Error) -> Self {
        match e {
            skewtmix::Error::AllStartsCollapsed { .. } | skewtmix::Error::DegenerateComponent { .. } => {
                CliError::Degenerate(e.to_string())
            }
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "skewtmix", version, about = "Finite mixtures of canonical fundamental skew t distributions")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a mixture by EM and write a JSON run report.
    Fit(FitArgs),
    /// Draw samples from a model file.
    Sample(SampleArgs),
    /// Per-row mixture and component log-densities and responsibilities.
    Density(DensityArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Report path.
    #[arg(long)]
    out: PathBuf,
    /// TOML file with FitConfig keys; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write the fitted model as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Also write responsibilities as CSV.
    #[arg(long)]
    responsibilities: Option<PathBuf>,
    #[arg(long)]
    g: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    structure: Option<SkewStructure>,
    #[arg(long)]
    e1_method: Option<E1Method>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_starts: Option<usize>,
    /// Include wall-clock time in the report.
    #[arg(long)]
    record_time: bool,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append the 1-based generating component.
    #[arg(long)]
    labels: bool,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SKEWTMIX_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(|| run(cli.command)),
            Err(e) => Err(CliError::Input(format!("cannot start {t} threads: {e}"))),
        },
        None => run(cli.command),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn run(command: Command) -> Result<u8, CliError> {
    match command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Density(a) => cmd_density(&a),
    }
}

fn load_config(path: Option<&Path>) -> Result<FitConfig, CliError> {
    let Some(path) = path else {
        return Ok(FitConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn fit_config(a: &FitArgs) -> Result<FitConfig, CliError> {
    let mut c = load_config(a.config.as_deref())?;
    if let Some(v) = a.g {
        c.g = v;
    }
    if let Some(v) = a.q {
        c.q = v;
    }
    if let Some(v) = a.structure {
        c.skew_structure = v;
    }
    if let Some(v) = a.e1_method {
        c.e1_method = v;
    }
    if let Some(v) = a.max_iter {
        c.max_iter = v;
    }
    if let Some(v) = a.tol {
        c.tol = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.n_starts {
        c.n_starts = v;
    }
    Ok(c)
}

fn cmd_fit(a: &FitArgs) -> Result<u8, CliError> {
    let config = fit_config(a)?;
    let data = read_csv(&a.data)?;
    config.validate(data.p())?;
    let start = Instant::now();
    let result = em::fit(&data.values, &config)?;
    let elapsed = start.elapsed().as_secs_f64();
    log::info!(
        "fit finished: loglik {} after {} iterations in {elapsed:.1}s",
        result.loglik,
        result.iterations
    );
    let report = RunReport::new(&config, &data, &result, a.record_time.then_some(elapsed));
    write_text(&a.out, &report.to_json())?;
    if let Some(path) = &a.model_out {
        write_text(path, &result.psi.to_json())?;
    }
    if let Some(path) = &a.responsibilities {
        let z = &result.responsibilities;
        let header: Vec<String> = (1..=z.ncols()).map(|h| format!("z{h}")).collect();
        let rows = (0..z.nrows()).map(|j| z.row(j).iter().map(|&v| fmt_f64(v)).collect());
        write_csv(Some(path), &header, rows)?;
    }
    if !result.converged {
        log::warn!("EM stopped at max_iter = {} before converging", config.max_iter);
        return Ok(2);
    }
    Ok(0)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<MixtureParams, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    MixtureParams::from_json(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_sample(a: &SampleArgs) -> Result<u8, CliError> {
    let psi = load_model(&a.model)?;
    let p = psi.p();
    let mut header: Vec<String> = (1..=p).map(|i| format!("y{i}")).collect();
    if a.labels {
        header.push("label".into());
    }
    if a.n == 0 {
        write_csv(a.out.as_deref(), &header, std::iter::empty())?;
        return Ok(0);
    }
    let (y, labels) = model::sample_mixture(&psi, a.n, a.seed)?;
    let rows = (0..a.n).map(|j| {
        let mut row: Vec<String> = y.row(j).iter().map(|&v| fmt_f64(v)).collect();
        if a.labels {
            row.push((labels[j] + 1).to_string());
        }
        row
    });
    write_csv(a.out.as_deref(), &header, rows)?;
    Ok(0)
}

fn cmd_density(a: &DensityArgs) -> Result<u8, CliError> {
    let psi = load_model(&a.model)?;
    let data = read_csv(&a.data)?;
    if data.p() != psi.p() {
        return Err(CliError::Input(format!(
            "{} has {} columns but the model expects p = {}",
            a.data.display(),
            data.p(),
            psi.p()
        )));
    }
    let prepared = psi.prepare()?;
    let precision = CdfPrecision::default();
    let g = psi.g();
    let rows: Vec<Vec<f64>> = (0..data.n())
        .into_par_iter()
        .map(|j| {
            let y = DVector::from_iterator(data.p(), data.values.row(j).iter().copied());
            let comp: Vec<f64> = prepared
                .iter()
                .map(|c| c.logpdf(&y, &precision).map(|l| l.value))
                .collect::<skewtmix::Result<_>>()?;
            let weighted: Vec<f64> = comp.iter().zip(psi.weights.iter()).map(|(l, w)| l + w.ln()).collect();
            let total = model::log_sum_exp(&weighted);
            let z: Vec<f64> = if total == f64::NEG_INFINITY {
                vec![1.0 / g as f64; g]
            } else {
                weighted.iter().map(|l| (l - total).exp()).collect()
            };
            let mut row = Vec::with_capacity(1 + 2 * g);
            row.push(total);
            row.extend(comp);
            row.extend(z);
            Ok(row)
        })
        .collect::<skewtmix::Result<_>>()?;
    let mut header = vec!["logpdf".to_string()];
    header.extend((1..=g).map(|h| format!("logpdf_{h}")));
    header.extend((1..=g).map(|h| format!("z{h}")));
    write_csv(
        a.out.as_deref(),
        &header,
        rows.into_iter().map(|r| r.into_iter().map(fmt_f64).collect()),
    )?;
    Ok(0)
}
