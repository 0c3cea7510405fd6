//! CSV ingest and output.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::CliError;

/// A numeric table read from CSV with a header row.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub columns: Vec<String>,
    /// n × p, all cells finite.
    pub values: DMatrix<f64>,
    pub source: PathBuf,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn p(&self) -> usize {
        self.values.ncols()
    }
}

pub fn read_csv(path: &Path) -> Result<Dataset, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let columns: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if columns.is_empty() || columns.iter().all(|c| c.is_empty()) {
        return Err(CliError::Input(format!("{}: missing header row", path.display())));
    }
    let p = columns.len();
    let mut cells = Vec::new();
    let mut n = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |pos| pos.line());
        if record.len() != p {
            return Err(CliError::Input(format!(
                "{} line {line}: expected {p} fields, found {}",
                path.display(),
                record.len()
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::Input(format!("{} line {line}, column '{}': cannot parse '{field}'", path.display(), columns[k]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!(
                    "{} line {line}, column '{}': non-finite value",
                    path.display(),
                    columns[k]
                )));
            }
            cells.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset {
        columns,
        values: DMatrix::from_row_slice(n, p, &cells),
        source: path.to_path_buf(),
    })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes header and rows as RFC 4180 CSV to `path`, or stdout if `None`.
pub fn write_csv(path: Option<&Path>, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), CliError> {
    let sink: Box<dyn Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::Input(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let io = |e: csv::Error| CliError::Output(e.to_string());
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Output(e.to_string()))
}
