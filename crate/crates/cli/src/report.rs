//! File output: pretty JSON and labelled CSV tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::CliError;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("{}: {e}", path.display()))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| io_err(path, e))?;
    writeln!(w).map_err(|e| io_err(path, e))
}

/// Header row then one row per record, all fields already formatted.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Square matrix with age-class labels on both margins.
pub fn write_matrix(path: &Path, labels: &[String], m: &DMatrix<f64>) -> Result<(), CliError> {
    let mut header = vec!["age".to_string()];
    header.extend(labels.iter().cloned());
    let rows: Vec<Vec<String>> = (0..m.nrows())
        .map(|i| {
            let mut row = vec![labels[i].clone()];
            row.extend(m.row(i).iter().map(|x| x.to_string()));
            row
        })
        .collect();
    write_csv(path, &header, &rows)
}
