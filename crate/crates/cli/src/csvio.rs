//! CSV ingestion. Comma-separated, header row required, '.' decimal, UTF-8.
//! Categorical covariates must be pre-encoded as numbers; label-like columns
//! (strata, blocks, pairs) are read as strings.

use std::path::Path;

use crate::errors::{validation, CliResult};

pub struct Table {
    pub headers: Vec<String>,
    /// Row-major cells; data rows are numbered from 1 in error messages.
    pub rows: Vec<Vec<String>>,
}

pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| validation(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| validation(format!("bad header row: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| validation(format!("row {}: {e}", idx + 1)))?;
        rows.push(record.iter().map(|c| c.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(validation(format!("{} has no data rows", path.display())));
    }
    Ok(Table { headers, rows })
}

impl Table {
    pub fn column_index(&self, name: &str) -> CliResult<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| validation(format!("missing column {name:?}")))
    }

    /// Rejects the file when any referenced cell is empty, listing row numbers.
    pub fn check_missing(&self, columns: &[usize]) -> CliResult<()> {
        let mut bad_rows = Vec::new();
        for (idx, row) in self.rows.iter().enumerate() {
            if columns.iter().any(|&c| row[c].is_empty()) {
                bad_rows.push(idx + 1);
            }
        }
        if bad_rows.is_empty() {
            Ok(())
        } else {
            Err(validation(format!(
                "rows with missing values rejected: {bad_rows:?}"
            )))
        }
    }

    pub fn numeric_column(&self, col: usize) -> CliResult<Vec<f64>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(idx, row)| {
                row[col].parse::<f64>().map_err(|_| {
                    validation(format!(
                        "row {}, column {:?}: cannot parse {:?} as a number",
                        idx + 1,
                        self.headers[col],
                        row[col]
                    ))
                })
            })
            .collect()
    }

    pub fn string_column(&self, col: usize) -> Vec<String> {
        self.rows.iter().map(|row| row[col].clone()).collect()
    }

    /// Treatment indicators: every value must be exactly 0 or 1.
    pub fn treatment_column(&self, col: usize) -> CliResult<Vec<bool>> {
        self.rows
            .iter()
            .enumerate()
            .map(|(idx, row)| match row[col].as_str() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(validation(format!(
                    "row {}: non-binary treatment value {other:?}",
                    idx + 1
                ))),
            })
            .collect()
    }

    /// Probability column with the open-interval check, reported per row.
    pub fn probability_column(&self, col: usize) -> CliResult<Vec<f64>> {
        let values = self.numeric_column(col)?;
        for (idx, &p) in values.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(validation(format!(
                    "row {}: probability {p} outside the open interval (0, 1)",
                    idx + 1
                )));
            }
        }
        Ok(values)
    }

    /// Columns whose every cell parses as a number, excluding the given
    /// indices; used for covariate auto-selection.
    pub fn numeric_columns_except(&self, exclude: &[usize]) -> Vec<usize> {
        (0..self.headers.len())
            .filter(|c| !exclude.contains(c))
            .filter(|&c| {
                self.rows
                    .iter()
                    .all(|row| !row[c].is_empty() && row[c].parse::<f64>().is_ok())
            })
            .collect()
    }
}
