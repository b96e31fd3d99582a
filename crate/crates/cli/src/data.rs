use std::fs::File;
use std::path::Path;

use boltzmann::crbm::SequenceDataset;
use boltzmann::{Dataset, UnitFamily};
use ndarray::{Array2, ArrayView2};

use crate::error::CliError;

/// Raw numeric table with its optional header.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Option<Vec<String>>,
    pub labels: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn open(path: &Path) -> Result<csv::Reader<File>, CliError> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Reads a comma-separated table. The first record is a header when any of
/// its numeric fields fails to parse. With `labelled`, the first column is
/// kept as a string label.
pub fn read_table(path: &Path, labelled: bool) -> Result<Table, CliError> {
    let mut reader = open(path)?;
    let skip = usize::from(labelled);
    let mut header = None;
    let mut labels = vec![];
    let mut rows: Vec<Vec<f64>> = vec![];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        let line = record.position().map_or(i as u64 + 1, csv::Position::line);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: Vec<Result<f64, _>> = record.iter().skip(skip).map(str::parse::<f64>).collect();
        if i == 0 && parsed.iter().any(Result::is_err) {
            header = Some(record.iter().skip(skip).map(str::to_string).collect());
            continue;
        }
        if labelled && record.len() < 2 {
            return Err(CliError::Data(format!("{}: line {line}: expected a sequence id and at least one value", path.display())));
        }
        let mut row = Vec::with_capacity(parsed.len());
        for (col, value) in parsed.into_iter().enumerate() {
            let field = &record[col + skip];
            match value {
                Ok(x) if x.is_finite() => row.push(x),
                _ => {
                    return Err(CliError::Data(format!(
                        "{}: line {line}, column {}: `{field}` is not a finite number",
                        path.display(),
                        col + skip + 1
                    )))
                }
            }
        }
        let expected = header.as_ref().map(Vec::len).or_else(|| rows.first().map(Vec::len));
        if let Some(expected) = expected {
            if row.len() != expected {
                return Err(CliError::Data(format!(
                    "{}: line {line} has {} values, expected {expected}",
                    path.display(),
                    row.len()
                )));
            }
        }
        if labelled {
            labels.push(record[0].to_string());
        }
        rows.push(row);
    }
    Ok(Table { header, labels, rows })
}

impl Table {
    /// Column count, falling back to `default` for a table with no rows or header.
    pub fn width(&self, default: usize) -> usize {
        self.header.as_ref().map(Vec::len).or_else(|| self.rows.first().map(Vec::len)).unwrap_or(default)
    }

    pub fn matrix(&self, default_width: usize) -> Array2<f64> {
        let d = self.width(default_width);
        let flat: Vec<f64> = self.rows.iter().flatten().copied().collect();
        Array2::from_shape_vec((self.rows.len(), d), flat).expect("row lengths checked on read")
    }
}

pub fn to_dataset(rows: Array2<f64>, family: UnitFamily, path: &Path) -> Result<Dataset, CliError> {
    Dataset::new(rows, family).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Groups rows by their leading sequence id, in order of first appearance.
pub fn read_sequences(path: &Path, family: UnitFamily) -> Result<SequenceDataset, CliError> {
    let table = read_table(path, true)?;
    if table.rows.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    let mut order: Vec<String> = vec![];
    let mut groups: Vec<Vec<Vec<f64>>> = vec![];
    for (label, row) in table.labels.iter().zip(&table.rows) {
        match order.iter().position(|l| l == label) {
            Some(g) => groups[g].push(row.clone()),
            None => {
                order.push(label.clone());
                groups.push(vec![row.clone()]);
            }
        }
    }
    let sequences = groups
        .iter()
        .zip(&order)
        .map(|(rows, id)| {
            Dataset::from_rows(rows, family).map_err(|e| CliError::Data(format!("{}: sequence `{id}`: {e}", path.display())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SequenceDataset::new(sequences)?)
}

pub fn write_table(path: &Path, prefix: &str, rows: ArrayView2<f64>) -> Result<(), CliError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
    writer.write_record((0..rows.ncols()).map(|j| format!("{prefix}{j}"))).map_err(io)?;
    for row in rows.rows() {
        writer.write_record(row.iter().map(f64::to_string)).map_err(io)?;
    }
    writer.flush().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}
