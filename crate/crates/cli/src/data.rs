use std::path::Path;

use probgraph::Tensor;

use crate::CliError;

/// Read a rectangular numeric CSV into `(features, targets)`: every column
/// but the last, and the last. A first row that does not parse as numbers
/// is taken to be a header.
pub fn load_csv(path: &Path) -> Result<(Tensor, Tensor), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => CliError::RaggedRows {
                line,
                expected: *expected_len as usize,
                found: *len as usize,
            },
            _ => CliError::Parse { line, message: e.to_string() },
        })?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 1 => continue,
            Err(e) => return Err(CliError::Parse { line, message: e.to_string() }),
        };
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(CliError::RaggedRows {
                    line,
                    expected: w,
                    found: values.len(),
                })
            }
            _ => {}
        }
        rows.push(values);
    }
    let cols = match width {
        Some(w) if w >= 2 => w,
        Some(w) => {
            return Err(CliError::Parse {
                line: 1,
                message: format!("need at least two columns, found {w}"),
            })
        }
        None => {
            return Err(CliError::Parse {
                line: 1,
                message: "no data rows".into(),
            })
        }
    };
    let n = rows.len();
    let mut features = Vec::with_capacity(n * (cols - 1));
    let mut targets = Vec::with_capacity(n);
    for row in rows {
        features.extend_from_slice(&row[..cols - 1]);
        targets.push(row[cols - 1]);
    }
    Ok((Tensor::new([n, cols - 1], features)?, Tensor::vector(targets)))
}
