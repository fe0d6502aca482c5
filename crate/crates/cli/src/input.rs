use std::fs;
use std::path::Path;

use crate::CliError;

/// Reads one number per line, or column `column` (1-based) of a
/// comma-separated file. Blank lines are skipped; a header line that does
/// not parse is skipped only when it is the first non-blank line of a CSV.
pub fn read_values(path: &Path, column: Option<usize>) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    parse_values(&text, column)
}

pub fn parse_values(text: &str, column: Option<usize>) -> Result<Vec<f64>, CliError> {
    if column == Some(0) {
        return Err(CliError::Usage("--csv-column is 1-based".into()));
    }
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let field = match column {
            None => line,
            Some(k) => match line.split(',').nth(k - 1) {
                Some(f) => f.trim(),
                None => {
                    return Err(CliError::Data(format!(
                        "line {}: no column {k}",
                        i + 1
                    )))
                }
            },
        };
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            _ if first && column.is_some() => {}
            _ => {
                return Err(CliError::Data(format!(
                    "line {}: '{field}' is not a finite number",
                    i + 1
                )))
            }
        }
        first = false;
    }
    if out.is_empty() {
        return Err(CliError::Data("input contains no values".into()));
    }
    Ok(out)
}

/// Distinct values in increasing order with their multiplicities.
pub fn group(values: &[f64]) -> (Vec<f64>, Vec<u64>) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut support: Vec<f64> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    for x in v {
        if support.last() == Some(&x) {
            *counts.last_mut().unwrap() += 1;
        } else {
            support.push(x);
            counts.push(1);
        }
    }
    (support, counts)
}
