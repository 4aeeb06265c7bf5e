//! Numeric CSV tables with a fixed header.

use std::path::Path;

use crate::error::{DseError, Result};

/// Formats a float with 17 significant digits, enough for a bit-exact round
/// trip through text.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a header line and one row per entry. Numbers use [`fmt_f64`].
pub fn write_table<I>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator,
    I::Item: AsRef<[f64]>,
{
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;
    w.write_record(header).map_err(|e| csv_to_io(path, e))?;
    for row in rows {
        let fields: Vec<String> = row.as_ref().iter().map(|&v| fmt_f64(v)).collect();
        w.write_record(&fields).map_err(|e| csv_to_io(path, e))?;
    }
    w.flush().map_err(|e| DseError::io(path, e))
}

/// Reads a table written by [`write_table`], checking the header exactly.
/// Line numbers in errors are 1-based and count the header.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<f64>>> {
    let origin = path.display().to_string();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_to_io(path, e))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, rec) in r.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| DseError::parse(&origin, line, e.to_string()))?;
        if !saw_header {
            let got: Vec<&str> = rec.iter().map(str::trim).collect();
            if got != header {
                return Err(DseError::parse(
                    &origin,
                    line,
                    format!("expected header `{}`, found `{}`", header.join(","), got.join(",")),
                ));
            }
            saw_header = true;
            continue;
        }
        if rec.len() != header.len() {
            return Err(DseError::parse(
                &origin,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| DseError::parse(&origin, line, format!("bad number `{f}`: {e}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if !saw_header {
        return Err(DseError::parse(&origin, 1, "empty file, missing header"));
    }
    Ok(rows)
}

fn csv_to_io(path: &Path, e: csv::Error) -> DseError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => DseError::io(path, io),
        other => DseError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}
