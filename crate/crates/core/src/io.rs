//! Plain-text matrix/vector loading and atomic file output.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn parse_numbers(line: &str, base: usize) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut rest = line;
    let mut pos = base;
    loop {
        let trimmed = rest.trim_start();
        pos += rest.len() - trimmed.len();
        if trimmed.is_empty() {
            return Ok(out);
        }
        let end = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let tok = &trimmed[..end];
        out.push(tok.parse().map_err(|_| Error::Parse {
            offset: pos,
            message: format!("invalid number {tok:?}"),
        })?);
        pos += end;
        rest = &trimmed[end..];
    }
}

/// Rows of whitespace-separated decimals; blank lines and `#` comments are skipped.
pub fn parse_matrix_text(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("");
        if !body.trim().is_empty() {
            let row = parse_numbers(body, start)?;
            if let Some(first) = rows.first().map(Vec::len) {
                if row.len() != first {
                    return Err(Error::Parse {
                        offset: start,
                        message: format!("row has {} entries, expected {first}", row.len()),
                    });
                }
            }
            rows.push(row);
        }
        start += line.len();
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            offset: 0,
            message: "matrix file contains no rows".into(),
        });
    }
    Ok(rows)
}

/// All whitespace-separated decimals in the text, in order.
pub fn parse_vector_text(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("");
        out.extend(parse_numbers(body, start)?);
        start += line.len();
    }
    Ok(out)
}

pub fn read_matrix_text(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_text(&text)
}

pub fn read_vector_text(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vector_text(&text)
}

/// Writes through a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Formats with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}
