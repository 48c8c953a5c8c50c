//! Matrix file formats.
//!
//! Binary layout (all little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `DDM1`               |
//! | 4      | 2    | format version (`1`)       |
//! | 6      | 2    | dtype code (`1` = f64)     |
//! | 8      | 8    | rows                       |
//! | 16     | 8    | cols                       |
//! | 24     | 8·rows·cols | row-major f64 payload |
//!
//! CSV is accepted as a convenience: one observation per line, optional
//! non-numeric header row.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 4] = b"DDM1";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u16 = 1;
pub const HEADER_LEN: usize = 24;

pub fn encode_matrix(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * m.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for row in m.row_iter() {
        for v in row.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::invalid(format!(
            "matrix file too short: {} bytes, header needs {HEADER_LEN}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::invalid("not a DDM1 matrix file (bad magic)"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::invalid(format!(
            "unsupported matrix format version {version}"
        )));
    }
    let dtype = u16_at(6);
    if dtype != DTYPE_F64 {
        return Err(Error::invalid(format!("unsupported dtype code {dtype}")));
    }
    let rows = u64_at(8) as usize;
    let cols = u64_at(16) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::invalid("matrix dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::invalid(format!(
            "payload is {} bytes, {rows}x{cols} needs {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

/// Shortest representation that parses back to the same `f64`.
pub fn encode_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn decode_csv(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Schema {
            line: i + 1,
            message: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if i == 0 => continue,
            Err(e) => {
                return Err(Error::Schema {
                    line: i + 1,
                    message: format!("non-numeric value: {e}"),
                })
            }
        };
        match cols {
            None => cols = Some(parsed.len()),
            Some(c) if c != parsed.len() => {
                return Err(Error::Schema {
                    line: i + 1,
                    message: format!("expected {c} columns, found {}", parsed.len()),
                })
            }
            _ => {}
        }
        values.extend(parsed);
        rows += 1;
    }
    let cols = cols.unwrap_or(0);
    Ok(Matrix::from_row_slice(rows, cols, &values))
}

/// Read a matrix from `.csv` (by extension) or the binary format.
pub fn read_any(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
    {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        decode_csv(&text)
    } else {
        read_matrix(path)
    }
}
