//! Matrix and label files.
//!
//! Text matrices are CSV with one sample per line. Binary matrices are
//! `"RSAM"`, rows and cols as little-endian `u32`, then row-major
//! little-endian `f32` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

const MAGIC: &[u8; 4] = b"RSAM";
const HEADER_LEN: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    Binary,
}

impl MatrixFormat {
    /// `.csv` and `.txt` are text; anything else is binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("csv") | Some("txt") => MatrixFormat::Csv,
            _ => MatrixFormat::Binary,
        }
    }
}

fn malformed(location: String, reason: impl Into<String>) -> Error {
    Error::MalformedFile { location, reason: reason.into() }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<Matrix> {
    match format {
        MatrixFormat::Csv => parse_csv(&fs::read_to_string(path)?),
        MatrixFormat::Binary => parse_binary(&fs::read(path)?),
    }
}

pub fn save_matrix(m: &Matrix, path: &Path, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Csv => to_csv(m).into_bytes(),
        MatrixFormat::Binary => to_binary(m)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub(crate) fn parse_csv(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let location = format!("line {}", idx + 1);
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| malformed(location.clone(), format!("cannot parse {:?} as a number", field.trim())))?;
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(malformed(location, format!("expected {c} fields, found {count}")));
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::new(rows, cols.unwrap_or(0), data)
}

pub(crate) fn to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub(crate) fn parse_binary(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(malformed("offset 0".into(), "file shorter than the 12-byte header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(malformed("offset 0".into(), "missing RSAM magic"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::DimensionOverflow(format!("{rows}x{cols} does not fit in memory")))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != len {
        return Err(malformed(
            format!("offset {}", HEADER_LEN + body.len().min(len)),
            format!("expected {len} payload bytes for {rows}x{cols}, found {}", body.len()),
        ));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Matrix::new(rows, cols, data)
}

pub(crate) fn to_binary(m: &Matrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(m.rows()).map_err(|_| Error::DimensionOverflow(format!("{} rows", m.rows())))?;
    let cols = u32::try_from(m.cols()).map_err(|_| Error::DimensionOverflow(format!("{} columns", m.cols())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    for &v in m.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// One non-negative integer label per line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(
            line.parse()
                .map_err(|_| malformed(format!("line {}", idx + 1), format!("cannot parse {line:?} as a label")))?,
        );
    }
    Ok(labels)
}

pub fn save_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(labels.len() * 3);
    for l in labels {
        out.push_str(&l.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
