use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const D2B_MAGIC: &[u8; 4] = b"D2ST";
const D2B_VERSION: u8 = 0x01;
const D2B_HEADER: usize = 4 + 1 + 4 + 4;

/// On-disk matrix encodings.
///
/// * `csv`: UTF-8, comma-separated decimals, no header, one row per line.
/// * `d2b`: `"D2ST"`, version byte `0x01`, `u32` LE rows, `u32` LE cols, then
///   `rows·cols` LE `f64`s in row-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Csv,
    D2b,
}

impl MatrixFormat {
    /// Guesses the format from a file extension; anything but `.d2b` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("d2b") => MatrixFormat::D2b,
            _ => MatrixFormat::Csv,
        }
    }
}

impl FromStr for MatrixFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MatrixFormat::Csv),
            "d2b" => Ok(MatrixFormat::D2b),
            other => Err(Error::Config(format!("unknown matrix format `{other}`"))),
        }
    }
}

pub fn load_matrix(path: &Path, format: MatrixFormat) -> Result<Matrix> {
    match format {
        MatrixFormat::Csv => {
            let bytes = fs::read(path)?;
            let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
                location: format!("byte {}", e.valid_up_to()),
                message: "invalid UTF-8".into(),
            })?;
            parse_csv(text)
        }
        MatrixFormat::D2b => decode_d2b(&fs::read(path)?),
    }
}

/// Writes `m` to `path`. An existing file is only replaced when `overwrite`
/// is set.
pub fn save_matrix(m: &Matrix, path: &Path, format: MatrixFormat, overwrite: bool) -> Result<()> {
    if !overwrite && path.exists() {
        return Err(Error::AlreadyExists(path.to_path_buf()));
    }
    let bytes = match format {
        MatrixFormat::Csv => to_csv_string(m).into_bytes(),
        MatrixFormat::D2b => encode_d2b(m)?,
    };
    fs::write(path, bytes)?;
    Ok(())
}

pub fn parse_csv(text: &str) -> Result<Matrix> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Parse {
            location: "line 1".into(),
            message: "empty file".into(),
        });
    }
    let mut cols = 0;
    let mut data = Vec::new();
    for (i, raw) in lines.iter().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            return Err(Error::Parse {
                location: format!("line {lineno}"),
                message: "blank line".into(),
            });
        }
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 {
            cols = fields.len();
        } else if fields.len() != cols {
            return Err(Error::Shape {
                line: lineno,
                expected: cols,
                found: fields.len(),
            });
        }
        for (j, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                location: format!("line {lineno}, column {}", j + 1),
                message: format!("`{}` is not a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("line {lineno}, column {}", j + 1),
                });
            }
            data.push(v);
        }
    }
    Ok(Matrix::from_shape_vec((lines.len(), cols), data).expect("rectangular by construction"))
}

/// Renders `m` as CSV with 17 significant digits per value.
pub fn to_csv_string(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn encode_d2b(m: &Matrix) -> Result<Vec<u8>> {
    let (rows, cols) = m.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Contract("too many rows for d2b".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Contract("too many columns for d2b".into()))?;
    let mut out = Vec::with_capacity(D2B_HEADER + 8 * rows * cols);
    out.extend_from_slice(D2B_MAGIC);
    out.push(D2B_VERSION);
    out.extend_from_slice(&rows32.to_le_bytes());
    out.extend_from_slice(&cols32.to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_d2b(bytes: &[u8]) -> Result<Matrix> {
    let parse_err = |offset: usize, message: &str| Error::Parse {
        location: format!("byte {offset}"),
        message: message.into(),
    };
    if bytes.len() < D2B_HEADER {
        return Err(parse_err(bytes.len(), "truncated header"));
    }
    if &bytes[..4] != D2B_MAGIC {
        return Err(parse_err(0, "bad magic, expected D2ST"));
    }
    if bytes[4] != D2B_VERSION {
        return Err(parse_err(4, "unsupported version"));
    }
    let rows = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(parse_err(5, "empty matrix"));
    }
    let expected = rows
        .checked_mul(cols)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(D2B_HEADER))
        .ok_or_else(|| parse_err(5, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(parse_err(
            bytes.len().min(expected),
            &format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (k, chunk) in bytes[D2B_HEADER..].chunks_exact(8).enumerate() {
        let v = f64::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                location: format!("byte {}", D2B_HEADER + 8 * k),
            });
        }
        data.push(v);
    }
    Ok(Matrix::from_shape_vec((rows, cols), data).expect("length checked"))
}
