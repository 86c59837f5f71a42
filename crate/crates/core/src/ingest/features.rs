//! Feature matrices: the `T2TFEAT` binary container and CSV.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! "T2TFEAT\0"            8 bytes
//! rows                   u64
//! dim                    u64
//! values                 rows * dim f32, row-major
//! row ids                rows * (u64 byte length, UTF-8 bytes)
//! ```
//!
//! CSV rows carry the row id in the first column and the feature values in
//! the remaining columns; there is no header row.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"T2TFEAT\0";

/// Row-major feature matrix with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
    row_ids: Vec<String>,
}

impl FeatureMatrix {
    /// Checks `rows >= 1`, `dim >= 1`, `data.len() == rows * dim`, finite
    /// entries and unique row ids.
    pub fn new(dim: usize, data: Vec<f64>, row_ids: Vec<String>) -> Result<Self> {
        Self::build(dim, data, row_ids, "<memory>")
    }

    fn build(dim: usize, data: Vec<f64>, row_ids: Vec<String>, origin: &str) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation(origin, "header", "dim must be positive"));
        }
        if row_ids.is_empty() {
            return Err(Error::validation(origin, "header", "matrix has no rows"));
        }
        if data.len() != row_ids.len() * dim {
            return Err(Error::validation(
                origin,
                "payload",
                format!(
                    "{} values for {} rows of dim {dim}",
                    data.len(),
                    row_ids.len()
                ),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let row = pos / dim;
            return Err(Error::validation(
                origin,
                format!("row {row} (id {})", row_ids[row]),
                format!("column {} is not finite", pos % dim),
            ));
        }
        let mut seen = HashSet::new();
        for (i, id) in row_ids.iter().enumerate() {
            if !seen.insert(id.as_str()) {
                return Err(Error::validation(
                    origin,
                    format!("row {i} (id {id})"),
                    "duplicate row id",
                ));
            }
        }
        Ok(FeatureMatrix { dim, data, row_ids })
    }

    pub fn rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_iter(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }
}

/// Loads a binary container if the file starts with [`FEATURE_MAGIC`],
/// otherwise parses it as CSV.
pub fn load_feature_matrix(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let origin = path.display().to_string();
    if bytes.starts_with(FEATURE_MAGIC) {
        read_feature_binary(&bytes, &origin)
    } else {
        let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
            origin: origin.clone(),
            message: format!("neither a T2TFEAT container nor UTF-8 CSV: {e}"),
        })?;
        parse_feature_csv(&text, &origin)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, expected_total: u64) -> Result<&'a [u8]> {
        match self.pos.checked_add(n) {
            Some(end) if end <= self.bytes.len() => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            _ => Err(Error::Truncated {
                origin: self.origin.to_string(),
                expected: expected_total,
                actual: self.bytes.len() as u64,
            }),
        }
    }

    fn u64(&mut self, expected_total: u64) -> Result<u64> {
        let b = self.take(8, expected_total)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn read_feature_binary(bytes: &[u8], origin: &str) -> Result<FeatureMatrix> {
    if !bytes.starts_with(FEATURE_MAGIC) {
        return Err(Error::Parse {
            origin: origin.to_string(),
            message: "missing T2TFEAT magic".into(),
        });
    }
    let mut cur = Cursor {
        bytes,
        pos: 8,
        origin,
    };
    let rows = cur.u64(24)?;
    let dim = cur.u64(24)?;
    let values_len = rows
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::validation(origin, "header", "rows * dim overflows"))?;
    // ids need at least their length prefixes
    let min_total = 24u64
        .saturating_add(values_len)
        .saturating_add(rows.saturating_mul(8));
    if (bytes.len() as u64) < min_total {
        return Err(Error::Truncated {
            origin: origin.to_string(),
            expected: min_total,
            actual: bytes.len() as u64,
        });
    }
    let payload = cur.take(values_len as usize, min_total)?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let mut row_ids = Vec::with_capacity(rows as usize);
    for i in 0..rows {
        let len = cur.u64(min_total)?;
        let raw = cur.take(usize::try_from(len).unwrap_or(usize::MAX), min_total + len)?;
        let id = std::str::from_utf8(raw).map_err(|e| {
            Error::validation(origin, format!("row id {i}"), format!("invalid UTF-8: {e}"))
        })?;
        row_ids.push(id.to_string());
    }
    if cur.pos != bytes.len() {
        return Err(Error::Parse {
            origin: origin.to_string(),
            message: format!("{} trailing bytes after row ids", bytes.len() - cur.pos),
        });
    }
    FeatureMatrix::build(dim as usize, data, row_ids, origin)
}

/// Encodes a matrix as a `T2TFEAT` container. Values are narrowed to f32.
pub fn encode_feature_binary(m: &FeatureMatrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(24 + m.data.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.dim as u64).to_le_bytes());
    for (i, v) in m.data.iter().enumerate() {
        let f = *v as f32;
        if !f.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "row {} value {v} does not fit in f32",
                i / m.dim
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    for id in &m.row_ids {
        out.extend_from_slice(&(id.len() as u64).to_le_bytes());
        out.extend_from_slice(id.as_bytes());
    }
    Ok(out)
}

pub fn write_feature_binary(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_feature_binary(m)?).map_err(|e| Error::io(path, e))
}

pub fn parse_feature_csv(text: &str, origin: &str) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut dim = None;
    let mut data = Vec::new();
    let mut row_ids = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(Error::validation(
                origin,
                format!("row {row}"),
                "expected a row id followed by at least one value",
            ));
        }
        dim.get_or_insert(record.len() - 1);
        row_ids.push(record[0].to_string());
        for (col, field) in record.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                origin: origin.to_string(),
                message: format!("row {row} column {}: `{field}` is not a number", col + 1),
            })?;
            data.push(v);
        }
    }
    FeatureMatrix::build(dim.unwrap_or(1), data, row_ids, origin)
}

pub fn feature_csv_string(m: &FeatureMatrix) -> String {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for (id, row) in m.row_ids.iter().zip(m.row_iter()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn write_feature_csv(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, feature_csv_string(m)).map_err(|e| Error::io(path, e))
}
