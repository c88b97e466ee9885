//! Binary embedding matrix: `BGM1` magic, little-endian u32 row and column
//! counts, then `n*d` little-endian f32 values in row-major order. Row ids live
//! in a JSON sidecar next to the matrix (`<file>.ids.json`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MATRIX_MAGIC: &[u8; 4] = b"BGM1";
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub n: usize,
    pub d: usize,
    pub data: Vec<f32>,
    pub row_ids: Vec<String>,
}

impl MatrixFile {
    pub fn new(n: usize, d: usize, data: Vec<f32>, row_ids: Vec<String>) -> Result<Self> {
        let m = MatrixFile {
            n,
            d,
            data,
            row_ids,
        };
        m.check()?;
        Ok(m)
    }

    pub fn from_matrix(m: &Matrix, row_ids: Vec<String>) -> Result<Self> {
        Self::new(m.n_rows(), m.n_cols(), m.to_f32(), row_ids)
    }

    pub fn to_matrix(&self) -> Matrix {
        let data = self.data.iter().map(|&v| v as f64).collect();
        Matrix::from_vec(self.n, self.d, data).expect("checked on construction")
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    fn check(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid(format!(
                "matrix must have at least one row and column (got {}x{})",
                self.n, self.d
            )));
        }
        if self.n > u32::MAX as usize || self.d > u32::MAX as usize {
            return Err(Error::invalid("matrix dimensions exceed u32"));
        }
        if self.data.len() != self.n * self.d {
            return Err(Error::DimensionMismatch {
                expected: self.n * self.d,
                found: self.data.len(),
            });
        }
        if self.row_ids.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: self.row_ids.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        buf.extend_from_slice(MATRIX_MAGIC);
        buf.extend_from_slice(&(self.n as u32).to_le_bytes());
        buf.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    /// Decodes the binary payload; row ids are filled with empty placeholders.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
        let fail = |reason: String| Error::MatrixFormat {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < HEADER_LEN {
            return Err(fail(format!("file is {} bytes, shorter than header", bytes.len())));
        }
        if &bytes[..4] != MATRIX_MAGIC {
            return Err(fail("bad magic, expected BGM1".into()));
        }
        let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = HEADER_LEN + 4 * n * d;
        if bytes.len() != expected {
            return Err(fail(format!(
                "header declares {n}x{d} ({expected} bytes) but file has {} bytes",
                bytes.len()
            )));
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((n, d, data))
    }
}

pub fn ids_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".ids.json");
    PathBuf::from(s)
}

pub fn write_matrix(path: &Path, m: &MatrixFile) -> Result<()> {
    m.check()?;
    fs::write(path, m.encode()).map_err(|e| Error::io(path, e))?;
    let ids = serde_json::to_vec(&m.row_ids).map_err(|e| Error::json("row ids", e))?;
    let side = ids_path(path);
    fs::write(&side, ids).map_err(|e| Error::io(side, e))
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (n, d, data) = MatrixFile::decode(&bytes, path)?;
    let side = ids_path(path);
    let raw = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let row_ids: Vec<String> =
        serde_json::from_slice(&raw).map_err(|e| Error::json(side.display().to_string(), e))?;
    if row_ids.len() != n {
        return Err(Error::MatrixFormat {
            path: path.to_path_buf(),
            reason: format!("{} row ids for {n} rows", row_ids.len()),
        });
    }
    Ok(MatrixFile {
        n,
        d,
        data,
        row_ids,
    })
}
