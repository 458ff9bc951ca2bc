//! `VPHM0001` float grid container.
//!
//! Layout: 8-byte magic, `u32` rows, `u32` cols, then `rows * cols` `f32`
//! values in row-major order. All integers and floats are little-endian.

use std::path::Path;

use ndarray::Array2;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"VPHM0001";
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeatFileError {
    #[error("bad magic (expected VPHM0001)")]
    BadMagic,
    #[error("payload is {got} bytes, header implies {expected}")]
    Length { expected: usize, got: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("grid dimensions must be non-zero")]
    EmptyGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatFile {
    pub rows: u32,
    pub cols: u32,
    pub values: Vec<f32>,
}

impl HeatFile {
    /// Narrows to `f32`.
    pub fn from_grid(grid: &Array2<f64>) -> Self {
        Self {
            rows: grid.nrows() as u32,
            cols: grid.ncols() as u32,
            values: grid.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn to_grid(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows as usize, self.cols as usize), |(r, c)| {
            self.values[r * self.cols as usize + c] as f64
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.rows.to_le_bytes());
        out.extend_from_slice(&self.cols.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HeatFileError> {
        if bytes.len() < HEADER_LEN {
            return Err(if bytes.len() >= 8 && &bytes[..8] != MAGIC {
                HeatFileError::BadMagic
            } else {
                HeatFileError::Length {
                    expected: HEADER_LEN,
                    got: bytes.len(),
                }
            });
        }
        if &bytes[..8] != MAGIC {
            return Err(HeatFileError::BadMagic);
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let (rows, cols) = (word(8), word(12));
        if rows == 0 || cols == 0 {
            return Err(HeatFileError::EmptyGrid);
        }
        let expected = (rows as usize)
            .checked_mul(cols as usize)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN))
            .unwrap_or(usize::MAX);
        if bytes.len() != expected {
            return Err(HeatFileError::Length {
                expected,
                got: bytes.len(),
            });
        }
        let values: Vec<f32> = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(HeatFileError::NonFinite(i));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn read(path: &Path) -> Result<Self, super::StudyError> {
        let bytes = std::fs::read(path).map_err(|e| super::StudyError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|source| super::StudyError::HeatFormat {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), super::StudyError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| super::StudyError::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| super::StudyError::io(path, e))
    }
}
