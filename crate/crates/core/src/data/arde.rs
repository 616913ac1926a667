//! `ARDE` embedding sidecar.
//!
//! Layout, all little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "ARDE"
//! 4       4     version (u32, = 1)
//! 8       4     rows n (u32)
//! 12      4     cols 2d (u32)
//! 16      4·n·2d  row-major f32; row i = [head_vec_i ‖ tail_vec_i]
//! ```

use std::fs;
use std::path::Path;

use super::{io_err, DataError, Dataset};

pub const ARDE_MAGIC: [u8; 4] = *b"ARDE";
pub const ARDE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Dense row-major `f32` matrix as stored in an `ARDE` file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn from_dataset(ds: &Dataset) -> Self {
        let cols = 2 * ds.dim();
        let mut data = Vec::with_capacity(ds.len() * cols);
        for inst in ds.instances() {
            data.extend_from_slice(&inst.head_vec);
            data.extend_from_slice(&inst.tail_vec);
        }
        EmbeddingMatrix {
            rows: ds.len(),
            cols,
            data,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&ARDE_MAGIC);
        out.extend_from_slice(&ARDE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < HEADER_LEN {
            return Err(DataError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != ARDE_MAGIC {
            return Err(DataError::BadMagic(magic));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(4);
        if version != ARDE_VERSION {
            return Err(DataError::UnsupportedVersion(version));
        }
        let rows = word(8) as usize;
        let cols = word(12) as usize;
        let expected = HEADER_LEN + 4 * rows * cols;
        if bytes.len() != expected {
            return Err(DataError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(EmbeddingMatrix { rows, cols, data })
    }
}

pub fn write_embeddings_bin(ds: &Dataset, path: &Path) -> Result<(), DataError> {
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    fs::write(path, EmbeddingMatrix::from_dataset(ds).to_bytes()).map_err(io_err(path))
}

pub fn read_embeddings_bin(path: &Path) -> Result<EmbeddingMatrix, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    EmbeddingMatrix::from_bytes(&bytes)
}
