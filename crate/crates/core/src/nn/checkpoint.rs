//! `ARDP` parameter checkpoints.
//!
//! Little-endian: magic "ARDP", u32 version (= 1), u32 layer count, then per
//! layer a header of u32 in-dim, u32 out-dim and u32 activation code
//! (relu 0, tanh 1, sigmoid 2, identity 3), then for every layer in order its
//! row-major `in × out` weights followed by its bias, as f64.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Activation, DenseNet, Layer, NnError};

pub const ARDP_MAGIC: [u8; 4] = *b"ARDP";
pub const ARDP_VERSION: u32 = 1;

impl DenseNet {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ARDP_MAGIC);
        out.extend_from_slice(&ARDP_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers().len() as u32).to_le_bytes());
        for l in self.layers() {
            out.extend_from_slice(&(l.in_dim() as u32).to_le_bytes());
            out.extend_from_slice(&(l.out_dim() as u32).to_le_bytes());
            out.extend_from_slice(&l.activation.code().to_le_bytes());
        }
        for l in self.layers() {
            for v in l.weights.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: String| NnError::Checkpoint(m);
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NnError> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| NnError::Checkpoint(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        let magic = take(4)?;
        if magic != ARDP_MAGIC {
            return Err(bad(format!("bad magic {magic:?}")));
        }
        let word = |s: &[u8]| u32::from_le_bytes(s.try_into().unwrap());
        let version = word(take(4)?);
        if version != ARDP_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = word(take(4)?) as usize;
        let mut shapes = Vec::with_capacity(count);
        for _ in 0..count {
            let i = word(take(4)?) as usize;
            let o = word(take(4)?) as usize;
            let code = word(take(4)?);
            let act = Activation::from_code(code)
                .ok_or_else(|| bad(format!("unknown activation code {code}")))?;
            shapes.push((i, o, act));
        }
        let mut layers = Vec::with_capacity(count);
        for (i, o, activation) in shapes {
            let mut floats = |n: usize| -> Result<Vec<f64>, NnError> {
                Ok(take(8 * n)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let w = floats(i * o)?;
            let b = floats(o)?;
            layers.push(Layer {
                weights: Array2::from_shape_vec((i, o), w).map_err(|e| bad(e.to_string()))?,
                bias: Array1::from_vec(b),
                activation,
            });
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        DenseNet::from_layers(layers)
    }
}

pub fn write_checkpoint(net: &DenseNet, path: &Path) -> Result<(), NnError> {
    fs::write(path, net.to_checkpoint_bytes()).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_checkpoint(path: &Path) -> Result<DenseNet, NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DenseNet::from_checkpoint_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn round_trip_and_layout() {
        let mut r = rng::seeded(5);
        let net = DenseNet::new(&[3, 4, 1], &[Activation::Relu, Activation::Sigmoid], &mut r);
        let bytes = net.to_checkpoint_bytes();
        assert_eq!(bytes.len(), 12 + 2 * 12 + 8 * (12 + 4 + 4 + 1));
        assert_eq!(DenseNet::from_checkpoint_bytes(&bytes).unwrap(), net);
        assert!(DenseNet::from_checkpoint_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(DenseNet::from_checkpoint_bytes(&bad).is_err());
    }
}
