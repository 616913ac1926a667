//! Deterministic hashed context features, a stand-in for encoder outputs at
//! the entity start markers.

use super::{DataError, Span};

const WINDOW_RADIUS: usize = 1;

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for b in *part {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn window_vector(tokens: &[String], start: usize, dim: usize) -> Vec<f32> {
    let mut v = vec![0f64; dim];
    let lo = start.saturating_sub(WINDOW_RADIUS);
    let hi = (start + WINDOW_RADIUS).min(tokens.len().saturating_sub(1));
    for pos in lo..=hi {
        let offset = (pos as i64 - start as i64).to_le_bytes();
        let h = fnv1a(&[tokens[pos].as_bytes(), &offset]);
        let bucket = (h % dim as u64) as usize;
        let sign = if (h >> 63) & 1 == 1 { -1.0 } else { 1.0 };
        v[bucket] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter().map(|x| (x / norm) as f32).collect()
    } else {
        // every window token cancelled out; fall back to a fixed unit vector
        let mut e = vec![0f32; dim];
        e[0] = 1.0;
        e
    }
}

/// Hashes the three tokens centred on each span start into `dim` signed
/// buckets and L2-normalises. Returns `(head_vec, tail_vec)`.
pub fn hash_featurize(
    tokens: &[String],
    head_span: Span,
    tail_span: Span,
    dim: usize,
) -> Result<(Vec<f32>, Vec<f32>), DataError> {
    if dim < 8 {
        return Err(DataError::DimTooSmall(dim));
    }
    for span in [head_span, tail_span] {
        if span.start() >= span.end() || span.end() > tokens.len() {
            return Err(DataError::InvalidInstance {
                id: String::new(),
                message: format!(
                    "span ({}, {}) invalid for {} tokens",
                    span.0,
                    span.1,
                    tokens.len()
                ),
            });
        }
    }
    Ok((
        window_vector(tokens, head_span.start(), dim),
        window_vector(tokens, tail_span.start(), dim),
    ))
}
