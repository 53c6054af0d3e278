//! Raw little-endian `f32` tensor files: `ndim` unsigned 32-bit dimensions
//! followed by the row-major data, with no padding and no trailer.

use crate::error::{Error, Result};

pub fn encode_f32_tensor(dims: &[u32], data: impl IntoIterator<Item = f32>) -> Vec<u8> {
    let n: usize = dims.iter().map(|&d| d as usize).product();
    let mut out = Vec::with_capacity(4 * (dims.len() + n));
    for d in dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    let mut written = 0;
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
        written += 1;
    }
    debug_assert_eq!(written, n, "data length does not match dims");
    out
}

/// Decodes a tensor with exactly `ndim` dimensions. The byte length must match
/// the header exactly.
pub fn decode_f32_tensor(bytes: &[u8], ndim: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let header = 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Decode(format!(
            "{} bytes is shorter than the {header}-byte header",
            bytes.len()
        )));
    }
    let dims: Vec<usize> = bytes[..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Decode(format!("dimensions {dims:?} overflow")))?;
    let body = &bytes[header..];
    if count.checked_mul(4) != Some(body.len()) {
        return Err(Error::Decode(format!(
            "header {dims:?} needs {count} values, file has {} bytes of data",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_header_then_data() {
        let bytes = encode_f32_tensor(&[2, 1], [1.0f32, -2.5]);
        assert_eq!(&bytes[..8], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[8..12], &1.0f32.to_le_bytes());
        assert_eq!(
            decode_f32_tensor(&bytes, 2).unwrap(),
            (vec![2, 1], vec![1.0, -2.5])
        );
    }

    #[test]
    fn truncated_and_oversized_headers_fail() {
        assert!(decode_f32_tensor(&[1, 0], 2).is_err());
        let mut bytes = encode_f32_tensor(&[3], [1.0, 2.0, 3.0]);
        bytes.pop();
        assert!(decode_f32_tensor(&bytes, 1).is_err());
        let huge = [0xff; 16];
        assert!(decode_f32_tensor(&huge, 4).is_err());
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(rows in 0u32..6, cols in 0u32..6, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * cols).map(|i| (i ^ seed) as f32 * 0.25).collect();
            let bytes = encode_f32_tensor(&[rows, cols], data.iter().copied());
            let (dims, back) = decode_f32_tensor(&bytes, 2).unwrap();
            prop_assert_eq!(dims, vec![rows as usize, cols as usize]);
            prop_assert_eq!(back, data);
        }
    }
}
