//! IDX container: `0x00 0x00 <dtype> <ndim>`, then `ndim` big-endian u32
//! dimension sizes, then the payload. Only unsigned-byte payloads are accepted.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DTYPE_U8: u8 = 0x08;

/// Parsed IDX payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxArray {
    /// One-dimensional files hold class labels.
    Labels(Vec<usize>),
    /// Higher-rank payloads, scaled to `[0, 1]` by dividing by 255.
    Images(Tensor),
}

impl IdxArray {
    pub fn dims(&self) -> Vec<usize> {
        match self {
            IdxArray::Labels(l) => vec![l.len()],
            IdxArray::Images(t) => t.shape().to_vec(),
        }
    }
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

/// Header dimensions and payload slice of an IDX byte stream.
pub fn parse_idx_raw(bytes: &[u8]) -> Result<(Vec<usize>, &[u8])> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "truncated magic"));
    }
    for (i, &b) in bytes[..2].iter().enumerate() {
        if b != 0 {
            return Err(parse_err(i, format!("bad magic byte 0x{b:02x}, expected 0x00")));
        }
    }
    if bytes[2] != DTYPE_U8 {
        return Err(parse_err(2, format!("unsupported dtype 0x{:02x}, only 0x08 (u8) is supported", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(parse_err(3, "zero dimensions declared"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(parse_err(bytes.len(), format!("truncated header: {ndim} dimensions need {header} bytes")));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| parse_err(4, "declared size overflows"))?;
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(parse_err(bytes.len(), format!("truncated payload: expected {expected} bytes, found {}", payload.len())));
    }
    if payload.len() > expected {
        return Err(parse_err(header + expected, format!("{} trailing bytes after payload", payload.len() - expected)));
    }
    Ok((dims, payload))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let (dims, payload) = parse_idx_raw(bytes)?;
    if dims.len() == 1 {
        Ok(IdxArray::Labels(payload.iter().map(|&b| b as usize).collect()))
    } else {
        let data = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
        Ok(IdxArray::Images(Tensor::new(dims, data)?))
    }
}

/// Encodes unsigned bytes with the given dimensions as an IDX stream.
pub fn encode_idx(dims: &[usize], payload: &[u8]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if n != payload.len() || dims.is_empty() || dims.len() > 255 {
        return Err(Error::dim("encode_idx", "payload", n, payload.len()));
    }
    let mut out = vec![0, 0, DTYPE_U8, dims.len() as u8];
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::config("IDX dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_label_file() {
        let bytes = [0, 0, 0x08, 1, 0, 0, 0, 1, 7];
        assert_eq!(parse_idx(&bytes).unwrap(), IdxArray::Labels(vec![7]));
    }

    #[test]
    fn truncated_payload_offset() {
        let mut bytes = vec![0, 0, 0x08, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        bytes.extend_from_slice(&[1, 2, 3, 4, 5]);
        match parse_idx(&bytes).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, 12 + 5),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn images_scaled() {
        let bytes = encode_idx(&[1, 2, 2], &[0, 255, 51, 102]).unwrap();
        match parse_idx(&bytes).unwrap() {
            IdxArray::Images(t) => {
                assert_eq!(t.shape(), &[1, 2, 2]);
                assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_dtype_and_magic() {
        assert!(matches!(parse_idx(&[0, 0, 0x0D, 1, 0, 0, 0, 0]), Err(Error::Parse { offset: 2, .. })));
        assert!(matches!(parse_idx(&[0, 1, 0x08, 1, 0, 0, 0, 0]), Err(Error::Parse { offset: 1, .. })));
        assert!(matches!(parse_idx(&[0, 0]), Err(Error::Parse { offset: 2, .. })));
    }

    #[test]
    fn every_header_mutation_rejected() {
        let valid = encode_idx(&[2, 3], &[1, 2, 3, 4, 5, 6]).unwrap();
        assert!(parse_idx(&valid).is_ok());
        for pos in 0..4 {
            for v in 0..=255u8 {
                if v == valid[pos] {
                    continue;
                }
                let mut m = valid.clone();
                m[pos] = v;
                assert!(parse_idx(&m).is_err(), "byte {pos} = {v:#x} accepted");
            }
        }
    }
}
