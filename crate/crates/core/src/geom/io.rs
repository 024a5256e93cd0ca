//! `DPC1` sequence files: magic, little-endian `u32` frame and point
//! counts, then `f32` xyz triples in frame-major, point-major order.

use std::fs;
use std::path::Path;

use super::{DynamicPointCloud, Point};
use crate::error::{DimpError, Result};

pub const DPC1_MAGIC: &[u8; 4] = b"DPC1";

pub fn encode_dpc1(seq: &DynamicPointCloud) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + seq.coords().len() * 12);
    buf.extend_from_slice(DPC1_MAGIC);
    buf.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    buf.extend_from_slice(&(seq.points_per_frame() as u32).to_le_bytes());
    for p in seq.coords() {
        for &c in p {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    buf
}

pub fn decode_dpc1(bytes: &[u8], path: &Path) -> Result<DynamicPointCloud> {
    let corrupt = |reason: &str| DimpError::CorruptFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != DPC1_MAGIC {
        return Err(corrupt("missing DPC1 header"));
    }
    let l = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != l * n * 12 {
        return Err(corrupt("payload length does not match header"));
    }
    let coords: Vec<Point> = body
        .chunks_exact(12)
        .map(|c| {
            let f = |o: usize| f32::from_le_bytes(c[o..o + 4].try_into().unwrap()) as f64;
            [f(0), f(4), f(8)]
        })
        .collect();
    DynamicPointCloud::from_flat(l, n, coords).map_err(|e| corrupt(&e.to_string()))
}

pub fn write_dpc1(seq: &DynamicPointCloud, path: &Path) -> Result<()> {
    fs::write(path, encode_dpc1(seq)).map_err(|e| DimpError::io(path, e))
}

pub fn read_dpc1(path: &Path) -> Result<DynamicPointCloud> {
    let bytes = fs::read(path).map_err(|e| DimpError::io(path, e))?;
    decode_dpc1(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let seq = DynamicPointCloud::new(vec![vec![[1.0, 2.0, 3.0]; 2]; 3]).unwrap();
        let bytes = encode_dpc1(&seq);
        assert_eq!(&bytes[..4], b"DPC1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 3 * 2 * 12);
        assert_eq!(f32::from_le_bytes(bytes[16..20].try_into().unwrap()), 2.0);
        let back = decode_dpc1(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn truncated_payload_is_corrupt() {
        let seq = DynamicPointCloud::new(vec![vec![[0.5; 3]; 4]; 2]).unwrap();
        let bytes = encode_dpc1(&seq);
        let err = decode_dpc1(&bytes[..bytes.len() - 1], Path::new("x")).unwrap_err();
        assert!(matches!(err, DimpError::CorruptFile { .. }));
    }
}
