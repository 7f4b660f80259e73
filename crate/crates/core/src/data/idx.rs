//! IDX tensors of unsigned bytes (the MNIST distribution format).
//!
//! Layout: `00 00 08 n`, then `n` big-endian u32 sizes, then the payload in
//! row-major order. Gzip streams (`1f 8b`) are inflated transparently.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const IDX_IMAGES: u8 = 0x03;
pub const IDX_LABELS: u8 = 0x01;
const UNSIGNED_BYTE: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: [u8; 4],
    pub dims: Vec<u32>,
}

impl IdxHeader {
    pub fn new(dims: Vec<u32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 255 {
            return Err(Error::Format { offset: 3, msg: format!("unsupported rank {}", dims.len()) });
        }
        Ok(Self { magic: [0, 0, UNSIGNED_BYTE, dims.len() as u8], dims })
    }

    pub fn payload_len(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
    }

    fn encoded_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxData {
    pub header: IdxHeader,
    pub payload: Vec<u8>,
}

/// Exact map from a pixel byte to `[−1, 1]`.
#[inline]
pub fn normalize_byte<T: Scalar>(b: u8) -> T {
    T::lit(f64::from(b) / 127.5 - 1.0)
}

impl IdxData {
    /// Images as `N × D` rows, `D` the product of the trailing dims.
    pub fn images<T: Scalar>(&self) -> Result<Tensor<T>> {
        let n = self.header.dims[0] as usize;
        if n == 0 || self.header.dims.len() < 2 {
            return Err(Error::Data(format!("IDX dims {:?} do not describe images", self.header.dims)));
        }
        let d = self.payload.len() / n;
        Tensor::new(vec![n, d], self.payload.iter().map(|&b| normalize_byte(b)).collect())
    }

    pub fn labels(&self) -> Result<Vec<u32>> {
        if self.header.dims.len() != 1 {
            return Err(Error::Data(format!("IDX dims {:?} do not describe labels", self.header.dims)));
        }
        Ok(self.payload.iter().map(|&b| u32::from(b)).collect())
    }
}

fn inflate(bytes: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| Error::Format { offset: 0, msg: format!("gzip: {e}") })?;
    Ok(out)
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        return parse_raw(&inflate(bytes)?);
    }
    parse_raw(bytes)
}

fn parse_raw(bytes: &[u8]) -> Result<IdxData> {
    if bytes.len() < 4 {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated magic: expected 4 bytes, got {}", bytes.len()),
        });
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {:02x?}", &bytes[..4]) });
    }
    if bytes[2] != UNSIGNED_BYTE {
        return Err(Error::Format {
            offset: 2,
            msg: format!("unsupported element type 0x{:02x}, expected unsigned byte 0x08", bytes[2]),
        });
    }
    let rank = bytes[3] as usize;
    if rank == 0 {
        return Err(Error::Format { offset: 3, msg: "rank 0".into() });
    }
    let header_end = 4 + 4 * rank;
    if bytes.len() < header_end {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated header: expected {header_end} bytes, got {}", bytes.len()),
        });
    }
    let dims: Vec<u32> = bytes[4..header_end]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let header = IdxHeader::new(dims)?;
    let expected = header
        .payload_len()
        .ok_or_else(|| Error::Format { offset: 4, msg: "payload size overflows".into() })?;
    let actual = bytes.len() - header_end;
    if actual < expected {
        return Err(Error::Format {
            offset: bytes.len(),
            msg: format!("truncated payload: expected {expected} bytes, got {actual}"),
        });
    }
    if actual > expected {
        return Err(Error::Format {
            offset: header_end + expected,
            msg: format!("{} trailing bytes after payload", actual - expected),
        });
    }
    Ok(IdxData { header, payload: bytes[header_end..].to_vec() })
}

pub fn write_idx(header: &IdxHeader, payload: &[u8]) -> Result<Vec<u8>> {
    if header.payload_len() != Some(payload.len()) {
        return Err(Error::Data(format!(
            "IDX dims {:?} need {:?} bytes, payload has {}",
            header.dims,
            header.payload_len(),
            payload.len()
        )));
    }
    let mut out = Vec::with_capacity(header.encoded_len() + payload.len());
    out.extend_from_slice(&header.magic);
    for d in &header.dims {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn read_idx_file(path: &Path) -> Result<IdxData> {
    parse_idx(&std::fs::read(path)?)
}
