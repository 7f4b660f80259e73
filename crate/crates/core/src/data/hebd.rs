//! Little-endian container for labelled datasets.
//!
//! | field   | type          |
//! |---------|---------------|
//! | magic   | `b"HEBD"`     |
//! | version | u32           |
//! | N       | u64           |
//! | D       | u64           |
//! | C       | u32           |
//! | rows    | N·D × f64     |
//! | labels  | N × u32       |
//! | styles  | N × f64       |
//!
//! Datasets without a style factor are written with zero styles.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::LabeledDataset;

pub const HEBD_MAGIC: &[u8; 4] = b"HEBD";
pub const HEBD_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 4;

pub fn write_hebd<T: Scalar>(ds: &LabeledDataset<T>) -> Vec<u8> {
    let n = ds.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (8 * ds.dim() + 12));
    out.extend_from_slice(HEBD_MAGIC);
    out.extend_from_slice(&HEBD_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u64).to_le_bytes());
    out.extend_from_slice(&ds.n_classes.to_le_bytes());
    for v in ds.raw() {
        out.extend_from_slice(&v.as_f64().to_le_bytes());
    }
    for l in &ds.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    for i in 0..n {
        let s = ds.styles.as_ref().map_or(0.0, |s| s[i].as_f64());
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            offset: self.pos,
            msg: format!("truncated {what}: expected {n} bytes, got {}", self.bytes.len() - self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn read_hebd<T: Scalar>(bytes: &[u8]) -> Result<LabeledDataset<T>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.array::<4>("magic")?;
    if &magic != HEBD_MAGIC {
        return Err(Error::Format { offset: 0, msg: format!("bad magic {magic:02x?}") });
    }
    let version = u32::from_le_bytes(c.array("version")?);
    if version != HEBD_VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let n = u64::from_le_bytes(c.array("N")?) as usize;
    let d = u64::from_le_bytes(c.array("D")?) as usize;
    let classes = u32::from_le_bytes(c.array("C")?);
    let cells = n
        .checked_mul(d)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| Error::Format { offset: 8, msg: "N·D overflows".into() })?;
    let rows = c
        .take(cells, "rows")?
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("chunk of 8"))))
        .collect();
    let labels = c
        .take(4 * n, "labels")?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("chunk of 4")))
        .collect();
    let styles = c
        .take(8 * n, "styles")?
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().expect("chunk of 8"))))
        .collect();
    if c.pos != bytes.len() {
        return Err(Error::Format { offset: c.pos, msg: format!("{} trailing bytes", bytes.len() - c.pos) });
    }
    LabeledDataset::new(d, rows, labels, classes)?.with_styles(styles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = SyntheticSpec { n_samples: 50, ..Default::default() };
        let (mut ds, _) = gen_synthetic::<f64>(&spec).unwrap();
        ds.locals = None;
        let bytes = write_hebd(&ds);
        assert_eq!(&bytes[..4], b"HEBD");
        let back = read_hebd::<f64>(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(write_hebd(&back), bytes);
    }

    #[test]
    fn truncation_and_version_errors() {
        let spec = SyntheticSpec { n_samples: 5, ..Default::default() };
        let (ds, _) = gen_synthetic::<f64>(&spec).unwrap();
        let mut bytes = write_hebd(&ds);
        let full = bytes.len();
        bytes.truncate(full - 3);
        assert!(matches!(read_hebd::<f64>(&bytes), Err(Error::Format { .. })));
        let mut bytes = write_hebd(&ds);
        bytes[4] = 9;
        assert!(matches!(read_hebd::<f64>(&bytes), Err(Error::Format { offset: 4, .. })));
    }
}
