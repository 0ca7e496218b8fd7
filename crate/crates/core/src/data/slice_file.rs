//! `.mrsl` slice files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MRSL"
//! 4       1     version (1)
//! 5       1     dtype: 1 = real f64, 2 = complex f64 (re, im interleaved)
//! 6       4     height, u32 little-endian
//! 10      4     width, u32 little-endian
//! 14      ...   row-major payload, little-endian f64
//! ```

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::{read_file, write_atomic};
use crate::numcore::{magnitude, ComplexImage, RealImage};

pub const MAGIC: &[u8; 4] = b"MRSL";
pub const VERSION: u8 = 1;
const DTYPE_REAL: u8 = 1;
const DTYPE_COMPLEX: u8 = 2;
const HEADER_LEN: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum SliceData {
    Real(RealImage),
    Complex(ComplexImage),
}

impl SliceData {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            SliceData::Real(img) => img.dims(),
            SliceData::Complex(img) => img.dims(),
        }
    }

    /// Magnitude image; real slices are taken as their absolute value.
    pub fn magnitude(&self) -> RealImage {
        match self {
            SliceData::Real(img) => img.map(f64::abs),
            SliceData::Complex(img) => magnitude(img),
        }
    }

    /// Complex view; real slices get a zero imaginary part.
    pub fn to_complex(&self) -> ComplexImage {
        match self {
            SliceData::Real(img) => img.to_complex(),
            SliceData::Complex(img) => img.clone(),
        }
    }
}

pub fn encode_slice(slice: &SliceData) -> Vec<u8> {
    let (h, w) = slice.dims();
    let (dtype, n_values) = match slice {
        SliceData::Real(_) => (DTYPE_REAL, h * w),
        SliceData::Complex(_) => (DTYPE_COMPLEX, 2 * h * w),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * n_values);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(dtype);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    match slice {
        SliceData::Real(img) => {
            for v in img.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        SliceData::Complex(img) => {
            for c in img.data() {
                out.extend_from_slice(&c.re.to_le_bytes());
                out.extend_from_slice(&c.im.to_le_bytes());
            }
        }
    }
    out
}

/// Parse a slice; `origin` is only used in error messages.
pub fn decode_slice(bytes: &[u8], origin: &Path) -> Result<SliceData> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "bad magic, expected MRSL"));
    }
    if bytes[4] != VERSION {
        return Err(Error::format(origin, format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let h = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let per_pixel = match dtype {
        DTYPE_REAL => 8,
        DTYPE_COMPLEX => 16,
        other => return Err(Error::format(origin, format!("unknown dtype code {other}"))),
    };
    let payload = &bytes[HEADER_LEN..];
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(per_pixel))
        .ok_or_else(|| Error::format(origin, "dimensions overflow"))?;
    if payload.len() != expected {
        return Err(Error::format(
            origin,
            format!("payload is {} bytes, expected {expected} for {h}x{w}", payload.len()),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let wrap = |e: Error| Error::format(origin, e.to_string());
    Ok(match dtype {
        DTYPE_REAL => SliceData::Real(RealImage::new(h, w, values).map_err(wrap)?),
        _ => SliceData::Complex(
            ComplexImage::new(
                h,
                w,
                values
                    .chunks_exact(2)
                    .map(|p| Complex64::new(p[0], p[1]))
                    .collect(),
            )
            .map_err(wrap)?,
        ),
    })
}

pub fn write_slice(path: &Path, slice: &SliceData) -> Result<()> {
    write_atomic(path, &encode_slice(slice))
}

pub fn read_slice(path: &Path) -> Result<SliceData> {
    decode_slice(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn finite() -> impl Strategy<Value = f64> {
        prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL
    }

    proptest! {
        #[test]
        fn real_round_trip_is_bit_exact(h in 1usize..6, w in 1usize..6, seed in prop::collection::vec(finite(), 36)) {
            let img = RealImage::new(h, w, seed[..h * w].to_vec()).unwrap();
            let bytes = encode_slice(&SliceData::Real(img.clone()));
            prop_assert_eq!(bytes.len(), 14 + 8 * h * w);
            let back = decode_slice(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode_slice(&back), bytes);
        }

        #[test]
        fn complex_round_trip_is_bit_exact(h in 1usize..5, w in 1usize..5, seed in prop::collection::vec(finite(), 32)) {
            let data = (0..h * w).map(|i| Complex64::new(seed[2 * i], seed[2 * i + 1])).collect();
            let img = ComplexImage::new(h, w, data).unwrap();
            let bytes = encode_slice(&SliceData::Complex(img));
            let back = decode_slice(&bytes, Path::new("mem")).unwrap();
            prop_assert_eq!(encode_slice(&back), bytes);
        }
    }

    #[test]
    fn rejects_malformed_input() {
        let img = SliceData::Real(RealImage::zeros(2, 2));
        let good = encode_slice(&img);
        let p = Path::new("x.mrsl");
        assert!(decode_slice(&good[..10], p).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode_slice(&bad, p).is_err());
        let mut bad = good.clone();
        bad[5] = 9;
        assert!(decode_slice(&bad, p).is_err());
        assert!(decode_slice(&good[..good.len() - 1], p).is_err());
        let err = decode_slice(&good[..good.len() - 1], p).unwrap_err().to_string();
        assert!(err.contains("x.mrsl"), "{err}");
    }

    #[test]
    fn header_layout() {
        let bytes = encode_slice(&SliceData::Complex(ComplexImage::zeros(3, 5)));
        assert_eq!(&bytes[..4], b"MRSL");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 2);
        assert_eq!(&bytes[6..10], &3u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &5u32.to_le_bytes());
        assert_eq!(bytes.len(), 14 + 16 * 15);
    }
}
