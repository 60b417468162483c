//! `.flo` flow files: little-endian f32 magic `202021.25`, i32 width, i32 height,
//! then row-major interleaved f32 `(u, v)`.
//!
//! Components with magnitude above [`UNKNOWN_FLOW_THRESHOLD`] mark unlabeled
//! pixels. Their raw values are kept, so writing a read field is lossless.

use crate::error::{ensure, Error, Result};
use crate::grid::{Grid, ValidMask};
use crate::gyro_field::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;
pub const UNKNOWN_FLOW_THRESHOLD: f64 = 1e9;
const HEADER_LEN: usize = 12;

/// Parsed flow with the validity mask derived from the sentinel.
#[derive(Debug, Clone, PartialEq)]
pub struct FloFile {
    pub flow: FlowField,
    pub valid: ValidMask,
}

pub fn read_flo(bytes: &[u8]) -> Result<FloFile> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(Error::format(0, "bad .flo magic (expected 202021.25 little-endian)"));
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(Error::format(0, format!("invalid .flo dimensions {w}x{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::format(0, format!(".flo dimensions {w}x{h} overflow")))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let n = w * h;
    let (mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let off = HEADER_LEN + 8 * i;
        let pu = f32::from_le_bytes(word(off)) as f64;
        let pv = f32::from_le_bytes(word(off + 4)) as f64;
        if !pu.is_finite() || !pv.is_finite() {
            return Err(Error::format(0, format!("non-finite flow at pixel ({}, {})", i % w, i / w)));
        }
        valid.push(pu.abs() <= UNKNOWN_FLOW_THRESHOLD && pv.abs() <= UNKNOWN_FLOW_THRESHOLD);
        u.push(pu);
        v.push(pv);
    }
    Ok(FloFile {
        flow: FlowField::from_grids(
            Grid { width: w, height: h, data: u },
            Grid { width: w, height: h, data: v },
        )?,
        valid: ValidMask {
            width: w,
            height: h,
            data: valid,
        },
    })
}

/// Values are narrowed to f32; they must stay finite after narrowing.
pub fn write_flo(f: &FlowField) -> Result<Vec<u8>> {
    ensure(f.width > 0 && f.height > 0, || "cannot write an empty flow field".into())?;
    let to_i32 = |n: usize| {
        i32::try_from(n).map_err(|_| Error::Argument(format!("dimension {n} exceeds the .flo range")))
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * f.width * f.height);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&to_i32(f.width)?.to_le_bytes());
    out.extend_from_slice(&to_i32(f.height)?.to_le_bytes());
    for (i, (u, v)) in f.u.data.iter().zip(&f.v.data).enumerate() {
        let (u, v) = (*u as f32, *v as f32);
        ensure(u.is_finite() && v.is_finite(), || {
            format!("flow at pixel ({}, {}) is not representable as f32", i % f.width, i / f.width)
        })?;
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Writes the field with invalid pixels replaced by the `1e10` sentinel.
pub fn write_flo_masked(f: &FlowField, valid: &ValidMask) -> Result<Vec<u8>> {
    ensure(valid.width == f.width && valid.height == f.height, || {
        "mask and flow differ in size".into()
    })?;
    let mut masked = f.clone();
    for (i, ok) in valid.data.iter().enumerate() {
        if !ok {
            masked.u.data[i] = 1e10;
            masked.v.data[i] = 1e10;
        }
    }
    write_flo(&masked)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_is_twenty_bytes() {
        let bytes = write_flo(&FlowField::zeros(1, 1)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(&bytes[..4], &[0x50, 0x49, 0x45, 0x48]);
    }

    #[test]
    fn hand_assembled_two_by_one() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PIEH");
        bytes.extend_from_slice(&[2, 0, 0, 0, 1, 0, 0, 0]);
        for v in [1.5f32, -2.0, 0.25, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let flo = read_flo(&bytes).unwrap();
        assert_eq!((flo.flow.width, flo.flow.height), (2, 1));
        assert_eq!(flo.flow.at(0, 0), (1.5, -2.0));
        assert_eq!(flo.flow.at(1, 0), (0.25, 3.0));
        assert_eq!(flo.valid.count(), 2);
    }

    #[test]
    fn round_trip_and_sentinel() {
        let f = FlowField::from_fn(7, 5, |x, y| (x as f32 as f64 * 0.125 - 1.0, (y as f32 * -3.7) as f64));
        let mut valid = ValidMask::all(7, 5);
        valid.data[3] = false;
        let back = read_flo(&write_flo_masked(&f, &valid).unwrap()).unwrap();
        assert_eq!(back.valid, valid);
        let plain = read_flo(&write_flo(&f).unwrap()).unwrap();
        assert_eq!(plain.flow, f);
        assert_eq!(write_flo(&back.flow).unwrap(), write_flo_masked(&f, &valid).unwrap());
    }

    #[test]
    fn structured_errors() {
        assert!(matches!(read_flo(b"PIE"), Err(Error::Length { .. })));
        assert!(matches!(read_flo(b"XXXX\x01\0\0\0\x01\0\0\0"), Err(Error::Format { .. })));
        let mut bytes = write_flo(&FlowField::zeros(2, 2)).unwrap();
        bytes.pop();
        assert!(matches!(read_flo(&bytes), Err(Error::Length { expected: 44, found: 43 })));
        let mut huge = b"PIEH".to_vec();
        huge.extend_from_slice(&i32::MAX.to_le_bytes());
        huge.extend_from_slice(&i32::MAX.to_le_bytes());
        assert!(read_flo(&huge).is_err());
    }
}
