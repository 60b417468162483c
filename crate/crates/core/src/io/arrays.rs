//! Homography arrays (`homo_v1` text) and fusion maps (`FMP1` binary).
//!
//! ```text
//! homo_v1,<patches>,<width>,<height>
//! h00,h01,h02,h10,h11,h12,h20,h21,h22     # one line per patch, top first
//! ```
//!
//! `FMP1` layout, little-endian: magic, u32 level, u32 width, u32 height,
//! f64 lower, f64 upper, then `width * height` f64 values row-major.

use std::fmt::Write as _;

use nalgebra::Matrix3;

use crate::error::{ensure, Error, Result};
use crate::fusion::FusionMap;
use crate::grid::Grid;
use crate::gyro_field::{Homography, HomographyArray};
use crate::io::text::{arity, field, finite, records, utf8};

pub const HOMOGRAPHY_HEADER: &str = "homo_v1";
pub const MAP_MAGIC: &[u8; 4] = b"FMP1";
const MAP_HEADER_LEN: usize = 4 + 12 + 16;

pub fn read_homography_array(text: &str) -> Result<HomographyArray> {
    let (hline, header, rest) = records(text)?;
    if header.first() != Some(&HOMOGRAPHY_HEADER) || header.len() != 4 {
        return Err(Error::format(hline, format!("expected header `{HOMOGRAPHY_HEADER},patches,width,height`")));
    }
    let n: usize = field(hline, "patches", header[1])?;
    let w: usize = field(hline, "width", header[2])?;
    let h: usize = field(hline, "height", header[3])?;
    if n == 0 || w == 0 || h == 0 {
        return Err(Error::format(hline, "patches, width and height must be positive"));
    }
    let mut hs = Vec::new();
    let mut last = hline;
    for (line, f) in rest {
        last = line;
        if hs.len() == n {
            return Err(Error::format(line, format!("more than the declared {n} patches")));
        }
        arity(line, &f, &[9])?;
        let mut m = [0.0; 9];
        for (k, raw) in f.iter().enumerate() {
            m[k] = finite(line, "homography entry", raw)?;
        }
        let hm = Homography::new(Matrix3::from_row_slice(&m)).map_err(|e| Error::format(line, e.to_string()))?;
        hs.push(hm);
    }
    if hs.len() != n {
        return Err(Error::format(last, format!("declared {n} patches, found {}", hs.len())));
    }
    HomographyArray::new(hs, w, h)
}

pub fn read_homography_array_bytes(bytes: &[u8]) -> Result<HomographyArray> {
    read_homography_array(utf8(bytes)?)
}

pub fn write_homography_array(arr: &HomographyArray) -> String {
    let mut out = format!("{HOMOGRAPHY_HEADER},{},{},{}\n", arr.len(), arr.width, arr.height);
    for h in &arr.homographies {
        let m = h.matrix();
        let entries: Vec<String> = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:?}", m[(r, c)]))
            .collect();
        let _ = writeln!(out, "{}", entries.join(","));
    }
    out
}

pub fn write_fusion_map(m: &FusionMap) -> Result<Vec<u8>> {
    let to_u32 = |n: usize| {
        u32::try_from(n).map_err(|_| Error::Argument(format!("{n} exceeds the map file range")))
    };
    let mut out = Vec::with_capacity(MAP_HEADER_LEN + 8 * m.grid.data.len());
    out.extend_from_slice(MAP_MAGIC);
    out.extend_from_slice(&to_u32(m.level)?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.grid.width)?.to_le_bytes());
    out.extend_from_slice(&to_u32(m.grid.height)?.to_le_bytes());
    out.extend_from_slice(&m.lower.to_le_bytes());
    out.extend_from_slice(&m.upper.to_le_bytes());
    for v in &m.grid.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn read_fusion_map(bytes: &[u8]) -> Result<FusionMap> {
    if bytes.len() < MAP_HEADER_LEN {
        return Err(Error::Length {
            expected: MAP_HEADER_LEN,
            found: bytes.len(),
        });
    }
    if &bytes[..4] != MAP_MAGIC {
        return Err(Error::format(0, "bad fusion map magic (expected FMP1)"));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().expect("8 bytes"));
    let (level, w, h) = (u32_at(4), u32_at(8), u32_at(12));
    let (lower, upper) = (f64_at(16), f64_at(24));
    ensure(w > 0 && h > 0, || format!("invalid map dimensions {w}x{h}"))
        .map_err(|e| Error::format(0, e.to_string()))?;
    if !(0.0 <= lower && lower <= upper && upper <= 1.0) {
        return Err(Error::format(0, format!("invalid map bounds [{lower}, {upper}]")));
    }
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(MAP_HEADER_LEN))
        .ok_or_else(|| Error::format(0, "map dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::Length {
            expected,
            found: bytes.len(),
        });
    }
    let data: Vec<f64> = (0..w * h).map(|i| f64_at(MAP_HEADER_LEN + 8 * i)).collect();
    if let Some(i) = data.iter().position(|v| !(lower <= *v && *v <= upper)) {
        return Err(Error::format(0, format!("map value at pixel ({}, {}) outside its bounds", i % w, i / w)));
    }
    Ok(FusionMap {
        grid: Grid { width: w, height: h, data },
        level,
        lower,
        upper,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn homography_array_round_trip() {
        let hs = vec![
            Homography::new(Matrix3::new(1.01, 0.002, 3.5, -0.001, 0.99, -2.25, 1e-6, 2e-7, 1.0)).unwrap(),
            Homography::translation(0.1, 0.2),
        ];
        let arr = HomographyArray::new(hs, 800, 600).unwrap();
        let text = write_homography_array(&arr);
        let back = read_homography_array(&text).unwrap();
        assert_eq!(back, arr);
        assert_eq!(write_homography_array(&back), text);
    }

    #[test]
    fn homography_array_errors() {
        assert!(read_homography_array("homo_v1,2,8,8\n1,0,0,0,1,0,0,0,1\n").is_err());
        assert!(matches!(
            read_homography_array("homo_v1,1,8,8\n1,0,0,0,1,0,0,0\n"),
            Err(Error::Format { line: 2, .. })
        ));
        assert!(read_homography_array("homo_v1,1,8,8\n0,0,0,0,0,0,0,0,0\n").is_err());
    }

    #[test]
    fn fusion_map_round_trip() {
        let m = FusionMap {
            grid: Grid::from_fn(3, 2, |x, y| 0.5 + 0.1 * x as f64 - 0.05 * y as f64),
            level: 2,
            lower: 0.4,
            upper: 0.9,
        };
        let bytes = write_fusion_map(&m).unwrap();
        assert_eq!(read_fusion_map(&bytes).unwrap(), m);
        assert!(matches!(read_fusion_map(&bytes[..bytes.len() - 1]), Err(Error::Length { .. })));
        assert!(read_fusion_map(b"FMP0").is_err());
    }
}
