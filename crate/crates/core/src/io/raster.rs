//! 8-bit PNG images (gray or RGB).

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{ensure, Error, Result};
use crate::grid::Image;

fn format_error(message: impl std::fmt::Display) -> Error {
    Error::format(0, message.to_string())
}

/// Decodes PNG bytes. Gray and gray+alpha load as 1 channel, everything else as
/// RGB; alpha is dropped and 16-bit samples are reduced to 8 bits.
pub fn decode_png(bytes: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(format_error)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(match img {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageLuma16(_)
        | DynamicImage::ImageLumaA16(_) => Image {
            width: w,
            height: h,
            channels: 1,
            data: img.to_luma8().into_raw().into_iter().map(f64::from).collect(),
        },
        _ => Image {
            width: w,
            height: h,
            channels: 3,
            data: img.to_rgb8().into_raw().into_iter().map(f64::from).collect(),
        },
    })
}

/// Samples are rounded and clamped to `0..=255`.
pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    ensure(img.channels == 1 || img.channels == 3, || {
        format!("cannot encode {} channels; use 1 or 3", img.channels)
    })?;
    ensure(img.width > 0 && img.height > 0, || "cannot encode an empty image".into())?;
    let raw: Vec<u8> = img.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = if img.channels == 1 {
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size matches"))
    } else {
        DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("buffer size matches"))
    };
    let mut out = Cursor::new(Vec::new());
    dynamic
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Argument(format!("PNG encoding failed: {e}")))?;
    Ok(out.into_inner())
}

fn check_extension(path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => Ok(()),
        _ => Err(format_error("unsupported raster format; only .png is supported").in_file(path)),
    }
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    check_extension(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    decode_png(&bytes).map_err(|e| e.in_file(path))
}

pub fn save_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    check_extension(path)?;
    std::fs::write(path, encode_png(img)?).map_err(|e| Error::from(e).in_file(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_and_rgb_round_trip() {
        let gray = Image {
            width: 5,
            height: 3,
            channels: 1,
            data: (0..15).map(|i| (i * 17) as f64).collect(),
        };
        assert_eq!(decode_png(&encode_png(&gray).unwrap()).unwrap(), gray);
        let rgb = Image {
            width: 2,
            height: 2,
            channels: 3,
            data: (0..12).map(|i| (255 - i * 20) as f64).collect(),
        };
        assert_eq!(decode_png(&encode_png(&rgb).unwrap()).unwrap(), rgb);
    }

    #[test]
    fn luma_of_red() {
        let red = Image {
            width: 1,
            height: 1,
            channels: 3,
            data: vec![255.0, 0.0, 0.0],
        };
        assert_eq!(red.luma().get(0, 0).round(), 76.0);
    }

    #[test]
    fn rejects_other_formats() {
        assert!(matches!(decode_png(b"GIF89a"), Err(Error::Format { .. })));
        assert!(load_image("frame.jpg").is_err());
    }
}
