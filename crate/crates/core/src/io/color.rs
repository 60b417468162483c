//! Flow and error visualization.

use crate::error::{ensure, Result};
use crate::grid::{Grid, Image};
use crate::gyro_field::FlowField;

/// Largest vector length in `f`.
pub fn max_magnitude(f: &FlowField) -> f64 {
    f.u.data
        .iter()
        .zip(&f.v.data)
        .map(|(u, v)| u.hypot(*v))
        .fold(0.0, f64::max)
}

fn hsv_to_rgb(hue_deg: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let h = hue_deg / 60.0;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees `[0, 360)` of a flow vector, `atan2(v, u)` in image coordinates.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    let deg = v.atan2(u).to_degrees();
    if deg < 0.0 {
        deg + 360.0
    } else {
        deg
    }
}

/// Color-wheel rendering: hue from direction, saturation `min(|f| / max_mag, 1)`,
/// full value, so zero flow is white. `None` scales by the field's own maximum.
pub fn flow_to_color(f: &FlowField, max_mag: Option<f64>) -> Result<Image> {
    ensure(f.is_finite(), || "flow contains non-finite values".into())?;
    if let Some(m) = max_mag {
        ensure(m > 0.0 && m.is_finite(), || format!("max magnitude must be positive, got {m}"))?;
    }
    let scale = max_mag.unwrap_or_else(|| max_magnitude(f));
    let mut img = Image::new(f.width, f.height, 3);
    for i in 0..f.width * f.height {
        let (u, v) = (f.u.data[i], f.v.data[i]);
        let s = if scale > 0.0 { (u.hypot(v) / scale).min(1.0) } else { 0.0 };
        let rgb = hsv_to_rgb(flow_hue(u, v), s, 1.0);
        for (dst, c) in img.data[3 * i..3 * i + 3].iter_mut().zip(rgb) {
            *dst = (c * 255.0).round();
        }
    }
    Ok(img)
}

/// Grayscale heatmap, black at zero error and white at `max_err` or above.
pub fn heatmap_to_image(errors: &Grid, max_err: Option<f64>) -> Image {
    let top = max_err.unwrap_or_else(|| errors.data.iter().cloned().fold(0.0, f64::max));
    let g = errors.map(|e| if top > 0.0 { (255.0 * e / top).clamp(0.0, 255.0).round() } else { 0.0 });
    Image::from_gray(&g)
}

/// Red channel from `a`, green and blue from `b`: aligned content looks gray,
/// misalignment shows red/cyan fringes.
pub fn superimpose(a: &Grid, b: &Grid) -> Result<Image> {
    ensure(a.same_dims(b), || "superimposed images differ in size".into())?;
    let mut img = Image::new(a.width, a.height, 3);
    for i in 0..a.data.len() {
        img.data[3 * i] = a.data[i].clamp(0.0, 255.0).round();
        img.data[3 * i + 1] = b.data[i].clamp(0.0, 255.0).round();
        img.data[3 * i + 2] = b.data[i].clamp(0.0, 255.0).round();
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_is_white() {
        let img = flow_to_color(&FlowField::zeros(4, 3), None).unwrap();
        assert!(img.data.iter().all(|v| *v == 255.0));
        let img = flow_to_color(&FlowField::zeros(4, 3), Some(2.0)).unwrap();
        assert!(img.data.iter().all(|v| *v == 255.0));
    }

    #[test]
    fn angle_zero_is_saturated_red() {
        let img = flow_to_color(&FlowField::constant(3, 2, 5.0, 0.0), Some(5.0)).unwrap();
        for px in img.data.chunks(3) {
            assert_eq!(px, &[255.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn hue_wheel_quadrants() {
        assert_eq!(flow_hue(1.0, 0.0), 0.0);
        assert_eq!(flow_hue(0.0, 1.0), 90.0);
        assert_eq!(flow_hue(-1.0, 0.0), 180.0);
        assert_eq!(flow_hue(0.0, -1.0), 270.0);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn heatmap_scaling() {
        let g = Grid::from_vec(3, 1, vec![0.0, 1.0, 4.0]).unwrap();
        assert_eq!(heatmap_to_image(&g, Some(2.0)).data, vec![0.0, 128.0, 255.0]);
        assert!(heatmap_to_image(&Grid::new(2, 2, 0.0), None).data.iter().all(|v| *v == 0.0));
    }
}
