//! Gyro fields: per-row-patch rotation homographies from gyro readings,
//! SLERP smoothing between patches, and dense rasterization.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::{Grid, Image, ValidMask};
use crate::math::{
    integrate_gyro, orthonormality_deviation, slerp, AxisRemap, CameraIntrinsics, GyroSample,
    RotationMatrix, UnitQuaternion,
};

/// `|w|` below this during the projective divide is a degenerate projection.
pub const MIN_PROJECTIVE_W: f64 = 1e-9;
/// Max deviation of `K^-1 H K` from a rotation accepted by [`smooth_homography_array`].
pub const DECOMPOSITION_TOL: f64 = 1e-3;

/// 3x3 projective map, scaled so the bottom-right entry is 1 whenever it is non-zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        ensure(m.iter().all(|v| v.is_finite()), || "homography has non-finite entries".into())?;
        let scale = if m[(2, 2)].abs() > 1e-12 {
            m[(2, 2)]
        } else {
            m.norm()
        };
        ensure(scale != 0.0, || "homography is all zeros".into())?;
        let m = m / scale;
        let det = m.determinant();
        if !(det.abs() > 1e-12) {
            return Err(Error::DegenerateConfiguration(format!(
                "homography is singular (det {det:.3e})"
            )));
        }
        Ok(Homography(m))
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography(Matrix3::new(1.0, 0.0, tx, 0.0, 1.0, ty, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Homography) -> Result<Homography> {
        Homography::new(self.0 * first.0)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::DegenerateConfiguration("homography is not invertible".into()))?;
        Homography::new(inv)
    }

    /// Maps `(x, y)` with the projective divide.
    #[inline]
    pub fn project(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let m = &self.0;
        let w = m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)];
        if w.abs() < MIN_PROJECTIVE_W {
            return Err(Error::DegenerateProjection { x, y, w });
        }
        Ok((
            (m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)]) / w,
            (m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)]) / w,
        ))
    }

    /// Entries divided by the Frobenius norm, sign fixed so the bottom-right entry is >= 0.
    pub fn unit_normalized(&self) -> Matrix3<f64> {
        let m = self.0 / self.0.norm();
        if m[(2, 2)] < 0.0 {
            -m
        } else {
            m
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FrameAnchor {
    /// Frame timestamp marks the exposure of the first row.
    #[default]
    StartOfExposure,
    /// Frame timestamp marks the middle of the readout.
    Center,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RollingShutterModel {
    #[serde(default = "default_patch_count")]
    pub patch_count: usize,
    /// Fraction of the frame period spent reading rows top to bottom; 0 is a global shutter.
    #[serde(default = "default_readout_fraction")]
    pub readout_fraction: f64,
    #[serde(default)]
    pub frame_timestamp_anchor: FrameAnchor,
}

fn default_patch_count() -> usize {
    14
}

fn default_readout_fraction() -> f64 {
    0.8
}

impl Default for RollingShutterModel {
    fn default() -> Self {
        RollingShutterModel {
            patch_count: default_patch_count(),
            readout_fraction: default_readout_fraction(),
            frame_timestamp_anchor: FrameAnchor::StartOfExposure,
        }
    }
}

impl RollingShutterModel {
    pub fn global_shutter(patch_count: usize) -> Self {
        RollingShutterModel {
            patch_count,
            readout_fraction: 0.0,
            frame_timestamp_anchor: FrameAnchor::StartOfExposure,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_count == 0 {
            return Err(Error::config("rolling_shutter.patch_count", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.readout_fraction) {
            return Err(Error::config(
                "rolling_shutter.readout_fraction",
                "must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    /// Center row of patch `n` in pixel-center coordinates.
    pub fn patch_center_row(&self, n: usize, height: usize) -> f64 {
        (n as f64 + 0.5) * height as f64 / self.patch_count as f64 - 0.5
    }

    /// Exposure time of (fractional) `row` relative to the frame timestamp, in ns.
    pub fn row_offset_ns(&self, row: f64, height: usize, frame_period_ns: f64) -> f64 {
        let span = self.readout_fraction * frame_period_ns;
        let frac = row / height as f64;
        match self.frame_timestamp_anchor {
            FrameAnchor::StartOfExposure => span * frac,
            FrameAnchor::Center => span * (frac - 0.5),
        }
    }
}

/// Per-row-patch homographies for one frame pair, top patch first.
#[derive(Debug, Clone, PartialEq)]
pub struct HomographyArray {
    pub homographies: Vec<Homography>,
    pub width: usize,
    pub height: usize,
}

impl HomographyArray {
    pub fn new(homographies: Vec<Homography>, width: usize, height: usize) -> Result<Self> {
        ensure(!homographies.is_empty(), || "homography array is empty".into())?;
        Ok(HomographyArray {
            homographies,
            width,
            height,
        })
    }

    pub fn uniform(h: Homography, patch_count: usize, width: usize, height: usize) -> Self {
        HomographyArray {
            homographies: vec![h; patch_count],
            width,
            height,
        }
    }

    pub fn len(&self) -> usize {
        self.homographies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.homographies.is_empty()
    }

    pub fn patch_center_row(&self, n: usize) -> f64 {
        (n as f64 + 0.5) * self.height as f64 / self.len() as f64 - 0.5
    }

    /// Index of the patch whose rows contain pixel row `y` (clamped).
    pub fn patch_of_row(&self, y: f64) -> usize {
        let n = ((y + 0.5) * self.len() as f64 / self.height as f64).floor();
        (n.max(0.0) as usize).min(self.len() - 1)
    }

    /// Bracketing patches and the fractional position of `row` between their centers.
    fn bracket(&self, row: f64) -> (usize, usize, f64) {
        let last = self.len() - 1;
        let first_center = self.patch_center_row(0);
        let last_center = self.patch_center_row(last);
        if row <= first_center {
            return (0, 0, 0.0);
        }
        if row >= last_center {
            return (last, last, 0.0);
        }
        let pos = (row + 0.5) * self.len() as f64 / self.height as f64 - 0.5;
        let n = (pos.floor() as usize).min(last - 1);
        (n, n + 1, pos - n as f64)
    }
}

/// Dense displacement grid: `(u, v)` at each pixel of frame a points toward frame b.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Grid,
    pub v: Grid,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        FlowField {
            width,
            height,
            u: Grid::new(width, height, u),
            v: Grid::new(width, height, v),
        }
    }

    pub fn from_grids(u: Grid, v: Grid) -> Result<Self> {
        ensure(u.same_dims(&v), || {
            format!(
                "u is {}x{} but v is {}x{}",
                u.width, u.height, v.width, v.height
            )
        })?;
        Ok(FlowField {
            width: u.width,
            height: u.height,
            u,
            v,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f64, f64)) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                u.push(a);
                v.push(b);
            }
        }
        FlowField {
            width,
            height,
            u: Grid { width, height, data: u },
            v: Grid { width, height, data: v },
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        (self.u.get(x, y), self.v.get(x, y))
    }

    pub fn same_dims(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn is_finite(&self) -> bool {
        self.u.data.iter().chain(&self.v.data).all(|v| v.is_finite())
    }

    pub fn upsample(&self, factor: usize) -> FlowField {
        let scale = factor as f64;
        FlowField {
            width: self.width * factor,
            height: self.height * factor,
            u: self.u.upsample(factor).map(|v| v * scale),
            v: self.v.upsample(factor).map(|v| v * scale),
        }
    }

    pub fn pad_mirror(&self, width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            u: self.u.pad_mirror(width, height),
            v: self.v.pad_mirror(width, height),
        }
    }

    pub fn crop(&self, width: usize, height: usize) -> FlowField {
        FlowField {
            width,
            height,
            u: self.u.crop(width, height),
            v: self.v.crop(width, height),
        }
    }
}

/// `K R K^-1`, scale-normalized.
pub fn rotation_homography(k: &CameraIntrinsics, r: &RotationMatrix) -> Homography {
    Homography::new(k.matrix() * r.matrix() * k.inverse_matrix())
        .expect("conjugated rotation is always invertible")
}

/// Homography array with the frame period taken as `t_b - t_a`.
pub fn row_patch_homographies(
    k: &CameraIntrinsics,
    samples: &[GyroSample],
    t_a: i64,
    t_b: i64,
    rs: &RollingShutterModel,
    remap: &AxisRemap,
) -> Result<HomographyArray> {
    row_patch_homographies_with_period(k, samples, t_a, t_b, (t_b - t_a) as f64, rs, remap)
}

/// Patch `n` uses the relative rotation between that patch's exposure time in
/// frame a and in frame b.
pub fn row_patch_homographies_with_period(
    k: &CameraIntrinsics,
    samples: &[GyroSample],
    t_a: i64,
    t_b: i64,
    frame_period_ns: f64,
    rs: &RollingShutterModel,
    remap: &AxisRemap,
) -> Result<HomographyArray> {
    rs.validate()?;
    ensure(t_b >= t_a, || format!("frame b ({t_b}) precedes frame a ({t_a})"))?;
    let homographies = (0..rs.patch_count)
        .map(|n| {
            let offset = rs
                .row_offset_ns(rs.patch_center_row(n, k.height), k.height, frame_period_ns)
                .round() as i64;
            let r = integrate_gyro(samples, t_a + offset, t_b + offset, remap)?;
            Ok(rotation_homography(k, &r))
        })
        .collect::<Result<Vec<_>>>()?;
    HomographyArray::new(homographies, k.width, k.height)
}

fn decompose_rotation(h: &Homography, k: &CameraIntrinsics) -> Result<UnitQuaternion> {
    let m = k.inverse_matrix() * h.matrix() * k.matrix();
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(Error::Decomposition {
            deviation: f64::INFINITY,
        });
    }
    let m = m / det.cbrt();
    let deviation = orthonormality_deviation(&m);
    if !(deviation <= DECOMPOSITION_TOL) {
        return Err(Error::Decomposition { deviation });
    }
    // Project onto SO(3) before converting.
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let r = RotationMatrix::new_unchecked(u * vt);
    Ok(UnitQuaternion::from_rotation(&r))
}

/// Homography for pixel row `row`: SLERP between the rotations of the two
/// patches whose centers bracket the row, recomposed as `K R K^-1`.
pub fn smooth_homography_array(
    arr: &HomographyArray,
    k: &CameraIntrinsics,
    row: f64,
) -> Result<Homography> {
    let (n0, n1, s) = arr.bracket(row);
    if n0 == n1 {
        decompose_rotation(&arr.homographies[n0], k)?;
        return Ok(arr.homographies[n0]);
    }
    let q0 = decompose_rotation(&arr.homographies[n0], k)?;
    let q1 = decompose_rotation(&arr.homographies[n1], k)?;
    Ok(rotation_homography(k, &slerp(&q0, &q1, s).to_rotation()))
}

/// Per-row mapping used during rasterization.
enum RowMap {
    Single(Homography),
    /// Linear blend of the projected points of two patch homographies.
    Blend(Homography, Homography, f64),
}

impl RowMap {
    #[inline]
    fn project(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        match self {
            RowMap::Single(h) => h.project(x, y),
            RowMap::Blend(h0, h1, s) => {
                let (x0, y0) = h0.project(x, y)?;
                let (x1, y1) = h1.project(x, y)?;
                Ok((x0 + (x1 - x0) * s, y0 + (y1 - y0) * s))
            }
        }
    }
}

/// Precomputed per-patch quaternions so rows can be smoothed without re-decomposing.
struct RowSmoother<'a> {
    arr: &'a HomographyArray,
    k: &'a CameraIntrinsics,
    rotations: Vec<Option<UnitQuaternion>>,
}

impl<'a> RowSmoother<'a> {
    fn new(arr: &'a HomographyArray, k: &'a CameraIntrinsics) -> Self {
        let rotations = if arr.len() == 1 {
            vec![None]
        } else {
            arr.homographies
                .iter()
                .map(|h| decompose_rotation(h, k).ok())
                .collect()
        };
        RowSmoother { arr, k, rotations }
    }

    fn row_map(&self, row: f64) -> RowMap {
        let (n0, n1, s) = self.arr.bracket(row);
        let hs = &self.arr.homographies;
        if n0 == n1 || s == 0.0 {
            return RowMap::Single(hs[n0]);
        }
        match (&self.rotations[n0], &self.rotations[n1]) {
            (Some(q0), Some(q1)) => {
                RowMap::Single(rotation_homography(self.k, &slerp(q0, q1, s).to_rotation()))
            }
            _ => RowMap::Blend(hs[n0], hs[n1], s),
        }
    }
}

/// Smoothed homography for every pixel row of a `width x height` grid.
pub(crate) fn rasterize_rows(
    arr: &HomographyArray,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<FlowField> {
    let smoother = RowSmoother::new(arr, k);
    let rows = (0..height)
        .into_par_iter()
        .map(|y| {
            let map = smoother.row_map(y as f64);
            let yf = y as f64;
            let mut u = Vec::with_capacity(width);
            let mut v = Vec::with_capacity(width);
            for x in 0..width {
                let xf = x as f64;
                let (px, py) = map.project(xf, yf)?;
                u.push(px - xf);
                v.push(py - yf);
            }
            Ok((u, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for (ru, rv) in rows {
        u.extend(ru);
        v.extend(rv);
    }
    Ok(FlowField {
        width,
        height,
        u: Grid { width, height, data: u },
        v: Grid { width, height, data: v },
    })
}

/// Dense gyro field: every pixel mapped by its row's smoothed homography, `(u, v) = p' - p`.
///
/// Arrays that are not rotation-only (fitted arrays) blend the two bracketing
/// patch mappings linearly instead of through SLERP.
pub fn homography_array_to_field(
    arr: &HomographyArray,
    k: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<FlowField> {
    rasterize_rows(arr, k, width, height)
}

pub fn downscale_field(f: &FlowField, factor: usize) -> Result<FlowField> {
    ensure(factor.is_power_of_two(), || {
        format!("downscale factor {factor} is not a power of two")
    })?;
    let scale = 1.0 / factor as f64;
    Ok(FlowField {
        width: f.width / factor,
        height: f.height / factor,
        u: f.u.block_average(factor)?.map(|v| v * scale),
        v: f.v.block_average(factor)?.map(|v| v * scale),
    })
}

/// Backward warp: `out(p) = img(p + f(p))`, bilinear. Samples landing outside
/// the image are zero and flagged invalid.
pub fn warp_image(img: &Image, f: &FlowField) -> Result<(Image, ValidMask)> {
    ensure(img.width == f.width && img.height == f.height, || {
        format!(
            "image is {}x{} but flow is {}x{}",
            img.width, img.height, f.width, f.height
        )
    })?;
    let channels: Vec<Grid> = (0..img.channels).map(|c| img.channel(c)).collect();
    let (w, h, nc) = (img.width, img.height, img.channels);
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut data = vec![0.0; w * nc];
            let mut valid = vec![false; w];
            for x in 0..w {
                let (u, v) = f.at(x, y);
                let (sx, sy) = (x as f64 + u, y as f64 + v);
                if let Some(first) = channels[0].sample(sx, sy) {
                    valid[x] = true;
                    data[x * nc] = first;
                    for c in 1..nc {
                        data[x * nc + c] = channels[c].sample_clamped(sx, sy);
                    }
                }
            }
            (data, valid)
        })
        .collect();
    let mut out = Image::new(w, h, nc);
    let mut mask = ValidMask::all(w, h);
    for (y, (data, valid)) in rows.into_iter().enumerate() {
        out.data[y * w * nc..(y + 1) * w * nc].copy_from_slice(&data);
        mask.data[y * w..(y + 1) * w].copy_from_slice(&valid);
    }
    Ok((out, mask))
}

/// Rotation carried by a rotation-only homography (for diagnostics and tests).
pub fn homography_rotation(h: &Homography, k: &CameraIntrinsics) -> Result<RotationMatrix> {
    Ok(decompose_rotation(h, k)?.to_rotation())
}

/// Applies `h` to the homogeneous point `(x, y, 1)` without the projective divide.
pub fn homogeneous(h: &Homography, x: f64, y: f64) -> Vector3<f64> {
    h.matrix() * Vector3::new(x, y, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rodrigues;

    fn k600x800() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 399.5, 299.5, 800, 600).unwrap()
    }

    fn max_abs(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    fn samples(step_ns: i64, count: i64, omega: impl Fn(f64) -> [f64; 3]) -> Vec<GyroSample> {
        (0..count)
            .map(|i| GyroSample::new(i * step_ns, omega(i as f64 * step_ns as f64 * 1e-9)))
            .collect()
    }

    #[test]
    fn rotation_homography_identities() {
        let k = k600x800();
        let h = rotation_homography(&k, &RotationMatrix::identity());
        assert!(max_abs(h.matrix(), &Matrix3::identity()) < 1e-15);

        let unit = CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 10,
            height: 10,
        };
        let r = rodrigues(&Vector3::new(0.1, -0.2, 0.05));
        let h = rotation_homography(&unit, &r);
        let expected = r.matrix() / r.matrix()[(2, 2)];
        assert!(max_abs(h.matrix(), &expected) < 1e-15);
    }

    #[test]
    fn rotation_homography_matches_explicit_product() {
        let k = CameraIntrinsics::new(500.0, 500.0, 300.0, 400.0, 600, 800).unwrap();
        let a = 1f64.to_radians();
        let r = [[a.cos(), 0.0, a.sin()], [0.0, 1.0, 0.0], [-a.sin(), 0.0, a.cos()]];
        let km = [[500.0, 0.0, 300.0], [0.0, 500.0, 400.0], [0.0, 0.0, 1.0]];
        let kinv = [
            [1.0 / 500.0, 0.0, -300.0 / 500.0],
            [0.0, 1.0 / 500.0, -400.0 / 500.0],
            [0.0, 0.0, 1.0],
        ];
        let mul = |a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]| {
            let mut out = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    for l in 0..3 {
                        out[i][j] += a[i][l] * b[l][j];
                    }
                }
            }
            out
        };
        let prod = mul(&mul(&km, &r), &kinv);
        let h = rotation_homography(&k, &rodrigues(&Vector3::new(0.0, a, 0.0)));
        for i in 0..3 {
            for j in 0..3 {
                let expected = prod[i][j] / prod[2][2];
                assert!((h.matrix()[(i, j)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_gyro_gives_identity_array_and_zero_field() {
        let k = k600x800();
        let s = samples(2_500_000, 40, |_| [0.0; 3]);
        let rs = RollingShutterModel::default();
        let arr =
            row_patch_homographies(&k, &s, 0, 33_000_000, &rs, &AxisRemap::identity()).unwrap();
        assert_eq!(arr.len(), 14);
        for h in &arr.homographies {
            assert_eq!(*h.matrix(), Matrix3::identity());
        }
        let f = homography_array_to_field(&arr, &k, 800, 600).unwrap();
        assert!(f.u.data.iter().chain(&f.v.data).all(|v| *v == 0.0));
    }

    #[test]
    fn global_shutter_collapses_to_one_homography() {
        let k = k600x800();
        let s = samples(2_500_000, 40, |_| [0.3, -0.2, 0.5]);
        let remap = AxisRemap::identity();
        let arr = row_patch_homographies(
            &k,
            &s,
            5_000_000,
            38_000_000,
            &RollingShutterModel::global_shutter(14),
            &remap,
        )
        .unwrap();
        let single =
            rotation_homography(&k, &integrate_gyro(&s, 5_000_000, 38_000_000, &remap).unwrap());
        for h in &arr.homographies {
            assert_eq!(h, &single);
        }
    }

    #[test]
    fn constant_rate_patch_angles() {
        let k = k600x800();
        let omega = [0.2, 0.4, -0.1];
        let s = samples(2_500_000, 60, |_| omega);
        let rs = RollingShutterModel {
            readout_fraction: 0.8,
            ..Default::default()
        };
        let (ta, tb) = (10_000_000, 43_333_333);
        let arr = row_patch_homographies(&k, &s, ta, tb, &rs, &AxisRemap::identity()).unwrap();
        let expected = Vector3::from(omega).norm() * (tb - ta) as f64 * 1e-9;
        for h in &arr.homographies {
            let angle = homography_rotation(h, &k).unwrap().angle();
            assert!((angle - expected).abs() < 1e-9, "{angle} vs {expected}");
        }
    }

    #[test]
    fn insufficient_coverage_is_reported() {
        let k = k600x800();
        let s = samples(2_500_000, 10, |_| [0.0, 0.0, 1.0]);
        let err = row_patch_homographies(
            &k,
            &s,
            0,
            20_000_000,
            &RollingShutterModel::default(),
            &AxisRemap::identity(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InsufficientCoverage { .. }));
    }

    fn z_roll_array(k: &CameraIntrinsics, angles_deg: &[f64]) -> HomographyArray {
        let hs = angles_deg
            .iter()
            .map(|a| rotation_homography(k, &rodrigues(&Vector3::new(0.0, 0.0, a.to_radians()))))
            .collect();
        HomographyArray::new(hs, k.width, k.height).unwrap()
    }

    #[test]
    fn smoothing_hits_patch_centers() {
        let k = k600x800();
        let arr = z_roll_array(&k, &[0.0, 1.0, 3.0, 2.0]);
        for n in 0..arr.len() {
            let h = smooth_homography_array(&arr, &k, arr.patch_center_row(n)).unwrap();
            assert!(max_abs(h.matrix(), arr.homographies[n].matrix()) < 1e-9);
        }
    }

    #[test]
    fn smoothing_identical_patches_is_constant() {
        let k = k600x800();
        let arr = z_roll_array(&k, &[2.0; 5]);
        for row in [0.0, 17.3, 150.0, 299.5, 599.0] {
            let h = smooth_homography_array(&arr, &k, row).unwrap();
            assert!(max_abs(h.matrix(), arr.homographies[0].matrix()) < 1e-12);
        }
    }

    #[test]
    fn smoothing_midway_is_half_angle() {
        let k = k600x800();
        let arr = z_roll_array(&k, &[0.0, 10.0]);
        let mid = (arr.patch_center_row(0) + arr.patch_center_row(1)) / 2.0;
        let h = smooth_homography_array(&arr, &k, mid).unwrap();
        let expected = rotation_homography(&k, &rodrigues(&Vector3::new(0.0, 0.0, 5f64.to_radians())));
        assert!(max_abs(h.matrix(), expected.matrix()) < 1e-9);
        // Clamped outside the outer centers.
        let top = smooth_homography_array(&arr, &k, 0.0).unwrap();
        assert_eq!(top, arr.homographies[0]);
    }

    #[test]
    fn smoothing_rejects_non_rotations() {
        let k = k600x800();
        let mut arr = z_roll_array(&k, &[0.0, 1.0]);
        arr.homographies[1] = Homography::translation(5.0, 0.0);
        let err = smooth_homography_array(&arr, &k, 300.0).unwrap_err();
        assert!(matches!(err, Error::Decomposition { .. }));
    }

    #[test]
    fn translation_field_is_constant() {
        let k = k600x800();
        let arr = HomographyArray::new(vec![Homography::translation(5.0, 0.0)], 800, 600).unwrap();
        let f = homography_array_to_field(&arr, &k, 800, 600).unwrap();
        assert!(f.u.data.iter().all(|v| (*v - 5.0).abs() < 1e-12));
        assert!(f.v.data.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn degenerate_projection_reports_pixel() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 4, 4).unwrap();
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, -0.5, 0.0, 1.0);
        let arr = HomographyArray::new(vec![Homography::new(m).unwrap()], 4, 4).unwrap();
        let err = homography_array_to_field(&arr, &k, 4, 4).unwrap_err();
        assert!(matches!(err, Error::DegenerateProjection { x, .. } if x == 2.0));
    }

    // Rolling shutter with a time-varying rate: the 14-patch smoothed field stays
    // close to a per-row oracle that integrates at every row's own exposure time.
    #[test]
    fn smoothed_field_tracks_per_row_oracle() {
        let k = CameraIntrinsics::new(500.0, 500.0, 99.5, 74.5, 200, 150).unwrap();
        let s = samples(2_000_000, 60, |t| [0.3 * (9.0 * t).sin(), 0.5 * (5.0 * t).cos(), 0.4 * t]);
        let rs = RollingShutterModel::default();
        let remap = AxisRemap::identity();
        let (ta, tb) = (4_000_000, 37_333_333);
        let period = (tb - ta) as f64;
        let arr = row_patch_homographies(&k, &s, ta, tb, &rs, &remap).unwrap();
        let field = homography_array_to_field(&arr, &k, 200, 150).unwrap();
        let mut max_err = 0.0f64;
        for y in 0..150 {
            let off = rs.row_offset_ns(y as f64, 150, period).round() as i64;
            let r = integrate_gyro(&s, ta + off, tb + off, &remap).unwrap();
            let h = rotation_homography(&k, &r);
            for x in 0..200 {
                let (px, py) = h.project(x as f64, y as f64).unwrap();
                let (u, v) = field.at(x, y);
                max_err = max_err.max((px - x as f64 - u).hypot(py - y as f64 - v));
            }
        }
        assert!(max_err < 0.5, "max deviation {max_err}");
    }

    #[test]
    fn downscale_constant_and_ramp() {
        let f = FlowField::constant(8, 4, 4.0, 2.0);
        let d = downscale_field(&f, 2).unwrap();
        assert!(d.u.data.iter().all(|v| *v == 2.0) && d.v.data.iter().all(|v| *v == 1.0));
        let z = downscale_field(&FlowField::zeros(16, 8), 8).unwrap();
        assert!(z.u.data.iter().chain(&z.v.data).all(|v| *v == 0.0));

        let (a, b, c) = (0.25, -0.5, 3.0);
        let ramp = FlowField::from_fn(16, 8, |x, y| (a * x as f64 + b * y as f64 + c, 2.0 * x as f64));
        for factor in [2usize, 4, 8] {
            let d = downscale_field(&ramp, factor).unwrap();
            let kf = factor as f64;
            let off = (kf - 1.0) / 2.0;
            for y in 0..d.height {
                for x in 0..d.width {
                    let (fx, fy) = (kf * x as f64 + off, kf * y as f64 + off);
                    let (u, v) = d.at(x, y);
                    assert!((u - (a * fx + b * fy + c) / kf).abs() < 1e-12);
                    assert!((v - 2.0 * fx / kf).abs() < 1e-12);
                }
            }
        }
        assert!(downscale_field(&ramp, 3).is_err());
        assert!(downscale_field(&FlowField::zeros(6, 6), 4).is_err());
    }

    #[test]
    fn warp_zero_and_shift() {
        let img = Image::from_gray(&Grid::from_fn(6, 3, |x, y| (x * 10 + y) as f64));
        let (out, mask) = warp_image(&img, &FlowField::zeros(6, 3)).unwrap();
        assert_eq!(out, img);
        assert_eq!(mask.count(), 18);

        let (out, mask) = warp_image(&img, &FlowField::constant(6, 3, 1.0, 0.0)).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert!(mask.get(x, y));
                assert_eq!(out.pixel(x, y)[0], img.pixel(x + 1, y)[0]);
            }
            assert!(!mask.get(5, y));
        }
        assert!(warp_image(&img, &FlowField::zeros(5, 3)).is_err());
    }

    #[test]
    fn warp_matches_scalar_loop_oracle() {
        let (w, h) = (23, 17);
        let img = Image {
            width: w,
            height: h,
            channels: 3,
            data: (0..w * h * 3).map(|i| ((i * 37) % 251) as f64).collect(),
        };
        let f = FlowField::from_fn(w, h, |x, y| {
            ((x as f64 * 0.3).sin() * 2.5, (y as f64 * 0.2 + x as f64 * 0.1).cos() * 1.7)
        });
        let (out, mask) = warp_image(&img, &f).unwrap();
        for y in 0..h {
            for x in 0..w {
                let (u, v) = f.at(x, y);
                let (sx, sy) = (x as f64 + u, y as f64 + v);
                let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64;
                assert_eq!(mask.get(x, y), inside);
                if !inside {
                    continue;
                }
                let x0 = (sx.floor() as usize).min(w - 1);
                let y0 = (sy.floor() as usize).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let y1 = (y0 + 1).min(h - 1);
                let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                for c in 0..3 {
                    let p = |xx: usize, yy: usize| img.data[(yy * w + xx) * 3 + c];
                    let expected = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                        + p(x1, y0) * fx * (1.0 - fy)
                        + p(x0, y1) * (1.0 - fx) * fy
                        + p(x1, y1) * fx * fy;
                    assert!((out.pixel(x, y)[c] - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn seams_are_continuous() {
        let k = k600x800();
        let s = samples(2_000_000, 80, |t| [0.6 * (11.0 * t).sin(), 0.5 * (7.0 * t).cos(), 0.8 * t]);
        let arr = row_patch_homographies(
            &k,
            &s,
            3_000_000,
            36_333_333,
            &RollingShutterModel::default(),
            &AxisRemap::identity(),
        )
        .unwrap();
        let f = homography_array_to_field(&arr, &k, 800, 600).unwrap();
        let (seam, within) = seam_and_within_jumps(&f, &arr);
        assert!(seam <= 2.0 * within, "seam jump {seam} vs within-patch {within}");
    }

    pub(crate) fn seam_and_within_jumps(f: &FlowField, arr: &HomographyArray) -> (f64, f64) {
        let mut seam = 0.0f64;
        let mut within = 0.0f64;
        for y in 0..f.height - 1 {
            let crosses = arr.patch_of_row(y as f64) != arr.patch_of_row(y as f64 + 1.0);
            let mut jump = 0.0f64;
            for x in 0..f.width {
                let (u0, v0) = f.at(x, y);
                let (u1, v1) = f.at(x, y + 1);
                jump = jump.max((u1 - u0).abs()).max((v1 - v0).abs());
            }
            if crosses {
                seam = seam.max(jump);
            } else {
                within = within.max(jump);
            }
        }
        (seam, within)
    }
}
