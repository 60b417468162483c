//! Constrained fusion of gyro fields with image-derived residual flow.
//!
//! Per pyramid level the fusion map `M` weights the residual flow `O` against
//! the gyro field `G`: `V = M * O + (1 - M) * G`. Each level's map is confined
//! to an interval of the beta ladder, so coarse levels lean on the gyro field
//! and fine levels on the image evidence.

mod residual;

pub use residual::{estimate_residual_flow, refine_flow_level, ResidualFlowParams};

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::grid::Grid;
use crate::gyro_field::{downscale_field, homography_array_to_field, FlowField, HomographyArray};
use crate::math::CameraIntrinsics;

/// Number of beta pairs; pyramid levels deeper than this reuse the last pair.
pub const BETA_PAIRS: usize = 4;

/// `beta_5 < beta_4 <= beta_3 <= beta_2 <= beta_1 <= 1`, all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct BetaLadder([f64; 5]);

impl Default for BetaLadder {
    fn default() -> Self {
        BetaLadder([1.0, 0.9, 0.7, 0.5, 0.3])
    }
}

impl TryFrom<[f64; 5]> for BetaLadder {
    type Error = Error;

    fn try_from(b: [f64; 5]) -> Result<Self> {
        BetaLadder::new(b)
    }
}

impl From<BetaLadder> for [f64; 5] {
    fn from(b: BetaLadder) -> Self {
        b.0
    }
}

impl BetaLadder {
    pub fn new(b: [f64; 5]) -> Result<Self> {
        let violation = |msg: String| Err(Error::config("beta", msg));
        for (i, v) in b.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return violation(format!("beta{} = {v} is outside [0, 1]", i + 1));
            }
        }
        if !(b[4] < b[3]) {
            return violation(format!(
                "ordering beta5 < beta4 violated ({} >= {})",
                b[4], b[3]
            ));
        }
        for i in 0..3 {
            if !(b[i + 1] <= b[i]) {
                return violation(format!(
                    "ordering beta{} <= beta{} violated ({} > {})",
                    i + 2,
                    i + 1,
                    b[i + 1],
                    b[i]
                ));
            }
        }
        Ok(BetaLadder(b))
    }

    pub fn values(&self) -> [f64; 5] {
        self.0
    }

    /// `(beta_i, beta_{i+1})` for map level `i` in `1..=4`.
    pub fn pair(&self, level: usize) -> Result<(f64, f64)> {
        ensure((1..=BETA_PAIRS).contains(&level), || {
            format!("fusion level {level} has no beta pair (expected 1..=4)")
        })?;
        Ok((self.0[level - 1], self.0[level]))
    }
}

/// Dense fusion weights for one pyramid level, all within `[lower, upper]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMap {
    pub grid: Grid,
    pub level: usize,
    pub lower: f64,
    pub upper: f64,
}

impl FusionMap {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        FusionMap {
            grid: Grid::new(width, height, value),
            level: 1,
            lower: value,
            upper: value,
        }
    }

    pub fn mean(&self) -> f64 {
        crate::metrics::pairwise_sum(&self.grid.data) / self.grid.data.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct PyramidLevels(usize);

impl Default for PyramidLevels {
    fn default() -> Self {
        PyramidLevels(5)
    }
}

impl TryFrom<usize> for PyramidLevels {
    type Error = Error;

    fn try_from(n: usize) -> Result<Self> {
        PyramidLevels::new(n)
    }
}

impl From<PyramidLevels> for usize {
    fn from(p: PyramidLevels) -> usize {
        p.0
    }
}

impl PyramidLevels {
    pub fn new(count: usize) -> Result<Self> {
        if count < 2 {
            return Err(Error::config("pyramid_levels", "must be >= 2"));
        }
        Ok(PyramidLevels(count))
    }

    pub fn count(&self) -> usize {
        self.0
    }

    /// Dimensions must be divisible by this.
    pub fn divisor(&self) -> usize {
        1 << (self.0 - 1)
    }

    /// Level dims, finest first.
    pub fn dims(&self, width: usize, height: usize) -> Result<Vec<(usize, usize)>> {
        let d = self.divisor();
        ensure(width.is_multiple_of(d) && height.is_multiple_of(d), || {
            format!(
                "{width}x{height} is not divisible by {d} ({} pyramid levels); pad the images first",
                self.0
            )
        })?;
        Ok((0..self.0).map(|l| (width >> l, height >> l)).collect())
    }

    /// Padded size accepted by [`run_fusion_pyramid`].
    pub fn padded_dims(&self, width: usize, height: usize) -> (usize, usize) {
        let d = self.divisor();
        (width.div_ceil(d) * d, height.div_ceil(d) * d)
    }
}

/// Tunables of the deterministic map and flow estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionParams {
    /// Photometric residual (gray levels) corresponding to one unit of the raw map score.
    pub residual_scale: f64,
    /// Side of the neighbourhood averaging photometric residuals.
    pub residual_window: usize,
    pub residual_flow: ResidualFlowParams,
}

impl Default for FusionParams {
    fn default() -> Self {
        FusionParams {
            residual_scale: 4.0,
            residual_window: 7,
            residual_flow: ResidualFlowParams::default(),
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_scale > 0.0) {
            return Err(Error::config("fusion.residual_scale", "must be > 0"));
        }
        if self.residual_window == 0 || self.residual_window.is_multiple_of(2) {
            return Err(Error::config("fusion.residual_window", "must be odd"));
        }
        self.residual_flow.validate()
    }
}

#[inline]
pub fn sigmoid(h: f64) -> f64 {
    if h >= 0.0 {
        1.0 / (1.0 + (-h).exp())
    } else {
        let e = h.exp();
        e / (1.0 + e)
    }
}

/// `M = beta_i + (beta_{i+1} - beta_i) * sigmoid(h)` elementwise.
pub fn constrain_map(raw: &Grid, level: usize, ladder: &BetaLadder) -> Result<FusionMap> {
    let (upper, lower) = ladder.pair(level)?;
    ensure(raw.data.iter().all(|v| !v.is_nan()), || "raw map score contains NaN".into())?;
    Ok(FusionMap {
        grid: raw.map(|h| (upper + (lower - upper) * sigmoid(h)).clamp(lower, upper)),
        level,
        lower,
        upper,
    })
}

fn check_dims(a: &Grid, b: &Grid, f: &FlowField) -> Result<()> {
    ensure(a.same_dims(b) && a.width == f.width && a.height == f.height, || {
        format!(
            "images {}x{} / {}x{} and flow {}x{} differ in size",
            a.width, a.height, b.width, b.height, f.width, f.height
        )
    })
}

/// `|a(p) - b(p + G(p))|`; zero where the warp leaves the image.
pub fn photometric_residual(a: &Grid, b: &Grid, g: &FlowField) -> Result<Grid> {
    check_dims(a, b, g)?;
    Ok(Grid::from_fn(a.width, a.height, |x, y| {
        let (u, v) = g.at(x, y);
        b.sample(x as f64 + u, y as f64 + v)
            .map_or(0.0, |bw| (a.get(x, y) - bw).abs())
    }))
}

/// Fusion map from the photometric agreement of `a` and `b` under the gyro field.
///
/// The local mean residual `r` maps to the raw score `h = 4 - r / residual_scale`,
/// so well-aligned pixels sit near the lower (gyro-favoring) end of the level's range.
pub fn estimate_fusion_map(
    a: &Grid,
    b: &Grid,
    g: &FlowField,
    level: usize,
    ladder: &BetaLadder,
    params: &FusionParams,
) -> Result<FusionMap> {
    let residual = photometric_residual(a, b, g)?;
    let local = residual.box_mean(params.residual_window / 2);
    let raw = local.map(|r| 4.0 - r / params.residual_scale);
    constrain_map(&raw, level, ladder)
}

/// Masked inputs for [`refine_fusion_map`]: `a * M` and the gyro-aligned `b * M`.
pub fn mask_with_map(a: &Grid, b: &Grid, g: &FlowField, m: &FusionMap) -> Result<(Grid, Grid)> {
    check_dims(a, b, g)?;
    let am = Grid::from_fn(a.width, a.height, |x, y| a.get(x, y) * m.grid.get(x, y));
    let bm = Grid::from_fn(a.width, a.height, |x, y| {
        let (u, v) = g.at(x, y);
        match b.sample(x as f64 + u, y as f64 + v) {
            Some(bw) => bw * m.grid.get(x, y),
            None => am.get(x, y),
        }
    });
    Ok((am, bm))
}

/// `clamp(M + M', 0, 1)` where `M' in [gamma_minus, gamma_plus]` grows with the
/// masked residual relative to its median and is zero for identical inputs.
pub fn refine_fusion_map(
    m: &FusionMap,
    a_masked: &Grid,
    b_masked: &Grid,
    gamma: (f64, f64),
    params: &FusionParams,
) -> Result<FusionMap> {
    let (g_minus, g_plus) = gamma;
    ensure(g_minus <= g_plus, || {
        format!("gamma- ({g_minus}) exceeds gamma+ ({g_plus})")
    })?;
    ensure(g_minus <= 0.0 && g_plus >= 0.0, || {
        format!("gamma range [{g_minus}, {g_plus}] must contain 0")
    })?;
    ensure(
        a_masked.same_dims(b_masked) && a_masked.same_dims(&m.grid),
        || "masked images and fusion map differ in size".into(),
    )?;
    let residual = Grid {
        width: a_masked.width,
        height: a_masked.height,
        data: a_masked
            .data
            .iter()
            .zip(&b_masked.data)
            .map(|(a, b)| (a - b).abs())
            .collect(),
    };
    let local = residual.box_mean(params.residual_window / 2);
    let mut sorted = local.data.clone();
    let mid = sorted.len() / 2;
    let (_, median, _) = sorted.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let median = *median;
    let refined = Grid {
        width: m.grid.width,
        height: m.grid.height,
        data: m
            .grid
            .data
            .iter()
            .zip(&local.data)
            .map(|(mv, r)| {
                let d = (r - median) / params.residual_scale;
                let delta = if d >= 0.0 {
                    g_plus * d.tanh()
                } else {
                    -g_minus * d.tanh()
                };
                (mv + delta).clamp(0.0, 1.0)
            })
            .collect(),
    };
    Ok(FusionMap {
        grid: refined,
        level: m.level,
        lower: (m.lower + g_minus).max(0.0),
        upper: (m.upper + g_plus).min(1.0),
    })
}

/// `V = M * O + (1 - M) * G` elementwise.
pub fn fuse(o: &FlowField, g: &FlowField, m: &FusionMap) -> Result<FlowField> {
    ensure(
        o.same_dims(g) && o.width == m.grid.width && o.height == m.grid.height,
        || "fusion inputs differ in size".into(),
    )?;
    let blend = |a: &Grid, b: &Grid| Grid {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .zip(&m.grid.data)
            .map(|((oa, gb), w)| w * oa + (1.0 - w) * gb)
            .collect(),
    };
    Ok(FlowField {
        width: o.width,
        height: o.height,
        u: blend(&o.u, &g.u),
        v: blend(&o.v, &g.v),
    })
}

#[derive(Debug, Clone)]
pub struct PyramidOutput {
    /// Fused flow at full resolution.
    pub flow: FlowField,
    /// Fusion maps, finest level first.
    pub maps: Vec<FusionMap>,
    /// Full-resolution gyro field the pass started from.
    pub gyro_field: FlowField,
}

/// Coarse-to-fine fusion. Level 1 is full resolution; level `i` uses beta pair
/// `min(i, 4)`. The coarsest residual flow starts from the gyro field, every
/// finer one from the upsampled fused flow of the level below.
pub fn run_fusion_pyramid(
    a: &Grid,
    b: &Grid,
    gyro: &HomographyArray,
    k: &CameraIntrinsics,
    ladder: &BetaLadder,
    levels: &PyramidLevels,
    params: &FusionParams,
) -> Result<PyramidOutput> {
    ensure(a.same_dims(b), || "frames differ in size".into())?;
    params.validate()?;
    let dims = levels.dims(a.width, a.height)?;
    let gyro_field = homography_array_to_field(gyro, k, a.width, a.height)?;
    let mut maps = Vec::with_capacity(dims.len());
    let mut fused: Option<FlowField> = None;
    for level in (1..=dims.len()).rev() {
        let factor = 1usize << (level - 1);
        let (a_l, b_l) = (a.block_average(factor)?, b.block_average(factor)?);
        let g_l = downscale_field(&gyro_field, factor)?;
        let map = estimate_fusion_map(&a_l, &b_l, &g_l, level.min(BETA_PAIRS), ladder, params)?;
        let init = match &fused {
            None => g_l.clone(),
            Some(prev) => prev.upsample(2),
        };
        let o = refine_flow_level(&a_l, &b_l, &init, &params.residual_flow)?;
        fused = Some(fuse(&o, &g_l, &map)?);
        maps.push(FusionMap { level, ..map });
    }
    maps.reverse();
    Ok(PyramidOutput {
        flow: fused.expect("at least two levels"),
        maps,
        gyro_field,
    })
}

/// [`run_fusion_pyramid`] on arbitrary sizes: mirror-pads to the pyramid
/// divisor, then crops flow and maps back.
pub fn run_fusion_padded(
    a: &Grid,
    b: &Grid,
    gyro: &HomographyArray,
    k: &CameraIntrinsics,
    ladder: &BetaLadder,
    levels: &PyramidLevels,
    params: &FusionParams,
) -> Result<PyramidOutput> {
    ensure(a.same_dims(b), || "frames differ in size".into())?;
    let (pw, ph) = levels.padded_dims(a.width, a.height);
    if (pw, ph) == (a.width, a.height) {
        return run_fusion_pyramid(a, b, gyro, k, ladder, levels, params);
    }
    log::info!(
        "padding {}x{} frames to {}x{} for a {}-level pyramid",
        a.width,
        a.height,
        pw,
        ph,
        levels.count()
    );
    let out = run_fusion_pyramid(
        &a.pad_mirror(pw, ph),
        &b.pad_mirror(pw, ph),
        gyro,
        k,
        ladder,
        levels,
        params,
    )?;
    let (w, h) = (a.width, a.height);
    let maps = out
        .maps
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            let (mw, mh) = ((w >> i).max(1), (h >> i).max(1));
            FusionMap {
                grid: m.grid.crop(mw, mh),
                ..m
            }
        })
        .collect();
    Ok(PyramidOutput {
        flow: out.flow.crop(w, h),
        maps,
        gyro_field: out.gyro_field.crop(w, h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gyro_field::{warp_image, Homography};
    use crate::grid::Image;

    fn texture(w: usize, h: usize) -> Grid {
        Grid::from_fn(w, h, |x, y| {
            let (x, y) = (x as f64, y as f64);
            128.0 + 60.0 * (0.23 * x + 0.11 * y).sin() * (0.19 * y - 0.05 * x).cos()
        })
    }

    #[test]
    fn ladder_validation() {
        assert!(BetaLadder::new([1.0, 0.9, 0.7, 0.5, 0.3]).is_ok());
        assert!(BetaLadder::new([1.0, 0.9, 0.9, 0.5, 0.3]).is_ok());
        let err = BetaLadder::new([1.0, 0.7, 0.9, 0.5, 0.3]).unwrap_err();
        assert!(err.to_string().contains("beta3 <= beta2"), "{err}");
        let err = BetaLadder::new([1.0, 0.9, 0.7, 0.5, 0.5]).unwrap_err();
        assert!(err.to_string().contains("beta5 < beta4"), "{err}");
        assert!(BetaLadder::new([1.2, 0.9, 0.7, 0.5, 0.3]).is_err());
        assert!(BetaLadder::default().pair(5).is_err());
        assert!(BetaLadder::default().pair(0).is_err());
    }

    #[test]
    fn constrain_map_values() {
        let ladder = BetaLadder::default();
        let m = constrain_map(&Grid::new(3, 2, 0.0), 1, &ladder).unwrap();
        assert!(m.grid.data.iter().all(|v| (*v - 0.95).abs() < 1e-15));

        let m = constrain_map(&Grid::new(1, 1, 3f64.ln()), 2, &ladder).unwrap();
        assert!((m.grid.data[0] - 0.75).abs() < 1e-15);

        let hi = constrain_map(&Grid::new(1, 1, 800.0), 3, &ladder).unwrap();
        let lo = constrain_map(&Grid::new(1, 1, -800.0), 3, &ladder).unwrap();
        assert_eq!(hi.grid.data[0], 0.5);
        assert_eq!(lo.grid.data[0], 0.7);
        assert!(constrain_map(&Grid::new(1, 1, 0.0), 5, &ladder).is_err());
    }

    #[test]
    fn aligned_frames_sit_at_gyro_end() {
        let ladder = BetaLadder::default();
        let a = texture(40, 30);
        let m = estimate_fusion_map(&a, &a, &FlowField::zeros(40, 30), 2, &ladder, &Default::default())
            .unwrap();
        let (upper, lower) = ladder.pair(2).unwrap();
        let tol = 0.02 * (upper - lower);
        assert!(m.grid.data.iter().all(|v| *v >= lower && *v <= lower + tol));
    }

    #[test]
    fn warp_consistent_frames_sit_at_gyro_end() {
        let ladder = BetaLadder::default();
        let b = texture(60, 40);
        let g = FlowField::from_fn(60, 40, |x, y| (1.5 + 0.01 * y as f64, -0.7 + 0.02 * x as f64));
        let (warped, valid) = warp_image(&Image::from_gray(&b), &g).unwrap();
        let a = warped.channel(0);
        let m = estimate_fusion_map(&a, &b, &g, 1, &ladder, &Default::default()).unwrap();
        let (upper, lower) = ladder.pair(1).unwrap();
        for y in 4..36 {
            for x in 4..52 {
                if valid.get(x, y) {
                    assert!(m.grid.get(x, y) <= lower + 0.02 * (upper - lower));
                }
            }
        }
    }

    #[test]
    fn fuse_arithmetic() {
        let o = FlowField::constant(2, 2, 2.0, 2.0);
        let g = FlowField::constant(2, 2, 4.0, 0.0);
        let half = FusionMap::uniform(2, 2, 0.5);
        let out = fuse(&o, &g, &half).unwrap();
        assert_eq!(out.at(1, 1), (3.0, 1.0));
        assert_eq!(fuse(&o, &g, &FusionMap::uniform(2, 2, 1.0)).unwrap(), o);
        assert_eq!(fuse(&o, &g, &FusionMap::uniform(2, 2, 0.0)).unwrap(), g);
        assert!(fuse(&o, &FlowField::zeros(3, 2), &half).is_err());
    }

    #[test]
    fn refine_identity_cases() {
        let m = constrain_map(&Grid::from_fn(8, 8, |x, y| x as f64 - y as f64), 1, &BetaLadder::default())
            .unwrap();
        let a = texture(8, 8);
        let out = refine_fusion_map(&m, &a, &a, (-0.2, 0.2), &Default::default()).unwrap();
        assert_eq!(out.grid, m.grid);
        let b = a.map(|v| 255.0 - v);
        let out = refine_fusion_map(&m, &a, &b, (0.0, 0.0), &Default::default()).unwrap();
        assert_eq!(out.grid, m.grid);
        assert!(refine_fusion_map(&m, &a, &b, (0.2, -0.2), &Default::default()).is_err());
    }

    #[test]
    fn pyramid_rejects_indivisible_dims() {
        let a = Grid::new(40, 30, 0.0);
        let k = CameraIntrinsics::new(50.0, 50.0, 20.0, 15.0, 40, 30).unwrap();
        let arr = HomographyArray::uniform(Homography::identity(), 2, 40, 30);
        let err = run_fusion_pyramid(
            &a,
            &a,
            &arr,
            &k,
            &BetaLadder::default(),
            &PyramidLevels::default(),
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }

    #[test]
    fn static_scene_zero_gyro_is_still() {
        let a = texture(64, 48);
        let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 23.5, 64, 48).unwrap();
        let arr = HomographyArray::uniform(Homography::identity(), 4, 64, 48);
        let out = run_fusion_pyramid(
            &a,
            &a,
            &arr,
            &k,
            &BetaLadder::default(),
            &PyramidLevels::new(3).unwrap(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(out.maps.len(), 3);
        assert_eq!(out.maps[0].level, 1);
        let mean_err = out
            .flow
            .u
            .data
            .iter()
            .zip(&out.flow.v.data)
            .map(|(u, v)| u.hypot(*v))
            .sum::<f64>()
            / (64.0 * 48.0);
        assert!(mean_err < 0.1);
    }
}
