//! Weighted homography fitting from fused flow, single and per-row-patch.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::fusion::{run_fusion_padded, BetaLadder, FusionMap, FusionParams, PyramidLevels, PyramidOutput};
use crate::grid::Grid;
use crate::gyro_field::{FlowField, Homography, HomographyArray, MIN_PROJECTIVE_W};
use crate::math::CameraIntrinsics;

/// Weights below this fraction of the largest weight are left out of the fit.
pub const RELATIVE_WEIGHT_FLOOR: f64 = 1e-3;
/// Reweighting passes after the initial solve.
pub const REWEIGHT_PASSES: usize = 3;
/// Reprojection residual (px) above which a point's weight is scaled down by `scale / r`.
pub const REWEIGHT_SCALE: f64 = 1.0;
/// Default parameter-difference penalty between adjacent patches.
pub const DEFAULT_SMOOTHING: f64 = 10.0;

/// Relative photometric improvement a fitted patch needs to replace its gyro homography.
pub const PHOTOMETRIC_MARGIN: f64 = 0.02;

const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Pixel in frame a.
    pub p: [f64; 2],
    /// Matching pixel in frame b.
    pub q: [f64; 2],
    pub weight: f64,
}

impl Correspondence {
    pub fn new(p: [f64; 2], q: [f64; 2], weight: f64) -> Self {
        Correspondence { p, q, weight }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.p.iter().chain(&self.q).all(|v| v.is_finite()),
            || format!("correspondence {:?} -> {:?} is not finite", self.p, self.q),
        )?;
        ensure(self.weight.is_finite() && self.weight >= 0.0, || {
            format!("correspondence weight {} must be finite and >= 0", self.weight)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomographyEstimate {
    pub h: Homography,
    /// Weighted RMS reprojection distance (px) over the points used.
    pub inlier_rms: f64,
    /// Sum of the input weights of the points used.
    pub support: f64,
}

/// Samples `f` every `stride` px. Weights are `1 - M`, so pixels the map
/// attributes to the gyro field dominate the fit.
pub fn flow_to_correspondences(f: &FlowField, m: &FusionMap, stride: usize) -> Result<Vec<Correspondence>> {
    ensure(stride > 0, || "stride must be positive".into())?;
    ensure(m.grid.width == f.width && m.grid.height == f.height, || {
        format!(
            "fusion map {}x{} does not match flow {}x{}",
            m.grid.width, m.grid.height, f.width, f.height
        )
    })?;
    let mut out = Vec::new();
    for y in (0..f.height).step_by(stride) {
        for x in (0..f.width).step_by(stride) {
            let (u, v) = f.at(x, y);
            let (xf, yf) = (x as f64, y as f64);
            out.push(Correspondence::new(
                [xf, yf],
                [xf + u, yf + v],
                (1.0 - m.grid.get(x, y)).max(0.0),
            ));
        }
    }
    Ok(out)
}

/// Similarity taking the weighted centroid to the origin and the weighted mean
/// distance to `sqrt(2)`.
fn normalizer(points: impl Iterator<Item = ([f64; 2], f64)> + Clone) -> Result<Matrix3<f64>> {
    let (mut sw, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for (p, w) in points.clone() {
        sw += w;
        cx += w * p[0];
        cy += w * p[1];
    }
    cx /= sw;
    cy /= sw;
    let mean_dist = points.map(|(p, w)| w * (p[0] - cx).hypot(p[1] - cy)).sum::<f64>() / sw;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::DegenerateConfiguration("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0))
}

fn apply(t: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    [t[(0, 0)] * p[0] + t[(0, 2)], t[(1, 1)] * p[1] + t[(1, 2)]]
}

/// Weighted normalized DLT on the points with non-negligible weight.
fn solve_dlt(c: &[Correspondence], weights: &[f64]) -> Result<(Homography, Vec<usize>)> {
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    let used: Vec<usize> = (0..c.len())
        .filter(|&i| max_w > 0.0 && weights[i] >= RELATIVE_WEIGHT_FLOOR * max_w)
        .collect();
    if used.len() < 4 {
        return Err(Error::DegenerateConfiguration(format!(
            "{} effective point(s), at least 4 needed",
            used.len()
        )));
    }
    let tp = normalizer(used.iter().map(|&i| (c[i].p, weights[i])))?;
    let tq = normalizer(used.iter().map(|&i| (c[i].q, weights[i])))?;
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for &i in &used {
        let [x, y] = apply(&tp, c[i].p);
        let [xp, yp] = apply(&tq, c[i].q);
        let w = weights[i];
        let r1 = [-x, -y, -1.0, 0.0, 0.0, 0.0, xp * x, xp * y, xp];
        let r2 = [0.0, 0.0, 0.0, -x, -y, -1.0, yp * x, yp * y, yp];
        for r in [r1, r2] {
            for a in 0..9 {
                if r[a] == 0.0 {
                    continue;
                }
                for b in 0..9 {
                    ata[(a, b)] += w * r[a] * r[b];
                }
            }
        }
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[8]];
    if !(largest > 0.0) || eig.eigenvalues[order[1]] <= RANK_TOL * largest {
        return Err(Error::DegenerateConfiguration(
            "design matrix is rank deficient (collinear or repeated points)".into(),
        ));
    }
    let h = eig.eigenvectors.column(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let tq_inv = tq
        .try_inverse()
        .ok_or_else(|| Error::DegenerateConfiguration("normalization is singular".into()))?;
    let mut m = tq_inv * hn * tp;
    if m[(2, 2)] < 0.0 {
        m = -m;
    }
    Ok((Homography::new(m)?, used))
}

fn reprojection(h: &Homography, c: &Correspondence) -> f64 {
    match h.project(c.p[0], c.p[1]) {
        Ok((x, y)) => (x - c.q[0]).hypot(y - c.q[1]),
        Err(_) => f64::INFINITY,
    }
}

/// Weighted normalized DLT followed by reweighting passes that scale each
/// weight by `min(1, REWEIGHT_SCALE / residual)`.
pub fn fit_weighted_homography(c: &[Correspondence]) -> Result<HomographyEstimate> {
    for corr in c {
        corr.validate()?;
    }
    let base: Vec<f64> = c.iter().map(|c| c.weight).collect();
    let (mut h, mut used) = solve_dlt(c, &base)?;
    for _ in 0..REWEIGHT_PASSES {
        let weights: Vec<f64> = c
            .iter()
            .zip(&base)
            .map(|(corr, w)| {
                let r = reprojection(&h, corr);
                if r > REWEIGHT_SCALE {
                    w * REWEIGHT_SCALE / r
                } else {
                    *w
                }
            })
            .collect();
        match solve_dlt(c, &weights) {
            Ok(next) => (h, used) = next,
            Err(Error::DegenerateConfiguration(_)) => break,
            Err(e) => return Err(e),
        }
    }
    let (mut sw, mut swr) = (0.0, 0.0);
    for &i in &used {
        let r = reprojection(&h, &c[i]);
        if r.is_finite() {
            sw += base[i];
            swr += base[i] * r * r;
        }
    }
    Ok(HomographyEstimate {
        h,
        inlier_rms: if sw > 0.0 { (swr / sw).sqrt() } else { 0.0 },
        support: sw,
    })
}

/// Per-patch refinement of a gyro array from fused flow.
///
/// For every patch a residual homography `D_n` is fitted on pairs
/// `(gyro(p), p + f(p))` sampled from the patch's rows, where `gyro` is the
/// row-smoothed gyro mapping. The eight entries `d_n` of the residuals, taken in
/// image-normalized coordinates, are then smoothed along the patch axis by
/// minimizing
/// `sum (d_n - D_n)^T A_n (d_n - D_n) + smoothing * sum |d_{n+1} - d_n|^2`,
/// where `A_n` is the patch's reprojection information (mean `J^T W J` of its
/// samples). Directions a thin patch cannot determine are borrowed from its
/// neighbours; identical residuals are left unchanged for any `smoothing`, and
/// infinite smoothing gives every patch the information-weighted mean.
/// The result is `d_n * G_n`. Patches with fewer than four effective samples
/// keep their gyro homography and take no part in the smoothing.
#[derive(Debug, Clone)]
pub struct RsFit {
    pub array: HomographyArray,
    /// Indices of patches that kept their gyro homography.
    pub inherited: Vec<usize>,
}

pub fn fit_rs_homography_array(
    f: &FlowField,
    m: &FusionMap,
    gyro: &HomographyArray,
    k: &CameraIntrinsics,
    smoothing: f64,
    stride: usize,
) -> Result<RsFit> {
    ensure(smoothing >= 0.0, || format!("smoothing must be >= 0, got {smoothing}"))?;
    ensure(gyro.width == f.width && gyro.height == f.height, || {
        format!(
            "gyro array is for {}x{} frames but flow is {}x{}",
            gyro.width, gyro.height, f.width, f.height
        )
    })?;
    let samples = flow_to_correspondences(f, m, stride)?;
    let gyro_field = crate::gyro_field::homography_array_to_field(gyro, k, f.width, f.height)?;
    let n = gyro.len();
    let mut per_patch: Vec<Vec<Correspondence>> = vec![Vec::new(); n];
    for c in samples {
        let (x, y) = (c.p[0] as usize, c.p[1] as usize);
        let (gu, gv) = gyro_field.at(x, y);
        per_patch[gyro.patch_of_row(c.p[1])].push(Correspondence::new(
            [c.p[0] + gu, c.p[1] + gv],
            c.q,
            c.weight,
        ));
    }
    let fits: Vec<Option<Matrix3<f64>>> = per_patch
        .par_iter()
        .map(|pairs| match fit_weighted_homography(pairs) {
            Ok(est) => Ok(Some(*est.h.matrix())),
            Err(Error::DegenerateConfiguration(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let inherited: Vec<usize> = (0..n).filter(|&i| fits[i].is_none()).collect();
    for &i in &inherited {
        log::debug!("patch {i}: too few effective samples, keeping the gyro homography");
    }
    let valid: Vec<usize> = (0..n).filter(|&i| fits[i].is_some()).collect();
    let (t, t_inv) = image_frame(gyro.width, gyro.height);
    let params: Vec<Vector8> = valid
        .iter()
        .map(|&i| to_params(&(t * fits[i].expect("valid patch") * t_inv)))
        .collect();
    let info: Vec<Matrix8> = valid
        .iter()
        .zip(&params)
        .map(|(&i, d)| information(&per_patch[i], &t, d))
        .collect();
    let smoothed = smooth_parameters(&params, &info, smoothing)?;
    let mut homographies = gyro.homographies.clone();
    for (slot, d) in valid.iter().zip(smoothed) {
        homographies[*slot] = Homography::new(t_inv * from_params(&d) * t)?.compose(&gyro.homographies[*slot])?;
    }
    Ok(RsFit {
        array: HomographyArray::new(homographies, gyro.width, gyro.height)?,
        inherited,
    })
}

type Vector8 = SVector<f64, 8>;
type Matrix8 = SMatrix<f64, 8, 8>;

/// Similarity to image-normalized coordinates: origin at the image center,
/// unit half of the longer side.
fn image_frame(width: usize, height: usize) -> (Matrix3<f64>, Matrix3<f64>) {
    let s = 2.0 / width.max(height) as f64;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    let t_inv = Matrix3::new(1.0 / s, 0.0, cx, 0.0, 1.0 / s, cy, 0.0, 0.0, 1.0);
    (t, t_inv)
}

fn to_params(m: &Matrix3<f64>) -> Vector8 {
    let m = m / m[(2, 2)];
    Vector8::from_fn(|i, _| m[(i / 3, i % 3)])
}

fn from_params(d: &Vector8) -> Matrix3<f64> {
    Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], 1.0)
}

/// Weighted mean of `J^T J` over the samples, `J` the Jacobian of the
/// normalized-frame projection with respect to the eight entries at `d`.
fn information(pairs: &[Correspondence], t: &Matrix3<f64>, d: &Vector8) -> Matrix8 {
    let mut a = Matrix8::zeros();
    let mut sw = 0.0;
    for c in pairs.iter().filter(|c| c.weight > 0.0) {
        let (x, y) = (t[(0, 0)] * c.p[0] + t[(0, 2)], t[(1, 1)] * c.p[1] + t[(1, 2)]);
        let w = d[6] * x + d[7] * y + 1.0;
        if w.abs() < MIN_PROJECTIVE_W {
            continue;
        }
        let xp = (d[0] * x + d[1] * y + d[2]) / w;
        let yp = (d[3] * x + d[4] * y + d[5]) / w;
        let jx = Vector8::from_column_slice(&[x / w, y / w, 1.0 / w, 0.0, 0.0, 0.0, -xp * x / w, -xp * y / w]);
        let jy = Vector8::from_column_slice(&[0.0, 0.0, 0.0, x / w, y / w, 1.0 / w, -yp * x / w, -yp * y / w]);
        a += c.weight * (jx * jx.transpose() + jy * jy.transpose());
        sw += c.weight;
    }
    if sw > 0.0 {
        a / sw
    } else {
        a
    }
}

/// Solves the block-tridiagonal system `(A + smoothing * L (x) I) d = A D`,
/// `A = blockdiag(A_n)`, `L` the path-graph Laplacian.
fn smooth_parameters(fits: &[Vector8], info: &[Matrix8], smoothing: f64) -> Result<Vec<Vector8>> {
    let n = fits.len();
    if n <= 1 || smoothing == 0.0 {
        return Ok(fits.to_vec());
    }
    let singular = || Error::DegenerateConfiguration("patch information is singular".into());
    if smoothing.is_infinite() {
        let total: Matrix8 = info.iter().sum();
        let rhs: Vector8 = info.iter().zip(fits).map(|(a, d)| a * d).sum();
        let mean = total.cholesky().ok_or_else(singular)?.solve(&rhs);
        return Ok(vec![mean; n]);
    }
    let size = 8 * n;
    let mut lhs = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for (i, (a, d)) in info.iter().zip(fits).enumerate() {
        let o = 8 * i;
        lhs.view_mut((o, o), (8, 8)).copy_from(a);
        rhs.rows_mut(o, 8).copy_from(&(a * d));
        let degree = if i == 0 || i == n - 1 { 1.0 } else { 2.0 };
        for j in 0..8 {
            lhs[(o + j, o + j)] += smoothing * degree;
            if i + 1 < n {
                lhs[(o + j, o + 8 + j)] -= smoothing;
                lhs[(o + 8 + j, o + j)] -= smoothing;
            }
        }
    }
    let solved = lhs.cholesky().ok_or_else(singular)?.solve(&rhs);
    Ok((0..n).map(|i| Vector8::from_iterator(solved.rows(8 * i, 8).iter().copied())).collect())
}

/// Dense `(u, v) = H p - p` for every pixel.
pub fn homography_to_field(h: &Homography, width: usize, height: usize) -> Result<FlowField> {
    let rows = (0..height)
        .into_par_iter()
        .map(|y| {
            let yf = y as f64;
            let mut u = Vec::with_capacity(width);
            let mut v = Vec::with_capacity(width);
            for x in 0..width {
                let xf = x as f64;
                let (px, py) = h.project(xf, yf)?;
                u.push(px - xf);
                v.push(py - yf);
            }
            Ok((u, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut u, mut v) = (Vec::with_capacity(width * height), Vec::with_capacity(width * height));
    for (ru, rv) in rows {
        u.extend(ru);
        v.extend(rv);
    }
    FlowField::from_grids(Grid { width, height, data: u }, Grid { width, height, data: v })
}

/// Outcome of checking a fitted array against the frames.
#[derive(Debug, Clone)]
pub struct PatchSelection {
    pub array: HomographyArray,
    /// Patches where the gyro homography explained the frames at least as well.
    pub kept_gyro: Vec<usize>,
}

/// Keeps a fitted patch only where it lowers the `1 - M` weighted absolute
/// photometric residual `|a(p) - b(p + field(p))|` over that patch's rows by
/// at least [`PHOTOMETRIC_MARGIN`]; elsewhere the gyro homography stays. Pixels warped out of frame b by
/// either field are ignored.
pub fn select_patches_by_photometry(
    fitted: &HomographyArray,
    gyro: &HomographyArray,
    a: &Grid,
    b: &Grid,
    m: &FusionMap,
    k: &CameraIntrinsics,
) -> Result<PatchSelection> {
    ensure(fitted.len() == gyro.len(), || {
        format!("fitted array has {} patches, gyro array {}", fitted.len(), gyro.len())
    })?;
    ensure(
        a.same_dims(b)
            && (a.width, a.height) == (gyro.width, gyro.height)
            && (a.width, a.height) == (fitted.width, fitted.height)
            && (a.width, a.height) == (m.grid.width, m.grid.height),
        || "frames, map and arrays differ in size".into(),
    )?;
    let gf = crate::gyro_field::homography_array_to_field(gyro, k, a.width, a.height)?;
    let ff = crate::gyro_field::homography_array_to_field(fitted, k, a.width, a.height)?;
    let n = gyro.len();
    let per_row: Vec<(f64, f64)> = (0..a.height)
        .into_par_iter()
        .map(|y| {
            let (mut eg, mut ef) = (0.0, 0.0);
            for x in 0..a.width {
                let (gu, gv) = gf.at(x, y);
                let (fu, fv) = ff.at(x, y);
                let (xf, yf) = (x as f64, y as f64);
                if let (Some(bg), Some(bf)) = (b.sample(xf + gu, yf + gv), b.sample(xf + fu, yf + fv)) {
                    let w = (1.0 - m.grid.get(x, y)).max(0.0);
                    let av = a.get(x, y);
                    eg += w * (av - bg).abs();
                    ef += w * (av - bf).abs();
                }
            }
            (eg, ef)
        })
        .collect();
    let mut totals = vec![(0.0, 0.0); n];
    for (y, (eg, ef)) in per_row.into_iter().enumerate() {
        let t = &mut totals[gyro.patch_of_row(y as f64)];
        t.0 += eg;
        t.1 += ef;
    }
    let mut homographies = fitted.homographies.clone();
    let mut kept_gyro = Vec::new();
    for (i, (eg, ef)) in totals.into_iter().enumerate() {
        if !(ef < (1.0 - PHOTOMETRIC_MARGIN) * eg) {
            homographies[i] = gyro.homographies[i];
            kept_gyro.push(i);
        }
    }
    Ok(PatchSelection {
        array: HomographyArray::new(homographies, gyro.width, gyro.height)?,
        kept_gyro,
    })
}

/// Everything a fusion pass needs besides the homography array.
#[derive(Debug, Clone, Copy)]
pub struct PassInputs<'a> {
    pub a: &'a Grid,
    pub b: &'a Grid,
    pub k: &'a CameraIntrinsics,
    pub ladder: &'a BetaLadder,
    pub levels: &'a PyramidLevels,
    pub params: &'a FusionParams,
}

/// Second fusion pass with `fitted` in place of the gyro array.
pub fn replace_gyro_with_homography(inputs: &PassInputs, fitted: &HomographyArray) -> Result<PyramidOutput> {
    run_fusion_padded(
        inputs.a,
        inputs.b,
        fitted,
        inputs.k,
        inputs.ladder,
        inputs.levels,
        inputs.params,
    )
}
