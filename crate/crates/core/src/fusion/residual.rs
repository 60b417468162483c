//! Dense window-based least-squares flow refinement, coarse to fine.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::grid::{box_sum, Grid};
use crate::gyro_field::{downscale_field, FlowField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResidualFlowParams {
    /// Side of the square least-squares window (odd).
    pub window: usize,
    /// Warp-and-solve iterations per pyramid level.
    pub iterations: usize,
    /// Pixels whose structure tensor condition number exceeds this keep their init value.
    pub max_condition: f64,
    /// Same for a smallest eigenvalue (gray levels squared per pixel squared) below this.
    pub min_eigenvalue: f64,
    /// Pyramid depth used by [`estimate_residual_flow`].
    pub levels: usize,
    /// Cap on the per-iteration update length, in pixels of the current level.
    pub max_step: f64,
}

impl Default for ResidualFlowParams {
    fn default() -> Self {
        ResidualFlowParams {
            window: 21,
            iterations: 3,
            max_condition: 1e4,
            min_eigenvalue: 1.0,
            levels: 5,
            max_step: 4.0,
        }
    }
}

impl ResidualFlowParams {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error;
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::config("residual_flow.window", "must be an odd size >= 3"));
        }
        if self.iterations == 0 {
            return Err(Error::config("residual_flow.iterations", "must be >= 1"));
        }
        if !(self.max_condition >= 1.0) {
            return Err(Error::config("residual_flow.max_condition", "must be >= 1"));
        }
        if !(self.min_eigenvalue >= 0.0) {
            return Err(Error::config("residual_flow.min_eigenvalue", "must be >= 0"));
        }
        if self.levels == 0 {
            return Err(Error::config("residual_flow.levels", "must be >= 1"));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::config("residual_flow.max_step", "must be > 0"));
        }
        Ok(())
    }
}

pub(crate) fn gradients(img: &Grid) -> (Grid, Grid) {
    let (w, h) = (img.width, img.height);
    let d = |lo: usize, hi: usize, a: f64, b: f64| if hi > lo { (b - a) / (hi - lo) as f64 } else { 0.0 };
    let gx = Grid::from_fn(w, h, |x, y| {
        let (lo, hi) = (x.saturating_sub(1), (x + 1).min(w - 1));
        d(lo, hi, img.get(lo, y), img.get(hi, y))
    });
    let gy = Grid::from_fn(w, h, |x, y| {
        let (lo, hi) = (y.saturating_sub(1), (y + 1).min(h - 1));
        d(lo, hi, img.get(x, lo), img.get(x, hi))
    });
    (gx, gy)
}

fn eigen_2x2(a: f64, b: f64, c: f64) -> (f64, f64) {
    let half_trace = 0.5 * (a + c);
    let det = a * c - b * b;
    let disc = (half_trace * half_trace - det).max(0.0).sqrt();
    (half_trace - disc, half_trace + disc)
}

/// Single-level refinement of `init`. Pixels whose local structure in `a` is
/// ill-conditioned keep their `init` value.
pub fn refine_flow_level(
    a: &Grid,
    b: &Grid,
    init: &FlowField,
    params: &ResidualFlowParams,
) -> Result<FlowField> {
    ensure(a.same_dims(b) && a.width == init.width && a.height == init.height, || {
        format!(
            "images {}x{} / {}x{} and init {}x{} differ in size",
            a.width, a.height, b.width, b.height, init.width, init.height
        )
    })?;
    params.validate()?;
    let (w, h) = (a.width, a.height);
    let n = w * h;
    let radius = params.window / 2;
    let (ax, ay) = gradients(a);
    let (bx, by) = gradients(b);

    // Conditioning of the reference structure decides which pixels may move.
    let prod = |f: &dyn Fn(usize) -> f64| (0..n).map(f).collect::<Vec<_>>();
    let sxx = box_sum(&prod(&|i| ax.data[i] * ax.data[i]), w, h, radius);
    let sxy = box_sum(&prod(&|i| ax.data[i] * ay.data[i]), w, h, radius);
    let syy = box_sum(&prod(&|i| ay.data[i] * ay.data[i]), w, h, radius);
    let ones = box_sum(&vec![1.0; n], w, h, radius);
    let movable: Vec<bool> = (0..n)
        .map(|i| {
            let (lmin, lmax) = eigen_2x2(sxx[i] / ones[i], sxy[i] / ones[i], syy[i] / ones[i]);
            lmin >= params.min_eigenvalue && lmax <= params.max_condition * lmin
        })
        .collect();

    let mut u = init.u.data.clone();
    let mut v = init.v.data.clone();
    for _ in 0..params.iterations {
        // Per-pixel gradient and temporal terms at the current warp.
        let terms: Vec<[f64; 6]> = (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let (u, v) = (&u, &v);
                let (ax, ay, bx, by) = (&ax, &ay, &bx, &by);
                (0..w).map(move |x| {
                    let i = y * w + x;
                    let (sx, sy) = (x as f64 + u[i], y as f64 + v[i]);
                    match b.sample(sx, sy) {
                        Some(bw) => {
                            let gx = 0.5 * (ax.data[i] + bx.sample_clamped(sx, sy));
                            let gy = 0.5 * (ay.data[i] + by.sample_clamped(sx, sy));
                            let it = bw - a.data[i];
                            [gx * gx, gx * gy, gy * gy, gx * it, gy * it, 1.0]
                        }
                        None => [0.0; 6],
                    }
                })
            })
            .collect();
        let sums: Vec<Vec<f64>> = (0..6)
            .into_par_iter()
            .map(|c| {
                let channel: Vec<f64> = terms.iter().map(|t| t[c]).collect();
                box_sum(&channel, w, h, radius)
            })
            .collect();
        let min_count = 0.25 * params.window as f64 * params.window as f64;
        let max_step = params.max_step;
        u.par_iter_mut()
            .zip(v.par_iter_mut())
            .enumerate()
            .for_each(|(i, (ui, vi))| {
                if !movable[i] || sums[5][i] < min_count.min(0.5 * ones[i]) {
                    return;
                }
                let (gxx, gxy, gyy, gxt, gyt) = (sums[0][i], sums[1][i], sums[2][i], sums[3][i], sums[4][i]);
                let det = gxx * gyy - gxy * gxy;
                if !(det > 0.0) {
                    return;
                }
                let (lmin, lmax) = eigen_2x2(gxx, gxy, gyy);
                if lmax > params.max_condition * lmin {
                    return;
                }
                let mut du = -(gyy * gxt - gxy * gyt) / det;
                let mut dv = -(gxx * gyt - gxy * gxt) / det;
                let len = du.hypot(dv);
                if len > max_step {
                    du *= max_step / len;
                    dv *= max_step / len;
                }
                *ui += du;
                *vi += dv;
            });
    }
    FlowField::from_grids(
        Grid { width: w, height: h, data: u },
        Grid { width: w, height: h, data: v },
    )
}

/// Deepest usable pyramid (at most `levels`) for a `width x height` grid.
pub(crate) fn usable_levels(width: usize, height: usize, levels: usize) -> usize {
    let mut l = 1;
    while l < levels {
        let f = 1usize << l;
        if !width.is_multiple_of(f) || !height.is_multiple_of(f) || width / f < 8 || height / f < 8 {
            break;
        }
        l += 1;
    }
    l
}

/// Coarse-to-fine refinement of `init`: the correction to `init` is estimated
/// at the coarsest level first and carried down through the pyramid.
pub fn estimate_residual_flow(
    a: &Grid,
    b: &Grid,
    init: &FlowField,
    params: &ResidualFlowParams,
) -> Result<FlowField> {
    ensure(a.same_dims(b) && a.width == init.width && a.height == init.height, || {
        format!(
            "images {}x{} / {}x{} and init {}x{} differ in size",
            a.width, a.height, b.width, b.height, init.width, init.height
        )
    })?;
    ensure(init.is_finite(), || "init flow has non-finite values".into())?;
    params.validate()?;
    let levels = usable_levels(a.width, a.height, params.levels);
    let mut correction: Option<FlowField> = None;
    for level in (0..levels).rev() {
        let factor = 1usize << level;
        let (a_l, b_l) = (a.block_average(factor)?, b.block_average(factor)?);
        let base = downscale_field(init, factor)?;
        let start = match &correction {
            None => base.clone(),
            Some(c) => add(&base, &c.upsample(2)),
        };
        let refined = refine_flow_level(&a_l, &b_l, &start, params)?;
        correction = Some(sub(&refined, &base));
        if level == 0 {
            return Ok(refined);
        }
    }
    unreachable!("pyramid has at least one level")
}

fn add(a: &FlowField, b: &FlowField) -> FlowField {
    FlowField::from_fn(a.width, a.height, |x, y| {
        let (au, av) = a.at(x, y);
        let (bu, bv) = b.at(x, y);
        (au + bu, av + bv)
    })
}

fn sub(a: &FlowField, b: &FlowField) -> FlowField {
    FlowField::from_fn(a.width, a.height, |x, y| {
        let (au, av) = a.at(x, y);
        let (bu, bv) = b.at(x, y);
        (au - bu, av - bv)
    })
}
