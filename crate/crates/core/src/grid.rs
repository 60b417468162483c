//! Dense row-major rasters: scalar grids, validity masks and 1/3-channel images.
//!
//! Pixel centers sit at integer coordinates with the origin at the top-left,
//! x to the right and y down.

use crate::error::{ensure, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Grid {
            width,
            height,
            data: vec![fill; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        ensure(data.len() == width * height, || {
            format!("grid data has {} values, expected {}x{}", data.len(), width, height)
        })?;
        Ok(Grid { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    pub fn same_dims(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample; `None` when (x, y) falls outside `[0, w-1] x [0, h-1]`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
            return None;
        }
        Some(self.sample_inside(x, y))
    }

    /// Bilinear sample with coordinates clamped to the grid.
    #[inline]
    pub fn sample_clamped(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        self.sample_inside(x, y)
    }

    #[inline]
    fn sample_inside(&self, x: f64, y: f64) -> f64 {
        let x0 = (x.floor() as usize).min(self.width - 1);
        let y0 = (y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Averages `factor x factor` blocks. Dimensions must be divisible by `factor`.
    pub fn block_average(&self, factor: usize) -> Result<Grid> {
        ensure(factor >= 1, || "downscale factor must be >= 1".into())?;
        ensure(self.width.is_multiple_of(factor) && self.height.is_multiple_of(factor), || {
            format!(
                "{}x{} is not divisible by downscale factor {}",
                self.width, self.height, factor
            )
        })?;
        let w = self.width / factor;
        let h = self.height / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = Grid::new(w, h, 0.0);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in 0..factor {
                    let row = self.row(y * factor + dy);
                    for dx in 0..factor {
                        acc += row[x * factor + dx];
                    }
                }
                out.set(x, y, acc * norm);
            }
        }
        Ok(out)
    }

    /// Bilinear upsampling by an integer factor; pixel centers of the coarse grid
    /// land at `factor * x + (factor - 1) / 2` in the fine grid.
    pub fn upsample(&self, factor: usize) -> Grid {
        let offset = (factor as f64 - 1.0) / 2.0;
        let inv = 1.0 / factor as f64;
        Grid::from_fn(self.width * factor, self.height * factor, |x, y| {
            self.sample_clamped((x as f64 - offset) * inv, (y as f64 - offset) * inv)
        })
    }

    /// Mirror-pads on the right and bottom edges (reflect without repeating the edge pixel).
    pub fn pad_mirror(&self, width: usize, height: usize) -> Grid {
        debug_assert!(width >= self.width && height >= self.height);
        Grid::from_fn(width, height, |x, y| {
            self.get(reflect(x, self.width), reflect(y, self.height))
        })
    }

    pub fn crop(&self, width: usize, height: usize) -> Grid {
        Grid::from_fn(width, height, |x, y| self.get(x, y))
    }

    /// Mean over a `(2r+1) x (2r+1)` window, truncated at the borders.
    pub fn box_mean(&self, radius: usize) -> Grid {
        let sums = box_sum(&self.data, self.width, self.height, radius);
        let counts = box_counts(self.width, self.height, radius);
        Grid {
            width: self.width,
            height: self.height,
            data: sums.iter().zip(&counts).map(|(s, c)| s / c).collect(),
        }
    }
}

pub(crate) fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i % period;
    if m < n {
        m
    } else {
        period - m
    }
}

/// Separable window sum over a `(2r+1)^2` neighbourhood, truncated at the borders.
pub(crate) fn box_sum(data: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let mut horiz = vec![0.0; data.len()];
    for y in 0..height {
        let row = &data[y * width..(y + 1) * width];
        let out = &mut horiz[y * width..(y + 1) * width];
        let mut prefix = Vec::with_capacity(width + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for &v in row {
            acc += v;
            prefix.push(acc);
        }
        for (x, o) in out.iter_mut().enumerate() {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(width);
            *o = prefix[hi] - prefix[lo];
        }
    }
    let mut out = vec![0.0; data.len()];
    let mut prefix = vec![0.0; (height + 1) * width];
    for y in 0..height {
        for x in 0..width {
            prefix[(y + 1) * width + x] = prefix[y * width + x] + horiz[y * width + x];
        }
    }
    for y in 0..height {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius + 1).min(height);
        for x in 0..width {
            out[y * width + x] = prefix[hi * width + x] - prefix[lo * width + x];
        }
    }
    out
}

fn box_counts(width: usize, height: usize, radius: usize) -> Vec<f64> {
    let span = |i: usize, n: usize| ((i + radius + 1).min(n) - i.saturating_sub(radius)) as f64;
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let sy = span(y, height);
        for x in 0..width {
            out.push(sy * span(x, width));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl ValidMask {
    pub fn all(width: usize, height: usize) -> Self {
        ValidMask {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn and(&self, other: &ValidMask) -> ValidMask {
        ValidMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }
}

/// 8-bit-range image held as `f64` samples in `[0, 255]`, 1 (gray) or 3 (RGB) channels interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_gray(grid: &Grid) -> Self {
        Image {
            width: grid.width,
            height: grid.height,
            channels: 1,
            data: grid.data.clone(),
        }
    }

    pub fn channel(&self, c: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
        }
    }

    /// BT.601 luma; a gray image is returned as is.
    pub fn luma(&self) -> Grid {
        if self.channels == 1 {
            return self.channel(0);
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
            .collect();
        Grid {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (0..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(reflect(5, 1), 0);
    }

    #[test]
    fn box_sum_matches_naive() {
        let g = Grid::from_fn(7, 5, |x, y| (x * 3 + y * 11 % 7) as f64);
        let r = 2;
        let sums = box_sum(&g.data, g.width, g.height, r);
        for y in 0..g.height {
            for x in 0..g.width {
                let mut acc = 0.0;
                for yy in y.saturating_sub(r)..(y + r + 1).min(g.height) {
                    for xx in x.saturating_sub(r)..(x + r + 1).min(g.width) {
                        acc += g.get(xx, yy);
                    }
                }
                assert_eq!(sums[y * g.width + x], acc);
            }
        }
    }

    #[test]
    fn bilinear_sample_edges() {
        let g = Grid::from_fn(3, 2, |x, y| (x + 10 * y) as f64);
        assert_eq!(g.sample(2.0, 1.0), Some(12.0));
        assert_eq!(g.sample(0.5, 0.5), Some(5.5));
        assert_eq!(g.sample(2.01, 0.0), None);
        assert_eq!(g.sample(-0.01, 0.0), None);
    }

    #[test]
    fn luma_of_pure_red() {
        let img = Image {
            width: 1,
            height: 1,
            channels: 3,
            data: vec![255.0, 0.0, 0.0],
        };
        assert_eq!(img.luma().data[0].round(), (0.299f64 * 255.0).round());
    }
}
