//! Synthetic scenes with exact ground truth.
//!
//! A camera rotating with angular rate `omega(t)` (and optionally translating)
//! looks at a textured plane `Z = depth`. Every image row is rendered at its own
//! exposure time, so ground truth follows the same rolling-shutter timing the
//! pipeline models. An optional textured rectangle moves in image space on top.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, ValidMask};
use crate::gyro_field::{FlowField, Homography, HomographyArray, RollingShutterModel};
use crate::homography_fit::Correspondence;
use crate::io::{self, FrameEntry, FrameIndex, GyroLog, ProjectConfig};
use crate::math::{rodrigues, CameraIntrinsics, GyroSample};

/// Timestamp of frame 0; everything else is relative to it.
pub const FIRST_FRAME_NS: i64 = 1_000_000_000;
const TABLE_STEP_NS: i64 = 10_000;
const GT_POINT_STRIDE: usize = 16;

/// `omega(t) = base + amplitude * sin(2 pi f t + phase)` per axis, rad/s in camera axes,
/// `t` in seconds since frame 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationTrajectory {
    pub base: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency_hz: f64,
    pub phase: [f64; 3],
}

impl RotationTrajectory {
    pub fn constant(omega: [f64; 3]) -> Self {
        RotationTrajectory {
            base: omega,
            ..Default::default()
        }
    }

    fn is_constant(&self) -> bool {
        self.amplitude == [0.0; 3] || self.frequency_hz == 0.0
    }

    pub fn omega(&self, t: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI * self.frequency_hz;
        Vector3::from_fn(|i, _| self.base[i] + self.amplitude[i] * (w * t + self.phase[i]).sin())
    }

    /// Mean rate over `[t0, t1]` in closed form.
    pub fn mean_omega(&self, t0: f64, t1: f64) -> Vector3<f64> {
        let w = 2.0 * std::f64::consts::PI * self.frequency_hz;
        Vector3::from_fn(|i, _| {
            let wave = if w == 0.0 || t1 == t0 {
                (w * 0.5 * (t0 + t1) + self.phase[i]).sin()
            } else {
                ((w * t0 + self.phase[i]).cos() - (w * t1 + self.phase[i]).cos()) / (w * (t1 - t0))
            };
            self.base[i] + self.amplitude[i] * wave
        })
    }
}

/// Camera translation (world units per second) relative to the plane `Z = depth`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlaneMotion {
    pub velocity: [f64; 3],
    pub depth: f64,
}

impl Default for PlaneMotion {
    fn default() -> Self {
        PlaneMotion {
            velocity: [0.0; 3],
            depth: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TextureSpec {
    /// Coarsest feature size in pixels.
    pub scale: f64,
    /// Peak deviation from mid-gray.
    pub contrast: f64,
    /// Top fraction of the frame-0 view of the plane that is a flat color.
    pub flat_fraction: f64,
    pub flat_value: f64,
}

impl Default for TextureSpec {
    fn default() -> Self {
        TextureSpec {
            scale: 12.0,
            contrast: 60.0,
            flat_fraction: 0.0,
            flat_value: 160.0,
        }
    }
}

/// Textured rectangle moving in image space, occluding the background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForegroundSpec {
    /// Top-left corner in frame 0, px.
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
    /// Displacement per frame, px.
    pub velocity: [f64; 2],
    #[serde(default = "default_texture_seed")]
    pub texture_seed: u64,
}

fn default_texture_seed() -> u64 {
    7
}

impl ForegroundSpec {
    fn origin(&self, frame: usize) -> (f64, f64) {
        let k = frame as f64;
        (self.x + self.velocity[0] * k, self.y + self.velocity[1] * k)
    }

    fn contains(&self, frame: usize, x: f64, y: f64) -> bool {
        let (ox, oy) = self.origin(frame);
        x >= ox && x < ox + self.width && y >= oy && y < oy + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frames")]
    pub frames: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    #[serde(default = "default_gyro_rate")]
    pub gyro_rate_hz: f64,
    /// Standard deviation of additive white gyro noise, rad/s.
    #[serde(default)]
    pub gyro_noise: f64,
    /// Standard deviation of additive image noise, gray levels.
    #[serde(default)]
    pub image_noise: f64,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub rolling_shutter: RollingShutterModel,
    #[serde(default)]
    pub rotation: RotationTrajectory,
    #[serde(default)]
    pub plane: PlaneMotion,
    #[serde(default)]
    pub texture: TextureSpec,
    #[serde(default)]
    pub foreground: Option<ForegroundSpec>,
}

fn default_frames() -> usize {
    2
}

fn default_fps() -> f64 {
    25.0
}

fn default_gyro_rate() -> f64 {
    400.0
}

impl SynthSpec {
    pub fn new(intrinsics: CameraIntrinsics) -> Self {
        SynthSpec {
            seed: 0,
            frames: default_frames(),
            fps: default_fps(),
            gyro_rate_hz: default_gyro_rate(),
            gyro_noise: 0.0,
            image_noise: 0.0,
            intrinsics,
            rolling_shutter: RollingShutterModel::default(),
            rotation: RotationTrajectory::default(),
            plane: PlaneMotion::default(),
            texture: TextureSpec::default(),
            foreground: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(Error::config(path, msg));
        self.intrinsics.validate()?;
        self.rolling_shutter.validate()?;
        if self.frames < 2 {
            return bad("frames", "need at least 2 frames");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps", "must be positive");
        }
        if !(self.gyro_rate_hz > 2.0 * self.fps && self.gyro_rate_hz.is_finite()) {
            return bad("gyro_rate_hz", "must exceed twice the frame rate");
        }
        if !(self.gyro_noise >= 0.0 && self.gyro_noise.is_finite()) {
            return bad("gyro_noise", "must be finite and >= 0");
        }
        if !(self.image_noise >= 0.0 && self.image_noise.is_finite()) {
            return bad("image_noise", "must be finite and >= 0");
        }
        let r = &self.rotation;
        if !r.base.iter().chain(&r.amplitude).chain(&r.phase).all(|v| v.is_finite())
            || !(r.frequency_hz >= 0.0 && r.frequency_hz.is_finite())
        {
            return bad("rotation", "rates must be finite and frequency >= 0");
        }
        if !(self.plane.depth > 0.0 && self.plane.depth.is_finite()) {
            return bad("plane.depth", "must be positive");
        }
        if !self.plane.velocity.iter().all(|v| v.is_finite()) {
            return bad("plane.velocity", "must be finite");
        }
        if !(self.texture.scale > 0.0) {
            return bad("texture.scale", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.texture.flat_fraction) {
            return bad("texture.flat_fraction", "must lie in [0, 1]");
        }
        if let Some(fg) = &self.foreground {
            if !(fg.width > 0.0 && fg.height > 0.0) {
                return bad("foreground", "width and height must be positive");
            }
            if ![fg.x, fg.y, fg.velocity[0], fg.velocity[1]].iter().all(|v| v.is_finite()) {
                return bad("foreground", "position and velocity must be finite");
            }
        }
        Ok(())
    }

    pub fn frame_period_ns(&self) -> i64 {
        (1e9 / self.fps).round() as i64
    }

    pub fn gyro_period_ns(&self) -> i64 {
        (1e9 / self.gyro_rate_hz).round() as i64
    }

    pub fn frame_timestamp(&self, k: usize) -> i64 {
        FIRST_FRAME_NS + k as i64 * self.frame_period_ns()
    }

    fn row_time(&self, frame_ts: i64, row: f64) -> f64 {
        frame_ts as f64
            + self
                .rolling_shutter
                .row_offset_ns(row, self.intrinsics.height, self.frame_period_ns() as f64)
    }

    /// Project config matching the scene's camera.
    pub fn project_config(&self) -> ProjectConfig {
        let mut c = ProjectConfig::new(self.intrinsics);
        c.rolling_shutter = self.rolling_shutter;
        c
    }
}

pub fn read_synth_spec(text: &str) -> Result<SynthSpec> {
    let spec: SynthSpec = toml::from_str(text).map_err(|e| Error::config("synth", e.to_string().trim().replace('\n', " ")))?;
    spec.validate()?;
    Ok(spec)
}

pub fn write_synth_spec(spec: &SynthSpec) -> Result<String> {
    toml::to_string(spec).map_err(|e| Error::config("synth", e.to_string()))
}

/// World-to-camera rotation and camera center over a time span, with
/// `R(frame 0) = I` and the center at the origin at frame 0.
pub struct Trajectory {
    rotation: RotationTrajectory,
    velocity: Vector3<f64>,
    t0_ns: i64,
    table: Vec<Matrix3<f64>>,
    /// Right factor making the frame-0 orientation the identity.
    anchor: Matrix3<f64>,
}

fn seconds(t_ns: f64) -> f64 {
    (t_ns - FIRST_FRAME_NS as f64) * 1e-9
}

impl Trajectory {
    pub fn new(spec: &SynthSpec, t_min_ns: i64, t_max_ns: i64) -> Self {
        let rotation = spec.rotation;
        let t0_ns = t_min_ns.min(FIRST_FRAME_NS) - TABLE_STEP_NS;
        let t_end = t_max_ns.max(FIRST_FRAME_NS) + TABLE_STEP_NS;
        let mut traj = Trajectory {
            rotation,
            velocity: Vector3::from(spec.plane.velocity),
            t0_ns,
            table: Vec::new(),
            anchor: Matrix3::identity(),
        };
        if !rotation.is_constant() {
            let steps = ((t_end - t0_ns) / TABLE_STEP_NS + 2) as usize;
            let mut r = Matrix3::identity();
            let dt = TABLE_STEP_NS as f64 * 1e-9;
            traj.table.reserve(steps);
            for k in 0..steps {
                traj.table.push(r);
                let mid = (t0_ns + k as i64 * TABLE_STEP_NS) as f64 + 0.5 * TABLE_STEP_NS as f64;
                r = rodrigues(&(rotation.omega(seconds(mid)) * dt)).matrix() * r;
            }
            traj.anchor = traj.raw_rotation(FIRST_FRAME_NS as f64).transpose();
        }
        traj
    }

    fn raw_rotation(&self, t_ns: f64) -> Matrix3<f64> {
        let offset = t_ns - self.t0_ns as f64;
        let k = ((offset / TABLE_STEP_NS as f64).floor().max(0.0) as usize).min(self.table.len() - 1);
        let base_ns = self.t0_ns as f64 + (k as i64 * TABLE_STEP_NS) as f64;
        let rest = t_ns - base_ns;
        let mid = base_ns + 0.5 * rest;
        rodrigues(&(self.rotation.omega(seconds(mid)) * (rest * 1e-9))).matrix() * self.table[k]
    }

    pub fn rotation(&self, t_ns: f64) -> Matrix3<f64> {
        if self.rotation.is_constant() {
            return *rodrigues(&(self.rotation.omega(0.0) * seconds(t_ns))).matrix();
        }
        self.raw_rotation(t_ns) * self.anchor
    }

    pub fn center(&self, t_ns: f64) -> Vector3<f64> {
        self.velocity * seconds(t_ns)
    }
}

/// Camera pose plus the plane, enough to move pixels between times.
struct Scene<'a> {
    spec: &'a SynthSpec,
    traj: Trajectory,
    k: Matrix3<f64>,
    k_inv: Matrix3<f64>,
}

struct Pose {
    r: Matrix3<f64>,
    c: Vector3<f64>,
}

impl<'a> Scene<'a> {
    fn new(spec: &'a SynthSpec) -> Self {
        let period = spec.frame_period_ns();
        let t_min = FIRST_FRAME_NS - 2 * period;
        let t_max = spec.frame_timestamp(spec.frames - 1) + 2 * period;
        Scene {
            spec,
            traj: Trajectory::new(spec, t_min, t_max),
            k: spec.intrinsics.matrix(),
            k_inv: spec.intrinsics.inverse_matrix(),
        }
    }

    fn pose(&self, t_ns: f64) -> Pose {
        Pose {
            r: self.traj.rotation(t_ns),
            c: self.traj.center(t_ns),
        }
    }

    /// World point on the plane seen at pixel `(x, y)`.
    fn backproject(&self, pose: &Pose, x: f64, y: f64) -> Option<Vector3<f64>> {
        let d = pose.r.transpose() * (self.k_inv * Vector3::new(x, y, 1.0));
        let s = (self.spec.plane.depth - pose.c.z) / d.z;
        (s > 0.0 && s.is_finite()).then(|| pose.c + d * s)
    }

    fn project(&self, pose: &Pose, p: &Vector3<f64>) -> Option<(f64, f64)> {
        let x = self.k * (pose.r * (p - pose.c));
        (x.z > 1e-9).then(|| (x.x / x.z, x.y / x.z))
    }

    /// Where the background point under `(x, y)` in frame `a` appears in frame `b`,
    /// accounting for the exposure time of the row it lands on. `pose_a` and
    /// `pose_b` are the poses at row `y` of each frame.
    fn background_target(&self, tb: i64, pose_a: &Pose, pose_b: &Pose, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.backproject(pose_a, x, y)?;
        let mut q = self.project(pose_b, &p)?;
        let mut row = y;
        for _ in 0..50 {
            if (q.1 - row).abs() < 1e-11 {
                break;
            }
            row = q.1;
            q = self.project(&self.pose(self.spec.row_time(tb, row)), &p)?;
        }
        Some(q)
    }

    /// Plane-induced homography between the poses at `t_a` and `t_b`.
    fn homography(&self, t_a: f64, t_b: f64) -> Result<Homography> {
        let (pa, pb) = (self.pose(t_a), self.pose(t_b));
        let n_a = pa.r * Vector3::z();
        let d_a = self.spec.plane.depth - pa.c.z;
        let m = pb.r * pa.r.transpose() + (pb.r * (pa.c - pb.c)) * n_a.transpose() / d_a;
        Homography::new(self.k * m * self.k_inv)
    }

    fn background_value(&self, p: &Vector3<f64>) -> f64 {
        let tex = &self.spec.texture;
        let k = &self.spec.intrinsics;
        let depth = self.spec.plane.depth;
        let u = k.fx * p.x / depth + k.cx;
        let v = k.fy * p.y / depth + k.cy;
        if v < tex.flat_fraction * k.height as f64 - 0.5 {
            return tex.flat_value;
        }
        128.0 + tex.contrast * fractal_noise(self.spec.seed, u, v, tex.scale)
    }

    fn render(&self, frame: usize) -> Grid {
        let (w, h) = (self.spec.intrinsics.width, self.spec.intrinsics.height);
        let ts = self.spec.frame_timestamp(frame);
        let fg = self.spec.foreground;
        let rows: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let yf = y as f64;
                let pose = self.pose(self.spec.row_time(ts, yf));
                (0..w)
                    .map(|x| {
                        let xf = x as f64;
                        if let Some(fg) = fg.as_ref().filter(|f| f.contains(frame, xf, yf)) {
                            let (ox, oy) = fg.origin(frame);
                            return 128.0 + 80.0 * fractal_noise(fg.texture_seed, xf - ox, yf - oy, 6.0);
                        }
                        self.backproject(&pose, xf, yf).map_or(0.0, |p| self.background_value(&p))
                    })
                    .collect()
            })
            .collect();
        Grid {
            width: w,
            height: h,
            data: rows.concat(),
        }
    }

    fn gt_flow(&self, a: usize, b: usize) -> (FlowField, ValidMask) {
        let (w, h) = (self.spec.intrinsics.width, self.spec.intrinsics.height);
        let (ta, tb) = (self.spec.frame_timestamp(a), self.spec.frame_timestamp(b));
        let fg = self.spec.foreground;
        let frames_apart = b as f64 - a as f64;
        let rows: Vec<Vec<Option<(f64, f64)>>> = (0..h)
            .into_par_iter()
            .map(|y| {
                let yf = y as f64;
                let pose_a = self.pose(self.spec.row_time(ta, yf));
                let pose_b = self.pose(self.spec.row_time(tb, yf));
                (0..w)
                    .map(|x| {
                        let xf = x as f64;
                        if let Some(fg) = fg.as_ref().filter(|f| f.contains(a, xf, yf)) {
                            return Some((fg.velocity[0] * frames_apart, fg.velocity[1] * frames_apart));
                        }
                        self.background_target(tb, &pose_a, &pose_b, xf, yf)
                            .map(|(qx, qy)| (qx - xf, qy - yf))
                    })
                    .collect()
            })
            .collect();
        let mut flow = FlowField::zeros(w, h);
        let mut valid = ValidMask::all(w, h);
        for (i, v) in rows.into_iter().flatten().enumerate() {
            match v {
                Some((u, v)) => {
                    flow.u.data[i] = u;
                    flow.v.data[i] = v;
                }
                None => valid.data[i] = false,
            }
        }
        (flow, valid)
    }

    fn gt_homographies(&self, a: usize, b: usize) -> Result<HomographyArray> {
        let spec = self.spec;
        let (ta, tb) = (spec.frame_timestamp(a), spec.frame_timestamp(b));
        let h = spec.intrinsics.height;
        let hs = (0..spec.rolling_shutter.patch_count)
            .map(|n| {
                let row = spec.rolling_shutter.patch_center_row(n, h);
                self.homography(spec.row_time(ta, row), spec.row_time(tb, row))
            })
            .collect::<Result<Vec<_>>>()?;
        HomographyArray::new(hs, spec.intrinsics.width, h)
    }

    fn gt_points(&self, a: usize, b: usize, flow: &FlowField, valid: &ValidMask) -> Vec<Correspondence> {
        let (w, h) = (flow.width, flow.height);
        let mut out = Vec::new();
        for y in (GT_POINT_STRIDE / 2..h).step_by(GT_POINT_STRIDE) {
            for x in (GT_POINT_STRIDE / 2..w).step_by(GT_POINT_STRIDE) {
                let (xf, yf) = (x as f64, y as f64);
                if !valid.get(x, y) {
                    continue;
                }
                let (u, v) = flow.at(x, y);
                let (qx, qy) = (xf + u, yf + v);
                let occluded = self
                    .spec
                    .foreground
                    .is_some_and(|f| f.contains(a, xf, yf) || f.contains(b, qx, qy));
                let inside = qx >= 0.0 && qy >= 0.0 && qx <= (w - 1) as f64 && qy <= (h - 1) as f64;
                if !occluded && inside {
                    out.push(Correspondence::new([xf, yf], [qx, qy], 1.0));
                }
            }
        }
        out
    }
}

fn hash2(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut z = seed
        .wrapping_add((ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
}

fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (sx, sy) = (fade(x - fx), fade(y - fy));
    let top = hash2(seed, ix, iy) * (1.0 - sx) + hash2(seed, ix + 1, iy) * sx;
    let bottom = hash2(seed, ix, iy + 1) * (1.0 - sx) + hash2(seed, ix + 1, iy + 1) * sx;
    top * (1.0 - sy) + bottom * sy
}

/// Three octaves of value noise in `[-1, 1]`, coarsest features `scale` px wide.
pub fn fractal_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.0 / scale;
    for octave in 0..3u64 {
        sum += amp * value_noise(seed.wrapping_add(octave * 0x5851_F42D), x * freq, y * freq);
        amp *= 0.5;
        freq *= 2.0;
    }
    sum / 1.75
}

/// A rendered sequence with ground truth for every consecutive pair.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub images: Vec<Grid>,
    pub gyro_log: GyroLog,
    pub frames: FrameIndex,
    /// Physical flow from frame `k` to `k + 1`.
    pub gt_flows: Vec<FlowField>,
    pub gt_valid: Vec<ValidMask>,
    /// Background-only point pairs, frame `k` to `k + 1`.
    pub gt_points: Vec<Vec<Correspondence>>,
    /// Per-patch plane homographies, frame `k` to `k + 1`.
    pub gt_homographies: Vec<HomographyArray>,
    pub warnings: Vec<String>,
}

pub fn frame_file_name(k: usize) -> String {
    format!("frames/{k:06}.png")
}

pub fn pair_stem(a: u64, b: u64) -> String {
    format!("{a:06}_{b:06}")
}

pub fn synth_sequence(spec: &SynthSpec) -> Result<SynthSequence> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let mut warnings = Vec::new();
    if let Some(fg) = &spec.foreground {
        let (w, h) = (spec.intrinsics.width as f64, spec.intrinsics.height as f64);
        for k in 0..spec.frames {
            let (ox, oy) = fg.origin(k);
            if ox >= w || oy >= h || ox + fg.width <= 0.0 || oy + fg.height <= 0.0 {
                let msg = format!("foreground rectangle is entirely outside frame {k}");
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let mut images: Vec<Grid> = (0..spec.frames).map(|k| scene.render(k)).collect();
    let noise = Normal::new(0.0, spec.image_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    for (k, img) in images.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(1 + k as u64);
        for v in img.data.iter_mut() {
            let n = if spec.image_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = (*v + n).round().clamp(0.0, 255.0);
        }
    }

    let gyro_log = synth_gyro_log(spec);
    let frames = FrameIndex {
        frames: (0..spec.frames)
            .map(|k| FrameEntry {
                id: k as u64,
                timestamp_ns: spec.frame_timestamp(k),
                path: frame_file_name(k),
            })
            .collect(),
    };

    let (mut gt_flows, mut gt_valid, mut gt_points, mut gt_homographies) = (vec![], vec![], vec![], vec![]);
    for a in 0..spec.frames - 1 {
        let (flow, valid) = scene.gt_flow(a, a + 1);
        gt_points.push(scene.gt_points(a, a + 1, &flow, &valid));
        gt_homographies.push(scene.gt_homographies(a, a + 1)?);
        gt_flows.push(flow);
        gt_valid.push(valid);
    }
    Ok(SynthSequence {
        images,
        gyro_log,
        frames,
        gt_flows,
        gt_valid,
        gt_points,
        gt_homographies,
        warnings,
    })
}

/// Gyro samples on a grid aligned to frame timestamps. Each sample holds the
/// mean rate until the next one, plus optional white noise.
fn synth_gyro_log(spec: &SynthSpec) -> GyroLog {
    let sp = spec.gyro_period_ns();
    let period = spec.frame_period_ns();
    let first = (FIRST_FRAME_NS - 2 * period).div_euclid(sp) * sp;
    let last = spec.frame_timestamp(spec.frames - 1) + 2 * period;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.gyro_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut samples = Vec::new();
    let mut t = first;
    while t <= last + sp {
        let mean = spec
            .rotation
            .mean_omega(seconds(t as f64), seconds((t + sp) as f64));
        let mut omega = [mean.x, mean.y, mean.z];
        if spec.gyro_noise > 0.0 {
            for w in omega.iter_mut() {
                *w += noise.sample(&mut rng);
            }
        }
        samples.push(GyroSample::new(t, omega));
        t += sp;
    }
    GyroLog {
        samples,
        clock: Some("synth".into()),
    }
}

/// Dense model field between two timestamps: each row uses the plane homography
/// between the poses at that row's exposure times in both frames. No patches,
/// no interpolation.
pub fn per_row_exact_field(spec: &SynthSpec, t_a: i64, t_b: i64) -> Result<FlowField> {
    spec.validate()?;
    let mut scene = Scene::new(spec);
    let (lo, hi) = (t_a.min(t_b), t_a.max(t_b));
    let period = spec.frame_period_ns();
    scene.traj = Trajectory::new(spec, lo - 2 * period, hi + 2 * period);
    let (w, h) = (spec.intrinsics.width, spec.intrinsics.height);
    let rows = (0..h)
        .into_par_iter()
        .map(|y| {
            let yf = y as f64;
            let hm = scene.homography(spec.row_time(t_a, yf), spec.row_time(t_b, yf))?;
            (0..w)
                .map(|x| {
                    let (px, py) = hm.project(x as f64, yf)?;
                    Ok((px - x as f64, py - yf))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut f = FlowField::zeros(w, h);
    for (i, (u, v)) in rows.into_iter().flatten().enumerate() {
        f.u.data[i] = u;
        f.v.data[i] = v;
    }
    Ok(f)
}

/// Writes a complete project: `config.toml`, `synth.toml`, `gyro.csv`,
/// `frames.csv`, `frames/*.png` and per-pair ground truth under `gt/`.
pub fn write_project(spec: &SynthSpec, seq: &SynthSequence, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let write = |rel: &str, bytes: &[u8]| -> Result<std::path::PathBuf> {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::from(e).in_file(parent))?;
        }
        std::fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))?;
        Ok(path)
    };
    let mut written = vec![
        write("config.toml", io::write_config(&spec.project_config())?.as_bytes())?,
        write("synth.toml", write_synth_spec(spec)?.as_bytes())?,
        write("gyro.csv", io::write_gyro_log(&seq.gyro_log).as_bytes())?,
        write("frames.csv", io::write_frame_index(&seq.frames).as_bytes())?,
    ];
    for (k, img) in seq.images.iter().enumerate() {
        written.push(write(&frame_file_name(k), &io::encode_png(&Image::from_gray(img))?)?);
    }
    for a in 0..seq.gt_flows.len() {
        let stem = pair_stem(a as u64, a as u64 + 1);
        written.push(write(
            &format!("gt/flow_{stem}.flo"),
            &io::write_flo_masked(&seq.gt_flows[a], &seq.gt_valid[a])?,
        )?);
        written.push(write(
            &format!("gt/points_{stem}.txt"),
            io::write_correspondences(&seq.gt_points[a]).as_bytes(),
        )?);
        written.push(write(
            &format!("gt/homography_{stem}.txt"),
            io::write_homography_array(&seq.gt_homographies[a]).as_bytes(),
        )?);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gyro_field::{homography_array_to_field, rotation_homography};
    use crate::homography_fit::homography_to_field;
    use crate::math::{integrate_gyro, AxisRemap};

    fn small_spec() -> SynthSpec {
        SynthSpec::new(CameraIntrinsics::new(300.0, 300.0, 79.5, 59.5, 160, 120).unwrap())
    }

    fn max_diff(a: &FlowField, b: &FlowField) -> f64 {
        a.u.data
            .iter()
            .zip(&b.u.data)
            .chain(a.v.data.iter().zip(&b.v.data))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn static_scene_is_static() {
        let seq = synth_sequence(&small_spec()).unwrap();
        assert_eq!(seq.images[0], seq.images[1]);
        assert!(seq.gt_flows[0].u.data.iter().chain(&seq.gt_flows[0].v.data).all(|v| v.abs() < 1e-9));
        assert!(seq.gyro_log.samples.iter().all(|s| s.omega == [0.0; 3]));
        let texture_range = seq.images[0].data.iter().cloned().fold(0.0, f64::max)
            - seq.images[0].data.iter().cloned().fold(255.0, f64::min);
        assert!(texture_range > 40.0);
    }

    #[test]
    fn constant_rotation_global_shutter_matches_rotation_homography() {
        let mut spec = small_spec();
        spec.rolling_shutter = RollingShutterModel::global_shutter(14);
        spec.rotation = RotationTrajectory::constant([0.0, 0.0, 0.8]);
        let seq = synth_sequence(&spec).unwrap();
        let dt = spec.frame_period_ns() as f64 * 1e-9;
        let h = rotation_homography(&spec.intrinsics, &rodrigues(&Vector3::new(0.0, 0.0, 0.8 * dt)));
        let expected = homography_to_field(&h, 160, 120).unwrap();
        assert!(max_diff(&seq.gt_flows[0], &expected) < 1e-9);
        let exact = per_row_exact_field(&spec, spec.frame_timestamp(0), spec.frame_timestamp(1)).unwrap();
        assert!(max_diff(&exact, &expected) < 1e-9);
        // Homography array and GT flow agree without translation.
        let arr_field = homography_array_to_field(&seq.gt_homographies[0], &spec.intrinsics, 160, 120).unwrap();
        assert!(max_diff(&arr_field, &seq.gt_flows[0]) < 1e-9);
    }

    #[test]
    fn foreground_moves_by_its_velocity() {
        let mut spec = small_spec();
        spec.foreground = Some(ForegroundSpec {
            x: 40.0,
            y: 30.0,
            width: 30.0,
            height: 20.0,
            velocity: [4.0, 0.0],
            texture_seed: 3,
        });
        let seq = synth_sequence(&spec).unwrap();
        let f = &seq.gt_flows[0];
        assert_eq!(f.at(50, 40), (4.0, 0.0));
        assert!(f.at(10, 10).0.abs() < 1e-9 && f.at(10, 10).1.abs() < 1e-9);
        for y in 30..50 {
            for x in 40..70 {
                assert_eq!(seq.images[0].get(x, y), seq.images[1].get(x + 4, y));
            }
        }
        assert!(seq.gt_points[0].iter().all(|c| !(c.p[0] >= 40.0 && c.p[0] < 70.0 && c.p[1] >= 30.0 && c.p[1] < 50.0)));
    }

    #[test]
    fn gyro_log_reproduces_trajectory() {
        let mut spec = small_spec();
        spec.frames = 4;
        spec.gyro_rate_hz = 200.0;
        spec.rotation = RotationTrajectory {
            base: [0.1, -0.2, 0.05],
            amplitude: [0.6, 0.4, 0.3],
            frequency_hz: 1.5,
            phase: [0.0, 1.0, 2.0],
        };
        let seq = synth_sequence(&spec).unwrap();
        let scene = Scene::new(&spec);
        for k in 0..3 {
            let (ta, tb) = (spec.frame_timestamp(k), spec.frame_timestamp(k + 1));
            let r = integrate_gyro(&seq.gyro_log.samples, ta, tb, &AxisRemap::identity()).unwrap();
            let truth = scene.traj.rotation(tb as f64) * scene.traj.rotation(ta as f64).transpose();
            let err = (r.matrix() - truth).abs().max();
            assert!(err < 1e-6, "pair {k}: {err}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut spec = small_spec();
        spec.image_noise = 2.0;
        spec.gyro_noise = 0.01;
        spec.rotation = RotationTrajectory::constant([0.1, 0.2, 0.0]);
        let a = synth_sequence(&spec).unwrap();
        let b = synth_sequence(&spec).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.gyro_log, b.gyro_log);
        spec.seed = 1;
        assert_ne!(synth_sequence(&spec).unwrap().images, a.images);
    }

    #[test]
    fn spec_validation_and_round_trip() {
        let mut spec = small_spec();
        spec.gyro_rate_hz = 40.0;
        assert!(spec.validate().is_err());
        spec.gyro_rate_hz = 400.0;
        spec.foreground = Some(ForegroundSpec {
            x: 1.0,
            y: 2.0,
            width: 3.0,
            height: 4.0,
            velocity: [1.0, -1.0],
            texture_seed: 9,
        });
        let text = write_synth_spec(&spec).unwrap();
        assert_eq!(read_synth_spec(&text).unwrap(), spec);
        assert!(read_synth_spec("frames = 3\n").is_err());
    }

    #[test]
    fn translation_changes_homography() {
        let mut spec = small_spec();
        spec.plane.velocity = [0.5, 0.0, 0.0];
        let seq = synth_sequence(&spec).unwrap();
        // Lateral motion of 0.02 world units at depth 5 shifts the plane by 1.2 px.
        let (u, v) = seq.gt_flows[0].at(80, 60);
        assert!((u + 1.2).abs() < 1e-9 && v.abs() < 1e-9, "{u} {v}");
        let arr_field = homography_array_to_field(&seq.gt_homographies[0], &spec.intrinsics, 160, 120).unwrap();
        assert!(max_diff(&arr_field, &seq.gt_flows[0]) < 1e-9);
    }
}
