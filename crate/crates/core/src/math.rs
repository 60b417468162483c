//! Rotation, quaternion and intrinsics primitives.
//!
//! Camera frame: x right, y down, z forward. Rotations are world-to-camera;
//! angular velocities are expressed in the camera frame after [`AxisRemap`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Orthonormality tolerance of the [`RotationMatrix`] invariant.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Tolerance used when accepting external matrices as rotations.
pub const ROTATION_INPUT_TOL: f64 = 1e-6;
/// Largest norm deviation accepted by [`quaternion_to_rotation`].
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-8;
const NLERP_THRESHOLD: f64 = 1.0 - 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GyroSample {
    pub timestamp_ns: i64,
    /// rad/s, device axes.
    pub omega: [f64; 3],
}

impl GyroSample {
    pub fn new(timestamp_ns: i64, omega: [f64; 3]) -> Self {
        GyroSample { timestamp_ns, omega }
    }

    pub fn omega_vec(&self) -> Vector3<f64> {
        Vector3::from(self.omega)
    }
}

/// Checks the sequence invariants: non-negative, strictly increasing timestamps and finite rates.
pub fn validate_samples(samples: &[GyroSample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        ensure(s.timestamp_ns >= 0, || format!("sample {i} has negative timestamp"))?;
        ensure(s.omega.iter().all(|v| v.is_finite()), || {
            format!("sample {i} has non-finite angular velocity")
        })?;
        if i > 0 {
            ensure(samples[i - 1].timestamp_ns < s.timestamp_ns, || {
                format!("sample {i} timestamp does not increase")
            })?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Accepts `m` if it is orthonormal with determinant +1 within [`ORTHONORMAL_TOL`].
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let dev = orthonormality_deviation(&m);
        if dev > ORTHONORMAL_TOL {
            return Err(Error::InvalidRotation(format!("deviation {dev:.3e}")));
        }
        Ok(RotationMatrix(m))
    }

    pub(crate) fn new_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, rhs: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * rhs.0)
    }

    /// Rotation angle in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        let q = UnitQuaternion::from_rotation(self);
        2.0 * q.vector_norm().atan2(q.w.abs())
    }
}

/// Max of `|R^T R - I|` entries and `|det R - 1|`.
pub fn orthonormality_deviation(m: &Matrix3<f64>) -> f64 {
    let gram = m.transpose() * m - Matrix3::identity();
    let gram_dev = gram.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    gram_dev.max((m.determinant() - 1.0).abs())
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map `exp([v]x)` of an axis-angle vector.
pub fn rodrigues(axis_angle: &Vector3<f64>) -> RotationMatrix {
    let theta2 = axis_angle.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = skew(axis_angle);
    RotationMatrix(Matrix3::identity() + k * a + k * k * b)
}

/// Unit quaternion `w + xi + yj + zk`, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl UnitQuaternion {
    pub const IDENTITY: UnitQuaternion = UnitQuaternion {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Normalizes and canonicalizes the sign. Panics on a zero quaternion.
    pub fn normalize(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n > 0.0 && n.is_finite(), "cannot normalize quaternion of norm {n}");
        UnitQuaternion {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
        .canonical()
    }

    pub fn from_axis_angle(axis_angle: &Vector3<f64>) -> Self {
        let theta = axis_angle.norm();
        if theta < SMALL_ANGLE {
            let h = axis_angle * 0.5;
            return UnitQuaternion::normalize(1.0, h.x, h.y, h.z);
        }
        let s = (theta / 2.0).sin() / theta;
        UnitQuaternion::normalize(
            (theta / 2.0).cos(),
            axis_angle.x * s,
            axis_angle.y * s,
            axis_angle.z * s,
        )
    }

    /// Shepperd's method on a matrix already known to be a rotation.
    pub fn from_rotation(r: &RotationMatrix) -> Self {
        let m = r.matrix();
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        UnitQuaternion::normalize(w, x, y, z)
    }

    pub fn to_rotation(&self) -> RotationMatrix {
        let UnitQuaternion { w, x, y, z } = *self;
        RotationMatrix(Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn dot(&self, o: &UnitQuaternion) -> f64 {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    fn vector_norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    fn neg(&self) -> Self {
        UnitQuaternion {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    /// Picks the representative with `w > 0`, or the first non-zero vector
    /// component positive when `w == 0`.
    fn canonical(self) -> Self {
        let lead = [self.w, self.x, self.y, self.z]
            .into_iter()
            .find(|v| *v != 0.0)
            .unwrap_or(1.0);
        if lead < 0.0 {
            self.neg()
        } else {
            self
        }
    }
}

/// Converts an arbitrary 3x3 matrix, rejecting matrices that are not rotations
/// within [`ROTATION_INPUT_TOL`].
pub fn rotation_to_quaternion(m: &Matrix3<f64>) -> Result<UnitQuaternion> {
    let dev = orthonormality_deviation(m);
    if !(dev <= ROTATION_INPUT_TOL) {
        return Err(Error::InvalidRotation(format!("deviation {dev:.3e}")));
    }
    Ok(UnitQuaternion::from_rotation(&RotationMatrix::new_unchecked(*m)))
}

pub fn quaternion_to_rotation(q: &UnitQuaternion) -> Result<RotationMatrix> {
    let norm = q.norm();
    if !((norm - 1.0).abs() <= QUATERNION_NORM_TOL) {
        return Err(Error::InvalidQuaternion { norm });
    }
    let q = UnitQuaternion::normalize(q.w, q.x, q.y, q.z);
    Ok(q.to_rotation())
}

/// Spherical linear interpolation along the shortest arc.
pub fn slerp(q0: &UnitQuaternion, q1: &UnitQuaternion, t: f64) -> UnitQuaternion {
    let mut end = *q1;
    let mut dot = q0.dot(q1);
    if dot < 0.0 {
        end = end.neg();
        dot = -dot;
    }
    if t <= 0.0 {
        return *q0;
    }
    if t >= 1.0 {
        return q1.canonical();
    }
    let (a, b) = if dot > NLERP_THRESHOLD {
        (1.0 - t, t)
    } else {
        let theta = dot.min(1.0).acos();
        let sin_theta = theta.sin();
        (
            ((1.0 - t) * theta).sin() / sin_theta,
            (t * theta).sin() / sin_theta,
        )
    };
    UnitQuaternion::normalize(
        a * q0.w + b * end.w,
        a * q0.x + b * end.x,
        a * q0.y + b * end.y,
        a * q0.z + b * end.z,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, msg: &str| Err(Error::config(format!("intrinsics.{name}"), msg));
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return field("fx", "must be a positive finite focal length");
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return field("fy", "must be a positive finite focal length");
        }
        if self.width == 0 || self.height == 0 {
            return field("width", "image size must be non-zero");
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return field("cx", "principal point must lie in [0, width)");
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return field("cy", "principal point must lie in [0, height)");
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Same camera resampled to a grid `factor` times smaller (pixel-center aligned).
    pub fn downscaled(&self, factor: usize) -> CameraIntrinsics {
        let f = factor as f64;
        let shift = (f - 1.0) / 2.0;
        CameraIntrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - shift) / f,
            cy: (self.cy - shift) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }
}

/// Signed permutation taking device gyro axes to camera axes: `camera = M * device`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AxisRemap([[i8; 3]; 3]);

impl Default for AxisRemap {
    fn default() -> Self {
        AxisRemap::identity()
    }
}

impl AxisRemap {
    pub fn identity() -> Self {
        AxisRemap([[1, 0, 0], [0, 1, 0], [0, 0, 1]])
    }

    pub fn new(rows: [[i8; 3]; 3]) -> Result<Self> {
        let ok_entries = rows.iter().flatten().all(|v| matches!(v, -1..=1));
        let row_ok = rows.iter().all(|r| r.iter().filter(|v| **v != 0).count() == 1);
        let col_ok = (0..3).all(|c| rows.iter().filter(|r| r[c] != 0).count() == 1);
        if ok_entries && row_ok && col_ok {
            Ok(AxisRemap(rows))
        } else {
            Err(Error::config("axis_remap", "must be a signed permutation"))
        }
    }

    pub fn rows(&self) -> [[i8; 3]; 3] {
        self.0
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let m = &self.0;
        Vector3::new(
            m[0][0] as f64 * v.x + m[0][1] as f64 * v.y + m[0][2] as f64 * v.z,
            m[1][0] as f64 * v.x + m[1][1] as f64 * v.y + m[1][2] as f64 * v.z,
            m[2][0] as f64 * v.x + m[2][1] as f64 * v.y + m[2][2] as f64 * v.z,
        )
    }
}

/// Written as three comma-separated signed device axes, one per camera axis, e.g. `x,-y,-z`.
impl fmt::Display for AxisRemap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|row| {
                let (idx, sign) = row
                    .iter()
                    .enumerate()
                    .find(|(_, v)| **v != 0)
                    .map(|(i, v)| (i, *v))
                    .unwrap_or((0, 1));
                let axis = ["x", "y", "z"][idx];
                if sign < 0 {
                    format!("-{axis}")
                } else {
                    axis.to_string()
                }
            })
            .collect();
        write!(f, "{}", parts.join(","))
    }
}

impl FromStr for AxisRemap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::config("axis_remap", "expected three axes like `x,-y,-z`"));
        }
        let mut rows = [[0i8; 3]; 3];
        for (row, part) in rows.iter_mut().zip(&parts) {
            let (sign, axis) = match part.strip_prefix('-') {
                Some(rest) => (-1, rest),
                None => (1, part.strip_prefix('+').unwrap_or(part)),
            };
            let idx = match axis {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                other => {
                    return Err(Error::config("axis_remap", format!("unknown axis `{other}`")))
                }
            };
            row[idx] = sign;
        }
        AxisRemap::new(rows)
    }
}

impl Serialize for AxisRemap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for AxisRemap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Relative rotation `R(t_end) R^T(t_start)` from body rates.
///
/// Each sample's rate is held over its interval (rectangular rule); the two
/// boundary partial intervals use the rate linearly interpolated at the middle
/// of the partial interval. Increments compose as `R <- exp(w dt) R`, so
/// `integrate(b, c) * integrate(a, b) == integrate(a, c)` when `b` is a sample
/// timestamp.
pub fn integrate_gyro(
    samples: &[GyroSample],
    t_start: i64,
    t_end: i64,
    remap: &AxisRemap,
) -> Result<RotationMatrix> {
    ensure(t_end >= t_start, || {
        format!("integration interval ends ({t_end}) before it starts ({t_start})")
    })?;
    let coverage_error = || Error::InsufficientCoverage {
        first_ns: samples.first().map_or(0, |s| s.timestamp_ns),
        last_ns: samples.last().map_or(0, |s| s.timestamp_ns),
        start_ns: t_start,
        end_ns: t_end,
    };
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(coverage_error());
    };
    if first.timestamp_ns > t_start || last.timestamp_ns < t_end {
        return Err(coverage_error());
    }

    let mut acc = Matrix3::identity();
    let start_idx = samples.partition_point(|s| s.timestamp_ns <= t_start) - 1;
    for k in start_idx..samples.len() - 1 {
        let (s0, s1) = (&samples[k], &samples[k + 1]);
        if s0.timestamp_ns >= t_end {
            break;
        }
        let a = s0.timestamp_ns.max(t_start);
        let b = s1.timestamp_ns.min(t_end);
        if b <= a {
            continue;
        }
        let omega = if a == s0.timestamp_ns && b == s1.timestamp_ns {
            s0.omega_vec()
        } else {
            let span = (s1.timestamp_ns - s0.timestamp_ns) as f64;
            let mid = (a - s0.timestamp_ns) as f64 + (b - a) as f64 / 2.0;
            let f = mid / span;
            s0.omega_vec() * (1.0 - f) + s1.omega_vec() * f
        };
        let dt = (b - a) as f64 * 1e-9;
        let step = rodrigues(&(remap.apply(&omega) * dt));
        acc = step.0 * acc;
    }
    Ok(RotationMatrix(acc))
}
