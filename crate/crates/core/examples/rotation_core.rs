//! Rotations from gyro rates: Rodrigues, quaternions, SLERP and integration.

use gyrofuse::math::{
    integrate_gyro, quaternion_to_rotation, rodrigues, rotation_to_quaternion, slerp, AxisRemap, GyroSample,
    UnitQuaternion,
};
use nalgebra::Vector3;

pub fn run_example() -> gyrofuse::Result<String> {
    let quarter_turn = rodrigues(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
    let q = rotation_to_quaternion(quarter_turn.matrix())?;
    let back = quaternion_to_rotation(&q)?;
    let round_trip = (back.matrix() - quarter_turn.matrix()).abs().max();

    let halfway = slerp(&UnitQuaternion::IDENTITY, &q, 0.5);
    let halfway_deg = halfway.to_rotation().angle().to_degrees();

    // 1 rad/s about z sampled at 1 kHz for 0.5 s.
    let samples: Vec<GyroSample> = (0..=600).map(|i| GyroSample::new(i * 1_000_000, [0.0, 0.0, 1.0])).collect();
    let r = integrate_gyro(&samples, 0, 500_000_000, &AxisRemap::identity())?;
    let expected = rodrigues(&Vector3::new(0.0, 0.0, 0.5));
    let integration_error = (r.matrix() - expected.matrix()).abs().max();

    Ok(format!(
        "quaternion of 90 deg about z: ({:.4}, {:.4}, {:.4}, {:.4}), round trip error {round_trip:.1e}\n\
         slerp halfway: {halfway_deg:.2} deg\n\
         0.5 s at 1 rad/s integrates to {:.4} rad (error {integration_error:.1e})",
        q.w,
        q.x,
        q.y,
        q.z,
        r.angle()
    ))
}

#[allow(dead_code)]
fn main() {
    match run_example() {
        Ok(report) => println!("{report}"),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
