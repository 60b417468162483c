//! Gyro log to per-row-patch homographies and a dense rolling-shutter flow field.

use gyrofuse::gyro_field::{homography_array_to_field, row_patch_homographies, RollingShutterModel};
use gyrofuse::math::{AxisRemap, CameraIntrinsics, GyroSample};

pub fn run_example() -> gyrofuse::Result<String> {
    let k = CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240)?;
    // 30 fps, 200 Hz gyro, a pan about the vertical axis accelerating at 20 rad/s^2.
    let samples: Vec<GyroSample> = (0..40)
        .map(|i| GyroSample::new(i * 5_000_000, [0.0, 0.3 + 20.0 * i as f64 * 0.005, 0.0]))
        .collect();
    let (t_a, t_b) = (33_333_333, 66_666_667);

    let mut lines = Vec::new();
    for (name, rs) in [
        ("global shutter", RollingShutterModel::global_shutter(14)),
        ("rolling shutter", RollingShutterModel::default()),
    ] {
        let arr = row_patch_homographies(&k, &samples, t_a, t_b, &rs, &AxisRemap::identity())?;
        let field = homography_array_to_field(&arr, &k, k.width, k.height)?;
        let (top, bottom) = (field.at(160, 0), field.at(160, 239));
        lines.push(format!(
            "{name}: {} patches, centre column flow top ({:+.3}, {:+.3}) bottom ({:+.3}, {:+.3})",
            arr.len(),
            top.0,
            top.1,
            bottom.0,
            bottom.1
        ));
    }
    Ok(lines.join("\n"))
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
