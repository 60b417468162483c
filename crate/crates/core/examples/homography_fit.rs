//! Weighted homography fitting: recover a known warp from its flow, ignoring zero-weight outliers.

use gyrofuse::fusion::FusionMap;
use gyrofuse::gyro_field::Homography;
use gyrofuse::homography_fit::{fit_weighted_homography, flow_to_correspondences, homography_to_field, Correspondence};
use nalgebra::Matrix3;

pub fn run_example() -> gyrofuse::Result<String> {
    let (w, h) = (160, 120);
    let truth = Homography::new(Matrix3::new(1.02, 0.015, 3.2, -0.01, 0.985, -1.7, 4e-5, -3e-5, 1.0))?;
    let flow = homography_to_field(&truth, w, h)?;
    let mut pairs = flow_to_correspondences(&flow, &FusionMap::uniform(w, h, 0.0), 4)?;
    for c in pairs.iter_mut().step_by(5) {
        *c = Correspondence::new(c.p, [-400.0, 250.0], 0.0);
    }
    let fit = fit_weighted_homography(&pairs)?;

    let mut worst = 0.0f64;
    for c in pairs.iter().filter(|c| c.weight > 0.0) {
        let (x, y) = fit.h.project(c.p[0], c.p[1])?;
        worst = worst.max((x - c.q[0]).hypot(y - c.q[1]));
    }
    let m = fit.h.unit_normalized();
    Ok(format!(
        "{} correspondences, every fifth a zero-weight outlier\nrecovered H row 0: [{:.4}, {:.4}, {:.4}]\nmax reprojection error {worst:.1e} px",
        pairs.len(),
        m[(0, 0)] / m[(2, 2)],
        m[(0, 1)] / m[(2, 2)],
        m[(0, 2)] / m[(2, 2)]
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
