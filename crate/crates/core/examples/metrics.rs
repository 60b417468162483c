//! AEPE, PCK and point mapping error on hand-built fields and point pairs.

use gyrofuse::grid::ValidMask;
use gyrofuse::gyro_field::{FlowField, Homography};
use gyrofuse::homography_fit::Correspondence;
use gyrofuse::metrics::{aepe, pck, pme, EvalReport, HomographyModel, DEFAULT_PCK_THRESHOLDS};

pub fn run_example() -> gyrofuse::Result<String> {
    let (w, h) = (64, 48);
    let gt = FlowField::constant(w, h, 2.0, -1.0);
    // Left half exact, right half off by (2.4, 3.2), so half the pixels err by 4 px.
    let est = FlowField::from_fn(w, h, |x, _| if x < w / 2 { (2.0, -1.0) } else { (4.4, 2.2) });
    let valid = ValidMask::all(w, h);

    let pairs: Vec<Correspondence> = (0..10)
        .map(|i| {
            let p = [i as f64 * 6.0, i as f64 * 4.0];
            Correspondence::new(p, [p[0] + 1.0, p[1]], 1.0)
        })
        .collect();
    let model = HomographyModel::Single(Homography::translation(1.0, 0.5));
    let report = EvalReport::for_flow(&est, &gt, &valid, &DEFAULT_PCK_THRESHOLDS)?;

    Ok(format!(
        "AEPE {:.2} px, PCK@1 {:.0}%, PCK@5 {:.0}%\nPME of a 0.5 px biased translation: {:.2} px\nreport: {}",
        aepe(&est, &gt, &valid)?,
        pck(&est, &gt, &valid, 1.0)?,
        pck(&est, &gt, &valid, 5.0)?,
        pme(&model, &pairs)?.pme,
        report.to_kv_line()
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
