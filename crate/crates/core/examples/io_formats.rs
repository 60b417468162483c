//! Round trips through every on-disk format, plus flow colour coding to PNG.

use gyrofuse::fusion::FusionMap;
use gyrofuse::grid::Grid;
use gyrofuse::gyro_field::{FlowField, Homography, HomographyArray};
use gyrofuse::homography_fit::Correspondence;
use gyrofuse::io::{self, FrameEntry, FrameIndex, GyroLog};
use gyrofuse::math::GyroSample;

pub fn run_example() -> gyrofuse::Result<String> {
    let mut lines = Vec::new();

    let log = GyroLog::new((0..5).map(|i| GyroSample::new(i * 2_500_000, [0.01 * i as f64, -0.2, 0.05])).collect());
    let text = io::write_gyro_log(&log);
    assert_eq!(io::parse_gyro_log(&text)?, log);
    lines.push(format!("gyro log, {} samples:\n{}", log.samples.len(), text.trim_end()));

    let frames = FrameIndex {
        frames: (0..3)
            .map(|k| FrameEntry { id: k, timestamp_ns: 40_000_000 * k as i64, path: format!("frames/{k:06}.png") })
            .collect(),
    };
    assert_eq!(io::parse_frame_index(&io::write_frame_index(&frames))?, frames);
    lines.push(format!("frame index pairs: {:?}", frames.consecutive_pairs()));

    let flow = FlowField::from_fn(32, 24, |x, y| (x as f64 * 0.25 - 4.0, y as f64 * 0.25 - 3.0));
    let flo = io::read_flo(&io::write_flo(&flow)?)?;
    let flo_err = (0..24)
        .flat_map(|y| (0..32).map(move |x| (x, y)))
        .map(|(x, y)| {
            let (a, b) = (flow.at(x, y), flo.flow.at(x, y));
            (a.0 - b.0).abs().max((a.1 - b.1).abs())
        })
        .fold(0.0, f64::max);
    lines.push(format!(".flo round trip max error {flo_err:.1e} (f32 storage)"));

    let arr = HomographyArray::uniform(Homography::translation(1.5, -0.5), 4, 32, 24);
    let arr_back = io::read_homography_array(&io::write_homography_array(&arr))?;
    lines.push(format!("homography array round trip: {} patches", arr_back.len()));

    let map = FusionMap::uniform(32, 24, 0.25);
    let map_back = io::read_fusion_map(&io::write_fusion_map(&map)?)?;
    lines.push(format!("fusion map round trip mean {:.2}", map_back.mean()));

    let pairs = vec![Correspondence::new([1.0, 2.0], [3.0, 4.0], 0.5)];
    assert_eq!(io::read_correspondences(&io::write_correspondences(&pairs))?, pairs);

    let color = io::flow_to_color(&flow, None)?;
    let png = io::encode_png(&color)?;
    let decoded = io::decode_png(&png)?;
    lines.push(format!("colour-coded flow: {} byte PNG, {}x{}", png.len(), decoded.width, decoded.height));

    let gray = Grid::from_fn(32, 24, |x, y| ((x + y) % 2) as f64 * 255.0);
    let overlay = io::superimpose(&gray, &gray)?;
    lines.push(format!("overlay image has {} channels", overlay.channels));
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
