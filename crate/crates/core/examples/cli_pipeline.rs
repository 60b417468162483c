//! The command-line workflow driven in-process: synth, fuse, fit-homo, eval and viz.

use std::ffi::OsString;
use std::path::Path;

use gyrofuse::math::CameraIntrinsics;
use gyrofuse::synth::{write_synth_spec, RotationTrajectory, SynthSpec};

fn gyrofuse(args: &[&dyn AsRef<std::ffi::OsStr>]) -> gyrofuse::Result<()> {
    let argv: Vec<OsString> = std::iter::once(OsString::from("gyrofuse"))
        .chain(args.iter().map(|a| a.as_ref().to_os_string()))
        .collect();
    match gyrofuse::cli::main_with_args(argv) {
        0 => Ok(()),
        code => Err(gyrofuse::Error::Argument(format!("subcommand exited with {code}"))),
    }
}

pub fn run_example() -> gyrofuse::Result<String> {
    let tmp = tempfile::tempdir()?;
    let root = tmp.path();
    let mut spec = SynthSpec::new(CameraIntrinsics::new(150.0, 150.0, 79.5, 59.5, 160, 120)?);
    spec.rotation = RotationTrajectory::constant([0.1, -0.15, 0.05]);
    let spec_path = root.join("spec.toml");
    std::fs::write(&spec_path, write_synth_spec(&spec)?)?;

    let (proj, run, report) = (root.join("proj"), root.join("run"), root.join("report"));
    let (cfg, gyro, frames) = (proj.join("config.toml"), proj.join("gyro.csv"), proj.join("frames.csv"));
    gyrofuse(&[&"synth", &"--spec", &spec_path, &"--out", &proj])?;
    gyrofuse(&[&"fuse", &"--config", &cfg, &"--gyro", &gyro, &"--frames", &frames, &"--out", &run])?;
    gyrofuse(&[&"fit-homo", &"--config", &cfg, &"--fused", &run, &"--frames", &frames, &"--out", &run])?;

    let stem = "000000_000001";
    let fused = run.join(format!("fused_{stem}.flo"));
    let gt = proj.join(format!("gt/flow_{stem}.flo"));
    gyrofuse(&[&"eval", &"--config", &cfg, &"--est", &fused, &"--gt", &gt, &"--out", &report])?;
    gyrofuse(&[&"viz", &"--flow", &fused, &"--gt", &gt, &"--out", &report])?;

    let metrics = std::fs::read_to_string(report.join(format!("eval_fused_{stem}.txt")))?;
    Ok(format!(
        "run outputs: {}\nreport outputs: {}\nfused vs GT: {}",
        listing(&run)?,
        listing(&report)?,
        metrics.trim_end()
    ))
}

fn listing(dir: &Path) -> gyrofuse::Result<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    Ok(names.join(", "))
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
