//! Batch command line: `gyro2field`, `fuse`, `fit-homo`, `eval`, `viz`, `synth`.
//!
//! Every run writes `manifest-<subcommand>.json` next to its outputs.
//! `gyrofuse --manifest FILE` replays it; outputs are byte-identical for any `--jobs`.
//!
//! Exit codes: 0 success, 1 validation or format error, 2 numerical failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{mask_with_map, refine_fusion_map, run_fusion_padded};
use crate::grid::{Grid, ValidMask};
use crate::gyro_field::{homography_array_to_field, row_patch_homographies, warp_image, FlowField, HomographyArray};
use crate::homography_fit::{
    fit_rs_homography_array, replace_gyro_with_homography, select_patches_by_photometry, PassInputs,
};
use crate::io::{self, FrameIndex, ProjectConfig, CONFIG_ENV};
use crate::metrics::{error_heatmap, ConfigFingerprint, EvalReport, HomographyModel};
use crate::synth::{pair_stem, read_synth_spec, synth_sequence, write_project};

pub const DEFAULT_OUT: &str = "out";

#[derive(Parser, Debug)]
#[command(
    name = "gyrofuse",
    version,
    about = "Gyro-guided optical flow: gyro fields, fusion, homography fitting, evaluation",
    after_help = EVAL_HELP
)]
pub struct Cli {
    /// Project config (TOML)
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Worker threads for frame pairs (default: all cores)
    #[arg(long, short = 'j', global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Output directory [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Override a config key, e.g. `--set lambda=5` or `--set rolling_shutter.patch_count=10`
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replay the run recorded in a manifest
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// More log output (-v info, -vv debug)
    #[arg(long, short = 'v', global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Option<Command>,
}

const EVAL_HELP: &str = "\
Eval report fields (eval_<name>.txt is one key=value line, eval_<name>.json the same as JSON):
  aepe        mean endpoint error over valid pixels, px
  pck_<tau>   percent of valid pixels with error strictly below tau px
  pme         mean point matching error of a homography array on GT pairs, px
  pme_pck_1   percent of GT pairs matched within 1 px
  count       evaluated pixels or points
  beta, gamma, lambda, patch_count   config fingerprint (when a config is available)";

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Gyro field for frame pairs: gyro_<a>_<b>.flo and gyro_<a>_<b>.homo.txt
    Gyro2field(PairArgs),
    /// Fused flow, per-level fusion maps and the refined level-1 map for frame pairs
    Fuse(PairArgs),
    /// Fit per-patch homography arrays from fused flow; optional second fusion pass
    FitHomo(FitArgs),
    /// Evaluate flows (.flo) against GT flows, or homography arrays against GT points
    Eval(EvalArgs),
    /// Color-wheel flow image, error heatmap and superimposed warp
    Viz(VizArgs),
    /// Render a synthetic project with ground truth from a spec file
    Synth(SynthArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gyro2field(_) => "gyro2field",
            Command::Fuse(_) => "fuse",
            Command::FitHomo(_) => "fit-homo",
            Command::Eval(_) => "eval",
            Command::Viz(_) => "viz",
            Command::Synth(_) => "synth",
        }
    }
}

#[derive(Args, Debug)]
pub struct PairArgs {
    /// Gyro log (gyro_v1)
    #[arg(long)]
    pub gyro: PathBuf,
    /// Frame index (frames_v1); image paths are relative to its directory
    #[arg(long)]
    pub frames: PathBuf,
    /// `consecutive` or a list of frame-id pairs like `0:1,2:3`
    #[arg(long, default_value = "consecutive")]
    pub pairs: String,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Directory written by `fuse`; every fused_<a>_<b>.flo there is fitted
    #[arg(long, conflicts_with_all = ["flow", "map", "gyro_homo"])]
    pub fused: Option<PathBuf>,
    /// Single fused flow file
    #[arg(long, requires_all = ["map", "gyro_homo"])]
    pub flow: Option<PathBuf>,
    /// Fusion map (FMP1) weighting the fit
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Gyro homography array (homo_v1) the fit starts from
    #[arg(long)]
    pub gyro_homo: Option<PathBuf>,
    /// Frame index; when given, fitted patches that do not lower the photometric
    /// residual revert to gyro, and a second fusion pass runs with the result
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Estimate: .flo flow or homo_v1 array (repeat, paired with --gt by position)
    #[arg(long, required = true)]
    pub est: Vec<PathBuf>,
    /// Ground truth: .flo flow or pts_v1 correspondences
    #[arg(long, required = true)]
    pub gt: Vec<PathBuf>,
    /// PCK thresholds in px
    #[arg(long = "tau", default_values_t = [1.0, 5.0])]
    pub taus: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct VizArgs {
    #[arg(long)]
    pub flow: PathBuf,
    /// GT flow for an error heatmap
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Frame a and frame b for a superimposed warp
    #[arg(long, requires = "image_b")]
    pub image_a: Option<PathBuf>,
    #[arg(long, requires = "image_a")]
    pub image_b: Option<PathBuf>,
    /// Flow magnitude of full saturation (default: field maximum)
    #[arg(long)]
    pub max_mag: Option<f64>,
    /// Error of full white in the heatmap (default: maximum error)
    #[arg(long)]
    pub max_err: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Scene spec (TOML)
    #[arg(long)]
    pub spec: PathBuf,
}

/// Record of a run, sufficient to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Command-line arguments without `--config`, `--out`, `--jobs` and `--manifest`.
    pub args: Vec<String>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    /// Files written, relative to `out_dir`, sorted.
    pub outputs: Vec<String>,
}

/// Parses `args` (including the program name), runs, reports errors on stderr
/// and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match run(cli, &args) {
        Ok(manifest) => {
            log::info!("{}: wrote {} file(s) to {}", manifest.subcommand, manifest.outputs.len(), manifest.out_dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line. `raw` is the full argument vector it came from.
pub fn run(cli: Cli, raw: &[OsString]) -> Result<RunManifest> {
    if let Some(path) = &cli.manifest {
        return replay(path, &cli);
    }
    let Some(command) = &cli.command else {
        return Err(Error::Argument("no subcommand given (see --help)".into()));
    };
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {} worker(s): {e}", cli.jobs.unwrap_or(0))))?;
    std::fs::create_dir_all(&out).map_err(|e| Error::from(e).in_file(&out))?;
    let ctx = Context {
        config_path: cli.config.clone(),
        overrides: cli.overrides.clone(),
        out: out.clone(),
    };
    let (mut inputs, mut outputs) = pool.install(|| match command {
        Command::Gyro2field(a) => cmd_gyro2field(&ctx, a),
        Command::Fuse(a) => cmd_fuse(&ctx, a),
        Command::FitHomo(a) => cmd_fit_homo(&ctx, a),
        Command::Eval(a) => cmd_eval(&ctx, a),
        Command::Viz(a) => cmd_viz(&ctx, a),
        Command::Synth(a) => cmd_synth(&ctx, a),
    })?;
    outputs.sort();
    let mut seen = std::collections::HashSet::new();
    inputs.retain(|p| seen.insert(p.clone()));
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: command.name().into(),
        args: replayable_args(raw),
        config: cli.config.clone(),
        overrides: cli.overrides.clone(),
        out_dir: out.clone(),
        inputs,
        outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    let path = out.join(format!("manifest-{}.json", command.name()));
    std::fs::write(&path, text).map_err(|e| Error::from(e).in_file(&path))?;
    Ok(manifest)
}

/// Drops program name and the options that do not affect output bytes or are
/// recorded separately.
fn replayable_args(raw: &[OsString]) -> Vec<String> {
    const WITH_VALUE: [&str; 4] = ["--config", "--out", "--jobs", "--manifest"];
    let mut out = Vec::new();
    let mut skip_next = false;
    for a in raw.iter().skip(1) {
        let s = a.to_string_lossy().into_owned();
        if skip_next {
            skip_next = false;
            continue;
        }
        if WITH_VALUE.contains(&s.as_str()) || s == "-j" {
            skip_next = true;
            continue;
        }
        if WITH_VALUE.iter().any(|f| s.starts_with(&format!("{f}="))) || (s.starts_with("-j") && s.len() > 2 && !s.starts_with("--")) {
            continue;
        }
        out.push(s);
    }
    out
}

fn replay(path: &Path, cli: &Cli) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(e.line(), format!("invalid manifest: {e}")).in_file(path))?;
    let mut args: Vec<OsString> = vec!["gyrofuse".into()];
    if let Some(c) = &m.config {
        args.push("--config".into());
        args.push(c.into());
    }
    args.push("--out".into());
    args.push(cli.out.clone().unwrap_or(m.out_dir).into());
    if let Some(j) = cli.jobs {
        args.push("--jobs".into());
        args.push(j.to_string().into());
    }
    args.extend(m.args.iter().map(OsString::from));
    let replayed = Cli::try_parse_from(&args).map_err(|e| Error::Argument(format!("manifest arguments do not parse: {e}")))?;
    if replayed.manifest.is_some() {
        return Err(Error::Argument("manifest refers to another manifest".into()));
    }
    run(replayed, &args)
}

struct Context {
    config_path: Option<PathBuf>,
    overrides: Vec<String>,
    out: PathBuf,
}

type Files = (Vec<PathBuf>, Vec<String>);

impl Context {
    fn config(&self) -> Result<ProjectConfig> {
        let path = self.config_path.as_ref().ok_or_else(|| {
            Error::config("intrinsics", format!("no config given; pass --config or set {CONFIG_ENV}"))
        })?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        io::read_config_with_overrides(&text, &self.overrides).map_err(|e| e.in_file(path))
    }

    fn optional_config(&self) -> Result<Option<ProjectConfig>> {
        match &self.config_path {
            Some(_) => self.config().map(Some),
            None => Ok(None),
        }
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<String> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::from(e).in_file(&path))?;
        Ok(name.to_string())
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::from(e).in_file(path))
}

fn parse_pairs(spec: &str, index: &FrameIndex) -> Result<Vec<(u64, u64)>> {
    if spec == "consecutive" {
        return Ok(index.consecutive_pairs());
    }
    spec.split(',')
        .map(|p| {
            let (a, b) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::Argument(format!("pair {p:?} is not of the form a:b")))?;
            let id = |s: &str| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Argument(format!("frame id {s:?} is not a number")))
            };
            Ok((id(a)?, id(b)?))
        })
        .collect()
}

struct PairInputs {
    config: ProjectConfig,
    samples: Vec<crate::math::GyroSample>,
    index: FrameIndex,
    index_dir: PathBuf,
    pairs: Vec<(u64, u64)>,
    inputs: Vec<PathBuf>,
}

fn load_pair_inputs(ctx: &Context, args: &PairArgs) -> Result<PairInputs> {
    let config = ctx.config()?;
    let log = io::parse_gyro_log(&read_text(&args.gyro)?).map_err(|e| e.in_file(&args.gyro))?;
    let index = io::parse_frame_index(&read_text(&args.frames)?).map_err(|e| e.in_file(&args.frames))?;
    let pairs = parse_pairs(&args.pairs, &index)?;
    let mut inputs = vec![args.gyro.clone(), args.frames.clone()];
    inputs.extend(ctx.config_path.clone());
    Ok(PairInputs {
        config,
        samples: log.samples,
        index_dir: args.frames.parent().map(Path::to_path_buf).unwrap_or_default(),
        index,
        pairs,
        inputs,
    })
}

impl PairInputs {
    fn gyro_array(&self, a: u64, b: u64) -> Result<HomographyArray> {
        let (ta, tb) = self.index.pair_interval(a, b, self.config.time_offset_ns)?;
        row_patch_homographies(
            &self.config.intrinsics,
            &self.samples,
            ta,
            tb,
            &self.config.rolling_shutter,
            &self.config.axis_remap,
        )
    }

    fn image_path(&self, id: u64) -> Result<PathBuf> {
        Ok(self.index_dir.join(&self.index.find(id)?.path))
    }

    fn luma(&self, id: u64) -> Result<Grid> {
        let path = self.image_path(id)?;
        let img = io::load_image(&path)?;
        let k = &self.config.intrinsics;
        if (img.width, img.height) != (k.width, k.height) {
            return Err(Error::Argument(format!(
                "image is {}x{} but intrinsics describe {}x{}",
                img.width, img.height, k.width, k.height
            ))
            .in_file(path));
        }
        Ok(img.luma())
    }
}

fn cmd_gyro2field(ctx: &Context, args: &PairArgs) -> Result<Files> {
    let p = load_pair_inputs(ctx, args)?;
    let k = p.config.intrinsics;
    let written = p
        .pairs
        .par_iter()
        .map(|&(a, b)| {
            let arr = p.gyro_array(a, b)?;
            let field = homography_array_to_field(&arr, &k, k.width, k.height)?;
            let stem = pair_stem(a, b);
            Ok(vec![
                ctx.write(&format!("gyro_{stem}.flo"), &io::write_flo(&field)?)?,
                ctx.write(&format!("gyro_{stem}.homo.txt"), io::write_homography_array(&arr).as_bytes())?,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((p.inputs, written.concat()))
}

fn cmd_fuse(ctx: &Context, args: &PairArgs) -> Result<Files> {
    let p = load_pair_inputs(ctx, args)?;
    let mut inputs = p.inputs.clone();
    for &(a, b) in &p.pairs {
        inputs.push(p.image_path(a)?);
        inputs.push(p.image_path(b)?);
    }
    let c = &p.config;
    let written = p
        .pairs
        .par_iter()
        .map(|&(a, b)| {
            let stem = pair_stem(a, b);
            let gyro = p.gyro_array(a, b)?;
            let (la, lb) = (p.luma(a)?, p.luma(b)?);
            let out = run_fusion_padded(&la, &lb, &gyro, &c.intrinsics, &c.beta, &c.pyramid_levels, &c.fusion)?;
            let fine = &out.maps[0];
            let (am, bm) = mask_with_map(&la, &lb, &out.gyro_field, fine)?;
            let refined = refine_fusion_map(fine, &am, &bm, c.gamma_pair(), &c.fusion)?;
            let mut files = vec![
                ctx.write(&format!("fused_{stem}.flo"), &io::write_flo(&out.flow)?)?,
                ctx.write(&format!("gyro_{stem}.homo.txt"), io::write_homography_array(&gyro).as_bytes())?,
                ctx.write(&format!("map_{stem}_refined.fmp"), &io::write_fusion_map(&refined)?)?,
            ];
            for m in &out.maps {
                files.push(ctx.write(&format!("map_{stem}_L{}.fmp", m.level), &io::write_fusion_map(m)?)?);
            }
            Ok(files)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, written.concat()))
}

struct FitJob {
    stem: String,
    flow: PathBuf,
    map: PathBuf,
    gyro: PathBuf,
}

fn parse_stem(stem: &str) -> Option<(u64, u64)> {
    let (a, b) = stem.split_once('_')?;
    Some((a.parse().ok()?, b.parse().ok()?))
}

fn fit_jobs(args: &FitArgs) -> Result<Vec<FitJob>> {
    if let Some(dir) = &args.fused {
        let mut jobs = Vec::new();
        let entries = std::fs::read_dir(dir).map_err(|e| Error::from(e).in_file(dir))?;
        for entry in entries {
            let name = entry.map_err(|e| Error::from(e).in_file(dir))?.file_name();
            let name = name.to_string_lossy();
            if let Some(stem) = name.strip_prefix("fused_").and_then(|s| s.strip_suffix(".flo")) {
                jobs.push(FitJob {
                    stem: stem.to_string(),
                    flow: dir.join(name.as_ref()),
                    map: dir.join(format!("map_{stem}_refined.fmp")),
                    gyro: dir.join(format!("gyro_{stem}.homo.txt")),
                });
            }
        }
        jobs.sort_by(|a, b| a.stem.cmp(&b.stem));
        if jobs.is_empty() {
            return Err(Error::Argument(format!("no fused_*.flo files in {}", dir.display())));
        }
        return Ok(jobs);
    }
    match (&args.flow, &args.map, &args.gyro_homo) {
        (Some(flow), Some(map), Some(gyro)) => {
            let stem = flow
                .file_stem()
                .map(|s| s.to_string_lossy().trim_start_matches("fused_").to_string())
                .unwrap_or_else(|| "flow".into());
            Ok(vec![FitJob {
                stem,
                flow: flow.clone(),
                map: map.clone(),
                gyro: gyro.clone(),
            }])
        }
        _ => Err(Error::Argument("pass --fused DIR, or --flow with --map and --gyro-homo".into())),
    }
}

fn cmd_fit_homo(ctx: &Context, args: &FitArgs) -> Result<Files> {
    let config = ctx.config()?;
    let jobs = fit_jobs(args)?;
    let mut inputs: Vec<PathBuf> = ctx.config_path.iter().cloned().collect();
    for j in &jobs {
        inputs.extend([j.flow.clone(), j.map.clone(), j.gyro.clone()]);
    }
    let second_pass = match &args.frames {
        Some(path) => {
            inputs.push(path.clone());
            let index = io::parse_frame_index(&read_text(path)?).map_err(|e| e.in_file(path))?;
            Some((index, path.parent().map(Path::to_path_buf).unwrap_or_default()))
        }
        None => None,
    };
    let k = config.intrinsics;
    let written = jobs
        .par_iter()
        .map(|job| {
            let flo = io::read_flo(&read_bytes(&job.flow)?).map_err(|e| e.in_file(&job.flow))?;
            let map = io::read_fusion_map(&read_bytes(&job.map)?).map_err(|e| e.in_file(&job.map))?;
            let gyro = io::read_homography_array(&read_text(&job.gyro)?).map_err(|e| e.in_file(&job.gyro))?;
            let fit = fit_rs_homography_array(&flo.flow, &map, &gyro, &k, config.lambda, config.fit_stride)
                .map_err(|e| e.in_file(&job.flow))?;
            if !fit.inherited.is_empty() {
                log::warn!("{}: patches {:?} kept their gyro homography", job.stem, fit.inherited);
            }
            let mut array = fit.array;
            let mut second = None;
            if let Some((index, dir)) = &second_pass {
                let (a, b) = parse_stem(&job.stem).ok_or_else(|| {
                    Error::Argument(format!("cannot read frame ids from {:?} for the second pass", job.stem))
                })?;
                let load = |id: u64| -> Result<Grid> {
                    let path = dir.join(&index.find(id)?.path);
                    Ok(io::load_image(&path)?.luma())
                };
                let (la, lb) = (load(a)?, load(b)?);
                let selection = select_patches_by_photometry(&array, &gyro, &la, &lb, &map, &k)?;
                if !selection.kept_gyro.is_empty() {
                    log::info!("{}: patches {:?} kept their gyro homography on photometry", job.stem, selection.kept_gyro);
                }
                array = selection.array;
                let pass = PassInputs {
                    a: &la,
                    b: &lb,
                    k: &k,
                    ladder: &config.beta,
                    levels: &config.pyramid_levels,
                    params: &config.fusion,
                };
                second = Some(replace_gyro_with_homography(&pass, &array)?.flow);
            }
            let field = homography_array_to_field(&array, &k, k.width, k.height)?;
            let mut files = vec![
                ctx.write(&format!("fitted_{}.homo.txt", job.stem), io::write_homography_array(&array).as_bytes())?,
                ctx.write(&format!("fitted_{}.flo", job.stem), &io::write_flo(&field)?)?,
            ];
            if let Some(flow) = second {
                files.push(ctx.write(&format!("second_{}.flo", job.stem), &io::write_flo(&flow)?)?);
            }
            Ok(files)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((inputs, written.concat()))
}

fn is_flo(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("flo"))
}

fn read_flo_file(path: &Path) -> Result<io::FloFile> {
    io::read_flo(&read_bytes(path)?).map_err(|e| e.in_file(path))
}

fn cmd_eval(ctx: &Context, args: &EvalArgs) -> Result<Files> {
    if args.est.len() != args.gt.len() {
        return Err(Error::Argument(format!(
            "{} --est file(s) but {} --gt file(s)",
            args.est.len(),
            args.gt.len()
        )));
    }
    let fingerprint = ctx.optional_config()?.map(|c| ConfigFingerprint {
        beta: c.beta.values(),
        gamma: c.gamma,
        lambda: c.lambda,
        patch_count: c.rolling_shutter.patch_count,
    });
    let mut inputs: Vec<PathBuf> = ctx.config_path.iter().cloned().collect();
    for (e, g) in args.est.iter().zip(&args.gt) {
        inputs.extend([e.clone(), g.clone()]);
    }
    let mut outputs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for (est, gt) in args.est.iter().zip(&args.gt) {
        let context = |e: Error| e.in_file(format!("{} vs {}", est.display(), gt.display()));
        let mut report = if is_flo(gt) {
            let g = read_flo_file(gt)?;
            let e = read_flo_file(est)?;
            let valid: ValidMask = if e.valid.width == g.valid.width && e.valid.height == g.valid.height {
                g.valid.and(&e.valid)
            } else {
                g.valid.clone()
            };
            EvalReport::for_flow(&e.flow, &g.flow, &valid, &args.taus).map_err(context)?
        } else {
            let pairs = io::read_correspondences(&read_text(gt)?).map_err(|e| e.in_file(gt))?;
            let model = if is_flo(est) {
                return Err(Error::Argument(format!(
                    "{}: point GT needs a homography array estimate, not a flow file",
                    est.display()
                )));
            } else {
                let arr = io::read_homography_array(&read_text(est)?).map_err(|e| e.in_file(est))?;
                HomographyModel::Array(arr)
            };
            EvalReport::for_homography(&model, &pairs).map_err(context)?
        };
        report.config = fingerprint.clone();
        let mut stem = est.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        stem = stem.trim_end_matches(".homo").to_string();
        let mut unique = stem.clone();
        let mut n = 1;
        while !seen.insert(unique.clone()) {
            n += 1;
            unique = format!("{stem}-{n}");
        }
        let line = report.to_kv_line();
        println!("{unique}: {line}");
        outputs.push(ctx.write(&format!("eval_{unique}.txt"), format!("{line}\n").as_bytes())?);
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        outputs.push(ctx.write(&format!("eval_{unique}.json"), json.as_bytes())?);
    }
    Ok((inputs, outputs))
}

fn cmd_viz(ctx: &Context, args: &VizArgs) -> Result<Files> {
    let flow = read_flo_file(&args.flow)?;
    let stem = args.flow.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut inputs = vec![args.flow.clone()];
    let mut outputs = vec![ctx.write(
        &format!("{stem}_color.png"),
        &io::encode_png(&io::flow_to_color(&flow.flow, args.max_mag)?)?,
    )?];
    if let Some(gt) = &args.gt {
        inputs.push(gt.clone());
        let g = read_flo_file(gt)?;
        let heat = error_heatmap(&flow.flow, &g.flow)
            .map_err(|e| e.in_file(format!("{} vs {}", args.flow.display(), gt.display())))?;
        let masked = Grid {
            width: heat.width,
            height: heat.height,
            data: heat.data.iter().zip(&g.valid.data).map(|(e, ok)| if *ok { *e } else { 0.0 }).collect(),
        };
        outputs.push(ctx.write(
            &format!("{stem}_error.png"),
            &io::encode_png(&io::heatmap_to_image(&masked, args.max_err))?,
        )?);
    }
    if let (Some(pa), Some(pb)) = (&args.image_a, &args.image_b) {
        inputs.extend([pa.clone(), pb.clone()]);
        let a = io::load_image(pa)?.luma();
        let b = io::load_image(pb)?;
        let (warped, _) = warp_image(&b, &flow.flow).map_err(|e| e.in_file(pb))?;
        outputs.push(ctx.write(
            &format!("{stem}_overlay.png"),
            &io::encode_png(&io::superimpose(&a, &warped.luma())?)?,
        )?);
    }
    Ok((inputs, outputs))
}

fn cmd_synth(ctx: &Context, args: &SynthArgs) -> Result<Files> {
    let spec = read_synth_spec(&read_text(&args.spec)?).map_err(|e| e.in_file(&args.spec))?;
    let seq = synth_sequence(&spec)?;
    let written = write_project(&spec, &seq, &ctx.out)?;
    let outputs = written
        .iter()
        .map(|p| p.strip_prefix(&ctx.out).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    Ok((vec![args.spec.clone()], outputs))
}

/// Loads a `.flo` file as a flow with its validity mask.
pub fn load_flow(path: &Path) -> Result<(FlowField, ValidMask)> {
    let f = read_flo_file(path)?;
    Ok((f.flow, f.valid))
}
