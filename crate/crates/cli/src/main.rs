use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use hpr_core::align::{align_frame, RansacParams};
use hpr_core::config::RunConfig;
use hpr_core::eval::{depth_metrics, pose_metrics, DepthMetrics, PoseEvalOptions, PoseMetrics};
use hpr_core::geometry::{unproject, Intrinsics};
use hpr_core::io;
use hpr_core::model::FusionModel;
use hpr_core::pipeline::{
    ffm_gradient_check, input_depth, read_bundle, reconstruct, Bundle, DemoContext,
};
use hpr_core::scene::{generate_scene, list_pfm, write_bundle, SceneSpec};
use hpr_core::tensor::Matrix;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PROPERTY: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "hpr",
    version,
    about = "Scene reconstruction with a human prior"
)]
struct Cli {
    /// Worker threads for per-frame processing.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit per-frame scale and offset of mono depth against SMPL depth.
    AlignDepth(AlignArgs),
    /// Turn depth maps into pointmaps.
    Unproject(UnprojectArgs),
    /// Run the fusion path on a scene bundle and check its gradients.
    Fuse(ConfigArgs),
    /// Fuse, then refine the human region of every frame.
    Refine(ConfigArgs),
    /// Abs Rel, delta < 1.25 and log RMSE of predicted depth.
    EvalDepth(EvalDepthArgs),
    /// ATE and RPE of an estimated TUM trajectory.
    EvalPose(EvalPoseArgs),
    /// Write a synthetic scene bundle.
    Synth(SynthArgs),
    /// Full pipeline on a synthetic scene with property checks.
    Demo(DemoArgs),
}

#[derive(Args, Debug)]
struct AlignArgs {
    #[arg(long)]
    mono: PathBuf,
    #[arg(long)]
    smpl: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    tau: f64,
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    #[arg(long, default_value_t = 50)]
    min_valid: usize,
    #[arg(long, env = "HUPRIOR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct UnprojectArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    focal: f64,
    #[arg(long)]
    cx: f64,
    #[arg(long)]
    cy: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long, env = "HUPRIOR_SEED")]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct EvalDepthArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Evaluate predictions as given, without median scaling.
    #[arg(long)]
    no_scale_align: bool,
    /// Also write `depth_metrics.json` and `depth_metrics.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalPoseArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Rigid alignment instead of similarity.
    #[arg(long)]
    se3: bool,
    #[arg(long, default_value_t = 0.02)]
    max_dt: f64,
    /// Also write `pose_metrics.json` and `pose_metrics.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene description; defaults are used when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "HUPRIOR_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct DemoArgs {
    #[arg(long, env = "HUPRIOR_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "demo_out")]
    out: PathBuf,
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

enum Outcome {
    Ok,
    PropertyFailure,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::PropertyFailure) => ExitCode::from(EXIT_PROPERTY),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(EXIT_DATA)
        }
    }
}

/// The error chain joined by `: `, skipping causes that the previous
/// message already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.ends_with(&msg) {
            if !out.is_empty() {
                out += ": ";
            }
            out += &msg;
        }
    }
    out
}

/// Print to stdout; a closed pipe (as in `hpr ... | head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit_json(value: &Value) -> Result<()> {
    emit(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn run(cli: Cli) -> Result<Outcome> {
    if cli.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .context("starting worker pool")?;
    pool.install(|| match cli.command {
        Command::AlignDepth(a) => align_depth(&a),
        Command::Unproject(a) => unproject_dir(&a),
        Command::Fuse(a) => fuse(&a),
        Command::Refine(a) => refine(&a),
        Command::EvalDepth(a) => eval_depth(&a),
        Command::EvalPose(a) => eval_pose(&a),
        Command::Synth(a) => synth(&a),
        Command::Demo(a) => demo(&a),
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn file_name(path: &Path) -> Result<String> {
    path.file_name()
        .and_then(|n| n.to_str())
        .map(str::to_owned)
        .with_context(|| format!("{}: not a UTF-8 file name", path.display()))
}

/// Sorted PFM files of `dir`, failing if there are none.
fn pfm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let files = list_pfm(dir)?;
    if files.is_empty() {
        bail!("{}: no .pfm files", dir.display());
    }
    Ok(files)
}

fn load_config(args: &ConfigArgs) -> Result<(RunConfig, PathBuf, PathBuf)> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg = cfg.with_seed(seed);
    }
    let input = cfg
        .input
        .clone()
        .with_context(|| format!("{}: input.dir is required", args.config.display()))?;
    let output = cfg
        .output
        .clone()
        .with_context(|| format!("{}: output.dir is required", args.config.display()))?;
    Ok((cfg, input, output))
}

fn align_depth(a: &AlignArgs) -> Result<Outcome> {
    let params = RansacParams {
        threshold: a.tau,
        iterations: a.iters,
        min_valid_pixels: a.min_valid,
        seed: a.seed,
    };
    params.validate()?;
    let files = pfm_files(&a.mono)?;
    create_dir(&a.out)?;
    let frames = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let name = file_name(path)?;
            let mono = io::read_pfm(path)?;
            let smpl = io::read_pfm(a.smpl.join(&name))?;
            let (aligned, fit) = align_frame(&mono, &smpl, &params.for_frame(i))
                .with_context(|| format!("aligning {name}"))?;
            io::write_pfm(a.out.join(&name), &aligned)?;
            Ok(json!({
                "name": name,
                "scale": fit.scale,
                "offset": fit.offset,
                "inliers": fit.inlier_count,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = json!({ "tau": a.tau, "iterations": a.iters, "seed": a.seed, "frames": frames });
    write_json(&a.out.join("alignment.json"), &report)?;
    emit_json(&report)?;
    Ok(Outcome::Ok)
}

fn unproject_dir(a: &UnprojectArgs) -> Result<Outcome> {
    let k = Intrinsics::new(a.focal, a.cx, a.cy)?;
    let files = pfm_files(&a.depth)?;
    create_dir(&a.out)?;
    files.par_iter().try_for_each(|path| -> Result<()> {
        let depth = io::read_pfm(path)?;
        io::write_pfm_points(a.out.join(file_name(path)?), &unproject(&depth, &k))?;
        Ok(())
    })?;
    emit(&format!(
        "wrote {} pointmaps to {}\n",
        files.len(),
        a.out.display()
    ))?;
    Ok(Outcome::Ok)
}

fn bundle_and_model(cfg: &RunConfig, input: &Path) -> Result<(Bundle, FusionModel)> {
    let bundle = read_bundle(input)?;
    let model = FusionModel::init(&cfg.fusion, cfg.seed)?;
    Ok((bundle, model))
}

fn fuse(args: &ConfigArgs) -> Result<Outcome> {
    let (cfg, input, out) = load_config(args)?;
    let (bundle, model) = bundle_and_model(&cfg, &input)?;
    let k = bundle.sidecar.intrinsics;
    let (pm_dir, feat_dir) = (out.join("pointmaps"), out.join("features"));
    create_dir(&pm_dir)?;
    create_dir(&feat_dir)?;
    let frames = bundle
        .frames
        .par_iter()
        .zip(&bundle.sidecar.frames)
        .enumerate()
        .map(|(i, (frame, truth))| {
            let (depth_in, fit) = input_depth(frame, &cfg, i)?;
            let pm_in = unproject(&depth_in, &k);
            let pm_smpl = unproject(&frame.smpl, &k);
            let features =
                model.scene_features(i % 2, &frame.image, &pm_in, &pm_smpl, cfg.ablation)?;
            let fused = model.decode(&features, &pm_in)?;
            io::write_pfm_points(pm_dir.join(&truth.name), &fused)?;
            let tensors: Vec<(String, Matrix)> = features
                .e_scene
                .iter()
                .enumerate()
                .map(|(l, g)| (format!("level{}", l + 1), g.tokens().clone()))
                .collect();
            let stem = truth.name.trim_end_matches(".pfm");
            io::write_tensors(feat_dir.join(format!("{stem}.tensors")), &tensors)?;
            Ok(json!({
                "name": truth.name,
                "fit": fit,
                "tokens": features.e_scene[0].len(),
                "transparent": fused == pm_in && features.e_scene == features.e_base,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let check = ffm_gradient_check(&model, &bundle.frames[0], &k, 0, cfg.seed)?;
    let report = json!({
        "ablation": cfg.ablation,
        "alignment": cfg.alignment,
        "frames": frames,
        "gradient_check": check,
    });
    write_json(&out.join("fuse.json"), &report)?;
    emit_json(&report)?;
    Ok(Outcome::Ok)
}

fn refine(args: &ConfigArgs) -> Result<Outcome> {
    let (cfg, input, out) = load_config(args)?;
    let (bundle, model) = bundle_and_model(&cfg, &input)?;
    let k = bundle.sidecar.intrinsics;
    let pm_dir = out.join("pointmaps");
    create_dir(&pm_dir)?;
    let frames = bundle
        .frames
        .par_iter()
        .zip(&bundle.sidecar.frames)
        .enumerate()
        .map(|(i, (frame, truth))| {
            let (depth_in, fit) = input_depth(frame, &cfg, i)?;
            let r = reconstruct(&model, &cfg, &k, frame, i % 2, &depth_in)?;
            io::write_pfm_points(pm_dir.join(&truth.name), r.output())?;
            Ok(json!({
                "name": truth.name,
                "fit": fit,
                "refined": r.refinement.as_ref().map(|x| x.rect),
                "transparent": r.transparent(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = json!({ "ablation": cfg.ablation, "alignment": cfg.alignment, "frames": frames });
    write_json(&out.join("refine.json"), &report)?;
    emit_json(&report)?;
    Ok(Outcome::Ok)
}

fn eval_depth(a: &EvalDepthArgs) -> Result<Outcome> {
    let files = pfm_files(&a.pred)?;
    let (pred, gt): (Vec<_>, Vec<_>) = files
        .par_iter()
        .map(|path| {
            Ok((
                io::read_pfm(path)?,
                io::read_pfm(a.gt.join(file_name(path)?))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    let m = depth_metrics(&pred, &gt, a.no_scale_align)?;
    let report = serde_json::to_value(m)?;
    let csv = format!("{}\n{}\n", DepthMetrics::csv_header(), m.csv_row());
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("depth_metrics.json"), &report)?;
        write_text(&dir.join("depth_metrics.csv"), &csv)?;
    }
    emit_json(&report)?;
    emit(&csv)?;
    Ok(Outcome::Ok)
}

fn eval_pose(a: &EvalPoseArgs) -> Result<Outcome> {
    let est = io::read_tum(&a.est)?;
    let gt = io::read_tum(&a.gt)?;
    let opts = PoseEvalOptions {
        with_scale: !a.se3,
        max_dt: a.max_dt,
        ..PoseEvalOptions::default()
    };
    let m = pose_metrics(&est, &gt, &opts)?;
    let report = serde_json::to_value(m)?;
    let csv = format!("{}\n{}\n", PoseMetrics::csv_header(), m.csv_row());
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("pose_metrics.json"), &report)?;
        write_text(&dir.join("pose_metrics.csv"), &csv)?;
    }
    emit_json(&report)?;
    emit(&csv)?;
    Ok(Outcome::Ok)
}

fn load_spec(path: Option<&Path>) -> Result<SceneSpec> {
    Ok(match path {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::default(),
    })
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let spec = load_spec(a.spec.as_deref())?;
    let scene = generate_scene(&spec, a.seed)?;
    write_bundle(&scene, a.seed, &a.out)?;
    emit(&format!(
        "wrote {} frames to {}\n",
        scene.frames.len(),
        a.out.display()
    ))?;
    Ok(Outcome::Ok)
}

fn demo(a: &DemoArgs) -> Result<Outcome> {
    let spec = load_spec(a.spec.as_deref())?;
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    }
    .with_seed(a.seed);
    create_dir(&a.out)?;
    let ctx = DemoContext::prepare(&cfg, &spec, &a.out)?;
    let frames = (0..ctx.frame_count())
        .into_par_iter()
        .map(|i| ctx.process_frame(i))
        .collect::<hpr_core::Result<Vec<_>>>()?;
    let report = ctx.finish(frames, &a.out)?;
    report.write(&a.out)?;
    let mut summary = String::new();
    for p in &report.properties {
        summary += &format!(
            "{} {}: {}\n",
            if p.passed { "PASS" } else { "FAIL" },
            p.name,
            p.detail
        );
    }
    emit(&(summary + &report.ablation_csv()))?;
    Ok(if report.passed() {
        Outcome::Ok
    } else {
        Outcome::PropertyFailure
    })
}
