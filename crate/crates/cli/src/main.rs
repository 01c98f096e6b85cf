use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::parser::ValueSource;
use clap::{Arg, ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nalgebra::{UnitQuaternion, Vector3};
use serde::Serialize;

use splatflow_core::apps::{
    edit, extract_tracks, propagate_mask, render_novel_view, selection_centroid, Affine3, ColorMap, EditOp, RunData,
    Selection, TrackQuery,
};
use splatflow_core::camera::parse_pose_line;
use splatflow_core::dataset::{frame_path, parse_intrinsics, Dataset};
use splatflow_core::engine::run;
use splatflow_core::io::{load_image, load_mask_png, read_text, save_mask_png, save_png, write_text};
use splatflow_core::metrics::{pose_errors, psnr, ssim};
use splatflow_core::oracle::{OracleScene, OracleSpec};
use splatflow_core::render::RenderSettings;
use splatflow_core::scene::{Cluster, GaussianPointSet};
use splatflow_core::{Config, Trajectory, CONFIG_KEYS};

/// Dynamic Gaussian-splat reconstruction from monocular video with depth and flow priors.
#[derive(Parser)]
#[command(name = "splatflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Run the full reconstruction on a dataset.
    Reconstruct(ReconstructArgs),
    /// Render a checkpoint from an arbitrary camera.
    Render(RenderArgs),
    /// Export point tracks as CSV.
    Track(TrackArgs),
    /// Propagate a first-frame mask through the sequence.
    Segment(SegmentArgs),
    /// Transform, recolor, remove or duplicate points of a checkpoint.
    Edit(EditArgs),
    /// Score a run against ground truth.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene spec file (key=value); see `--preset` for the built-in scenes.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built-in scene: static_orbit | dynamic_track.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Override the number of frames.
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// Every configuration key is also accepted as `--<key>`; flags override
/// the config file, which overrides the defaults.
#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    data: PathBuf,
    /// Config file (key=value).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Suppress per-frame progress.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pose line `idx tx ty tz qx qy qz qw` (camera-to-world) or a trajectory file.
    #[arg(long)]
    pose: String,
    /// Frame to take from a trajectory file; defaults to the checkpoint's frame.
    #[arg(long)]
    frame: Option<usize>,
    /// Intrinsics file; defaults to intrinsics.txt next to the checkpoint.
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    #[arg(long)]
    fx: Option<f64>,
    #[arg(long)]
    fy: Option<f64>,
    #[arg(long)]
    cx: Option<f64>,
    #[arg(long)]
    cy: Option<f64>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    run: PathBuf,
    /// Nearest visible point to pixel `u,v` at `frame`.
    #[arg(long, value_name = "U,V,FRAME", conflicts_with_all = ["ids", "cluster"])]
    query: Option<String>,
    /// Comma-separated point ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "cluster")]
    ids: Vec<u64>,
    /// All points of a cluster in the first frame: still | moving.
    #[arg(long)]
    cluster: Option<String>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    run: PathBuf,
    /// First-frame mask PNG (nonzero = selected).
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EditArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// all | still | moving | ids:1,2,3
    #[arg(long, default_value = "all")]
    select: String,
    #[arg(long, value_name = "X,Y,Z", allow_hyphen_values = true)]
    translate: Option<String>,
    /// Uniform scale about the selection centroid.
    #[arg(long)]
    scale: Option<f64>,
    /// Rotation about the selection centroid, degrees about x,y,z.
    #[arg(long, value_name = "RX,RY,RZ", allow_hyphen_values = true)]
    rotate: Option<String>,
    /// identity | gray | invert | tint:r,g,b | set:r,g,b
    #[arg(long)]
    color_map: Option<String>,
    /// Drop the selection.
    #[arg(long, conflicts_with = "duplicate")]
    remove: bool,
    /// Append transformed copies instead of moving the selection.
    #[arg(long)]
    duplicate: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory holding the frames and, if present, gt/trajectory.txt.
    #[arg(long)]
    gt: PathBuf,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn command() -> clap::Command {
    let defaults = Config::default();
    Cli::command().mut_subcommand("reconstruct", |mut c| {
        for (key, help) in CONFIG_KEYS {
            c = c.arg(
                Arg::new(*key)
                    .long(flag_name(key))
                    .help(*help)
                    .allow_hyphen_values(true)
                    .default_value(defaults.get(key).expect("listed key"))
                    .help_heading("Config"),
            );
        }
        c
    })
}

fn config_from(args: &ReconstructArgs, m: &ArgMatches) -> Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::from_file(p)?,
        None => Config::default(),
    };
    for (key, _) in CONFIG_KEYS {
        if m.value_source(key) == Some(ValueSource::CommandLine) {
            let v: &String = m.get_one(key).expect("value present");
            cfg.set(key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("expected x,y,z, got {s}"))?;
    if v.len() != 3 {
        bail!("expected x,y,z, got {s}");
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match (&a.spec, a.preset.as_deref()) {
        (Some(p), _) => OracleSpec::from_text(&read_text(p)?, &p.display().to_string())?,
        (None, Some("static_orbit")) | (None, None) => OracleSpec::static_orbit(),
        (None, Some("dynamic_track")) => OracleSpec::dynamic_track(),
        (None, Some(other)) => bail!("unknown preset {other}"),
    };
    if let Some(n) = a.frames {
        spec.frames = n;
    }
    let scene = OracleScene::new(spec)?;
    scene.generate(&a.out)?;
    println!("wrote {} frames to {}", scene.spec.frames, a.out.display());
    Ok(())
}

fn reconstruct(a: ReconstructArgs, m: &ArgMatches) -> Result<()> {
    let cfg = config_from(&a, m)?;
    let data = Dataset::load(&a.data, cfg.short_side)?;
    let quiet = a.quiet;
    let (engine, results) = run(data, cfg, Some(&a.out), |r| {
        if !quiet {
            eprintln!(
                "frame {:4}  points {:6}  psnr {:6.2}{}",
                r.frame,
                r.points.len(),
                r.psnr,
                if r.camera_skipped { "  camera phase skipped" } else { "" }
            );
        }
    })?;
    if !quiet {
        eprintln!(
            "done: {} frames, {} points, output in {}",
            results.len(),
            engine.set.len(),
            a.out.display()
        );
    }
    Ok(())
}

/// Frame index encoded in a `frame_%04d.gfs` file name.
fn checkpoint_frame(path: &Path) -> Option<usize> {
    path.file_stem()?.to_str()?.strip_prefix("frame_")?.parse().ok()
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let set = GaussianPointSet::load(&a.checkpoint)?;
    let dir = a.checkpoint.parent().unwrap_or(Path::new("."));
    let kpath = a.intrinsics.clone().unwrap_or_else(|| dir.join("intrinsics.txt"));
    let (mut k, mut w, mut h) = parse_intrinsics(&read_text(&kpath)?, &kpath.display().to_string())?;
    k.fx = a.fx.unwrap_or(k.fx);
    k.fy = a.fy.unwrap_or(k.fy);
    k.cx = a.cx.unwrap_or(k.cx);
    k.cy = a.cy.unwrap_or(k.cy);
    w = a.width.unwrap_or(w);
    h = a.height.unwrap_or(h);
    let pose_path = Path::new(&a.pose);
    let pose = if pose_path.exists() {
        let tr = Trajectory::load(pose_path)?;
        let frame = a
            .frame
            .or_else(|| checkpoint_frame(&a.checkpoint))
            .ok_or_else(|| anyhow!("--frame is required when the checkpoint name has no frame index"))?;
        *tr.get(frame)
            .ok_or_else(|| anyhow!("frame {frame} not in {}", pose_path.display()))?
    } else {
        let line = a.pose.trim();
        let line = if line.split_whitespace().count() == 7 {
            format!("0 {line}")
        } else {
            line.to_string()
        };
        parse_pose_line(&line).map_err(|e| anyhow!("bad pose: {e}"))?.1
    };
    let settings = run_settings(dir);
    let img = render_novel_view(&set, pose, k, w, h, &settings);
    save_png(&a.out, &img)?;
    Ok(())
}

fn run_settings(dir: &Path) -> RenderSettings {
    let mut s = RenderSettings::default();
    if let Ok(text) = read_text(&dir.join("run.txt")) {
        if let Some(bg) = text.lines().find_map(|l| l.strip_prefix("background=")) {
            let v: Vec<f64> = bg.split(',').filter_map(|x| x.trim().parse().ok()).collect();
            if v.len() == 3 {
                s.background = [v[0], v[1], v[2]];
            }
        }
    }
    s
}

fn parse_cluster(s: &str) -> Result<Cluster> {
    match s {
        "still" => Ok(Cluster::Still),
        "moving" => Ok(Cluster::Moving),
        other => bail!("cluster must be still or moving, got {other}"),
    }
}

fn track(a: TrackArgs) -> Result<()> {
    let run = RunData::load(&a.run)?;
    let query = if let Some(q) = &a.query {
        let v: Vec<f64> = q
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("expected u,v,frame, got {q}"))?;
        if v.len() != 3 || v[2] < 0.0 || v[2].fract() != 0.0 {
            bail!("expected u,v,frame, got {q}");
        }
        TrackQuery::Pixel {
            u: v[0],
            v: v[1],
            frame: v[2] as usize,
        }
    } else if !a.ids.is_empty() {
        TrackQuery::Ids(a.ids.clone())
    } else {
        let cluster = parse_cluster(a.cluster.as_deref().unwrap_or("moving"))?;
        let first = run.frames.first().ok_or_else(|| anyhow!("run has no frames"))?;
        let ids = (0..first.len())
            .filter(|&i| first.clusters[i] == cluster)
            .map(|i| first.ids[i])
            .collect();
        TrackQuery::Ids(ids)
    };
    let tracks = extract_tracks(&run, &query)?;
    match &a.out {
        Some(p) => write_text(p, &tracks.to_csv())?,
        None => print!("{}", tracks.to_csv()),
    }
    Ok(())
}

fn segment(a: SegmentArgs) -> Result<()> {
    let run = RunData::load(&a.run)?;
    let mask = load_mask_png(&a.mask)?;
    if (mask.height(), mask.width()) != (run.height, run.width) {
        bail!(
            "mask is {}x{} but the run renders {}x{}",
            mask.width(),
            mask.height(),
            run.width,
            run.height
        );
    }
    let masks = propagate_mask(&run, &mask)?;
    for (f, m) in masks.iter().enumerate() {
        let t = run.trajectory.poses()[f].0;
        save_mask_png(&a.out.join(format!("mask_{t:04}.png")), m)?;
    }
    println!("wrote {} masks to {}", masks.len(), a.out.display());
    Ok(())
}

fn parse_selection(s: &str) -> Result<Selection> {
    Ok(match s {
        "all" => Selection::All,
        "still" => Selection::Cluster(Cluster::Still),
        "moving" => Selection::Cluster(Cluster::Moving),
        other => {
            let ids = other
                .strip_prefix("ids:")
                .ok_or_else(|| anyhow!("selection must be all, still, moving or ids:..."))?;
            Selection::Ids(
                ids.split(',')
                    .map(|p| p.trim().parse::<u64>())
                    .collect::<Result<_, _>>()
                    .context("bad id list")?,
            )
        }
    })
}

fn edit_cmd(a: EditArgs) -> Result<()> {
    let mut set = GaussianPointSet::load(&a.checkpoint)?;
    let sel = parse_selection(&a.select)?;
    if a.remove {
        set = edit(&set, &sel, &EditOp::Remove)?;
    } else {
        let translation = a
            .translate
            .as_deref()
            .map(parse_vec3)
            .transpose()?
            .unwrap_or_else(Vector3::zeros);
        let rot = a
            .rotate
            .as_deref()
            .map(parse_vec3)
            .transpose()?
            .map(|r| {
                let r = r.map(f64::to_radians);
                UnitQuaternion::from_euler_angles(r.x, r.y, r.z)
            })
            .unwrap_or_else(UnitQuaternion::identity);
        let scale = a.scale.unwrap_or(1.0);
        if !(scale > 0.0) {
            bail!("--scale must be positive");
        }
        let pivot = selection_centroid(&set, &sel)?;
        let transform = if a.translate.is_none() && a.rotate.is_none() && a.scale.is_none() {
            Affine3::identity()
        } else {
            Affine3::about(pivot, rot, scale, translation)
        };
        if a.duplicate {
            set = edit(&set, &sel, &EditOp::Duplicate(transform))?;
        } else {
            set = edit(&set, &sel, &EditOp::Transform(transform))?;
        }
        if let Some(spec) = &a.color_map {
            let map = ColorMap::parse(spec).map_err(|e| anyhow!(e))?;
            set = edit(&set, &sel, &EditOp::Color(map))?;
        }
    }
    set.save(&a.out)?;
    Ok(())
}

#[derive(Serialize)]
struct FrameScore {
    frame: usize,
    psnr: f64,
    ssim: f64,
}

#[derive(Serialize)]
struct PoseScore {
    ate: f64,
    rpe_t_mean: f64,
    rpe_r_mean_deg: f64,
    rpe_r_max_deg: f64,
    rpe_t: Vec<f64>,
    rpe_r_deg: Vec<f64>,
    sim3_scale: f64,
}

#[derive(Serialize)]
struct EvalReport {
    frames: Vec<FrameScore>,
    mean_psnr: f64,
    mean_ssim: f64,
    pose: Option<PoseScore>,
}

fn eval(a: EvalArgs) -> Result<()> {
    let run = RunData::load(&a.run)?;
    let mut frames = Vec::new();
    for f in 0..run.len() {
        let t = run.trajectory.poses()[f].0;
        let target = load_image(&frame_path(&a.gt, t))?;
        let target = if (target.height(), target.width()) == (run.height, run.width) {
            target
        } else {
            splatflow_core::dataset::resample(&target, run.height, run.width)
        };
        let img = render_novel_view(
            &run.frames[f],
            run.trajectory.poses()[f].1,
            run.intrinsics,
            run.width,
            run.height,
            &run.settings,
        );
        frames.push(FrameScore {
            frame: t,
            psnr: psnr(&img, &target)?,
            ssim: ssim(&img, &target),
        });
    }
    let n = frames.len().max(1) as f64;
    let gt_path = a.gt.join("gt").join("trajectory.txt");
    let pose = if gt_path.exists() {
        let gt = Trajectory::load(&gt_path)?;
        let gt = Trajectory::from_poses(gt.poses().iter().take(run.len()).copied().collect())?;
        let r = pose_errors(&run.trajectory, &gt)?;
        Some(PoseScore {
            ate: r.ate,
            rpe_t_mean: r.mean_rpe_t(),
            rpe_r_mean_deg: r.mean_rpe_r(),
            rpe_r_max_deg: r.max_rpe_r(),
            rpe_t: r.rpe_t.clone(),
            rpe_r_deg: r.rpe_r.clone(),
            sim3_scale: r.alignment.scale,
        })
    } else {
        None
    };
    let report = EvalReport {
        mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        frames,
        pose,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => write_text(p, &(json + "\n"))?,
        None => println!("{json}"),
    }
    Ok(())
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GFLOW_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("GFLOW_THREADS={v}"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global()?;
    }
    Ok(())
}

fn dispatch() -> Result<()> {
    init_threads()?;
    let matches = command().get_matches();
    let cli = Cli::from_arg_matches(&matches)?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Reconstruct(a) => {
            let m = matches.subcommand_matches("reconstruct").expect("reconstruct matches");
            reconstruct(a, m)
        }
        Command::Render(a) => render_cmd(a),
        Command::Track(a) => track(a),
        Command::Segment(a) => segment(a),
        Command::Edit(a) => edit_cmd(a),
        Command::Eval(a) => eval(a),
    }
}

fn main() -> ExitCode {
    match dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let top = e.to_string();
            eprintln!("error: {top}");
            for cause in e.chain().skip(1) {
                let c = cause.to_string();
                if !top.contains(&c) {
                    eprintln!("  caused by: {c}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
