use std::path::Path;
use std::process::{Command, Output};

use splatflow_core::io::load_image;
use splatflow_core::CONFIG_KEYS;

const SMALL_SPEC: &str = "preset=static_orbit\nwidth=48\nheight=32\nfocal=40\nframes=3\nseed=5\n";

const FAST_FLAGS: &[&str] = &[
    "--n-ini",
    "300",
    "--short-side",
    "0",
    "--iters-first",
    "40",
    "--iters-cam",
    "20",
    "--iters-gauss",
    "20",
    "--densify-steps-first",
    "10,20",
    "--densify-steps",
    "10",
    "--fmatrix-stride",
    "4",
];

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_splatflow"))
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("spawn splatflow");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth_small(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("scene.txt");
    std::fs::write(&spec, SMALL_SPEC).unwrap();
    let data = dir.join("data");
    run_ok(bin().args(["synth", "--spec"]).arg(&spec).arg("--out").arg(&data));
    data
}

fn reconstruct(data: &Path, out: &Path) {
    run_ok(
        bin()
            .args(["reconstruct", "--quiet", "--data"])
            .arg(data)
            .arg("--out")
            .arg(out)
            .args(FAST_FLAGS)
            .env("GFLOW_THREADS", "0"),
    );
}

#[test]
fn help_lists_every_config_key() {
    let out = run_ok(bin().args(["reconstruct", "--help"]));
    let text = String::from_utf8_lossy(&out.stdout);
    for (key, _) in CONFIG_KEYS {
        let flag = format!("--{}", key.replace('_', "-"));
        assert!(text.contains(&flag), "help is missing {flag}");
    }
}

#[test]
fn missing_flow_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let victim = data.join("flow").join("fwd_0001.gft");
    std::fs::remove_file(&victim).unwrap();
    let out = bin()
        .args(["reconstruct", "--quiet", "--data"])
        .arg(&data)
        .arg("--out")
        .arg(dir.path().join("run"))
        .args(FAST_FLAGS)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("fwd_0001.gft"), "stderr does not name the file: {err}");
}

#[test]
fn invalid_config_value_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["reconstruct", "--data"])
        .arg(dir.path())
        .arg("--out")
        .arg(dir.path().join("run"))
        .args(["--n-ini", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn synth_reconstruct_eval_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let run = dir.path().join("run");
    reconstruct(&data, &run);

    for f in [
        "trajectory.txt",
        "losses.csv",
        "intrinsics.txt",
        "run.txt",
        "frame_0002.gfs",
        "render_0002.png",
    ] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert!(losses.lines().count() > 3);

    let report = dir.path().join("report.json");
    run_ok(
        bin()
            .args(["eval", "--run"])
            .arg(&run)
            .arg("--gt")
            .arg(&data)
            .arg("--out")
            .arg(&report),
    );
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["frames"].as_array().unwrap().len(), 3);
    assert!(v["mean_psnr"].as_f64().unwrap() > 15.0);
    assert!(v["mean_ssim"].as_f64().unwrap() > 0.3);
    let pose = &v["pose"];
    for key in ["ate", "rpe_t_mean", "rpe_r_mean_deg", "rpe_r_max_deg", "sim3_scale"] {
        assert!(pose[key].as_f64().unwrap().is_finite(), "bad {key}");
    }
    assert_eq!(pose["rpe_r_deg"].as_array().unwrap().len(), 2);

    let rendered = dir.path().join("again.png");
    run_ok(
        bin()
            .args(["render", "--checkpoint"])
            .arg(run.join("frame_0002.gfs"))
            .arg("--pose")
            .arg(run.join("trajectory.txt"))
            .arg("--out")
            .arg(&rendered),
    );
    let a = load_image(&rendered).unwrap();
    let b = load_image(&run.join("render_0002.png")).unwrap();
    assert_eq!(a, b);

    let tracks = run_ok(bin().args(["track", "--run"]).arg(&run).args(["--query", "24,16,0"]));
    let csv = String::from_utf8_lossy(&tracks.stdout);
    assert_eq!(csv.lines().count(), 1 + 3, "{csv}");

    let edited = dir.path().join("edited.gfs");
    run_ok(
        bin()
            .args(["edit", "--checkpoint"])
            .arg(run.join("frame_0002.gfs"))
            .args(["--select", "all", "--translate", "0,0,0"])
            .arg("--out")
            .arg(&edited),
    );
    assert_eq!(
        std::fs::read(&edited).unwrap(),
        std::fs::read(run.join("frame_0002.gfs")).unwrap()
    );
}

#[test]
fn unknown_preset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["synth", "--preset", "nope", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
}
