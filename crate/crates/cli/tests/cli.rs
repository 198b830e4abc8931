use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thermalsplat::io::checkpoint::load_checkpoint;
use thermalsplat::io::colmap::parse_colmap;
use thermalsplat::io::dataset::Dataset;
use thermalsplat::io::image::{load_image, quantize};
use thermalsplat::pipeline::{forward, Modules};
use thermalsplat::render::RenderSettings;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_thermalsplat"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_spec() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/tiny.synth")
}

fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let out = run(&["synth", "--spec", s(&tiny_spec()), "--out", s(&data), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn tree_bytes(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_parseable_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path());
    let b = tmp.path().join("again");
    assert!(run(&["synth", "--spec", s(&tiny_spec()), "--out", s(&b), "--seed", "3"]).status.success());
    assert_eq!(tree_bytes(&a), tree_bytes(&b));
    let scene = parse_colmap(&a).unwrap();
    assert_eq!(scene.views.len(), 9);
    assert_eq!(fs::read_dir(a.join("images")).unwrap().count(), 9);
    assert!(a.join("manifest.txt").is_file());
}

#[test]
fn synth_bundled_desk_spec() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets/desk_scene.synth");
    let out = run(&["synth", "--spec", s(&spec), "--out", s(&tmp.path().join("d"))]);
    assert!(out.status.success());
    let ds = Dataset::load(&tmp.path().join("d")).unwrap();
    assert_eq!(ds.views.len(), 24);
    assert_eq!((ds.views[0].image.width, ds.views[0].image.height), (64, 64));
}

#[test]
fn synth_missing_section_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(tiny_spec()).unwrap();
    let start = text.find("[orbit]").unwrap();
    let end = text.find("[attenuation]").unwrap();
    let spec = tmp.path().join("bad.synth");
    fs::write(&spec, format!("{}{}", &text[..start], &text[end..])).unwrap();
    let out = run(&["synth", "--spec", s(&spec), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[orbit]"));
}

#[test]
fn zero_iterations_writes_only_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out_dir = tmp.path().join("run");
    let out = run(&["train", "--data", s(&data), "--out", s(&out_dir), "--iterations", "0", "--set", "atf_width=16"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpts: Vec<_> = fs::read_dir(out_dir.join("checkpoints")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(ckpts, vec![std::ffi::OsString::from("iter_000000.ckpt")]);
    let state = load_checkpoint(&out_dir.join("checkpoints/iter_000000.ckpt")).unwrap();
    assert_eq!(state.iteration, 0);
    assert!(state.atf.is_some() && state.tcm.is_some());

    // An identity checkpoint renders exactly like the bare splatting renderer.
    let renders = tmp.path().join("renders");
    let ck = out_dir.join("checkpoints/iter_000000.ckpt");
    let out = run(&["render", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&renders)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ds = Dataset::load(&data).unwrap();
    let (_, test) = ds.split();
    for v in test {
        let base = forward(&state.cloud, &v.camera, v.time_norm, &Modules::baseline(), &RenderSettings::default()).unwrap();
        let png = load_image(&renders.join(&v.name)).unwrap();
        for (a, b) in base.image.data.iter().zip(&png.data) {
            assert_eq!(quantize(*a) as f64 / 255.0, *b);
        }
    }
}

#[test]
fn ablation_flags_reach_the_metrics_header() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out_dir = tmp.path().join("run");
    let cfg = tmp.path().join("train.cfg");
    fs::write(&cfg, "iterations = 5\nseed = 9\n").unwrap();
    let out = run(&[
        "train", "--data", s(&data), "--out", s(&out_dir), "--config", s(&cfg), "--iterations", "12", "--no-atf", "--no-tcm",
        "--no-dis",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(out_dir.join("metrics.log")).unwrap();
    for line in ["# iterations = 12", "# seed = 9", "# atf = false", "# tcm = false", "# dis_loss = false"] {
        assert!(log.contains(line), "{line} missing from\n{log}");
    }
    let state = load_checkpoint(&out_dir.join("checkpoints/iter_000012.ckpt")).unwrap();
    assert!(state.atf.is_none() && state.tcm.is_none());
    assert!(out_dir.join("point_cloud.ply").is_file());
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out = run(&["train", "--data", s(&data), "--out", s(&tmp.path().join("r")), "--set", "lambda_foo=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_foo"));
}

#[test]
fn missing_checkpoint_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["render", "--checkpoint", s(&tmp.path().join("nope.ckpt")), "--cameras", "x", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(run(&["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn eval_of_ground_truth_and_rescoring() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let out = run(&["eval", "--data", s(&data), "--images", s(&data.join("images"))]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<&str> = report.lines().collect();
    // header, 2 test views (frames 0 and 8), mean
    assert_eq!(rows.len(), 4, "{report}");
    for r in &rows[1..] {
        let f: Vec<&str> = r.split('\t').collect();
        assert_eq!(f[1], "inf");
        assert_eq!(f[2].parse::<f64>().unwrap(), 1.0);
    }

    let run_dir = tmp.path().join("run");
    let out = run(&[
        "--threads", "1", "train", "--data", s(&data), "--out", s(&run_dir), "--iterations", "20", "--set", "atf_width=16",
        "--set", "atf_depth=2",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = run_dir.join("checkpoints/iter_000020.ckpt");
    let report_path = tmp.path().join("eval.tsv");
    let out = run(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&report_path)]);
    assert!(out.status.success());
    let report = fs::read_to_string(&report_path).unwrap();
    let parse = |line: &str| -> (f64, f64) {
        let f: Vec<&str> = line.split('\t').collect();
        (f[1].parse().unwrap(), f[2].parse().unwrap())
    };
    let lines: Vec<&str> = report.lines().collect();
    let body: Vec<(f64, f64)> = lines[1..lines.len() - 1].iter().map(|l| parse(l)).collect();
    let mean = parse(lines[lines.len() - 1]);
    let n = body.len() as f64;
    assert!((mean.0 - body.iter().map(|r| r.0).sum::<f64>() / n).abs() < 1e-6);
    assert!((mean.1 - body.iter().map(|r| r.1).sum::<f64>() / n).abs() < 1e-9);

    // The training log's final evaluation agrees with the eval subcommand.
    let log = fs::read_to_string(run_dir.join("metrics.log")).unwrap();
    let eval_line = log.lines().filter(|l| l.starts_with("eval\t20\t")).last().unwrap();
    let logged: f64 = eval_line.split('\t').nth(2).unwrap().trim_start_matches("psnr=").parse().unwrap();
    assert!((logged - mean.0).abs() < 1e-5, "{logged} vs {}", mean.0);

    // Rendered PNGs re-scored agree up to 8-bit quantization.
    let renders = tmp.path().join("renders");
    assert!(run(&["render", "--checkpoint", s(&ck), "--data", s(&data), "--out", s(&renders)]).status.success());
    let out = run(&["eval", "--data", s(&data), "--images", s(&renders)]);
    let rescored = String::from_utf8(out.stdout).unwrap();
    let last = rescored.lines().last().unwrap();
    assert!((parse(last).0 - mean.0).abs() < 0.2, "{last} vs {}", mean.0);
}

#[test]
fn camera_path_rendering() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path());
    let run_dir = tmp.path().join("run");
    assert!(run(&["train", "--data", s(&data), "--out", s(&run_dir), "--iterations", "0", "--no-atf"]).status.success());
    let path = tmp.path().join("path.txt");
    fs::write(&path, "# orbit\nfront 0.25 1 0 0 0 0 0 4 30 30 15.5 15.5 32 24\n").unwrap();
    let out_dir = tmp.path().join("renders");
    let ck = run_dir.join("checkpoints/iter_000000.ckpt");
    let out = bin()
        .env("THERMALSPLAT_THREADS", "1")
        .args(["render", "--checkpoint", s(&ck), "--cameras", s(&path), "--out", s(&out_dir), "--no-tcm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let img = load_image(&out_dir.join("front.png")).unwrap();
    assert_eq!((img.width, img.height), (32, 24));

    fs::write(&path, "front 0.25 1 0 0\n").unwrap();
    let out = run(&["render", "--checkpoint", s(&ck), "--cameras", s(&path), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}
