use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use thermalsplat::io::camera_path::load_camera_path;
use thermalsplat::io::checkpoint::load_checkpoint;
use thermalsplat::io::dataset::Dataset;
use thermalsplat::io::image::{load_image, save_image};
use thermalsplat::io::ply::save_ply;
use thermalsplat::losses::{format_psnr, psnr, ssim};
use thermalsplat::pipeline::{self, Modules};
use thermalsplat::scene::{Camera, RadianceImage};
use thermalsplat::synth::{synth_scene_generate, SynthSpec};
use thermalsplat::train::trainer::{mean_metrics, render_settings};
use thermalsplat::train::{train, TrainConfig, TrainOutput, TrainState, ViewMetrics};
use thermalsplat::Error;
use thermalsplat_verify::{ablation, quick_suites, Check};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Thermal-infrared Gaussian splatting with atmospheric transmission and
/// thermal conduction modelling.
#[derive(Parser, Debug)]
#[command(name = "thermalsplat", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "THERMALSPLAT_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic thermal dataset from a scene spec.
    Synth(SynthArgs),
    /// Train on a dataset.
    Train(TrainArgs),
    /// Render views from a checkpoint.
    Render(RenderArgs),
    /// Score a checkpoint (or a directory of renders) on the test split.
    Eval(EvalArgs),
    /// Run the oracle and property suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene spec file.
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory (COLMAP model plus images/).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: PathBuf,
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config override, repeatable: `--set key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable the atmospheric transmission field.
    #[arg(long)]
    no_atf: bool,
    /// Disable the thermal conduction module.
    #[arg(long)]
    no_tcm: bool,
    /// Disable the corner-weighted loss term.
    #[arg(long)]
    no_dis: bool,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for PNGs.
    #[arg(long)]
    out: PathBuf,
    /// Render the test split of this dataset.
    #[arg(long, conflicts_with = "cameras", required_unless_present = "cameras")]
    data: Option<PathBuf>,
    /// Camera-path file with one view per line.
    #[arg(long)]
    cameras: Option<PathBuf>,
    /// Skip conduction refinement.
    #[arg(long)]
    no_tcm: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Dataset providing the test split and ground truth.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to render from.
    #[arg(long, conflicts_with = "images", required_unless_present = "images")]
    checkpoint: Option<PathBuf>,
    /// Directory of already rendered images named like the dataset views.
    #[arg(long)]
    images: Option<PathBuf>,
    /// Report file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    no_tcm: bool,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Also run the training experiments (ablation and determinism).
    #[arg(long)]
    full: bool,
    /// Training iterations for the experiments.
    #[arg(long, default_value_t = 3000)]
    iterations: u64,
}

/// Failure of a subcommand with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() {
            EXIT_NUMERICAL
        } else if e.is_usage() {
            EXIT_USAGE
        } else {
            EXIT_DATA
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Render(a) => cmd_render(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec::from_file(&a.spec)?;
    synth_scene_generate(&spec, a.seed, &a.out)?;
    info!("wrote {} views to {}", spec.orbit.views, a.out.display());
    Ok(())
}

/// Defaults, then the config file, then `--set`, then dedicated flags.
fn resolve_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut config = TrainConfig::default();
    if let Some(path) = &a.config {
        config.apply_file(path)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects key=value, got '{kv}'")))?;
        config.set(k.trim(), v.trim())?;
    }
    if let Some(n) = a.iterations {
        config.iterations = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.atf &= !a.no_atf;
    config.tcm &= !a.no_tcm;
    config.dis_loss &= !a.no_dis;
    config.validate()?;
    Ok(config)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let config = resolve_config(&a)?;
    let dataset = Dataset::load(&a.data)?;
    let (tr, te) = dataset.split();
    info!(
        "{} views ({} train, {} test), {} seed points",
        dataset.views.len(),
        tr.len(),
        te.len(),
        dataset.scene.points3d.len()
    );
    let output = TrainOutput { dir: a.out.clone() };
    let report = train(&dataset, &config, Some(&output))?;
    save_ply(&report.state.cloud, &a.out.join("point_cloud.ply"))?;
    if let Some(last) = report.evals.last() {
        if !last.views.is_empty() {
            let (p, s) = last.mean();
            info!("final test psnr {} ssim {s:.6}", format_psnr(p));
        }
    }
    for p in &report.checkpoints {
        info!("checkpoint {}", p.display());
    }
    Ok(())
}

fn render_one(state: &TrainState, camera: &Camera, time: f64, use_tcm: bool) -> thermalsplat::Result<RadianceImage> {
    let mut modules: Modules = state.modules();
    if !use_tcm {
        modules.tcm = None;
    }
    let fwd = pipeline::forward(&state.cloud, camera, time, &modules, &render_settings(&state.config))?;
    Ok(fwd.image)
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let state = load_checkpoint(&a.checkpoint)?;
    let views: Vec<(String, Camera, f64)> = match (&a.data, &a.cameras) {
        (_, Some(path)) => load_camera_path(path)?
            .into_iter()
            .map(|v| (v.name, v.camera, v.time))
            .collect(),
        (Some(data), None) => {
            let dataset = Dataset::load(data)?;
            let (_, test) = dataset.split();
            test.iter()
                .map(|v| (v.name.clone(), v.camera.clone(), v.time_norm))
                .collect()
        }
        (None, None) => return Err(usage("render needs --data or --cameras")),
    };
    for (name, camera, time) in &views {
        let img = render_one(&state, camera, *time, !a.no_tcm)?;
        let file = if name.ends_with(".png") {
            name.clone()
        } else {
            format!("{name}.png")
        };
        save_image(&img, &a.out.join(file))?;
    }
    info!("rendered {} views to {}", views.len(), a.out.display());
    Ok(())
}

fn metrics_report(rows: &[ViewMetrics]) -> String {
    let mut s = String::from("frame\tpsnr\tssim\n");
    for r in rows {
        let _ = writeln!(s, "{}\t{}\t{:.9}", r.name, format_psnr(r.psnr), r.ssim);
    }
    let (p, q) = mean_metrics(rows);
    let _ = writeln!(s, "mean\t{}\t{q:.9}", format_psnr(p));
    s
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let dataset = Dataset::load(&a.data)?;
    let (_, test) = dataset.split();
    let state = a.checkpoint.as_deref().map(load_checkpoint).transpose()?;
    let mut rows = Vec::with_capacity(test.len());
    for v in &test {
        let img = match (&state, &a.images) {
            (Some(st), _) => render_one(st, &v.camera, v.time_norm, !a.no_tcm)?,
            (None, Some(dir)) => load_image(&dir.join(&v.name))?,
            (None, None) => return Err(usage("eval needs --checkpoint or --images")),
        };
        rows.push(ViewMetrics {
            name: v.name.clone(),
            psnr: psnr(&img, &v.image)?,
            ssim: ssim(&img, &v.image)?,
        });
    }
    let report = metrics_report(&rows);
    match &a.out {
        Some(path) => write_file(path, &report)?,
        None => print!("{report}"),
    }
    Ok(())
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure {
            code: EXIT_DATA,
            message: format!("{}: {e}", parent.display()),
        })?;
    }
    fs::write(path, body).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn cmd_verify(a: VerifyArgs) -> CmdResult {
    let mut checks: Vec<Check> = quick_suites();
    if a.full {
        match ablation::run_experiments(a.iterations, 0) {
            Ok(exp) => {
                checks.push(ablation::ablation_criterion(&exp, Duration::from_secs(30 * 60)));
                checks.push(ablation::determinism_criterion(&exp));
            }
            Err(e) => checks.push(Check::error("training experiments", e)),
        }
    }
    for c in &checks {
        println!("{c}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("{failed} of {} checks failed", checks.len()),
        });
    }
    Ok(())
}
