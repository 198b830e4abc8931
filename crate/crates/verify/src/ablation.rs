//! Desk-scale ablation on a generated scene and the determinism check that
//! reuses its runs.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use log::info;
use thermalsplat::io::dataset::Dataset;
use thermalsplat::losses::format_psnr;
use thermalsplat::synth::{synth_scene_generate, SynthSpec};
use thermalsplat::train::{train, TrainConfig, TrainOutput};
use thermalsplat::{Error, Result};

use crate::Check;

/// The bundled desk-scale scene: 64x64 images, 24 views, nonzero
/// attenuation and diffusion.
pub const DESK_SPEC: &str = include_str!("../../../assets/desk_scene.synth");

/// Growth cap keeping the four desk runs within the runtime budget on a
/// single core.
pub const DESK_MAX_GAUSSIANS: usize = 6000;

pub const EXPECTED_MARGIN_DB: f64 = 0.5;
pub const SINGLE_MODULE_SLACK_DB: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    AtfOnly,
    TcmOnly,
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::AtfOnly, Variant::TcmOnly, Variant::Full];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::AtfOnly => "+atf",
            Variant::TcmOnly => "+tcm",
            Variant::Full => "full",
        }
    }

    pub fn apply(self, config: &mut TrainConfig) {
        let (atf, tcm, dis) = match self {
            Variant::Baseline => (false, false, false),
            Variant::AtfOnly => (true, false, false),
            Variant::TcmOnly => (false, true, false),
            Variant::Full => (true, true, true),
        };
        config.atf = atf;
        config.tcm = tcm;
        config.dis_loss = dis;
    }
}

/// Training configuration for the desk-scale experiments: the standard
/// schedule compressed to `iterations` steps and a narrower ATF.
pub fn desk_config(iterations: u64, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        seed,
        atf_width: 64,
        atf_depth: 4,
        densify_from: 300,
        densify_interval: 100,
        densify_until: iterations * 5 / 6,
        opacity_reset_interval: iterations,
        max_gaussians: DESK_MAX_GAUSSIANS,
        sh_increase_interval: (iterations / 6).max(1),
        iter_t: (iterations / 2).max(1),
        checkpoints: vec![iterations],
        log_interval: (iterations / 10).max(1),
        ..TrainConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub psnr: f64,
    pub ssim: f64,
    pub gaussians: usize,
    pub checkpoint: Vec<u8>,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct Experiments {
    pub runs: Vec<RunResult>,
    /// Second run of the full method with identical seed and config.
    pub repeat: RunResult,
    pub elapsed: Duration,
}

impl Experiments {
    pub fn get(&self, v: Variant) -> &RunResult {
        self.runs.iter().find(|r| r.variant == v).expect("every variant is run")
    }
}

pub fn run_variant(dataset: &Dataset, base: &TrainConfig, variant: Variant, out: &Path) -> Result<RunResult> {
    let start = Instant::now();
    let mut config = base.clone();
    variant.apply(&mut config);
    let output = TrainOutput { dir: out.to_path_buf() };
    let report = train(dataset, &config, Some(&output))?;
    let last = report
        .evals
        .last()
        .ok_or_else(|| Error::Data("training produced no evaluation".into()))?;
    let (psnr, ssim) = last.mean();
    let path = output.checkpoint_path(config.iterations);
    let checkpoint = fs::read(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    info!(
        "{}: test psnr {} ssim {ssim:.4} ({} gaussians, {:.0}s)",
        variant.name(),
        format_psnr(psnr),
        report.state.cloud.len(),
        start.elapsed().as_secs_f64()
    );
    Ok(RunResult {
        variant,
        psnr,
        ssim,
        gaussians: report.state.cloud.len(),
        checkpoint,
        elapsed: start.elapsed(),
    })
}

/// Generates the desk scene and trains every variant plus a repeat of the
/// full method.
pub fn run_experiments(iterations: u64, seed: u64) -> Result<Experiments> {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| Error::Data(e.to_string()))?;
    let spec = SynthSpec::parse(DESK_SPEC, "desk_scene.synth")?;
    let data = tmp.path().join("scene");
    synth_scene_generate(&spec, seed, &data)?;
    let dataset = Dataset::load(&data)?;
    let base = desk_config(iterations, seed);
    let mut runs = Vec::new();
    for v in Variant::ALL {
        runs.push(run_variant(&dataset, &base, v, &tmp.path().join(v.name()))?);
    }
    let repeat = run_variant(&dataset, &base, Variant::Full, &tmp.path().join("full-repeat"))?;
    Ok(Experiments {
        runs,
        repeat,
        elapsed: start.elapsed(),
    })
}

pub fn ablation_criterion(exp: &Experiments, budget: Duration) -> Check {
    let base = exp.get(Variant::Baseline).psnr;
    let full = exp.get(Variant::Full).psnr;
    let atf = exp.get(Variant::AtfOnly).psnr;
    let tcm = exp.get(Variant::TcmOnly).psnr;
    let margin = full - base;
    let a = margin >= 0.0;
    let c = atf >= base - SINGLE_MODULE_SLACK_DB && tcm >= base - SINGLE_MODULE_SLACK_DB;
    // The four ablation runs; the repeat belongs to the determinism check.
    let elapsed: Duration = exp.runs.iter().map(|r| r.elapsed).sum();
    let in_time = elapsed <= budget;
    Check::new(
        "directional ablation",
        a && c && in_time,
        format!(
            "test psnr baseline {base:.3} / +atf {atf:.3} / +tcm {tcm:.3} / full {full:.3} dB; (a) full - baseline = {margin:+.3} dB >= 0 {}; (b) expected margin {EXPECTED_MARGIN_DB} dB {}; (c) single modules >= baseline - {SINGLE_MODULE_SLACK_DB} dB {}; {:.0}s of {:.0}s budget{}",
            if a { "ok" } else { "FAILED" },
            if margin >= EXPECTED_MARGIN_DB { "met" } else { "not met (reported only)" },
            if c { "ok" } else { "FAILED" },
            elapsed.as_secs_f64(),
            budget.as_secs_f64(),
            if in_time { "" } else { " EXCEEDED" }
        ),
    )
}

pub fn determinism_criterion(exp: &Experiments) -> Check {
    let a = &exp.get(Variant::Full).checkpoint;
    let b = &exp.repeat.checkpoint;
    let same = a == b;
    let first_diff = a.iter().zip(b).position(|(x, y)| x != y);
    Check::new(
        "determinism",
        same,
        match (same, first_diff) {
            (true, _) => format!("two full runs give identical {}-byte checkpoints", a.len()),
            (false, Some(i)) => format!("checkpoints differ first at byte {i}"),
            (false, None) => format!("checkpoint lengths differ: {} vs {}", a.len(), b.len()),
        },
    )
}
