//! The optimization loop.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{error, info};

use crate::error::{Error, Result};
use crate::io::checkpoint::save_checkpoint;
use crate::io::dataset::Dataset;
use crate::losses::{format_psnr, psnr, ssim, total_loss, CornerWeights, LossBreakdown};
use crate::pipeline::{self, PipelineGradients};
use crate::render::RenderSettings;
use crate::scene::{sigmoid, RadianceImage, ThermalView};
use crate::sh::SH_COEFFS;
use crate::train::adam::exp_lr;
use crate::train::config::TrainConfig;
use crate::train::density::{densify_and_prune, reset_opacity, DensifyParams, DensifyStats};
use crate::train::state::{
    TrainState, G_OPACITY, G_POSITION, G_ROTATION, G_SCALE, G_SH_DC, G_SH_REST,
};

/// Quality of one rendered view against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

/// Arithmetic means of PSNR and SSIM over `rows`.
pub fn mean_metrics(rows: &[ViewMetrics]) -> (f64, f64) {
    let n = rows.len().max(1) as f64;
    (
        rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub iteration: u64,
    pub views: Vec<ViewMetrics>,
}

impl EvalRecord {
    pub fn mean(&self) -> (f64, f64) {
        mean_metrics(&self.views)
    }
}

pub struct TrainReport {
    pub state: TrainState,
    pub evals: Vec<EvalRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub losses: Vec<(u64, LossBreakdown)>,
}

pub fn render_settings(config: &TrainConfig) -> RenderSettings {
    RenderSettings {
        background: config.background,
        ..RenderSettings::default()
    }
}

/// Renders a view through every module the state carries; `use_tcm = false`
/// skips conduction refinement.
pub fn render_view(state: &TrainState, view: &ThermalView, use_tcm: bool) -> Result<RadianceImage> {
    let mut modules = state.modules();
    if !use_tcm {
        modules.tcm = None;
    }
    let fwd = pipeline::forward(
        &state.cloud,
        &view.camera,
        view.time_norm,
        &modules,
        &render_settings(&state.config),
    )?;
    Ok(fwd.image)
}

pub fn evaluate(state: &TrainState, views: &[&ThermalView]) -> Result<Vec<ViewMetrics>> {
    views
        .iter()
        .map(|v| {
            let img = render_view(state, v, true)?;
            Ok(ViewMetrics {
                name: v.name.clone(),
                psnr: psnr(&img, &v.image)?,
                ssim: ssim(&img, &v.image)?,
            })
        })
        .collect()
}

/// Where a run writes its checkpoints and metrics log.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub dir: PathBuf,
}

impl TrainOutput {
    pub fn checkpoint_path(&self, iteration: u64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("iter_{iteration:06}.ckpt"))
    }
}

/// Seeds a state from the dataset's sparse points and trains it on the
/// standard split.
pub fn train(dataset: &Dataset, config: &TrainConfig, output: Option<&TrainOutput>) -> Result<TrainReport> {
    let (train_views, test_views) = dataset.split();
    let points: Vec<([f64; 3], f64)> = dataset
        .scene
        .points3d
        .iter()
        .map(|p| (p.position, p.radiance()))
        .collect();
    let state = TrainState::initialize(config, &points, train_views.iter().map(|v| &v.camera))?;
    run(state, &train_views, &test_views, output)
}

struct MetricsLog {
    out: Option<BufWriter<File>>,
}

impl MetricsLog {
    fn open(output: Option<&TrainOutput>, config: &TrainConfig) -> Result<Self> {
        let Some(o) = output else {
            return Ok(Self { out: None });
        };
        fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
        let path = o.dir.join("metrics.log");
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut log = Self {
            out: Some(BufWriter::new(f)),
        };
        for line in config.to_kv().lines() {
            log.line(&format!("# {line}"))?;
        }
        log.line("kind\titeration\ttotal\tl1\tdssim\tdis\tgaussians")?;
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        if let Some(w) = &mut self.out {
            writeln!(w, "{s}").map_err(|e| Error::io("metrics.log", e))?;
            w.flush().map_err(|e| Error::io("metrics.log", e))?;
        }
        Ok(())
    }
}

/// Continues training `state` until `state.config.iterations`.
pub fn run(
    mut state: TrainState,
    train_views: &[&ThermalView],
    test_views: &[&ThermalView],
    output: Option<&TrainOutput>,
) -> Result<TrainReport> {
    if train_views.is_empty() {
        return Err(Error::Data("no training views".into()));
    }
    state.validate()?;
    let config = state.config.clone();
    let weights = config.loss_weights();
    let settings = render_settings(&config);
    let total = config.iterations;
    let mut log = MetricsLog::open(output, &config)?;
    let mut report_evals = Vec::new();
    let mut checkpoints = Vec::new();
    let mut losses = Vec::new();
    let mut corners: Vec<Option<CornerWeights>> = vec![None; train_views.len()];
    let mut running = LossBreakdown::default();
    let mut running_n = 0u64;

    let checkpoint = |state: &TrainState,
                      evals: &mut Vec<EvalRecord>,
                      paths: &mut Vec<PathBuf>,
                      log: &mut MetricsLog|
     -> Result<()> {
        let metrics = evaluate(state, test_views)?;
        if !metrics.is_empty() {
            let (p, s) = mean_metrics(&metrics);
            info!("[{}] test psnr {} ssim {s:.6}", state.iteration, format_psnr(p));
            log.line(&format!("eval\t{}\tpsnr={}\tssim={s:.9}", state.iteration, format_psnr(p)))?;
        }
        evals.push(EvalRecord {
            iteration: state.iteration,
            views: metrics,
        });
        if let Some(o) = output {
            let path = o.checkpoint_path(state.iteration);
            save_checkpoint(state, &path)?;
            paths.push(path);
        }
        Ok(())
    };

    if total == 0 || state.iteration >= total {
        checkpoint(&state, &mut report_evals, &mut checkpoints, &mut log)?;
    }

    while state.iteration < total {
        let it = state.iteration;
        let step = it + 1;
        if step % config.sh_increase_interval == 0 && state.cloud.sh_degree_active < config.sh_degree {
            state.cloud.sh_degree_active += 1;
        }
        let vi = state.sampler.next(train_views.len(), &mut state.rng);
        let view = train_views[vi];
        if weights.lambda_dis > 0.0 && weights.dis_decay(it) > 0.0 && corners[vi].is_none() {
            corners[vi] = Some(CornerWeights::from_image(&view.image, weights.k_harris));
        }

        let modules = state.modules();
        let fwd = pipeline::forward(&state.cloud, &view.camera, view.time_norm, &modules, &settings)
            .map_err(|e| numerical_dump(e, &state, view))?;
        let (loss, d_image) = total_loss(&fwd.image, &view.image, it, &weights, corners[vi].as_ref())?;
        if !loss.total.is_finite() {
            return Err(numerical_dump(
                Error::Numerical(format!("loss is {} at iteration {step}", loss.total)),
                &state,
                view,
            ));
        }
        let grads = pipeline::backward(&state.cloud, &fwd, &modules, &d_image)?;

        if step < config.densify_until {
            let visible: Vec<bool> = fwd
                .aux
                .splats
                .iter()
                .map(|s| s.as_ref().is_some_and(|s| s.pixel_rect.is_some()))
                .collect();
            state
                .densify
                .accumulate(&grads.gaussians.d_mean2d, &visible, view.camera.width, view.camera.height);
        }
        drop(fwd);
        apply_gradients(&mut state, &grads, it)?;
        state.iteration = step;

        running.total += loss.total;
        running.l1 += loss.l1;
        running.dssim += loss.dssim;
        running.dis += loss.dis;
        running_n += 1;
        if step % config.log_interval == 0 || step == total {
            let k = running_n as f64;
            let mean = LossBreakdown {
                total: running.total / k,
                l1: running.l1 / k,
                dssim: running.dssim / k,
                dis: running.dis / k,
            };
            info!(
                "[{step}] loss {:.6} (l1 {:.6} dssim {:.6} dis {:.6}) gaussians {}",
                mean.total,
                mean.l1,
                mean.dssim,
                mean.dis,
                state.cloud.len()
            );
            log.line(&format!(
                "train\t{step}\t{:.9}\t{:.9}\t{:.9}\t{:.9}\t{}",
                mean.total,
                mean.l1,
                mean.dssim,
                mean.dis,
                state.cloud.len()
            ))?;
            losses.push((step, mean));
            running = LossBreakdown::default();
            running_n = 0;
        }

        if step < config.densify_until {
            if step > config.densify_from && step % config.densify_interval == 0 {
                densify(&mut state)?;
            }
            if step % config.opacity_reset_interval == 0 {
                reset_opacity(&mut state.cloud);
                state.optimizer.gaussian[G_OPACITY].reset();
            }
        }

        if config.checkpoints.contains(&step) || step == total {
            checkpoint(&state, &mut report_evals, &mut checkpoints, &mut log)?;
        }
    }

    Ok(TrainReport {
        state,
        evals: report_evals,
        checkpoints,
        losses,
    })
}

fn densify(state: &mut TrainState) -> Result<()> {
    let params = DensifyParams {
        grad_threshold: state.config.densify_grad_threshold,
        split_scale: state.config.percent_dense * state.spatial_scale,
        prune_opacity: state.config.prune_opacity,
        max_gaussians: state.config.max_gaussians,
    };
    let (cloud, src, report) = densify_and_prune(&state.cloud, &state.densify, &params, &mut state.rng)?;
    if cloud.is_empty() {
        return Err(Error::Numerical("pruning removed every gaussian".into()));
    }
    log::debug!(
        "[{}] densify: cloned {} split {} pruned {} -> {}",
        state.iteration,
        report.cloned,
        report.split,
        report.pruned,
        cloud.len()
    );
    state.optimizer.remap_gaussians(&src);
    state.densify = DensifyStats::new(cloud.len());
    state.cloud = cloud;
    Ok(())
}

fn apply_gradients(state: &mut TrainState, grads: &PipelineGradients, it: u64) -> Result<()> {
    let c = &state.config;
    let total = c.iterations;
    let pos_lr = exp_lr(
        c.position_lr_start * state.spatial_scale,
        c.position_lr_end * state.spatial_scale,
        it,
        total,
    );
    let g = &grads.gaussians;
    let opt = &mut state.optimizer.gaussian;
    let cloud = &mut state.cloud;
    opt[G_POSITION].step(cloud.positions.as_flattened_mut(), g.d_position.as_flattened(), pos_lr)?;
    opt[G_SCALE].step(cloud.log_scales.as_flattened_mut(), g.d_log_scale.as_flattened(), c.scale_lr)?;
    opt[G_ROTATION].step(cloud.rotations.as_flattened_mut(), g.d_rotation.as_flattened(), c.rotation_lr)?;
    opt[G_OPACITY].step(&mut cloud.opacity_logits, &g.d_opacity_logit, c.opacity_lr)?;

    let mut dc: Vec<f64> = cloud.sh.iter().map(|s| s[0]).collect();
    let d_dc: Vec<f64> = g.d_sh.iter().map(|s| s[0]).collect();
    opt[G_SH_DC].step(&mut dc, &d_dc, c.sh_lr)?;
    let mut rest: Vec<f64> = cloud.sh.iter().flat_map(|s| s[1..].iter().copied()).collect();
    let d_rest: Vec<f64> = g.d_sh.iter().flat_map(|s| s[1..].iter().copied()).collect();
    opt[G_SH_REST].step(&mut rest, &d_rest, c.sh_rest_lr)?;
    for (i, s) in cloud.sh.iter_mut().enumerate() {
        s[0] = dc[i];
        s[1..].copy_from_slice(&rest[i * (SH_COEFFS - 1)..(i + 1) * (SH_COEFFS - 1)]);
    }
    cloud.normalize_rotations();

    if let (Some(net), Some(d_net), Some(group)) = (&mut state.atf, &grads.atf, &mut state.optimizer.atf) {
        let lr = exp_lr(c.atf_lr_start, c.atf_lr_end, it, total);
        step_buffers(group, net.buffers_mut(), d_net.buffers(), lr)?;
    }
    if let (Some(net), Some(d_net), Some(group)) = (&mut state.tcm, &grads.tcm, &mut state.optimizer.tcm) {
        let lr = exp_lr(c.position_lr_start, c.position_lr_end, it, total);
        step_buffers(group, net.buffers_mut(), d_net.buffers(), lr)?;
    }
    Ok(())
}

fn step_buffers(
    group: &mut crate::train::adam::AdamGroup,
    params: Vec<&mut [f64]>,
    grads: Vec<&[f64]>,
    lr: f64,
) -> Result<()> {
    let mut flat: Vec<f64> = params.iter().flat_map(|b| b.iter().copied()).collect();
    let d: Vec<f64> = grads.iter().flat_map(|b| b.iter().copied()).collect();
    group.step(&mut flat, &d, lr)?;
    let mut off = 0;
    for b in params {
        let n = b.len();
        b.copy_from_slice(&flat[off..off + n]);
        off += n;
    }
    Ok(())
}

/// Logs the offending view and parameter ranges before returning `e`.
fn numerical_dump(e: Error, state: &TrainState, view: &ThermalView) -> Error {
    if !e.is_numerical() {
        return e;
    }
    let cloud = &state.cloud;
    let range = |it: &mut dyn Iterator<Item = f64>| {
        it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    error!("numerical failure at iteration {} on view {}", state.iteration + 1, view.name);
    error!("  gaussians: {}", cloud.len());
    error!("  position range: {:?}", range(&mut cloud.positions.iter().flatten().copied()));
    error!("  log-scale range: {:?}", range(&mut cloud.log_scales.iter().flatten().copied()));
    error!(
        "  opacity range: {:?}",
        range(&mut cloud.opacity_logits.iter().map(|&o| sigmoid(o)))
    );
    error!("  sh range: {:?}", range(&mut cloud.sh.iter().flatten().copied()));
    let detail = match e {
        Error::Numerical(m) => m,
        other => other.to_string(),
    };
    Error::Numerical(format!("{detail} (view {}, iteration {})", view.name, state.iteration + 1))
}

/// Checkpoint file for `iteration` below `dir`.
pub fn checkpoint_path(dir: &Path, iteration: u64) -> PathBuf {
    TrainOutput { dir: dir.to_path_buf() }.checkpoint_path(iteration)
}
