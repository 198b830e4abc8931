//! Central finite differences against the hand-derived reverse pass of the
//! full chain: SH attenuation by the ATF, splatting, conduction refinement
//! and the combined training loss.
//!
//! A probe is only scored when every discrete decision (compositing
//! membership, alpha and radiance clamps, ReLU masks, loss signs) is the
//! same at `theta - eps`, `theta` and `theta + eps`; across such a kink the
//! function is not differentiable and a difference quotient is meaningless.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeMap;
use std::hash::Hasher;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::atf::{AtfNetwork, SceneBox};
use thermalsplat::losses::{loss_pattern, total_loss, CornerWeights, LossWeights};
use thermalsplat::pipeline::{backward, decision_pattern, forward, forward_with, Modules};
use thermalsplat::render::RenderSettings;
use thermalsplat::scene::{Camera, GaussianCloud, RadianceImage};
use thermalsplat::tcm::TcmNetwork;
use thermalsplat::Result;

use crate::scenes::random_scene;
use crate::Check;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub gaussians: usize,
    pub size: usize,
    pub probes: usize,
    pub eps: f64,
    pub tolerance: f64,
    /// Probes whose gradient is smaller than this in magnitude are redrawn;
    /// a relative error is meaningless for them.
    pub min_gradient: f64,
    pub seed: u64,
    pub iteration: u64,
    pub budget: Duration,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            gaussians: 20,
            size: 32,
            probes: 120,
            eps: 1e-4,
            tolerance: 1e-5,
            min_gradient: 1e-7,
            seed: 42,
            iteration: 1000,
            budget: Duration::from_secs(120),
        }
    }
}

/// One scalar parameter of the chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Position(usize, usize),
    LogScale(usize, usize),
    Rotation(usize, usize),
    Opacity(usize),
    Sh(usize, usize),
    Atf(usize, usize),
    Tcm(usize, usize),
}

impl Param {
    pub fn kind(&self) -> &'static str {
        match self {
            Param::Position(..) => "position",
            Param::LogScale(..) => "log_scale",
            Param::Rotation(..) => "rotation",
            Param::Opacity(..) => "opacity",
            Param::Sh(..) => "sh",
            Param::Atf(..) => "atf",
            Param::Tcm(..) => "tcm",
        }
    }
}

/// Everything held fixed while parameters are perturbed.
pub struct Problem {
    pub cloud: GaussianCloud,
    pub camera: Camera,
    pub time: f64,
    pub scene_box: SceneBox,
    pub atf: AtfNetwork,
    pub tcm: TcmNetwork,
    pub gt: RadianceImage,
    pub corners: CornerWeights,
    pub weights: LossWeights,
    pub iteration: u64,
    /// ATF inputs frozen at the unperturbed positions, matching the
    /// detached positions of the reverse pass.
    pub atf_positions: Vec<[f64; 3]>,
}

/// Random scene with non-trivial modules: the ATF head and the last TCM
/// layer are randomized so that every parameter influences the loss.
pub fn random_problem(cfg: &GradCheckConfig) -> Result<Problem> {
    let scene = random_scene(cfg.gaussians, cfg.size, cfg.seed)?;
    let target = random_scene(cfg.gaussians, cfg.size, cfg.seed + 1)?;
    let settings = RenderSettings::default();
    let gt = forward(&target.cloud, &scene.camera, 0.0, &Modules::baseline(), &settings)?.image;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 2);
    let mut atf = AtfNetwork::new(8, 256, 10, &mut rng)?;
    let head = atf.layers.last_mut().expect("ATF has a head");
    for w in &mut head.weight {
        *w = rng.random_range(-0.05..0.05);
    }
    for b in &mut head.bias {
        *b += rng.random_range(-0.1..0.1);
    }
    let mut tcm = TcmNetwork::new(1, &mut rng)?;
    for w in tcm.layers[2].weight.iter_mut().chain(tcm.layers[2].bias.iter_mut()) {
        *w = rng.random_range(-0.2..0.2);
    }
    let weights = LossWeights::default();
    let corners = CornerWeights::from_image(&gt, weights.k_harris);
    Ok(Problem {
        atf_positions: scene.cloud.positions.clone(),
        cloud: scene.cloud,
        camera: scene.camera,
        time: scene.time,
        scene_box: scene.scene_box,
        atf,
        tcm,
        gt,
        corners,
        weights,
        iteration: cfg.iteration,
    })
}

struct Eval {
    loss: f64,
    signature: u64,
}

fn get_mut<'a>(cloud: &'a mut GaussianCloud, atf: &'a mut AtfNetwork, tcm: &'a mut TcmNetwork, p: Param) -> &'a mut f64 {
    match p {
        Param::Position(i, k) => &mut cloud.positions[i][k],
        Param::LogScale(i, k) => &mut cloud.log_scales[i][k],
        Param::Rotation(i, k) => &mut cloud.rotations[i][k],
        Param::Opacity(i) => &mut cloud.opacity_logits[i],
        Param::Sh(i, k) => &mut cloud.sh[i][k],
        Param::Atf(b, k) => &mut atf.buffers_mut().swap_remove(b)[k],
        Param::Tcm(b, k) => &mut tcm.buffers_mut().swap_remove(b)[k],
    }
}

impl Problem {
    fn modules<'a>(&self, atf: &'a AtfNetwork, tcm: &'a TcmNetwork) -> Modules<'a> {
        Modules {
            atf: Some(atf),
            tcm: Some(tcm),
            scene_box: self.scene_box,
        }
    }

    fn evaluate(&self, cloud: &GaussianCloud, atf: &AtfNetwork, tcm: &TcmNetwork) -> Result<Eval> {
        let fwd = forward_with(
            cloud,
            &self.camera,
            self.time,
            &self.modules(atf, tcm),
            &RenderSettings::default(),
            Some(&self.atf_positions),
        )?;
        let (parts, _) = total_loss(&fwd.image, &self.gt, self.iteration, &self.weights, Some(&self.corners))?;
        let mut h = DefaultHasher::new();
        decision_pattern(&fwd, &mut h);
        loss_pattern(&fwd.image, &self.gt, &mut h);
        Ok(Eval {
            loss: parts.total,
            signature: h.finish(),
        })
    }

    fn evaluate_shifted(&self, p: Param, delta: f64) -> Result<Eval> {
        let mut cloud = self.cloud.clone();
        let mut atf = self.atf.clone();
        let mut tcm = self.tcm.clone();
        *get_mut(&mut cloud, &mut atf, &mut tcm, p) += delta;
        self.evaluate(&cloud, &atf, &tcm)
    }

    /// Analytic gradient of the loss with respect to every parameter.
    pub fn gradient(&self) -> Result<Gradient> {
        let modules = self.modules(&self.atf, &self.tcm);
        let fwd = forward_with(
            &self.cloud,
            &self.camera,
            self.time,
            &modules,
            &RenderSettings::default(),
            Some(&self.atf_positions),
        )?;
        let (_, d_image) = total_loss(&fwd.image, &self.gt, self.iteration, &self.weights, Some(&self.corners))?;
        let g = backward(&self.cloud, &fwd, &modules, &d_image)?;
        Ok(Gradient {
            cloud: GaussianCloud {
                positions: g.gaussians.d_position,
                log_scales: g.gaussians.d_log_scale,
                rotations: g.gaussians.d_rotation,
                opacity_logits: g.gaussians.d_opacity_logit,
                sh: g.gaussians.d_sh,
                sh_degree_active: self.cloud.sh_degree_active,
            },
            atf: g.atf.expect("ATF gradient"),
            tcm: g.tcm.expect("TCM gradient"),
        })
    }

    fn random_param(&self, rng: &mut ChaCha8Rng) -> Param {
        let n = self.cloud.len();
        let i = rng.random_range(0..n);
        match rng.random_range(0..7) {
            0 => Param::Position(i, rng.random_range(0..3)),
            1 => Param::LogScale(i, rng.random_range(0..3)),
            2 => Param::Rotation(i, rng.random_range(0..4)),
            3 => Param::Opacity(i),
            4 => Param::Sh(i, rng.random_range(0..16)),
            5 => {
                let sizes: Vec<usize> = self.atf.buffers().iter().map(|b| b.len()).collect();
                // Half the ATF probes hit the head and last hidden layer so
                // the small upper layers are not drowned out by the wide
                // early ones.
                let b = if rng.random_bool(0.5) {
                    rng.random_range(sizes.len() - 4..sizes.len())
                } else {
                    rng.random_range(0..sizes.len())
                };
                Param::Atf(b, rng.random_range(0..sizes[b]))
            }
            _ => {
                let sizes: Vec<usize> = self.tcm.buffers().iter().map(|b| b.len()).collect();
                let b = rng.random_range(0..sizes.len());
                Param::Tcm(b, rng.random_range(0..sizes[b]))
            }
        }
    }
}

pub struct Gradient {
    pub cloud: GaussianCloud,
    pub atf: AtfNetwork,
    pub tcm: TcmNetwork,
}

impl Gradient {
    pub fn get(&self, p: Param) -> f64 {
        match p {
            Param::Position(i, k) => self.cloud.positions[i][k],
            Param::LogScale(i, k) => self.cloud.log_scales[i][k],
            Param::Rotation(i, k) => self.cloud.rotations[i][k],
            Param::Opacity(i) => self.cloud.opacity_logits[i],
            Param::Sh(i, k) => self.cloud.sh[i][k],
            Param::Atf(b, k) => self.atf.buffers()[b][k],
            Param::Tcm(b, k) => self.tcm.buffers()[b][k],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Probe {
    pub param: Param,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs())
    }
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
    pub rejected_kinks: usize,
    pub rejected_small: usize,
    pub elapsed: Duration,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.probes.iter().map(Probe::rel_error).fold(0.0, f64::max)
    }

    pub fn worst_by_kind(&self) -> BTreeMap<&'static str, (usize, f64)> {
        let mut m = BTreeMap::new();
        for p in &self.probes {
            let e = m.entry(p.param.kind()).or_insert((0, 0.0f64));
            e.0 += 1;
            e.1 = e.1.max(p.rel_error());
        }
        m
    }
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let start = Instant::now();
    let problem = random_problem(cfg)?;
    let grad = problem.gradient()?;
    let base = problem.evaluate(&problem.cloud, &problem.atf, &problem.tcm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed + 3);
    let mut report = GradCheckReport::default();
    let max_attempts = cfg.probes * 50;
    let mut attempts = 0;
    while report.probes.len() < cfg.probes && attempts < max_attempts {
        attempts += 1;
        let param = problem.random_param(&mut rng);
        let analytic = grad.get(param);
        let plus = problem.evaluate_shifted(param, cfg.eps)?;
        let minus = problem.evaluate_shifted(param, -cfg.eps)?;
        if plus.signature != base.signature || minus.signature != base.signature {
            report.rejected_kinks += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * cfg.eps);
        if analytic.abs().max(numeric.abs()) < cfg.min_gradient {
            report.rejected_small += 1;
            continue;
        }
        report.probes.push(Probe {
            param,
            analytic,
            numeric,
        });
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

pub fn criterion(cfg: &GradCheckConfig) -> Check {
    let name = "gradient integrity";
    match run_gradcheck(cfg) {
        Ok(r) => {
            let worst = r.max_rel_error();
            let enough = r.probes.len() >= 100.min(cfg.probes);
            let in_time = r.elapsed <= cfg.budget;
            let kinds: Vec<String> = r
                .worst_by_kind()
                .iter()
                .map(|(k, (n, e))| format!("{k} {n}x {e:.1e}"))
                .collect();
            Check::new(
                name,
                enough && in_time && worst < cfg.tolerance,
                format!(
                    "{} probes, max rel err {worst:.2e} < {:e} [{}]; {} kink / {} negligible probes redrawn; {:.1}s of {:.0}s budget",
                    r.probes.len(),
                    cfg.tolerance,
                    kinds.join(", "),
                    r.rejected_kinks,
                    r.rejected_small,
                    r.elapsed.as_secs_f64(),
                    cfg.budget.as_secs_f64()
                ),
            )
        }
        Err(e) => Check::error(name, e),
    }
}
