//! Everything a training run needs to continue: parameters, networks,
//! optimizer moments, densification statistics and the random stream.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::atf::{AtfNetwork, SceneBox};
use crate::error::{Error, Result};
use crate::pipeline::Modules;
use crate::scene::{Camera, GaussianCloud};
use crate::tcm::TcmNetwork;
use crate::train::adam::{AdamGroup, EPS_GAUSSIAN, EPS_NETWORK};
use crate::train::config::TrainConfig;
use crate::train::density::{camera_extent, init_from_points, DensifyStats};

/// Random streams derived from the run seed, one per consumer, so switching
/// a module on or off does not perturb the others.
const STREAM_TRAIN: u64 = 0;
const STREAM_ATF: u64 = 1;
const STREAM_TCM: u64 = 2;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Indices of the Gaussian optimizer groups in [`Optimizer::gaussian`].
pub const G_POSITION: usize = 0;
pub const G_SCALE: usize = 1;
pub const G_ROTATION: usize = 2;
pub const G_OPACITY: usize = 3;
pub const G_SH_DC: usize = 4;
pub const G_SH_REST: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    pub gaussian: Vec<AdamGroup>,
    pub atf: Option<AdamGroup>,
    pub tcm: Option<AdamGroup>,
}

impl Optimizer {
    pub fn new(n: usize, atf: Option<&AtfNetwork>, tcm: Option<&TcmNetwork>) -> Self {
        let g = |name, width| AdamGroup::new(name, width, n * width, EPS_GAUSSIAN);
        Self {
            gaussian: vec![
                g("position", 3),
                g("scale", 3),
                g("rotation", 4),
                g("opacity", 1),
                g("sh_dc", 1),
                g("sh_rest", 15),
            ],
            atf: atf.map(|a| AdamGroup::new("atf", 1, a.num_params(), EPS_NETWORK)),
            tcm: tcm.map(|t| {
                let len = t.buffers().iter().map(|b| b.len()).sum();
                AdamGroup::new("tcm", 1, len, EPS_NETWORK)
            }),
        }
    }

    pub fn remap_gaussians(&mut self, src: &[Option<usize>]) {
        for g in &mut self.gaussian {
            g.remap_rows(src);
        }
    }
}

/// Position in the per-epoch shuffled view order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ViewSampler {
    pub order: Vec<usize>,
    pub cursor: usize,
}

impl ViewSampler {
    /// Next training view index in `0..count`; reshuffles at epoch ends.
    pub fn next(&mut self, count: usize, rng: &mut ChaCha8Rng) -> usize {
        if self.cursor >= self.order.len() || self.order.len() != count {
            self.order = (0..count).collect();
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let v = self.order[self.cursor];
        self.cursor += 1;
        v
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub iteration: u64,
    pub cloud: GaussianCloud,
    pub scene_box: SceneBox,
    /// Camera extent; scales the position learning rate and the clone/split
    /// size threshold.
    pub spatial_scale: f64,
    pub atf: Option<AtfNetwork>,
    pub tcm: Option<TcmNetwork>,
    pub optimizer: Optimizer,
    pub densify: DensifyStats,
    pub sampler: ViewSampler,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    /// Fresh state seeded from `(position, radiance)` points and the
    /// training cameras.
    pub fn initialize<'a>(
        config: &TrainConfig,
        points: &[([f64; 3], f64)],
        cameras: impl IntoIterator<Item = &'a Camera>,
    ) -> Result<Self> {
        config.validate()?;
        let cloud = init_from_points(points, config.init_opacity)?;
        let scene_box = SceneBox::from_points(points.iter().map(|(p, _)| p));
        let atf = if config.atf {
            Some(AtfNetwork::new(
                config.atf_depth,
                config.atf_width,
                config.atf_frequencies,
                &mut stream_rng(config.seed, STREAM_ATF),
            )?)
        } else {
            None
        };
        let tcm = if config.tcm {
            Some(identity_tcm(config.seed)?)
        } else {
            None
        };
        let optimizer = Optimizer::new(cloud.len(), atf.as_ref(), tcm.as_ref());
        Ok(Self {
            config: config.clone(),
            iteration: 0,
            densify: DensifyStats::new(cloud.len()),
            cloud,
            scene_box,
            spatial_scale: camera_extent(cameras),
            atf,
            tcm,
            optimizer,
            sampler: ViewSampler::default(),
            rng: stream_rng(config.seed, STREAM_TRAIN),
        })
    }

    pub fn modules(&self) -> Modules<'_> {
        Modules {
            atf: self.atf.as_ref(),
            tcm: self.tcm.as_ref(),
            scene_box: self.scene_box,
        }
    }

    /// Restores modules that the configuration enables but a checkpoint did
    /// not carry: a missing TCM is re-initialized to identity.
    pub fn fill_missing_modules(&mut self) -> Result<()> {
        if self.config.tcm && self.tcm.is_none() {
            let tcm = identity_tcm(self.config.seed)?;
            self.optimizer.tcm = Optimizer::new(0, None, Some(&tcm)).tcm;
            self.tcm = Some(tcm);
        }
        if self.config.atf && self.atf.is_none() {
            return Err(Error::Checkpoint(
                "configuration enables the ATF but the checkpoint has no ATF weights".into(),
            ));
        }
        Ok(())
    }

    /// Consistency of array lengths across cloud, optimizer and statistics.
    pub fn validate(&self) -> Result<()> {
        self.cloud.validate()?;
        let n = self.cloud.len();
        for g in &self.optimizer.gaussian {
            if g.len() != n * g.width {
                return Err(Error::ShapeMismatch(format!(
                    "optimizer group {} holds {} values for {n} gaussians",
                    g.name,
                    g.len()
                )));
            }
        }
        if self.densify.grad_accum.len() != n || self.densify.denom.len() != n {
            return Err(Error::ShapeMismatch("densification statistics length".into()));
        }
        if let (Some(a), Some(g)) = (&self.atf, &self.optimizer.atf) {
            a.validate()?;
            if g.len() != a.num_params() {
                return Err(Error::ShapeMismatch("ATF optimizer length".into()));
            }
        }
        if let Some(t) = &self.tcm {
            t.validate()?;
        }
        Ok(())
    }
}

fn identity_tcm(seed: u64) -> Result<TcmNetwork> {
    TcmNetwork::new(1, &mut stream_rng(seed, STREAM_TCM))
}
