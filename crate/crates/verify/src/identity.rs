//! Freshly initialized physics modules must not change the render.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thermalsplat::atf::AtfNetwork;
use thermalsplat::pipeline::{forward, Modules};
use thermalsplat::render::RenderSettings;
use thermalsplat::tcm::TcmNetwork;
use thermalsplat::Result;

use crate::scenes::random_scene;
use crate::Check;

pub const TOLERANCE: f64 = 1e-6;
pub const SCENES: u64 = 10;

/// Max-abs difference between the full-pipeline render with initial ATF
/// and TCM and the plain splatting render of one random scene.
pub fn identity_gap(seed: u64) -> Result<f64> {
    let scene = random_scene(12, 32, 1000 + seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let atf = AtfNetwork::new(8, 256, 10, &mut rng)?;
    let tcm = TcmNetwork::new(1, &mut rng)?;
    let settings = RenderSettings::default();
    let base = forward(&scene.cloud, &scene.camera, scene.time, &Modules::baseline(), &settings)?;
    let modules = Modules {
        atf: Some(&atf),
        tcm: Some(&tcm),
        scene_box: scene.scene_box,
    };
    let full = forward(&scene.cloud, &scene.camera, scene.time, &modules, &settings)?;
    Ok(base
        .image
        .data
        .iter()
        .zip(&full.image.data)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

pub fn criterion() -> Check {
    let run = || -> Result<Check> {
        let mut worst: f64 = 0.0;
        for s in 0..SCENES {
            worst = worst.max(identity_gap(s)?);
        }
        Ok(Check::new(
            "identity at init",
            worst <= TOLERANCE,
            format!("max-abs {worst:.1e} <= {TOLERANCE:e} over {SCENES} random scenes"),
        ))
    };
    Check::from_result("identity at init", run())
}
