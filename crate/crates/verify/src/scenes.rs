//! Small random scenes in front of a fixed camera.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::atf::SceneBox;
use thermalsplat::scene::{inverse_sigmoid, Camera, Gaussian, GaussianCloud};
use thermalsplat::sh::{MAX_SH_DEGREE, SH_COEFFS};
use thermalsplat::Result;

pub struct RandomScene {
    pub cloud: GaussianCloud,
    pub camera: Camera,
    pub time: f64,
    pub scene_box: SceneBox,
}

/// Camera at a random small offset from the origin looking down `+z`.
pub fn random_camera(size: usize, rng: &mut ChaCha8Rng) -> Result<Camera> {
    let angle: f64 = rng.random_range(-0.1..0.1);
    let rot = Matrix3::new(angle.cos(), 0.0, angle.sin(), 0.0, 1.0, 0.0, -angle.sin(), 0.0, angle.cos());
    let t = Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
    let f = size as f64 * 1.2;
    let c = (size as f64 - 1.0) / 2.0;
    Camera::new(f, f, c, c, size, size, rot, t)
}

/// `n` Gaussians of moderate size and opacity spread across the view,
/// with full degree-3 SH.
pub fn random_scene(n: usize, size: usize, seed: u64) -> Result<RandomScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = random_camera(size, &mut rng)?;
    let mut cloud = GaussianCloud::new(MAX_SH_DEGREE);
    for _ in 0..n {
        let z = rng.random_range(2.0..4.0);
        let spread = 0.35 * z;
        let cam = Vector3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), z);
        let world = camera.rotation.transpose() * (cam - camera.translation);
        let mut sh = [0.0; SH_COEFFS];
        sh[0] = rng.random_range(-0.5..1.0);
        for c in sh.iter_mut().skip(1) {
            *c = rng.random_range(-0.15..0.15);
        }
        let s = rng.random_range(0.12f64..0.35).ln();
        cloud.push(Gaussian {
            position: [world.x, world.y, world.z],
            log_scale: [
                s + rng.random_range(-0.4..0.4),
                s + rng.random_range(-0.4..0.4),
                s + rng.random_range(-0.4..0.4),
            ],
            rotation: [
                rng.random_range(0.5..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
            opacity_logit: inverse_sigmoid(rng.random_range(0.2..0.8)),
            sh,
        });
    }
    let scene_box = SceneBox::from_points(cloud.positions.iter());
    Ok(RandomScene {
        cloud,
        camera,
        time: rng.random_range(0.0..1.0),
        scene_box,
    })
}
