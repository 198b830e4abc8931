#![allow(dead_code)]

use std::path::Path;

use thermalsplat::io::dataset::Dataset;
use thermalsplat::synth::{synth_scene_generate, SynthSpec};
use thermalsplat::train::TrainConfig;

pub const TINY_SPEC: &str = "
[scene]
width = 24
height = 24
texture_size = 32
background = 0.25
points = 80

[emitter]
shape = disc
center = 0.2, 0.1
radius = 0.35
temperature = 0.9

[emitter]
shape = rect
center = -0.4, -0.3
half_size = 0.25, 0.2
temperature = 0.05

[orbit]
views = 10
radius = 2.0
height = 2.5
height_variation = 0.3
revolutions = 1
focal = 30

[attenuation]
a = -0.3
b = -0.4

[diffusion]
alpha = 1.0
time = 0.0005
";

pub fn tiny_spec() -> SynthSpec {
    SynthSpec::parse(TINY_SPEC, "tiny").unwrap()
}

pub fn tiny_dataset(dir: &Path) -> Dataset {
    synth_scene_generate(&tiny_spec(), 1, dir).unwrap();
    Dataset::load(dir).unwrap()
}

/// Short schedule with a small ATF so tests stay fast.
pub fn quick_config(iterations: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        atf_width: 16,
        atf_depth: 2,
        densify_from: 10,
        densify_interval: 10,
        densify_until: iterations,
        opacity_reset_interval: 1_000_000,
        sh_increase_interval: 10,
        iter_t: iterations.max(1),
        checkpoints: vec![],
        log_interval: 10,
        ..TrainConfig::default()
    }
}
