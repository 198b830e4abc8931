mod common;

use std::fs;

use nalgebra::Vector3;
use thermalsplat::heat::TemperatureField;
use thermalsplat::scene::Camera;
use thermalsplat::synth::{synth_scene_generate, synth_views, SynthSpec, SynthView};

fn pixel_of(camera: &Camera, p: &Vector3<f64>) -> (usize, usize) {
    let c = camera.rotation * p + camera.translation;
    assert!(c.z > 0.0);
    let u = camera.fx * c.x / c.z + camera.cx;
    let v = camera.fy * c.y / c.z + camera.cy;
    assert!(u >= 0.0 && v >= 0.0 && u < camera.width as f64 && v < camera.height as f64);
    (u.round() as usize, v.round() as usize)
}

fn sample_at(views: &[SynthView], p: &Vector3<f64>) -> Vec<f64> {
    views
        .iter()
        .map(|v| {
            let (u, w) = pixel_of(&v.camera, p);
            v.image.get(u, w)
        })
        .collect()
}

fn read_tree(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        let rel = entry.strip_prefix(dir).unwrap().display().to_string();
        out.push((rel, fs::read(&entry).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut files = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files.extend(walk(&p));
        } else {
            files.push(p);
        }
    }
    files
}

#[test]
fn generation_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = common::tiny_spec();
    synth_scene_generate(&spec, 9, &tmp.path().join("a")).unwrap();
    synth_scene_generate(&spec, 9, &tmp.path().join("b")).unwrap();
    let a = read_tree(&tmp.path().join("a"));
    assert!(a.len() > spec.orbit.views);
    assert_eq!(a, read_tree(&tmp.path().join("b")));

    synth_scene_generate(&spec, 10, &tmp.path().join("c")).unwrap();
    assert_ne!(a, read_tree(&tmp.path().join("c")));
}

#[test]
fn without_attenuation_radiance_is_view_independent() {
    let mut spec = common::tiny_spec();
    spec.attenuation = [0.0, 0.0];
    spec.diffusion_time = 0.0;
    let (_, views) = synth_views(&spec).unwrap();
    // Centre of the disc emitter, a flat region of the texture.
    let values = sample_at(&views, &Vector3::new(0.2, 0.1, 0.0));
    let first = values[0];
    assert!((first - 0.9).abs() < 1e-9, "{first}");
    assert!(values.iter().all(|&x| (x - first).abs() < 1e-12), "{values:?}");
}

#[test]
fn attenuation_changes_radiance_across_views() {
    let (_, views) = synth_views(&common::tiny_spec()).unwrap();
    let values = sample_at(&views, &Vector3::new(0.2, 0.1, 0.0));
    let spread = values.iter().cloned().fold(f64::MIN, f64::max) - values.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 0.01, "{values:?}");
}

#[test]
fn diffusion_softens_edges() {
    let mut spec = common::tiny_spec();
    spec.diffusion_time = 0.0;
    let sharp = spec.texture().unwrap();
    spec.diffusion_time = 0.002;
    let soft = spec.texture().unwrap();
    let max_step = |t: &TemperatureField| {
        let mut m = 0.0f64;
        for y in 0..t.height {
            for x in 1..t.width {
                m = m.max((t.get(x, y) - t.get(x - 1, y)).abs());
            }
        }
        m
    };
    assert!(max_step(&soft) < 0.7 * max_step(&sharp), "{} vs {}", max_step(&soft), max_step(&sharp));
}

#[test]
fn parse_errors_name_the_line() {
    let text = common::TINY_SPEC.replace("views = 10", "views = ten");
    let msg = SynthSpec::parse(&text, "bad.synth").unwrap_err().to_string();
    assert!(msg.contains("bad.synth:"), "{msg}");
    let line = common::TINY_SPEC.lines().position(|l| l.contains("views = 10")).unwrap() + 1;
    assert!(msg.contains(&format!(":{line}:")), "{msg}");
}
