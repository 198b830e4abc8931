use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::io::colmap::{
    model_dir, parse_colmap, parse_colmap_binary, parse_colmap_text, write_colmap, CameraModel, ColmapFormat,
    Intrinsics, SceneView, SeedPoint, SparseScene,
};
use thermalsplat::Error;

fn random_scene(seed: u64) -> SparseScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cameras = (1..=2u32)
        .map(|id| {
            let model = if id == 1 { CameraModel::SimplePinhole } else { CameraModel::Pinhole };
            let params = (0..model.num_params()).map(|_| rng.random_range(10.0..60.0)).collect();
            (id, Intrinsics { id, model, width: 64, height: 48, params })
        })
        .collect();
    let views = (0..5)
        .map(|i| SceneView {
            image_id: 10 + i,
            name: format!("img_{i:02}.png"),
            qvec: [rng.random(), rng.random(), rng.random(), rng.random()],
            tvec: [rng.random(), rng.random(), rng.random()],
            camera_id: 1 + i % 2,
            frame_index: i as usize,
            points2d: (0..i).map(|k| ([rng.random(), rng.random()], k as i64 - 1)).collect(),
        })
        .collect();
    let points3d = (0..7)
        .map(|i| SeedPoint {
            id: i + 1,
            position: [rng.random(), rng.random(), rng.random()],
            rgb: [rng.random(), rng.random(), rng.random()],
            error: rng.random(),
            track: (0..i % 3).map(|k| (10 + k as u32, k as u32)).collect(),
        })
        .collect();
    SparseScene { cameras, views, points3d }
}

#[test]
fn text_and_binary_round_trip_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = random_scene(3);
    for (fmt, sub) in [(ColmapFormat::Text, "t"), (ColmapFormat::Binary, "b")] {
        let dir = tmp.path().join(sub);
        write_colmap(&scene, &dir, fmt).unwrap();
        let back = match fmt {
            ColmapFormat::Text => parse_colmap_text(&dir),
            ColmapFormat::Binary => parse_colmap_binary(&dir),
        }
        .unwrap();
        assert_eq!(back, scene);
    }
}

#[test]
fn nested_model_and_binary_preference() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = random_scene(4);
    let nested = tmp.path().join("sparse").join("0");
    write_colmap(&scene, &nested, ColmapFormat::Text).unwrap();
    assert_eq!(model_dir(tmp.path()), nested);
    assert_eq!(parse_colmap(tmp.path()).unwrap(), scene);
    // A binary model next to the text one wins.
    let mut other = scene.clone();
    other.points3d.truncate(1);
    write_colmap(&other, &nested, ColmapFormat::Binary).unwrap();
    assert_eq!(parse_colmap(tmp.path()).unwrap(), other);
}

#[test]
fn truncated_binary_reports_offset() {
    let tmp = tempfile::tempdir().unwrap();
    write_colmap(&random_scene(5), tmp.path(), ColmapFormat::Binary).unwrap();
    let path = tmp.path().join("points3D.bin");
    let bytes = fs::read(&path).unwrap();
    fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    match parse_colmap_binary(tmp.path()) {
        Err(Error::Malformed { path: p, offset, .. }) => {
            assert!(p.ends_with("points3D.bin"));
            assert!(offset > 0 && (offset as usize) < bytes.len());
        }
        other => panic!("expected malformed error, got {other:?}"),
    }
}

#[test]
fn malformed_text_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    write_colmap(&random_scene(6), tmp.path(), ColmapFormat::Text).unwrap();
    let path = tmp.path().join("cameras.txt");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let idx = lines.iter().position(|l| !l.starts_with('#')).unwrap();
    lines[idx] = "1 PINHOLE 64 48 abc 1 2 3".into();
    fs::write(&path, lines.join("\n")).unwrap();
    let err = parse_colmap_text(tmp.path()).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains(&format!("line {}", idx + 1)), "{msg}");
}

#[test]
fn unsupported_models_and_empty_points_are_named() {
    let tmp = tempfile::tempdir().unwrap();
    write_colmap(&random_scene(7), tmp.path(), ColmapFormat::Text).unwrap();
    let cams = tmp.path().join("cameras.txt");
    fs::write(&cams, "1 OPENCV 64 48 50 50 32 24 0 0 0 0\n2 PINHOLE 64 48 50 50 32 24\n").unwrap();
    let msg = parse_colmap_text(tmp.path()).unwrap_err().to_string();
    assert!(msg.contains("OPENCV"), "{msg}");

    let tmp = tempfile::tempdir().unwrap();
    let mut scene = random_scene(8);
    scene.points3d.clear();
    write_colmap(&scene, tmp.path(), ColmapFormat::Binary).unwrap();
    let msg = parse_colmap_binary(tmp.path()).unwrap_err().to_string();
    assert!(msg.contains("no seed points"), "{msg}");
}
