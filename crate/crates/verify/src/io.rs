//! Hand-authored COLMAP fixtures, checkpoint round trips and the split rule.

use std::fs;
use std::path::Path;

use thermalsplat::io::checkpoint::{decode_checkpoint, encode_checkpoint};
use thermalsplat::io::colmap::{
    parse_colmap_binary, parse_colmap_text, CameraModel, Intrinsics, SceneView, SeedPoint, SparseScene,
};
use thermalsplat::io::dataset::{split_indices, split_train_test};
use thermalsplat::scene::ThermalView;
use thermalsplat::train::{run, TrainConfig, TrainState};
use thermalsplat::{Error, Result};

use crate::Check;

pub const CAMERAS_TXT: &str = "\
# Camera list with one line of data per camera:
#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]
# Number of cameras: 2
1 SIMPLE_PINHOLE 64 48 52.5 31.75 23.5
2 PINHOLE 32 32 40.125 40.25 15.5 15.0
";

pub const IMAGES_TXT: &str = "\
# Image list with two lines of data per image:
#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME
#   POINTS2D[] as (X, Y, POINT3D_ID)
# Number of images: 3, mean observations per image: 1
7 0.5 0.5 -0.5 0.5 0.25 -1.5 3.0 1 b.png
10.5 20.25 1 3.0 4.0 -1
3 1 0 0 0 0 0 2.5 2 a.png
1.0 2.0 2
12 0.9238795325112867 0 0.3826834323650898 0 -0.75 0.125 4.0 2 c.png

";

pub const POINTS_TXT: &str = "\
# 3D point list with one line of data per point:
#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)
# Number of points: 2, mean track length: 1.5
1 0.1 -0.2 3.5 200 100 50 0.75 7 0 3 0
2 -1.25 0.5 2.0 0 255 128 1.5 7 1
";

/// The fixture as it must be parsed: views sorted by name with frame
/// indices in that order.
pub fn fixture_expected() -> SparseScene {
    let cameras = [
        Intrinsics {
            id: 1,
            model: CameraModel::SimplePinhole,
            width: 64,
            height: 48,
            params: vec![52.5, 31.75, 23.5],
        },
        Intrinsics {
            id: 2,
            model: CameraModel::Pinhole,
            width: 32,
            height: 32,
            params: vec![40.125, 40.25, 15.5, 15.0],
        },
    ]
    .into_iter()
    .map(|c| (c.id, c))
    .collect();
    let views = vec![
        SceneView {
            image_id: 3,
            name: "a.png".into(),
            qvec: [1.0, 0.0, 0.0, 0.0],
            tvec: [0.0, 0.0, 2.5],
            camera_id: 2,
            frame_index: 0,
            points2d: vec![([1.0, 2.0], 2)],
        },
        SceneView {
            image_id: 7,
            name: "b.png".into(),
            qvec: [0.5, 0.5, -0.5, 0.5],
            tvec: [0.25, -1.5, 3.0],
            camera_id: 1,
            frame_index: 1,
            points2d: vec![([10.5, 20.25], 1), ([3.0, 4.0], -1)],
        },
        SceneView {
            image_id: 12,
            name: "c.png".into(),
            qvec: [0.9238795325112867, 0.0, 0.3826834323650898, 0.0],
            tvec: [-0.75, 0.125, 4.0],
            camera_id: 2,
            frame_index: 2,
            points2d: vec![],
        },
    ];
    let points3d = vec![
        SeedPoint {
            id: 1,
            position: [0.1, -0.2, 3.5],
            rgb: [200, 100, 50],
            error: 0.75,
            track: vec![(7, 0), (3, 0)],
        },
        SeedPoint {
            id: 2,
            position: [-1.25, 0.5, 2.0],
            rgb: [0, 255, 128],
            error: 1.5,
            track: vec![(7, 1)],
        },
    ];
    SparseScene {
        cameras,
        views,
        points3d,
    }
}

/// Little-endian byte builder following COLMAP's published binary layout.
#[derive(Default)]
struct Bytes(Vec<u8>);

impl Bytes {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend(v.to_le_bytes());
        self
    }
    fn i32(&mut self, v: i32) -> &mut Self {
        self.0.extend(v.to_le_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend(v.to_le_bytes());
        self
    }
    fn i64(&mut self, v: i64) -> &mut Self {
        self.0.extend(v.to_le_bytes());
        self
    }
    fn f64s(&mut self, v: &[f64]) -> &mut Self {
        for x in v {
            self.0.extend(x.to_le_bytes());
        }
        self
    }
    fn cstr(&mut self, s: &str) -> &mut Self {
        self.0.extend(s.as_bytes());
        self.0.push(0);
        self
    }
}

/// The same fixture encoded byte by byte, images deliberately out of name
/// order.
pub fn fixture_binary() -> [(&'static str, Vec<u8>); 3] {
    let mut cams = Bytes::default();
    cams.u64(2);
    cams.u32(1).i32(0).u64(64).u64(48).f64s(&[52.5, 31.75, 23.5]);
    cams.u32(2).i32(1).u64(32).u64(32).f64s(&[40.125, 40.25, 15.5, 15.0]);

    let mut imgs = Bytes::default();
    imgs.u64(3);
    imgs.u32(7).f64s(&[0.5, 0.5, -0.5, 0.5, 0.25, -1.5, 3.0]).u32(1).cstr("b.png");
    imgs.u64(2).f64s(&[10.5, 20.25]).i64(1).f64s(&[3.0, 4.0]).i64(-1);
    imgs.u32(3).f64s(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.5]).u32(2).cstr("a.png");
    imgs.u64(1).f64s(&[1.0, 2.0]).i64(2);
    imgs.u32(12)
        .f64s(&[0.9238795325112867, 0.0, 0.3826834323650898, 0.0, -0.75, 0.125, 4.0])
        .u32(2)
        .cstr("c.png");
    imgs.u64(0);

    let mut pts = Bytes::default();
    pts.u64(2);
    pts.u64(1).f64s(&[0.1, -0.2, 3.5]).u8(200).u8(100).u8(50).f64s(&[0.75]);
    pts.u64(2).u32(7).u32(0).u32(3).u32(0);
    pts.u64(2).f64s(&[-1.25, 0.5, 2.0]).u8(0).u8(255).u8(128).f64s(&[1.5]);
    pts.u64(1).u32(7).u32(1);

    [("cameras.bin", cams.0), ("images.bin", imgs.0), ("points3D.bin", pts.0)]
}

pub fn write_text_fixture(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(e.to_string()))?;
    for (name, body) in [("cameras.txt", CAMERAS_TXT), ("images.txt", IMAGES_TXT), ("points3D.txt", POINTS_TXT)] {
        fs::write(dir.join(name), body).map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(())
}

pub fn write_binary_fixture(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Data(e.to_string()))?;
    for (name, body) in fixture_binary() {
        fs::write(dir.join(name), body).map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(())
}

/// Small trained state whose optimizer moments and densification
/// statistics are non-trivial.
pub fn sample_state() -> Result<TrainState> {
    let scene = crate::scenes::random_scene(30, 24, 77)?;
    let gt = thermalsplat::pipeline::forward(
        &crate::scenes::random_scene(30, 24, 78)?.cloud,
        &scene.camera,
        0.0,
        &thermalsplat::pipeline::Modules::baseline(),
        &Default::default(),
    )?
    .image;
    let view = ThermalView {
        name: "v.png".into(),
        camera: scene.camera.clone(),
        frame_index: 1,
        time_norm: 0.5,
        image: gt,
    };
    let config = TrainConfig {
        iterations: 4,
        atf_width: 32,
        atf_depth: 2,
        checkpoints: vec![],
        ..TrainConfig::default()
    };
    let points: Vec<([f64; 3], f64)> = scene.cloud.positions.iter().map(|p| (*p, 0.4)).collect();
    let state = TrainState::initialize(&config, &points, [&scene.camera])?;
    Ok(run(state, &[&view], &[], None)?.state)
}

pub fn criterion() -> Check {
    let run = || -> Result<Check> {
        let tmp = tempfile::tempdir().map_err(|e| Error::Data(e.to_string()))?;
        let expected = fixture_expected();
        write_text_fixture(&tmp.path().join("text"))?;
        write_binary_fixture(&tmp.path().join("bin"))?;
        let text_ok = parse_colmap_text(&tmp.path().join("text"))? == expected;
        let bin_ok = parse_colmap_binary(&tmp.path().join("bin"))? == expected;

        let state = sample_state()?;
        let bytes = encode_checkpoint(&state);
        let decoded = decode_checkpoint(&bytes)?;
        let ckpt_ok = encode_checkpoint(&decoded) == bytes
            && decoded.cloud == state.cloud
            && decoded.iteration == state.iteration
            && decoded.config == state.config;

        let mut split_ok = true;
        for (count, test) in [(7usize, vec![0usize]), (8, vec![0]), (16, vec![0, 8])] {
            let (tr, te) = split_indices(count);
            split_ok &= te == test && te.iter().all(|i| i % 8 == 0) && tr.len() + te.len() == count;
            let frames: Vec<usize> = (0..count).collect();
            let (_, te2) = split_train_test(&frames, |f| *f);
            split_ok &= te2 == test;
        }

        let flag = |ok: bool| if ok { "ok" } else { "FAILED" };
        Ok(Check::new(
            "io",
            text_ok && bin_ok && ckpt_ok && split_ok,
            format!(
                "colmap text fixture {}; colmap binary fixture {}; checkpoint round trip ({} bytes) {}; split on 7/8/16 views {}",
                flag(text_ok),
                flag(bin_ok),
                bytes.len(),
                flag(ckpt_ok),
                flag(split_ok)
            ),
        ))
    };
    Check::from_result("io", run())
}
