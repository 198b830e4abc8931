//! A training scene on disk: COLMAP model plus one image per view.

use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use crate::error::Result;
use crate::io::colmap::{parse_colmap, SparseScene};
use crate::io::image::load_image;
use crate::scene::{time_norm, Camera, ThermalView};

/// Every 8th view (frame index divisible by 8) is held out for testing.
pub const TEST_STRIDE: usize = 8;

pub struct Dataset {
    pub root: PathBuf,
    pub scene: SparseScene,
    /// All views in frame order.
    pub views: Vec<ThermalView>,
}

impl Dataset {
    /// Loads `root/sparse/0` (or a model directly in `root`) and the images
    /// in `root/images`.
    pub fn load(root: &Path) -> Result<Self> {
        let scene = parse_colmap(root)?;
        let image_dir = root.join("images");
        let count = scene.views.len();
        let views = scene
            .views
            .par_iter()
            .map(|v| {
                let camera = scene.camera(v)?;
                let image = load_image(&image_dir.join(&v.name))?;
                let camera = if image.width != camera.width || image.height != camera.height {
                    warn!(
                        "{}: image is {}x{} but camera expects {}x{}; rescaling intrinsics",
                        v.name, image.width, image.height, camera.width, camera.height
                    );
                    rescale_camera(&camera, image.width, image.height)?
                } else {
                    camera
                };
                Ok(ThermalView {
                    name: v.name.clone(),
                    camera,
                    frame_index: v.frame_index,
                    time_norm: time_norm(v.frame_index, count),
                    image,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: root.to_path_buf(),
            scene,
            views,
        })
    }

    /// `(train, test)` views under [`split_train_test`].
    pub fn split(&self) -> (Vec<&ThermalView>, Vec<&ThermalView>) {
        let (train, test) = split_indices(self.views.len());
        (
            train.iter().map(|&i| &self.views[i]).collect(),
            test.iter().map(|&i| &self.views[i]).collect(),
        )
    }
}

fn rescale_camera(c: &Camera, width: usize, height: usize) -> Result<Camera> {
    let sx = width as f64 / c.width as f64;
    let sy = height as f64 / c.height as f64;
    Camera::new(
        c.fx * sx,
        c.fy * sy,
        c.cx * sx,
        c.cy * sy,
        width,
        height,
        c.rotation,
        c.translation,
    )
}

/// `(train, test)` frame indices for `count` views.
pub fn split_indices(count: usize) -> (Vec<usize>, Vec<usize>) {
    if count < TEST_STRIDE {
        warn!("only {count} views; the test split holds a single view");
    }
    (0..count).partition(|i| i % TEST_STRIDE != 0)
}

/// Splits views sorted by frame index into `(train, test)`; views whose
/// frame index is divisible by 8 are held out.
pub fn split_train_test<T: Clone>(views: &[T], frame_index: impl Fn(&T) -> usize) -> (Vec<T>, Vec<T>) {
    if views.len() < TEST_STRIDE {
        warn!("only {} views; the test split holds a single view", views.len());
    }
    let (test, train): (Vec<T>, Vec<T>) = views.iter().cloned().partition(|v| frame_index(v) % TEST_STRIDE == 0);
    (train, test)
}
