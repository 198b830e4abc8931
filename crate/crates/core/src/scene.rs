//! Scene representation: Gaussians, cameras, images and the 3D to 2D
//! covariance projection used by the rasterizer.
//!
//! Storage conventions:
//! - scales are stored as natural logarithms and exponentiated on use;
//! - opacities are stored as logits and squashed with a sigmoid;
//! - rotations are `(w, x, y, z)` quaternions, normalized on use and
//!   renormalized by the trainer after every optimizer step.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::sh::SH_COEFFS;

/// Camera-space depth below which a Gaussian is culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Screen-space dilation added to both diagonal entries of the projected
/// covariance, in squared pixels.
pub const COV2D_DILATION: f64 = 0.3;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn inverse_sigmoid(y: f64) -> f64 {
    (y / (1.0 - y)).ln()
}

/// One Gaussian primitive with a single (grayscale) radiance channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub sh: [f64; SH_COEFFS],
}

impl Gaussian {
    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }
}

/// The optimizable scene, stored as parallel arrays.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub log_scales: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<[f64; SH_COEFFS]>,
    pub sh_degree_active: usize,
}

impl GaussianCloud {
    pub fn new(sh_degree_active: usize) -> Self {
        Self {
            sh_degree_active,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) {
        self.positions.push(g.position);
        self.log_scales.push(g.log_scale);
        self.rotations.push(g.rotation);
        self.opacity_logits.push(g.opacity_logit);
        self.sh.push(g.sh);
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            log_scale: self.log_scales[i],
            rotation: self.rotations[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh[i],
        }
    }

    /// Keeps the Gaussians for which `keep` is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        fn filter<T: Copy>(v: &mut Vec<T>, keep: &[bool]) {
            let mut it = keep.iter();
            v.retain(|_| *it.next().unwrap());
        }
        filter(&mut self.positions, keep);
        filter(&mut self.log_scales, keep);
        filter(&mut self.rotations, keep);
        filter(&mut self.opacity_logits, keep);
        filter(&mut self.sh, keep);
    }

    /// Checks that every per-field array has the same length and all values
    /// are finite.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.log_scales.len() != n
            || self.rotations.len() != n
            || self.opacity_logits.len() != n
            || self.sh.len() != n
        {
            return Err(Error::ShapeMismatch(
                "gaussian cloud field arrays differ in length".into(),
            ));
        }
        if self.sh_degree_active > 3 {
            return Err(Error::InvalidArgument(format!(
                "active SH degree {} exceeds 3",
                self.sh_degree_active
            )));
        }
        let finite = self.positions.iter().flatten().all(|v| v.is_finite())
            && self.log_scales.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.opacity_logits.iter().all(|v| !v.is_nan())
            && self.sh.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numerical("non-finite gaussian parameter".into()));
        }
        Ok(())
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for q in &mut self.rotations {
            *q = normalize_quat(*q);
        }
    }
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0, 0.0]
    } else {
        q.map(|v| v / n)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix.
pub fn matrix_to_quat(r: &Matrix3<f64>) -> [f64; 4] {
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (r[(2, 1)] - r[(1, 2)]) / s,
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(1, 0)] - r[(0, 1)]) / s,
        ]
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(2, 1)] - r[(1, 2)]) / s,
            0.25 * s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
        ]
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        [
            (r[(0, 2)] - r[(2, 0)]) / s,
            (r[(0, 1)] + r[(1, 0)]) / s,
            0.25 * s,
            (r[(1, 2)] + r[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        [
            (r[(1, 0)] - r[(0, 1)]) / s,
            (r[(0, 2)] + r[(2, 0)]) / s,
            (r[(1, 2)] + r[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = normalize_quat(q);
    // canonical sign: w >= 0
    if q[0] < 0.0 {
        q.map(|v| -v)
    } else {
        q
    }
}

/// World-space covariance `R S S^T R^T` of a Gaussian with the given axis
/// lengths and unit rotation.
pub fn covariance_3d(scale: [f64; 3], rotation: [f64; 4]) -> Matrix3<f64> {
    let r = quat_to_matrix(rotation);
    let m = r * Matrix3::from_diagonal(&Vector3::from(scale));
    m * m.transpose()
}

/// Pinhole camera with a rigid world-to-camera transform. Camera space
/// follows the COLMAP convention: +z forward, +x right, +y down. Pixel
/// centers sit at integer image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive, got ({fx}, {fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("camera has zero size".into()));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if orth > 1e-6 || (det - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "camera rotation is not a proper rotation (det {det})"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite camera translation".into()));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        })
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Unit view direction from the camera center towards `p`.
    pub fn view_dir(&self, p: &Vector3<f64>) -> Vector3<f64> {
        (p - self.center()).normalize()
    }
}

/// Dense single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RadianceImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RadianceImage {
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Sample with coordinates clamped to the image border.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn same_shape(&self, other: &RadianceImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_shape(&self, other: &RadianceImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn clamped01(&self) -> RadianceImage {
        RadianceImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// One calibrated observation of the scene.
#[derive(Debug, Clone)]
pub struct ThermalView {
    pub name: String,
    pub camera: Camera,
    pub frame_index: usize,
    pub time_norm: f64,
    pub image: RadianceImage,
}

/// Normalized capture time of frame `index` out of `count` frames.
pub fn time_norm(index: usize, count: usize) -> f64 {
    if count <= 1 {
        0.0
    } else {
        index as f64 / (count - 1) as f64
    }
}

/// Output of projecting one Gaussian into a camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
    /// Gaussian center in camera coordinates.
    pub cam_point: Vector3<f64>,
    /// Affine Jacobian of the projection at the center.
    pub jacobian: nalgebra::Matrix2x3<f64>,
}

/// EWA projection of a Gaussian with world covariance `cov3d` centered at
/// `position`. Returns `None` when the center lies in front of the near
/// plane (culled).
pub fn project_gaussian(
    position: &Vector3<f64>,
    cov3d: &Matrix3<f64>,
    camera: &Camera,
) -> Option<Projection> {
    let t = camera.world_to_camera(position);
    if t.z <= NEAR_PLANE {
        return None;
    }
    let inv_z = 1.0 / t.z;
    let mean = Vector2::new(
        camera.fx * t.x * inv_z + camera.cx,
        camera.fy * t.y * inv_z + camera.cy,
    );
    let jacobian = nalgebra::Matrix2x3::new(
        camera.fx * inv_z,
        0.0,
        -camera.fx * t.x * inv_z * inv_z,
        0.0,
        camera.fy * inv_z,
        -camera.fy * t.y * inv_z * inv_z,
    );
    let tw = jacobian * camera.rotation;
    let mut cov = tw * cov3d * tw.transpose();
    cov[(0, 0)] += COV2D_DILATION;
    cov[(1, 1)] += COV2D_DILATION;
    // exact symmetry
    let off = 0.5 * (cov[(0, 1)] + cov[(1, 0)]);
    cov[(0, 1)] = off;
    cov[(1, 0)] = off;
    Some(Projection {
        mean,
        cov,
        depth: t.z,
        cam_point: t,
        jacobian,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn axis_camera(f: f64, c: f64) -> Camera {
        Camera::new(
            f,
            f,
            c,
            c,
            (2.0 * c) as usize,
            (2.0 * c) as usize,
            Matrix3::identity(),
            Vector3::zeros(),
        )
        .unwrap()
    }

    fn random_quat(a: f64, b: f64, c: f64) -> [f64; 4] {
        // Shoemake's uniform sampling from three uniforms in [0,1)
        let (s1, s2) = ((1.0 - a).sqrt(), a.sqrt());
        let (t1, t2) = (2.0 * std::f64::consts::PI * b, 2.0 * std::f64::consts::PI * c);
        [s2 * t2.cos(), s1 * t1.sin(), s1 * t1.cos(), s2 * t2.sin()]
    }

    #[test]
    fn covariance_identity_and_axis_scale() {
        let c = covariance_3d([1.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(c, Matrix3::identity(), epsilon = 1e-15);
        let c = covariance_3d([2.0, 1.0, 1.0], [1.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(
            c,
            Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0)),
            epsilon = 1e-15
        );
    }

    #[test]
    fn covariance_spectrum_is_rotation_invariant() {
        let q = random_quat(0.3, 0.7, 0.1);
        let c = covariance_3d([1.0, 2.0, 3.0], q);
        let mut ev: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ev[1], 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(ev[2], 9.0, epsilon = 1e-9);
    }

    #[test]
    fn projection_on_axis() {
        let cam = axis_camera(100.0, 50.0);
        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 1.0),
            &Matrix3::identity(),
            &cam,
        )
        .unwrap();
        assert_eq!(p.mean, Vector2::new(50.0, 50.0));
        assert_eq!(p.depth, 1.0);

        let p = project_gaussian(
            &Vector3::new(0.0, 0.0, 2.0),
            &Matrix3::identity(),
            &cam,
        )
        .unwrap();
        assert_abs_diff_eq!(p.cov[(0, 0)], 2500.3, epsilon = 1e-9);
        assert_abs_diff_eq!(p.cov[(1, 1)], 2500.3, epsilon = 1e-9);
        assert_abs_diff_eq!(p.cov[(0, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn near_plane_culls() {
        let cam = axis_camera(100.0, 50.0);
        for z in [0.01, 0.005, 0.0, -1.0] {
            assert!(project_gaussian(&Vector3::new(0.0, 0.0, z), &Matrix3::identity(), &cam)
                .is_none());
        }
        assert!(
            project_gaussian(&Vector3::new(0.0, 0.0, 0.0101), &Matrix3::identity(), &cam)
                .is_some()
        );
    }

    #[test]
    fn camera_validation() {
        let r = Matrix3::identity();
        let t = Vector3::zeros();
        assert!(Camera::new(0.0, 1.0, 1.0, 1.0, 4, 4, r, t).is_err());
        assert!(Camera::new(1.0, 1.0, 4.0, 1.0, 4, 4, r, t).is_err());
        assert!(Camera::new(1.0, 1.0, 1.0, 1.0, 4, 4, -r, t).is_err());
        assert!(Camera::new(1.0, 1.0, 1.0, 1.0, 4, 4, r, t).is_ok());
    }

    #[test]
    fn quaternion_matrix_round_trip() {
        let q = random_quat(0.8, 0.25, 0.6);
        let q = if q[0] < 0.0 { q.map(|v| -v) } else { q };
        let back = matrix_to_quat(&quat_to_matrix(q));
        for k in 0..4 {
            assert_abs_diff_eq!(back[k], q[k], epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn covariance_is_positive_definite(
            s in prop::array::uniform3(-3.0f64..2.0),
            a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
        ) {
            let cov = covariance_3d(s.map(f64::exp), random_quat(a, b, c));
            prop_assert!(cov.cholesky().is_some());
            prop_assert!((cov - cov.transpose()).abs().max() < 1e-12);
        }

        #[test]
        fn isotropic_mean_ignores_rotation(
            x in -0.5f64..0.5, y in -0.5f64..0.5, z in 1.0f64..4.0,
            a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0,
        ) {
            let cam = axis_camera(80.0, 40.0);
            let pos = Vector3::new(x, y, z);
            let base = project_gaussian(&pos, &covariance_3d([0.1; 3], [1.0, 0.0, 0.0, 0.0]), &cam).unwrap();
            let rot = project_gaussian(&pos, &covariance_3d([0.1; 3], random_quat(a, b, c)), &cam).unwrap();
            prop_assert_eq!(base.mean, rot.mean);
            prop_assert!((base.cov - rot.cov).abs().max() < 1e-9);
        }
    }
}
