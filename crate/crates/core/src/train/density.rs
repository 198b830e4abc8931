//! Gaussian initialization and adaptive density control.

use log::warn;
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scene::{inverse_sigmoid, quat_to_matrix, sigmoid, Camera, Gaussian, GaussianCloud};
use crate::sh::{SH_C0, SH_COEFFS, SH_DC_OFFSET};

/// Children per split and the factor their scale shrinks by.
pub const SPLIT_CHILDREN: usize = 2;
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;
/// Opacity ceiling applied by an opacity reset.
pub const RESET_OPACITY: f64 = 0.01;

/// One Gaussian per seed point, sized by the mean squared distance to its
/// three nearest neighbours.
pub fn init_from_points(points: &[([f64; 3], f64)], opacity: f64) -> Result<GaussianCloud> {
    if points.is_empty() {
        return Err(Error::Data("no seed points".into()));
    }
    let mut cloud = GaussianCloud::new(0);
    for (i, (p, radiance)) in points.iter().enumerate() {
        let mut nearest = [f64::INFINITY; 3];
        for (j, (q, _)) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            let d2: f64 = (0..3).map(|k| (p[k] - q[k]).powi(2)).sum();
            if d2 < nearest[2] {
                nearest[2] = d2;
                nearest.sort_by(f64::total_cmp);
            }
        }
        let found: Vec<f64> = nearest.into_iter().filter(|d| d.is_finite()).collect();
        let mean_d2 = if found.is_empty() {
            1e-4
        } else {
            (found.iter().sum::<f64>() / found.len() as f64).max(1e-7)
        };
        let s = 0.5 * mean_d2.ln();
        let mut sh = [0.0; SH_COEFFS];
        sh[0] = (radiance - SH_DC_OFFSET) / SH_C0;
        cloud.push(Gaussian {
            position: *p,
            log_scale: [s; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: inverse_sigmoid(opacity),
            sh,
        });
    }
    Ok(cloud)
}

/// Radius of the camera centres around their mean, enlarged by 10%.
pub fn camera_extent<'a>(cameras: impl IntoIterator<Item = &'a Camera>) -> f64 {
    let centers: Vec<Vector3<f64>> = cameras.into_iter().map(|c| c.center()).collect();
    if centers.is_empty() {
        return 1.0;
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let radius = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if radius > 0.0 {
        radius
    } else {
        1.0
    }
}

/// Running screen-space positional gradient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    pub denom: Vec<u64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            denom: vec![0; n],
        }
    }

    /// Adds the gradient norm of every Gaussian that reached the image.
    /// `d_mean2d` is in pixels and is rescaled to normalized device
    /// coordinates.
    pub fn accumulate(&mut self, d_mean2d: &[[f64; 2]], visible: &[bool], width: usize, height: usize) {
        let (sx, sy) = (0.5 * width as f64, 0.5 * height as f64);
        for i in 0..self.grad_accum.len() {
            if visible[i] {
                let [gx, gy] = d_mean2d[i];
                self.grad_accum[i] += ((gx * sx).powi(2) + (gy * sy).powi(2)).sqrt();
                self.denom[i] += 1;
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.denom[i] == 0 {
            0.0
        } else {
            self.grad_accum[i] / self.denom[i] as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    pub grad_threshold: f64,
    /// Gaussians whose largest scale is at most this are cloned, larger
    /// ones split.
    pub split_scale: f64,
    pub prune_opacity: f64,
    pub max_gaussians: usize,
}

/// Clones or splits Gaussians with large mean positional gradient and
/// removes nearly transparent ones. Returns the new cloud and, for every new
/// row, the old row it continues (`None` for newly created Gaussians).
pub fn densify_and_prune<R: Rng + ?Sized>(
    cloud: &GaussianCloud,
    stats: &DensifyStats,
    params: &DensifyParams,
    rng: &mut R,
) -> Result<(GaussianCloud, Vec<Option<usize>>, DensifyReport)> {
    let n = cloud.len();
    if stats.grad_accum.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "densify statistics for {} gaussians, cloud has {n}",
            stats.grad_accum.len()
        )));
    }
    let prune: Vec<bool> = (0..n)
        .map(|i| sigmoid(cloud.opacity_logits[i]) < params.prune_opacity)
        .collect();
    let mut clone = vec![false; n];
    let mut split = vec![false; n];
    for i in 0..n {
        if prune[i] || !(stats.mean(i) > params.grad_threshold) {
            continue;
        }
        let max_scale = cloud.log_scales[i].iter().copied().fold(f64::NEG_INFINITY, f64::max).exp();
        if max_scale <= params.split_scale {
            clone[i] = true;
        } else {
            split[i] = true;
        }
    }
    let mut report = DensifyReport {
        cloned: clone.iter().filter(|&&c| c).count(),
        split: split.iter().filter(|&&s| s).count(),
        pruned: prune.iter().filter(|&&p| p).count(),
        skipped: false,
    };
    let projected = n - report.pruned + report.cloned + report.split * (SPLIT_CHILDREN - 1);
    if projected > params.max_gaussians {
        warn!(
            "densification would grow the cloud to {projected} gaussians (limit {}); skipped",
            params.max_gaussians
        );
        clone.iter_mut().for_each(|c| *c = false);
        split.iter_mut().for_each(|s| *s = false);
        report.cloned = 0;
        report.split = 0;
        report.skipped = true;
    }

    let mut out = GaussianCloud::new(cloud.sh_degree_active);
    let mut src = Vec::new();
    for i in 0..n {
        if !prune[i] && !split[i] {
            out.push(cloud.get(i));
            src.push(Some(i));
        }
    }
    for i in (0..n).filter(|&i| clone[i]) {
        out.push(cloud.get(i));
        src.push(None);
    }
    for i in (0..n).filter(|&i| split[i]) {
        let g = cloud.get(i);
        let scale = g.scale();
        let rot = quat_to_matrix(crate::scene::normalize_quat(g.rotation));
        for _ in 0..SPLIT_CHILDREN {
            let sample = Vector3::new(
                rng.sample::<f64, _>(StandardNormal) * scale[0],
                rng.sample::<f64, _>(StandardNormal) * scale[1],
                rng.sample::<f64, _>(StandardNormal) * scale[2],
            );
            let offset = rot * sample;
            let mut child = g.clone();
            for k in 0..3 {
                child.position[k] += offset[k];
                child.log_scale[k] = (scale[k] / SPLIT_SCALE_DIVISOR).ln();
            }
            out.push(child);
            src.push(None);
        }
    }
    Ok((out, src, report))
}

/// Caps every opacity at [`RESET_OPACITY`].
pub fn reset_opacity(cloud: &mut GaussianCloud) {
    let cap = inverse_sigmoid(RESET_OPACITY);
    for o in &mut cloud.opacity_logits {
        *o = o.min(cap);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud3() -> GaussianCloud {
        let pts = [([0.0, 0.0, 0.0], 0.5), ([1.0, 0.0, 0.0], 0.2), ([0.0, 1.0, 0.0], 0.9)];
        init_from_points(&pts, 0.1).unwrap()
    }

    fn params() -> DensifyParams {
        DensifyParams {
            grad_threshold: 2e-4,
            split_scale: 10.0,
            prune_opacity: 5e-3,
            max_gaussians: 100,
        }
    }

    #[test]
    fn initialization() {
        let c = cloud3();
        assert_eq!(c.len(), 3);
        assert!((sigmoid(c.opacity_logits[0]) - 0.1).abs() < 1e-12);
        assert!((SH_DC_OFFSET + SH_C0 * c.sh[1][0] - 0.2).abs() < 1e-12);
        // point 0 has neighbours at distance 1 and 1
        assert!(c.log_scales[0][0].abs() < 1e-12);
        assert_eq!(c.rotations[0], [1.0, 0.0, 0.0, 0.0]);
        assert!(init_from_points(&[], 0.1).is_err());
    }

    #[test]
    fn quiet_cloud_is_unchanged() {
        let c = cloud3();
        let stats = DensifyStats::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, src, rep) = densify_and_prune(&c, &stats, &params(), &mut rng).unwrap();
        assert_eq!(out, c);
        assert_eq!(src, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(rep, DensifyReport::default());
    }

    #[test]
    fn clone_split_and_prune() {
        let c = cloud3();
        let mut stats = DensifyStats::new(3);
        stats.accumulate(&[[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]], &[true; 3], 64, 64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (out, src, rep) = densify_and_prune(&c, &stats, &params(), &mut rng).unwrap();
        assert_eq!((out.len(), rep.cloned), (4, 1));
        assert_eq!(src[3], None);

        let small = DensifyParams {
            split_scale: 0.01,
            ..params()
        };
        let (out, _, rep) = densify_and_prune(&c, &stats, &small, &mut rng).unwrap();
        assert_eq!((out.len(), rep.split), (4, 1));
        assert!((out.log_scales[2][0] - (1.0f64 / 1.6).ln()).abs() < 1e-12);

        let mut dim = c.clone();
        dim.opacity_logits[1] = f64::NEG_INFINITY;
        let (out, src, rep) = densify_and_prune(&dim, &DensifyStats::new(3), &params(), &mut rng).unwrap();
        assert_eq!((out.len(), rep.pruned), (2, 1));
        assert_eq!(src, vec![Some(0), Some(2)]);

        let capped = DensifyParams {
            max_gaussians: 3,
            ..params()
        };
        let (out, _, rep) = densify_and_prune(&c, &stats, &capped, &mut rng).unwrap();
        assert!(rep.skipped);
        assert_eq!(out.len(), 3);
    }

    #[test]
    fn opacity_reset_caps() {
        let mut c = cloud3();
        c.opacity_logits[0] = inverse_sigmoid(0.001);
        reset_opacity(&mut c);
        assert!((sigmoid(c.opacity_logits[1]) - 0.01).abs() < 1e-12);
        assert!((sigmoid(c.opacity_logits[0]) - 0.001).abs() < 1e-12);
    }
}
