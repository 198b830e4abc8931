//! Tile-based forward rasterization and its analytic reverse pass.
//!
//! Compositing runs front to back over a single global depth order per
//! view, split into 16x16 pixel tiles. Tiles own disjoint pixels, so the
//! forward pass parallelizes over tiles without changing any per-pixel
//! summation order. The backward pass accumulates per-Gaussian gradients in
//! per-tile buffers that are reduced in tile order, which keeps results
//! bit-identical regardless of the thread count.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::{
    covariance_3d, normalize_quat, project_gaussian, quat_to_matrix, sigmoid, Camera,
    GaussianCloud, RadianceImage,
};
use crate::sh::SH_COEFFS;

pub const TILE_SIZE: usize = 16;
pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Radiance composited under the residual transmittance.
    pub background: f64,
    pub tile_size: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            background: 0.0,
            tile_size: TILE_SIZE,
        }
    }
}

/// Screen-space footprint of one projected Gaussian plus everything the
/// reverse pass needs to chain back to the world-space parameters.
#[derive(Debug, Clone)]
pub struct Splat {
    pub mean: [f64; 2],
    /// Inverse 2D covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub conic: [f64; 3],
    /// Dilated 2D covariance as `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    pub depth: f64,
    pub opacity: f64,
    pub radiance: f64,
    /// Pixel bounding box `[x0, x1, y0, y1]` (inclusive) of the region where
    /// the splat can reach the alpha threshold; `None` when off-screen.
    pub pixel_rect: Option<[usize; 4]>,
    cam_point: Vector3<f64>,
    jacobian: Matrix2x3<f64>,
    cov3d: Matrix3<f64>,
    rot: Matrix3<f64>,
    quat_unit: [f64; 4],
    quat_norm: f64,
    scale: [f64; 3],
}

/// Diagnostic counters of one forward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RenderStats {
    pub culled_near: usize,
    pub culled_degenerate: usize,
    pub offscreen: usize,
    pub skipped_low_alpha: u64,
    pub max_contributors: usize,
}

/// Per-tile Gaussian lists sorted by depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_size: usize,
    /// Half-open `[start, end)` ranges into `list`, one per tile (row-major).
    pub ranges: Vec<(usize, usize)>,
    pub list: Vec<u32>,
}

impl TileBins {
    pub fn tile(&self, tx: usize, ty: usize) -> &[u32] {
        let (s, e) = self.ranges[ty * self.tiles_x + tx];
        &self.list[s..e]
    }
}

/// Everything needed to replay a forward pass in reverse.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub camera: Camera,
    pub settings: RenderSettings,
    pub splats: Vec<Option<Splat>>,
    pub bins: TileBins,
    pub final_transmittance: Vec<f64>,
    /// Number of tile-list entries consumed by each pixel.
    pub n_consumed: Vec<u32>,
    pub stats: RenderStats,
}

/// Gradients of a scalar loss with respect to every Gaussian attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGradients {
    pub d_position: Vec<[f64; 3]>,
    pub d_log_scale: Vec<[f64; 3]>,
    pub d_rotation: Vec<[f64; 4]>,
    pub d_opacity_logit: Vec<f64>,
    pub d_sh: Vec<[f64; SH_COEFFS]>,
    /// Gradient with respect to the radiance fed into compositing.
    pub d_radiance: Vec<f64>,
    /// Gradient with respect to the projected pixel-space mean.
    pub d_mean2d: Vec<[f64; 2]>,
}

impl GaussianGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_position: vec![[0.0; 3]; n],
            d_log_scale: vec![[0.0; 3]; n],
            d_rotation: vec![[0.0; 4]; n],
            d_opacity_logit: vec![0.0; n],
            d_sh: vec![[0.0; SH_COEFFS]; n],
            d_radiance: vec![0.0; n],
            d_mean2d: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.d_position.iter().flatten().all(|v| v.is_finite())
            && self.d_log_scale.iter().flatten().all(|v| v.is_finite())
            && self.d_rotation.iter().flatten().all(|v| v.is_finite())
            && self.d_opacity_logit.iter().all(|v| v.is_finite())
            && self.d_sh.iter().flatten().all(|v| v.is_finite())
            && self.d_radiance.iter().all(|v| v.is_finite())
    }
}

/// Mahalanobis radius squared enclosing every pixel where a splat with
/// opacity `o` can reach [`ALPHA_MIN`]. Never smaller than the 3-sigma
/// ellipse.
fn extent_sq(opacity: f64) -> f64 {
    let reach = 2.0 * (opacity / ALPHA_MIN).ln();
    reach.max(9.0)
}

fn pixel_rect(mean: [f64; 2], cov: [f64; 3], opacity: f64, w: usize, h: usize) -> Option<[usize; 4]> {
    let k = extent_sq(opacity);
    let (ex, ey) = ((k * cov[0]).sqrt(), (k * cov[2]).sqrt());
    let x0 = (mean[0] - ex).ceil().max(0.0);
    let x1 = (mean[0] + ex).floor().min(w as f64 - 1.0);
    let y0 = (mean[1] - ey).ceil().max(0.0);
    let y1 = (mean[1] + ey).floor().min(h as f64 - 1.0);
    if x0 > x1 || y0 > y1 || !(x0.is_finite() && x1.is_finite() && y0.is_finite() && y1.is_finite()) {
        return None;
    }
    Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
}

/// Projects every Gaussian of the cloud. Culled Gaussians map to `None`.
pub fn project_cloud(
    cloud: &GaussianCloud,
    camera: &Camera,
    radiance: &[f64],
    stats: &mut RenderStats,
) -> Vec<Option<Splat>> {
    let results: Vec<std::result::Result<Splat, u8>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let scale = cloud.log_scales[i].map(f64::exp);
            let raw = cloud.rotations[i];
            let quat_norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let quat_unit = normalize_quat(raw);
            let rot = quat_to_matrix(quat_unit);
            let cov3d = covariance_3d(scale, quat_unit);
            let pos = Vector3::from(cloud.positions[i]);
            let proj = project_gaussian(&pos, &cov3d, camera).ok_or(0u8)?;
            let (p, q, r) = (proj.cov[(0, 0)], proj.cov[(0, 1)], proj.cov[(1, 1)]);
            let det = p * r - q * q;
            if !(det > 0.0) || !det.is_finite() {
                return Err(1u8);
            }
            let opacity = sigmoid(cloud.opacity_logits[i]);
            let mean = [proj.mean.x, proj.mean.y];
            let cov2d = [p, q, r];
            Ok(Splat {
                mean,
                conic: [r / det, -q / det, p / det],
                cov2d,
                depth: proj.depth,
                opacity,
                radiance: radiance[i],
                pixel_rect: pixel_rect(mean, cov2d, opacity, camera.width, camera.height),
                cam_point: proj.cam_point,
                jacobian: proj.jacobian,
                cov3d,
                rot,
                quat_unit,
                quat_norm,
                scale,
            })
        })
        .collect();
    results
        .into_iter()
        .map(|r| match r {
            Ok(s) => {
                if s.pixel_rect.is_none() {
                    stats.offscreen += 1;
                }
                Some(s)
            }
            Err(0) => {
                stats.culled_near += 1;
                None
            }
            Err(_) => {
                stats.culled_degenerate += 1;
                None
            }
        })
        .collect()
}

/// Assigns each projected Gaussian to every tile its footprint overlaps.
/// Within a tile, indices are sorted by ascending depth with ties broken by
/// ascending index.
pub fn tile_bin(splats: &[Option<Splat>], width: usize, height: usize, tile_size: usize) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut keys: Vec<(u32, f64, u32)> = Vec::new();
    for (i, s) in splats.iter().enumerate() {
        let Some(s) = s else { continue };
        let Some([x0, x1, y0, y1]) = s.pixel_rect else { continue };
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                keys.push(((ty * tiles_x + tx) as u32, s.depth, i as u32));
            }
        }
    }
    keys.sort_unstable_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1.total_cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut ranges = vec![(0usize, 0usize); tiles_x * tiles_y];
    let mut start = 0;
    while start < keys.len() {
        let tile = keys[start].0;
        let mut end = start;
        while end < keys.len() && keys[end].0 == tile {
            end += 1;
        }
        ranges[tile as usize] = (start, end);
        start = end;
    }
    TileBins {
        tiles_x,
        tiles_y,
        tile_size,
        ranges,
        list: keys.into_iter().map(|k| k.2).collect(),
    }
}

#[inline]
fn splat_alpha(s: &Splat, px: f64, py: f64) -> (f64, f64, f64, f64, bool) {
    let dx = px - s.mean[0];
    let dy = py - s.mean[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
    let g = power.exp();
    let raw = s.opacity * g;
    if raw > ALPHA_MAX {
        (ALPHA_MAX, g, dx, dy, true)
    } else {
        (raw, g, dx, dy, false)
    }
}

struct TileForward {
    color: Vec<f64>,
    transmittance: Vec<f64>,
    consumed: Vec<u32>,
    skipped: u64,
    max_contrib: usize,
}

fn tile_pixels(bins: &TileBins, t: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (t % bins.tiles_x, t / bins.tiles_x);
    let ts = bins.tile_size;
    let (x0, y0) = (tx * ts, ty * ts);
    let (x1, y1) = ((x0 + ts).min(w), (y0 + ts).min(h));
    (y0..y1).flat_map(move |y| (x0..x1).map(move |x| (x, y)))
}

/// Front-to-back alpha compositing of the cloud with per-Gaussian radiance
/// already evaluated (and attenuated) by the caller.
pub fn render_forward(
    cloud: &GaussianCloud,
    camera: &Camera,
    radiance: &[f64],
    settings: &RenderSettings,
) -> Result<(RadianceImage, RenderAux)> {
    if radiance.len() != cloud.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} radiance values for {} gaussians",
            radiance.len(),
            cloud.len()
        )));
    }
    if settings.tile_size == 0 {
        return Err(Error::InvalidArgument("tile size must be positive".into()));
    }
    let (w, h) = (camera.width, camera.height);
    let mut stats = RenderStats::default();
    let splats = project_cloud(cloud, camera, radiance, &mut stats);
    let bins = tile_bin(&splats, w, h, settings.tile_size);
    let bg = settings.background;

    let tiles: Vec<TileForward> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|t| {
            let list = {
                let (s, e) = bins.ranges[t];
                &bins.list[s..e]
            };
            let mut out = TileForward {
                color: Vec::new(),
                transmittance: Vec::new(),
                consumed: Vec::new(),
                skipped: 0,
                max_contrib: 0,
            };
            for (x, y) in tile_pixels(&bins, t, w, h) {
                let (px, py) = (x as f64, y as f64);
                let mut trans = 1.0;
                let mut color = 0.0;
                let mut consumed = 0u32;
                let mut contributors = 0usize;
                for (k, &gi) in list.iter().enumerate() {
                    let s = splats[gi as usize].as_ref().unwrap();
                    let (alpha, _, _, _, _) = splat_alpha(s, px, py);
                    if alpha < ALPHA_MIN {
                        out.skipped += 1;
                        continue;
                    }
                    let next = trans * (1.0 - alpha);
                    if next < TRANSMITTANCE_MIN {
                        break;
                    }
                    color += s.radiance * alpha * trans;
                    trans = next;
                    consumed = k as u32 + 1;
                    contributors += 1;
                }
                out.color.push(color + trans * bg);
                out.transmittance.push(trans);
                out.consumed.push(consumed);
                out.max_contrib = out.max_contrib.max(contributors);
            }
            out
        })
        .collect();

    let mut image = RadianceImage::zeros(w, h);
    let mut final_transmittance = vec![0.0; w * h];
    let mut n_consumed = vec![0u32; w * h];
    for (t, tile) in tiles.iter().enumerate() {
        for (k, (x, y)) in tile_pixels(&bins, t, w, h).enumerate() {
            let p = y * w + x;
            image.data[p] = tile.color[k];
            final_transmittance[p] = tile.transmittance[k];
            n_consumed[p] = tile.consumed[k];
        }
        stats.skipped_low_alpha += tile.skipped;
        stats.max_contributors = stats.max_contributors.max(tile.max_contrib);
    }

    Ok((
        image,
        RenderAux {
            camera: camera.clone(),
            settings: *settings,
            splats,
            bins,
            final_transmittance,
            n_consumed,
            stats,
        },
    ))
}

impl RenderAux {
    /// Hash of every discrete compositing decision (which splats contribute
    /// to which pixel, opacity clamping, early termination). Two renders with
    /// equal patterns lie on the same smooth piece of the image function.
    pub fn decision_pattern(&self, hasher: &mut impl std::hash::Hasher) {
        let (w, h) = (self.camera.width, self.camera.height);
        let bins = &self.bins;
        for t in 0..bins.tiles_x * bins.tiles_y {
            let (start, end) = bins.ranges[t];
            let list = &bins.list[start..end];
            for (x, y) in tile_pixels(bins, t, w, h) {
                let p = y * w + x;
                let used = self.n_consumed[p] as usize;
                for &gi in &list[..used] {
                    let s = self.splats[gi as usize].as_ref().unwrap();
                    let (alpha, _, _, _, clamped) = splat_alpha(s, x as f64, y as f64);
                    if alpha >= ALPHA_MIN {
                        hasher.write_u32(gi);
                        hasher.write_u8(clamped as u8);
                    }
                }
                hasher.write_u32(used as u32);
                // whether the pixel terminated early on the next contributor
                let stopped = list[used..].iter().any(|&gi| {
                    let s = self.splats[gi as usize].as_ref().unwrap();
                    splat_alpha(s, x as f64, y as f64).0 >= ALPHA_MIN
                });
                hasher.write_u8(stopped as u8);
            }
        }
    }
}

/// Screen-space gradient slots for one tile-list entry:
/// `[d_mean_x, d_mean_y, d_conic_a, d_conic_b, d_conic_c, d_opacity, d_radiance]`.
type ScreenGrad = [f64; 7];

/// Reverse pass of [`render_forward`]: gradients of `sum(d_image * image)`
/// with respect to every Gaussian attribute and the input radiance.
pub fn render_backward(aux: &RenderAux, d_image: &RadianceImage) -> Result<GaussianGradients> {
    let (w, h) = (aux.camera.width, aux.camera.height);
    if d_image.width != w || d_image.height != h {
        return Err(Error::ShapeMismatch(format!(
            "gradient image {}x{} does not match render {}x{}",
            d_image.width, d_image.height, w, h
        )));
    }
    let n = aux.splats.len();
    let bins = &aux.bins;
    let bg = aux.settings.background;

    let per_tile: Vec<Vec<ScreenGrad>> = (0..bins.tiles_x * bins.tiles_y)
        .into_par_iter()
        .map(|t| {
            let (start, end) = bins.ranges[t];
            let list = &bins.list[start..end];
            let mut acc = vec![[0.0; 7]; list.len()];
            let mut entries: Vec<(usize, f64, f64, f64, f64, f64, bool)> = Vec::new();
            for (x, y) in tile_pixels(bins, t, w, h) {
                let p = y * w + x;
                let g = d_image.data[p];
                if g == 0.0 {
                    continue;
                }
                let (px, py) = (x as f64, y as f64);
                entries.clear();
                let mut trans = 1.0;
                for (k, &gi) in list[..aux.n_consumed[p] as usize].iter().enumerate() {
                    let s = aux.splats[gi as usize].as_ref().unwrap();
                    let (alpha, gauss, dx, dy, clamped) = splat_alpha(s, px, py);
                    if alpha < ALPHA_MIN {
                        continue;
                    }
                    entries.push((k, alpha, gauss, dx, dy, trans, clamped));
                    trans *= 1.0 - alpha;
                }
                let mut behind = aux.final_transmittance[p] * bg;
                for &(k, alpha, gauss, dx, dy, t_before, clamped) in entries.iter().rev() {
                    let s = aux.splats[list[k] as usize].as_ref().unwrap();
                    let slot = &mut acc[k];
                    slot[6] += g * alpha * t_before;
                    let d_alpha = g * (s.radiance * t_before - behind / (1.0 - alpha));
                    behind += s.radiance * alpha * t_before;
                    if clamped {
                        continue;
                    }
                    slot[5] += d_alpha * gauss;
                    let d_power = d_alpha * s.opacity * gauss;
                    let [a, b, c] = s.conic;
                    slot[0] += d_power * (a * dx + b * dy);
                    slot[1] += d_power * (b * dx + c * dy);
                    slot[2] += d_power * (-0.5 * dx * dx);
                    slot[3] += d_power * (-dx * dy);
                    slot[4] += d_power * (-0.5 * dy * dy);
                }
            }
            acc
        })
        .collect();

    let mut screen = vec![[0.0; 7]; n];
    for (t, acc) in per_tile.iter().enumerate() {
        let (start, _) = bins.ranges[t];
        for (k, slot) in acc.iter().enumerate() {
            let gi = bins.list[start + k] as usize;
            for (dst, src) in screen[gi].iter_mut().zip(slot) {
                *dst += src;
            }
        }
    }

    let mut grads = GaussianGradients::zeros(n);
    let chained: Vec<Option<([f64; 3], [f64; 3], [f64; 4], f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = aux.splats[i].as_ref()?;
            Some(chain_to_world(s, &screen[i], &aux.camera))
        })
        .collect();
    for (i, c) in chained.into_iter().enumerate() {
        let Some((d_pos, d_log_scale, d_rot, d_logit)) = c else {
            continue;
        };
        grads.d_position[i] = d_pos;
        grads.d_log_scale[i] = d_log_scale;
        grads.d_rotation[i] = d_rot;
        grads.d_opacity_logit[i] = d_logit;
        grads.d_radiance[i] = screen[i][6];
        grads.d_mean2d[i] = [screen[i][0], screen[i][1]];
    }
    Ok(grads)
}

/// Chains screen-space gradients through the EWA projection and the
/// covariance construction back to position, log-scale, quaternion and
/// opacity logit.
fn chain_to_world(s: &Splat, g: &ScreenGrad, cam: &Camera) -> ([f64; 3], [f64; 3], [f64; 4], f64) {
    let [d_mx, d_my, da, db, dc, d_opacity, _] = *g;
    let [p, q, r] = s.cov2d;
    let det = p * r - q * q;
    let det2 = det * det;
    let dp = da * (-r * r / det2) + db * (q * r / det2) + dc * (-q * q / det2);
    let dq = da * (2.0 * q * r / det2) + db * (-1.0 / det - 2.0 * q * q / det2) + dc * (2.0 * q * p / det2);
    let dr = da * (-q * q / det2) + db * (q * p / det2) + dc * (-p * p / det2);
    let d_cov2 = Matrix2::new(dp, 0.5 * dq, 0.5 * dq, dr);

    let w = &cam.rotation;
    let tw = s.jacobian * w;
    let d_cov3 = tw.transpose() * d_cov2 * tw;
    let d_tw = 2.0 * d_cov2 * tw * s.cov3d;
    let d_j = d_tw * w.transpose();

    let t = s.cam_point;
    let (fx, fy) = (cam.fx, cam.fy);
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut d_t = Vector3::zeros();
    d_t.x += d_j[(0, 2)] * (-fx * inv_z2) + d_mx * fx * inv_z;
    d_t.y += d_j[(1, 2)] * (-fy * inv_z2) + d_my * fy * inv_z;
    d_t.z += d_j[(0, 0)] * (-fx * inv_z2)
        + d_j[(0, 2)] * (2.0 * fx * t.x * inv_z3)
        + d_j[(1, 1)] * (-fy * inv_z2)
        + d_j[(1, 2)] * (2.0 * fy * t.y * inv_z3)
        + d_mx * (-fx * t.x * inv_z2)
        + d_my * (-fy * t.y * inv_z2);
    let d_pos = w.transpose() * d_t;

    // cov3d = M M^T with M = R S
    let m = s.rot * Matrix3::from_diagonal(&Vector3::from(s.scale));
    let d_m = 2.0 * d_cov3 * m;
    let mut d_log_scale = [0.0; 3];
    let mut d_rmat = Matrix3::zeros();
    for j in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += d_m[(i, j)] * s.rot[(i, j)];
            d_rmat[(i, j)] = d_m[(i, j)] * s.scale[j];
        }
        d_log_scale[j] = ds * s.scale[j];
    }
    let d_unit = quat_matrix_backward(s.quat_unit, &d_rmat);
    let dot: f64 = d_unit.iter().zip(&s.quat_unit).map(|(a, b)| a * b).sum();
    let mut d_rot = [0.0; 4];
    for k in 0..4 {
        d_rot[k] = (d_unit[k] - s.quat_unit[k] * dot) / s.quat_norm;
    }
    let d_logit = d_opacity * s.opacity * (1.0 - s.opacity);
    ([d_pos.x, d_pos.y, d_pos.z], d_log_scale, d_rot, d_logit)
}

/// Gradient with respect to `(w, x, y, z)` of `<d_r, R(q)>` for the
/// rotation matrix formula of [`quat_to_matrix`].
fn quat_matrix_backward(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let gx = 2.0 * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
        + z * g[(2, 0)]
        + w * g[(2, 1)]
        - 2.0 * x * g[(2, 2)]);
    let gy = 2.0 * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
        - w * g[(2, 0)]
        + z * g[(2, 1)]
        - 2.0 * y * g[(2, 2)]);
    let gz = 2.0 * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
        + y * g[(1, 2)]
        + x * g[(2, 0)]
        + y * g[(2, 1)]);
    [gw, gx, gy, gz]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{inverse_sigmoid, Gaussian};

    fn camera(size: usize, f: f64) -> Camera {
        let c = size as f64 / 2.0;
        Camera::new(f, f, c, c, size, size, Matrix3::identity(), Vector3::zeros()).unwrap()
    }

    fn gaussian(pos: [f64; 3], scale: f64, opacity: f64) -> Gaussian {
        Gaussian {
            position: pos,
            log_scale: [scale.ln(); 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: inverse_sigmoid(opacity),
            sh: [0.0; SH_COEFFS],
        }
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cam = camera(20, 20.0);
        let (img, aux) =
            render_forward(&GaussianCloud::new(0), &cam, &[], &RenderSettings::default()).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
        assert!(aux.final_transmittance.iter().all(|&t| t == 1.0));
        let settings = RenderSettings {
            background: 0.25,
            ..Default::default()
        };
        let (img, _) = render_forward(&GaussianCloud::new(0), &cam, &[], &settings).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn single_splat_peaks_at_center_and_decays() {
        let cam = camera(32, 32.0);
        let mut cloud = GaussianCloud::new(0);
        cloud.push(gaussian([0.0, 0.0, 4.0], 0.3, 0.999));
        let (img, _) = render_forward(&cloud, &cam, &[1.0], &RenderSettings::default()).unwrap();
        let center = img.get(16, 16);
        assert_eq!(center, img.max_value());
        let mut prev = center;
        for x in 17..32 {
            let v = img.get(x, 16);
            assert!(v <= prev, "not monotone at x={x}");
            prev = v;
        }
    }

    #[test]
    fn two_splat_compositing_arithmetic() {
        // Two huge splats with opacity 0.5 so alpha is 0.5 at the center pixel.
        let cam = camera(16, 16.0);
        let mut cloud = GaussianCloud::new(0);
        cloud.push(gaussian([0.0, 0.0, 2.0], 1e3, 0.5));
        cloud.push(gaussian([0.0, 0.0, 3.0], 1e3, 0.5));
        let (img, _) = render_forward(&cloud, &cam, &[1.0, 0.0], &RenderSettings::default()).unwrap();
        assert!((img.get(8, 8) - 0.5).abs() < 1e-9);
        let (img, _) = render_forward(&cloud, &cam, &[0.0, 1.0], &RenderSettings::default()).unwrap();
        assert!((img.get(8, 8) - 0.25).abs() < 1e-9);
    }

    #[test]
    fn transparent_cloud_is_background() {
        let cam = camera(16, 16.0);
        let mut cloud = GaussianCloud::new(0);
        let mut g = gaussian([0.0, 0.0, 2.0], 0.5, 0.5);
        g.opacity_logit = f64::NEG_INFINITY;
        cloud.push(g);
        let settings = RenderSettings {
            background: 0.1,
            ..Default::default()
        };
        let (img, _) = render_forward(&cloud, &cam, &[1.0], &settings).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.1));
    }

    #[test]
    fn tile_binning_rules() {
        let cam = camera(64, 64.0);
        // inside tile (0,0): mean at ~ (8,8), tiny footprint
        let mut cloud = GaussianCloud::new(0);
        cloud.push(gaussian([-24.0 / 64.0 * 4.0, -24.0 / 64.0 * 4.0, 4.0], 0.02, 0.9));
        // on the corner between tiles (1,1),(2,1),(1,2),(2,2)
        cloud.push(gaussian([0.0, 0.0, 4.0], 0.05, 0.9));
        let mut stats = RenderStats::default();
        let splats = project_cloud(&cloud, &cam, &[1.0, 1.0], &mut stats);
        let bins = tile_bin(&splats, 64, 64, 16);
        let tiles_of = |gi: u32| -> Vec<(usize, usize)> {
            let mut out = vec![];
            for ty in 0..bins.tiles_y {
                for tx in 0..bins.tiles_x {
                    if bins.tile(tx, ty).contains(&gi) {
                        out.push((tx, ty));
                    }
                }
            }
            out
        };
        assert_eq!(tiles_of(0), vec![(0, 0)]);
        assert_eq!(tiles_of(1), vec![(1, 1), (2, 1), (1, 2), (2, 2)]);
    }

    #[test]
    fn equal_depth_keeps_index_order() {
        let cam = camera(16, 16.0);
        let mut cloud = GaussianCloud::new(0);
        for _ in 0..3 {
            cloud.push(gaussian([0.0, 0.0, 2.0], 0.1, 0.5));
        }
        let mut stats = RenderStats::default();
        let splats = project_cloud(&cloud, &cam, &[1.0; 3], &mut stats);
        let bins = tile_bin(&splats, 16, 16, 16);
        assert_eq!(bins.tile(0, 0), &[0, 1, 2]);
    }

    #[test]
    fn zero_gradient_image_gives_zero_gradients() {
        let cam = camera(16, 16.0);
        let mut cloud = GaussianCloud::new(0);
        cloud.push(gaussian([0.1, 0.0, 2.0], 0.3, 0.6));
        cloud.push(gaussian([-0.1, 0.1, 2.5], 0.2, 0.7));
        let (_, aux) = render_forward(&cloud, &cam, &[0.4, 0.9], &RenderSettings::default()).unwrap();
        let g = render_backward(&aux, &RadianceImage::zeros(16, 16)).unwrap();
        assert_eq!(g, GaussianGradients::zeros(2));
        assert!(render_backward(&aux, &RadianceImage::zeros(8, 16)).is_err());
    }

    #[test]
    fn center_pixel_radiance_gradient_is_alpha() {
        let cam = camera(16, 16.0);
        let mut cloud = GaussianCloud::new(0);
        cloud.push(gaussian([0.0, 0.0, 2.0], 0.2, 0.7));
        let (_, aux) = render_forward(&cloud, &cam, &[0.8], &RenderSettings::default()).unwrap();
        let mut d = RadianceImage::zeros(16, 16);
        d.set(8, 8, 1.0);
        let g = render_backward(&aux, &d).unwrap();
        // Gaussian centered exactly on the pixel: alpha = opacity
        assert!((g.d_radiance[0] - 0.7).abs() < 1e-12);
    }
}
