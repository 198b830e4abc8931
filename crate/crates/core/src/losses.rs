//! Training losses and evaluation metrics.
//!
//! Every loss returns its value together with the gradient with respect to
//! the predicted image. SSIM and Harris filtering use replicate padding at
//! the image border.

use crate::error::{Error, Result};
use crate::scene::RadianceImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Weights and constants of the combined training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_dis: f64,
    pub lambda_dssim: f64,
    /// Iteration at which the corner-weighted term has decayed to zero.
    pub iter_t: u64,
    pub k_harris: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dis: 0.2,
            lambda_dssim: 0.2,
            iter_t: 5000,
            k_harris: 0.04,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_dis >= 0.0 && self.lambda_dssim >= 0.0 && self.lambda_dis + self.lambda_dssim < 1.0) {
            return Err(Error::Config(format!(
                "loss weights need lambda_dis + lambda_dssim < 1, got {} + {}",
                self.lambda_dis, self.lambda_dssim
            )));
        }
        if self.iter_t == 0 {
            return Err(Error::Config("iter_t must be positive".into()));
        }
        Ok(())
    }

    pub fn l1_weight(&self) -> f64 {
        // Summing first keeps the defaults at exactly 0.6.
        1.0 - (self.lambda_dis + self.lambda_dssim)
    }

    /// Linear decay of the corner-weighted term, reaching zero at `iter_t`.
    pub fn dis_decay(&self, iteration: u64) -> f64 {
        (1.0 - iteration as f64 / self.iter_t as f64).max(0.0)
    }
}

fn zeros_like(img: &RadianceImage) -> RadianceImage {
    RadianceImage::zeros(img.width, img.height)
}

/// Mean absolute error and its gradient.
pub fn l1_loss(pred: &RadianceImage, gt: &RadianceImage) -> Result<(f64, RadianceImage)> {
    pred.check_same_shape(gt)?;
    let n = pred.data.len() as f64;
    let mut grad = zeros_like(pred);
    let mut sum = 0.0;
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&gt.data) {
        let d = p - t;
        sum += d.abs();
        *g = sign(d) / n;
    }
    Ok((sum / n, grad))
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable filter with replicate padding.
fn filter_sep(data: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * data[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Transpose of [`filter_sep`].
fn filter_sep_adjoint(grad: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            let g = grad[y * w + x];
            for (k, kv) in kernel.iter().enumerate() {
                let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                tmp[sy * w + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; grad.len()];
    for y in 0..h {
        for x in 0..w {
            let g = tmp[y * w + x];
            for (k, kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                out[y * w + sx] += kv * g;
            }
        }
    }
    out
}

struct SsimStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    sxx: Vec<f64>,
    syy: Vec<f64>,
    sxy: Vec<f64>,
}

fn ssim_stats(x: &[f64], y: &[f64], w: usize, h: usize, kernel: &[f64]) -> SsimStats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    SsimStats {
        mu_x: filter_sep(x, w, h, kernel),
        mu_y: filter_sep(y, w, h, kernel),
        sxx: filter_sep(&xx, w, h, kernel),
        syy: filter_sep(&yy, w, h, kernel),
        sxy: filter_sep(&xy, w, h, kernel),
    }
}

/// Mean single-scale SSIM (11x11 Gaussian window, sigma 1.5) of the
/// `[0, 1]`-clamped images.
pub fn ssim(pred: &RadianceImage, gt: &RadianceImage) -> Result<f64> {
    Ok(ssim_with_grad(pred, gt)?.0)
}

/// SSIM and its gradient with respect to `pred`. Pixels of `pred` outside
/// `[0, 1]` receive zero gradient (clamping).
pub fn ssim_with_grad(pred: &RadianceImage, gt: &RadianceImage) -> Result<(f64, RadianceImage)> {
    pred.check_same_shape(gt)?;
    let (w, h) = (pred.width, pred.height);
    let x = pred.clamped01().data;
    let y = gt.clamped01().data;
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let st = ssim_stats(&x, &y, w, h, &kernel);
    let n = (w * h) as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; x.len()];
    let mut d_sxx = vec![0.0; x.len()];
    let mut d_sxy = vec![0.0; x.len()];
    for i in 0..x.len() {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let a1 = 2.0 * mx * my + SSIM_C1;
        let a2 = 2.0 * (st.sxy[i] - mx * my) + SSIM_C2;
        let b1 = mx * mx + my * my + SSIM_C1;
        let b2 = (st.sxx[i] - mx * mx) + (st.syy[i] - my * my) + SSIM_C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        d_mu[i] = s * (2.0 * my / a1 - 2.0 * my / a2 - 2.0 * mx / b1 + 2.0 * mx / b2) / n;
        d_sxx[i] = -s / b2 / n;
        d_sxy[i] = 2.0 * s / a2 / n;
    }
    let g_mu = filter_sep_adjoint(&d_mu, w, h, &kernel);
    let g_sxx = filter_sep_adjoint(&d_sxx, w, h, &kernel);
    let g_sxy = filter_sep_adjoint(&d_sxy, w, h, &kernel);
    let mut grad = zeros_like(pred);
    for i in 0..x.len() {
        let p = pred.data[i];
        if (0.0..=1.0).contains(&p) {
            grad.data[i] = g_mu[i] + 2.0 * x[i] * g_sxx[i] + y[i] * g_sxy[i];
        }
    }
    Ok((total / n, grad))
}

/// `(1 - SSIM) / 2` and its gradient.
pub fn d_ssim_loss(pred: &RadianceImage, gt: &RadianceImage) -> Result<(f64, RadianceImage)> {
    let (s, mut g) = ssim_with_grad(pred, gt)?;
    for v in &mut g.data {
        *v *= -0.5;
    }
    Ok(((1.0 - s) / 2.0, g))
}

/// Sobel derivatives with replicate border, written as differences so a
/// locally constant image gives exactly zero.
fn sobel(img: &RadianceImage) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width, img.height);
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    let p = |x: usize, y: usize, dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy);
    for y in 0..h {
        for x in 0..w {
            ix[y * w + x] = (p(x, y, 1, -1) - p(x, y, -1, -1))
                + 2.0 * (p(x, y, 1, 0) - p(x, y, -1, 0))
                + (p(x, y, 1, 1) - p(x, y, -1, 1));
            iy[y * w + x] = (p(x, y, -1, 1) - p(x, y, -1, -1))
                + 2.0 * (p(x, y, 0, 1) - p(x, y, 0, -1))
                + (p(x, y, 1, 1) - p(x, y, 1, -1));
        }
    }
    (ix, iy)
}

fn correlate3(img: &RadianceImage, k: &[[f64; 3]; 3]) -> Vec<f64> {
    let (w, h) = (img.width, img.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ky, row) in k.iter().enumerate() {
                for (kx, kv) in row.iter().enumerate() {
                    acc += kv * img.get_clamped(x as isize + kx as isize - 1, y as isize + ky as isize - 1);
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Normalized 3x3 Gaussian (sigma 1) used to smooth structure-tensor
/// entries.
fn harris_window() -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    let mut s = 0.0;
    for (y, row) in k.iter_mut().enumerate() {
        for (x, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (x as f64 - 1.0, y as f64 - 1.0);
            *v = (-(dx * dx + dy * dy) / 2.0).exp();
            s += *v;
        }
    }
    k.map(|row| row.map(|v| v / s))
}

/// Harris corner response `det(M) - k trace(M)^2` per pixel, where `M` is
/// the Gaussian-smoothed structure tensor of Sobel gradients.
pub fn harris_response(image: &RadianceImage, k_harris: f64) -> RadianceImage {
    let (w, h) = (image.width, image.height);
    let (ix, iy) = sobel(image);
    let wrap = |data: Vec<f64>| RadianceImage {
        width: w,
        height: h,
        data,
    };
    let window = harris_window();
    let sxx = correlate3(&wrap(ix.iter().map(|v| v * v).collect()), &window);
    let syy = correlate3(&wrap(iy.iter().map(|v| v * v).collect()), &window);
    let sxy = correlate3(&wrap(ix.iter().zip(&iy).map(|(a, b)| a * b).collect()), &window);
    let data = (0..w * h)
        .map(|i| {
            let det = sxx[i] * syy[i] - sxy[i] * sxy[i];
            let tr = sxx[i] + syy[i];
            det - k_harris * tr * tr
        })
        .collect();
    wrap(data)
}

/// Per-pixel corner likelihood `max(R, 0) / R_max` of a ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerWeights {
    pub weights: RadianceImage,
    pub r_max: f64,
}

impl CornerWeights {
    pub fn from_image(gt: &RadianceImage, k_harris: f64) -> Self {
        let mut r = harris_response(gt, k_harris);
        for v in &mut r.data {
            *v = v.max(0.0);
        }
        let r_max = r.max_value().max(0.0);
        if r_max > 0.0 {
            for v in &mut r.data {
                *v /= r_max;
            }
        } else {
            r.data.iter_mut().for_each(|v| *v = 0.0);
        }
        Self { weights: r, r_max }
    }
}

/// Corner-weighted absolute error with linear iteration decay.
pub fn discontinuous_loss(
    pred: &RadianceImage,
    gt: &RadianceImage,
    iteration: u64,
    weights: &LossWeights,
) -> Result<(f64, RadianceImage)> {
    pred.check_same_shape(gt)?;
    let corners = CornerWeights::from_image(gt, weights.k_harris);
    discontinuous_loss_with(pred, gt, &corners, iteration, weights)
}

/// [`discontinuous_loss`] with a precomputed corner map.
pub fn discontinuous_loss_with(
    pred: &RadianceImage,
    gt: &RadianceImage,
    corners: &CornerWeights,
    iteration: u64,
    weights: &LossWeights,
) -> Result<(f64, RadianceImage)> {
    pred.check_same_shape(gt)?;
    corners.weights.check_same_shape(gt)?;
    let decay = weights.dis_decay(iteration);
    let mut grad = zeros_like(pred);
    if decay == 0.0 || corners.r_max == 0.0 {
        return Ok((0.0, grad));
    }
    let n = pred.data.len() as f64;
    let mut sum = 0.0;
    for i in 0..pred.data.len() {
        let wgt = corners.weights.data[i];
        let d = pred.data[i] - gt.data[i];
        sum += wgt * d.abs();
        grad.data[i] = decay * wgt * sign(d) / n;
    }
    Ok((decay * sum / n, grad))
}

/// Individual terms of the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub dis: f64,
}

/// Weighted combination of the three loss terms.
pub fn combine(weights: &LossWeights, dis: f64, dssim: f64, l1: f64) -> f64 {
    weights.lambda_dis * dis + weights.lambda_dssim * dssim + weights.l1_weight() * l1
}

/// Combined loss `lambda_dis * dis + lambda * D-SSIM + (1 - lambda_dis - lambda) * L1`
/// and its gradient with respect to `pred`. `corners` may carry a cached
/// corner map of `gt`.
pub fn total_loss(
    pred: &RadianceImage,
    gt: &RadianceImage,
    iteration: u64,
    weights: &LossWeights,
    corners: Option<&CornerWeights>,
) -> Result<(LossBreakdown, RadianceImage)> {
    let (l1, g_l1) = l1_loss(pred, gt)?;
    let (dssim, g_ssim) = d_ssim_loss(pred, gt)?;
    let (dis, g_dis) = if weights.lambda_dis > 0.0 {
        match corners {
            Some(c) => discontinuous_loss_with(pred, gt, c, iteration, weights)?,
            None => discontinuous_loss(pred, gt, iteration, weights)?,
        }
    } else {
        (0.0, zeros_like(pred))
    };
    let lw = weights.l1_weight();
    let mut grad = zeros_like(pred);
    for i in 0..grad.data.len() {
        grad.data[i] =
            weights.lambda_dis * g_dis.data[i] + weights.lambda_dssim * g_ssim.data[i] + lw * g_l1.data[i];
    }
    Ok((
        LossBreakdown {
            total: combine(weights, dis, dssim, l1),
            l1,
            dssim,
            dis,
        },
        grad,
    ))
}

/// Hash of the sign and clamp decisions the losses make for `pred`; equal
/// hashes mean the losses are smooth between two predictions.
pub fn loss_pattern(pred: &RadianceImage, gt: &RadianceImage, hasher: &mut impl std::hash::Hasher) {
    for (p, t) in pred.data.iter().zip(&gt.data) {
        hasher.write_i8(sign(p - t) as i8);
        hasher.write_u8((*p < 0.0) as u8 | (((*p > 1.0) as u8) << 1));
    }
}

/// Peak signal-to-noise ratio in dB on unit dynamic range; `+inf` for
/// identical images.
pub fn psnr(pred: &RadianceImage, gt: &RadianceImage) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let mse = pred
        .data
        .iter()
        .zip(&gt.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.data.len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// Formats a PSNR value, rendering the identical-image sentinel as `inf`.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RadianceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RadianceImage::from_vec(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    fn corner_image() -> RadianceImage {
        let mut img = RadianceImage::zeros(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                img.set(x, y, 1.0);
            }
        }
        img
    }

    #[test]
    fn l1_examples() {
        let a = random_image(5, 4, 1);
        assert_eq!(l1_loss(&a, &a).unwrap().0, 0.0);
        let p = RadianceImage::filled(3, 3, 0.5);
        let g = RadianceImage::filled(3, 3, 0.25);
        assert_eq!(l1_loss(&p, &g).unwrap().0, 0.25);
        assert!(l1_loss(&p, &RadianceImage::zeros(3, 2)).is_err());
    }

    #[test]
    fn ssim_self_and_inversion() {
        let a = random_image(20, 18, 2);
        let (s, g) = ssim_with_grad(&a, &a).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(g.data.iter().all(|v| v.abs() < 1e-12));
        assert!(d_ssim_loss(&a, &a).unwrap().0.abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bin = RadianceImage::from_vec(
            24,
            24,
            (0..576).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let inv = RadianceImage::from_vec(24, 24, bin.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&inv, &bin).unwrap() < 0.1);
    }

    #[test]
    fn ssim_handles_images_smaller_than_window() {
        let a = random_image(4, 3, 5);
        let b = random_image(4, 3, 6);
        let s = ssim(&a, &b).unwrap();
        assert!(s.is_finite() && s < 1.0);
    }

    #[test]
    fn harris_constant_and_edge() {
        let c = RadianceImage::filled(10, 10, 0.4);
        assert!(harris_response(&c, 0.04).data.iter().all(|&v| v == 0.0));
        let mut edge = RadianceImage::zeros(16, 16);
        for y in 0..16 {
            for x in 8..16 {
                edge.set(x, y, 1.0);
            }
        }
        let r = harris_response(&edge, 0.04);
        for y in 3..13 {
            for x in 6..10 {
                assert!(r.get(x, y) <= 0.0);
            }
            assert!(r.get(7, y) < 0.0);
        }
    }

    #[test]
    fn harris_peaks_near_corners_and_ignores_offsets() {
        let img = corner_image();
        let r = harris_response(&img, 0.04);
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
        for (i, &v) in r.data.iter().enumerate() {
            if v > best {
                best = v;
                arg = i;
            }
        }
        let (x, y) = (arg % 16, arg / 16);
        let near = |a: usize, c: usize| a.abs_diff(c) <= 1;
        assert!((near(x, 4) || near(x, 11)) && (near(y, 4) || near(y, 11)), "peak at {x},{y}");
        let shifted = RadianceImage::from_vec(16, 16, img.data.iter().map(|v| v + 0.3).collect()).unwrap();
        let rs = harris_response(&shifted, 0.04);
        for (a, b) in rs.data.iter().zip(&r.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn discontinuous_loss_decay() {
        let gt = corner_image();
        let pred = random_image(16, 16, 7);
        let w = LossWeights::default();
        let (l0, _) = discontinuous_loss(&pred, &gt, 0, &w).unwrap();
        let (lh, _) = discontinuous_loss(&pred, &gt, 2500, &w).unwrap();
        assert!(l0 > 0.0);
        assert_eq!(lh, 0.5 * l0);
        assert_eq!(discontinuous_loss(&pred, &gt, 5000, &w).unwrap().0, 0.0);
        assert_eq!(discontinuous_loss(&pred, &gt, 9000, &w).unwrap().0, 0.0);
        let flat = RadianceImage::filled(16, 16, 0.2);
        assert_eq!(discontinuous_loss(&pred, &flat, 0, &w).unwrap().0, 0.0);
        assert_eq!(discontinuous_loss(&gt, &gt, 0, &w).unwrap().0, 0.0);
    }

    #[test]
    fn total_loss_combination() {
        let w = LossWeights::default();
        assert!((combine(&w, 0.1, 0.2, 0.3) - 0.24).abs() < 1e-15);
        let gt = corner_image();
        for it in [0, 100, 7000] {
            let (b, g) = total_loss(&gt, &gt, it, &w, None).unwrap();
            assert_eq!(b.total, 0.0);
            assert!(g.data.iter().all(|v| v.abs() < 1e-12));
        }
        let off = LossWeights {
            lambda_dis: 0.0,
            ..w
        };
        assert_eq!(off.l1_weight(), 0.8);
        let pred = random_image(16, 16, 8);
        let (b, _) = total_loss(&pred, &gt, 0, &off, None).unwrap();
        assert_eq!(b.total, 0.2 * b.dssim + 0.8 * b.l1);
        assert_eq!(b.dis, 0.0);
        assert!(LossWeights { lambda_dis: 0.5, lambda_dssim: 0.5, ..w }.validate().is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(8, 8, 9);
        assert!(psnr(&a, &a).unwrap().is_infinite());
        assert_eq!(format_psnr(psnr(&a, &a).unwrap()), "inf");
        let base = RadianceImage::filled(8, 8, 0.3);
        let off = RadianceImage::filled(8, 8, 0.4);
        assert!((psnr(&off, &base).unwrap() - 20.0).abs() < 1e-6);
    }
}
