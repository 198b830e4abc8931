//! Direct-sum SSIM and PSNR references.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::losses::{psnr, ssim, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use thermalsplat::scene::RadianceImage;
use thermalsplat::Result;

use crate::Check;

/// SSIM averaged over every pixel, each window evaluated with a full 2D
/// Gaussian weight table, two-pass central moments and clamp-to-edge
/// sampling.
pub fn reference_ssim(a: &RadianceImage, b: &RadianceImage) -> f64 {
    let (w, h) = (a.width as isize, a.height as isize);
    let r = (SSIM_WINDOW / 2) as isize;
    let mut weights = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            let d2 = (dx * dx + dy * dy) as f64;
            weights.push(((dx, dy), (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()));
        }
    }
    let norm: f64 = weights.iter().map(|(_, v)| v).sum();
    let px = |img: &RadianceImage, x: isize, y: isize| {
        let v = img.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
        v.clamp(0.0, 1.0)
    };
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (mut mx, mut my) = (0.0, 0.0);
            for &((dx, dy), wt) in &weights {
                mx += wt / norm * px(a, x + dx, y + dy);
                my += wt / norm * px(b, x + dx, y + dy);
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for &((dx, dy), wt) in &weights {
                let (ea, eb) = (px(a, x + dx, y + dy) - mx, px(b, x + dx, y + dy) - my);
                vx += wt / norm * ea * ea;
                vy += wt / norm * eb * eb;
                cxy += wt / norm * ea * eb;
            }
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    total / (w * h) as f64
}

pub fn random_image(w: usize, h: usize, rng: &mut ChaCha8Rng) -> RadianceImage {
    RadianceImage {
        width: w,
        height: h,
        data: (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
    }
}

/// A random image and a correlated, noisy copy of it.
pub fn random_pair(w: usize, h: usize, rng: &mut ChaCha8Rng) -> (RadianceImage, RadianceImage) {
    let a = random_image(w, h, rng);
    let amount = rng.random_range(0.05..0.5);
    let b = RadianceImage {
        width: w,
        height: h,
        data: a
            .data
            .iter()
            .map(|v| (v + amount * rng.random_range(-1.0..1.0)).clamp(0.0, 1.0))
            .collect(),
    };
    (a, b)
}

pub const PSNR_TOLERANCE: f64 = 1e-6;
pub const SSIM_SELF_TOLERANCE: f64 = 1e-9;
pub const SSIM_REFERENCE_TOLERANCE: f64 = 1e-5;

pub fn criterion() -> Check {
    let run = || -> Result<Check> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base = RadianceImage {
            width: 40,
            height: 30,
            data: (0..1200).map(|_| rng.random_range(0.0..0.9)).collect(),
        };
        let shifted = RadianceImage {
            data: base.data.iter().map(|v| v + 0.1).collect(),
            ..base.clone()
        };
        let p = psnr(&shifted, &base)?;
        let psnr_ok = (p - 20.0).abs() <= PSNR_TOLERANCE;

        let mut self_err: f64 = 0.0;
        let mut ref_err: f64 = 0.0;
        for k in 0..10 {
            let (w, h) = (rng.random_range(12..40), rng.random_range(12..40));
            let (a, b) = random_pair(w, h, &mut rng);
            self_err = self_err.max((ssim(&a, &a)? - 1.0).abs());
            let (x, y) = if k % 2 == 0 { (a, b) } else { (b, a) };
            ref_err = ref_err.max((ssim(&x, &y)? - reference_ssim(&x, &y)).abs());
        }
        let self_ok = self_err <= SSIM_SELF_TOLERANCE;
        let ref_ok = ref_err <= SSIM_REFERENCE_TOLERANCE;
        Ok(Check::new(
            "metric sanity",
            psnr_ok && self_ok && ref_ok,
            format!(
                "psnr(+0.1) = {p:.9} dB (|d| <= {PSNR_TOLERANCE:e}); ssim self max |1-s| {self_err:.1e} <= {SSIM_SELF_TOLERANCE:e}; ssim vs reference max {ref_err:.1e} <= {SSIM_REFERENCE_TOLERANCE:e} on 10 pairs"
            ),
        ))
    };
    Check::from_result("metric sanity", run())
}
