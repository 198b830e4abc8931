//! Loss-combination contract and a direct structure-tensor Harris oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::losses::{combine, discontinuous_loss, harris_response, total_loss, LossWeights};
use thermalsplat::scene::RadianceImage;
use thermalsplat::Result;

use crate::metrics::{random_image, random_pair};
use crate::Check;

/// Harris response computed pixel by pixel: Sobel gradients from clamped
/// 3x3 neighbourhoods, structure tensor summed with a sigma-1 Gaussian
/// over clamped neighbours.
pub fn reference_harris(img: &RadianceImage, k: f64) -> Vec<f64> {
    let (w, h) = (img.width as isize, img.height as isize);
    let at = |x: isize, y: isize| img.data[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];
    let sobel_x = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let grad = |x: isize, y: isize| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for j in 0..3 {
            for i in 0..3 {
                let v = at(x + i as isize - 1, y + j as isize - 1);
                gx += sobel_x[j][i] * v;
                gy += sobel_x[i][j] * v;
            }
        }
        (gx, gy)
    };
    let mut wsum = 0.0;
    let mut win = [[0.0; 3]; 3];
    for (j, row) in win.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let d2 = ((i as f64 - 1.0).powi(2) + (j as f64 - 1.0).powi(2)) / 2.0;
            *v = (-d2).exp();
            wsum += *v;
        }
    }
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (j, row) in win.iter().enumerate() {
                for (i, wt) in row.iter().enumerate() {
                    let xx = (x + i as isize - 1).clamp(0, w - 1);
                    let yy = (y + j as isize - 1).clamp(0, h - 1);
                    let (gx, gy) = grad(xx, yy);
                    a += wt / wsum * gx * gx;
                    b += wt / wsum * gx * gy;
                    c += wt / wsum * gy * gy;
                }
            }
            out.push(a * c - b * b - k * (a + c) * (a + c));
        }
    }
    out
}

pub const HARRIS_TOLERANCE: f64 = 1e-6;

/// `(dis, dssim, l1)` with their combination worked out by hand for the
/// default weights.
pub const HAND_TRIPLES: [([f64; 3], f64); 6] = [
    ([1.0, 1.0, 1.0], 1.0),
    ([0.0, 0.0, 1.0], 0.6),
    ([1.0, 0.0, 0.0], 0.2),
    ([0.5, 0.5, 0.5], 0.5),
    ([2.0, 0.0, 0.5], 0.7),
    ([0.25, 0.75, 0.125], 0.275),
];

pub fn criterion() -> Check {
    let run = || -> Result<Check> {
        let weights = LossWeights::default();
        let mut notes = Vec::new();

        let triples_ok = HAND_TRIPLES
            .iter()
            .all(|([dis, dssim, l1], expect)| combine(&weights, *dis, *dssim, *l1) == *expect);
        notes.push(format!(
            "{} hand triples {}",
            HAND_TRIPLES.len(),
            if triples_ok { "exact" } else { "MISMATCH" }
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pred, gt) = random_pair(24, 20, &mut rng);
        let (parts, _) = total_loss(&pred, &gt, 100, &weights, None)?;
        let recombined = 0.2 * parts.dis + 0.2 * parts.dssim + 0.6 * parts.l1;
        let total_ok = parts.total == recombined;
        notes.push(format!("total on images {}", if total_ok { "exact" } else { "MISMATCH" }));

        let mut decay_ok = true;
        for it in [5000, 5001, 7000, 30000] {
            let (v, g) = discontinuous_loss(&pred, &gt, it, &weights)?;
            decay_ok &= v == 0.0 && g.data.iter().all(|x| *x == 0.0);
        }
        let (before, _) = discontinuous_loss(&pred, &gt, 4999, &weights)?;
        decay_ok &= before > 0.0;
        notes.push(format!("dis loss zero from 5000 {}", if decay_ok { "exact" } else { "VIOLATED" }));

        let mut harris_err: f64 = 0.0;
        for _ in 0..5 {
            let (w, h) = (rng.random_range(8..30), rng.random_range(8..30));
            let img = random_image(w, h, &mut rng);
            let fast = harris_response(&img, weights.k_harris);
            let slow = reference_harris(&img, weights.k_harris);
            for (a, b) in fast.data.iter().zip(&slow) {
                harris_err = harris_err.max((a - b).abs());
            }
        }
        let harris_ok = harris_err <= HARRIS_TOLERANCE;
        notes.push(format!("harris vs reference max-abs {harris_err:.1e} <= {HARRIS_TOLERANCE:e}"));

        Ok(Check::new(
            "loss contract",
            triples_ok && total_ok && decay_ok && harris_ok,
            notes.join("; "),
        ))
    };
    Check::from_result("loss contract", run())
}
