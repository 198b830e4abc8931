//! Thermal conduction module: fuses the rendered image with its Laplacian
//! through a three-layer convolutional block and adds the result back
//! residually.
//!
//! `refined = u + conv3(relu(conv2(relu(conv1([u, lap(u)])))))`
//!
//! All convolutions are 3x3, stride 1, with replicate padding. The final
//! layer starts at zero so the module is the identity before training.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scene::RadianceImage;
use crate::stencil::{laplacian, laplacian_adjoint, Boundary};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Discrete 5-point Laplacian with replicate boundary handling.
pub fn laplacian_features(image: &RadianceImage) -> RadianceImage {
    RadianceImage {
        width: image.width,
        height: image.height,
        data: laplacian(&image.data, image.width, image.height, Boundary::Insulated),
    }
}

/// 3x3 convolution; weights indexed `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            weight: vec![0.0; out_ch * in_ch * TAPS],
            bias: vec![0.0; out_ch],
        }
    }

    fn uniform<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        let bound = 1.0 / ((in_ch * TAPS) as f64).sqrt();
        let mut c = Self::zeros(in_ch, out_ch);
        for w in c.weight.iter_mut().chain(c.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        c
    }

    #[inline]
    fn w(&self, o: usize, i: usize, tap: usize) -> f64 {
        self.weight[(o * self.in_ch + i) * TAPS + tap]
    }

    /// `input` holds `in_ch` planes of `width * height` values.
    pub fn forward(&self, input: &[f64], width: usize, height: usize) -> Vec<f64> {
        let plane = width * height;
        assert_eq!(input.len(), self.in_ch * plane);
        let mut out = vec![0.0; self.out_ch * plane];
        out.par_chunks_mut(width).enumerate().for_each(|(row, dst)| {
            let (o, y) = (row / height, row % height);
            for (x, v) in dst.iter_mut().enumerate() {
                let mut acc = self.bias[o];
                for i in 0..self.in_ch {
                    let src = &input[i * plane..(i + 1) * plane];
                    for ky in 0..KERNEL {
                        let sy = (y as isize + ky as isize - 1).clamp(0, height as isize - 1) as usize;
                        for kx in 0..KERNEL {
                            let sx = (x as isize + kx as isize - 1).clamp(0, width as isize - 1) as usize;
                            acc += self.w(o, i, ky * KERNEL + kx) * src[sy * width + sx];
                        }
                    }
                }
                *v = acc;
            }
        });
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to `input`.
    pub fn backward(
        &self,
        input: &[f64],
        d_out: &[f64],
        width: usize,
        height: usize,
        grad: &mut Conv2d,
    ) -> Vec<f64> {
        let plane = width * height;
        let mut d_in = vec![0.0; self.in_ch * plane];
        for o in 0..self.out_ch {
            let dz = &d_out[o * plane..(o + 1) * plane];
            grad.bias[o] += dz.iter().sum::<f64>();
            for y in 0..height {
                for x in 0..width {
                    let g = dz[y * width + x];
                    if g == 0.0 {
                        continue;
                    }
                    for i in 0..self.in_ch {
                        for ky in 0..KERNEL {
                            let sy = (y as isize + ky as isize - 1).clamp(0, height as isize - 1) as usize;
                            for kx in 0..KERNEL {
                                let sx = (x as isize + kx as isize - 1).clamp(0, width as isize - 1) as usize;
                                let tap = ky * KERNEL + kx;
                                let src = i * plane + sy * width + sx;
                                grad.weight[(o * self.in_ch + i) * TAPS + tap] += g * input[src];
                                d_in[src] += g * self.w(o, i, tap);
                            }
                        }
                    }
                }
            }
        }
        d_in
    }
}

/// Learnable parameters of the conduction module.
#[derive(Debug, Clone, PartialEq)]
pub struct TcmNetwork {
    /// Image channel count `n`; thermal renders have one channel.
    pub channels: usize,
    pub layers: [Conv2d; 3],
}

impl TcmNetwork {
    /// Random first two layers, zero final layer.
    pub fn new<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Result<Self> {
        if channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "conduction module supports single-channel images, got {channels}"
            )));
        }
        let n = channels;
        Ok(Self {
            channels,
            layers: [
                Conv2d::uniform(2 * n, n, rng),
                Conv2d::uniform(n, n, rng),
                Conv2d::zeros(n, n),
            ],
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            channels: self.channels,
            layers: self.layers.each_ref().map(|c| Conv2d::zeros(c.in_ch, c.out_ch)),
        }
    }

    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.channels;
        let dims = [(2 * n, n), (n, n), (n, n)];
        for (i, (c, (ci, co))) in self.layers.iter().zip(dims).enumerate() {
            if c.in_ch != ci || c.out_ch != co || c.weight.len() != ci * co * TAPS || c.bias.len() != co {
                return Err(Error::ShapeMismatch(format!("conduction layer {i} has inconsistent shape")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, image: &RadianceImage) -> (RadianceImage, TcmCache) {
        let (w, h) = (image.width, image.height);
        let lap = laplacian_features(image);
        let mut x0 = image.data.clone();
        x0.extend_from_slice(&lap.data);
        let z1 = self.layers[0].forward(&x0, w, h);
        let a1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
        let z2 = self.layers[1].forward(&a1, w, h);
        let a2: Vec<f64> = z2.iter().map(|v| v.max(0.0)).collect();
        let z3 = self.layers[2].forward(&a2, w, h);
        let data = image.data.iter().zip(&z3).map(|(u, r)| u + r).collect();
        (
            RadianceImage {
                width: w,
                height: h,
                data,
            },
            TcmCache {
                width: w,
                height: h,
                x0,
                a1,
                a2,
            },
        )
    }

    /// Returns parameter gradients and the gradient with respect to the
    /// input image.
    pub fn backward(&self, cache: &TcmCache, d_refined: &RadianceImage) -> Result<(TcmNetwork, RadianceImage)> {
        let (w, h) = (cache.width, cache.height);
        if d_refined.width != w || d_refined.height != h {
            return Err(Error::ShapeMismatch(format!(
                "conduction gradient {}x{} does not match cache {}x{}",
                d_refined.width, d_refined.height, w, h
            )));
        }
        let mut grads = self.zeros_like();
        let [g0, g1, g2] = &mut grads.layers;
        let mut d_a2 = self.layers[2].backward(&cache.a2, &d_refined.data, w, h, g2);
        mask_relu(&mut d_a2, &cache.a2);
        let mut d_a1 = self.layers[1].backward(&cache.a1, &d_a2, w, h, g1);
        mask_relu(&mut d_a1, &cache.a1);
        let d_x0 = self.layers[0].backward(&cache.x0, &d_a1, w, h, g0);
        let plane = w * h;
        let d_lap = laplacian_adjoint(&d_x0[plane..], w, h, Boundary::Insulated);
        let data = (0..plane)
            .map(|p| d_refined.data[p] + d_x0[p] + d_lap[p])
            .collect();
        Ok((
            grads,
            RadianceImage {
                width: w,
                height: h,
                data,
            },
        ))
    }
}

fn mask_relu(d: &mut [f64], activation: &[f64]) {
    for (g, a) in d.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Intermediate feature maps of one forward call.
#[derive(Debug, Clone)]
pub struct TcmCache {
    width: usize,
    height: usize,
    x0: Vec<f64>,
    a1: Vec<f64>,
    a2: Vec<f64>,
}

impl TcmCache {
    pub fn activation_pattern(&self, hasher: &mut impl std::hash::Hasher) {
        for v in self.a1.iter().chain(&self.a2) {
            hasher.write_u8((*v > 0.0) as u8);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RadianceImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RadianceImage::from_vec(w, h, (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn laplacian_features_examples() {
        let c = RadianceImage::filled(6, 5, 0.3);
        assert!(laplacian_features(&c).data.iter().all(|&v| v == 0.0));
        let mut d = RadianceImage::zeros(5, 5);
        d.set(2, 2, 1.0);
        let l = laplacian_features(&d);
        assert_eq!(l.get(2, 2), -4.0);
        assert_eq!((l.get(1, 2), l.get(3, 2), l.get(2, 1), l.get(2, 3)), (1.0, 1.0, 1.0, 1.0));
    }

    #[test]
    fn identity_at_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = TcmNetwork::new(1, &mut rng).unwrap();
        let img = random_image(9, 7, 1);
        let (out, cache) = net.forward(&img);
        assert_eq!(out, img);
        let g = random_image(9, 7, 2);
        let (grads, d_img) = net.backward(&cache, &g).unwrap();
        assert_eq!(d_img, g);
        // only the final layer sees a gradient at init
        assert!(grads.layers[0].weight.iter().all(|&v| v == 0.0));
        assert!(grads.layers[2].bias[0] != 0.0);
    }

    #[test]
    fn deterministic_and_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = TcmNetwork::new(1, &mut rng).unwrap();
        net.layers[2] = Conv2d::uniform(1, 1, &mut rng);
        let img = random_image(8, 8, 3);
        let (a, cache) = net.forward(&img);
        let (b, _) = net.forward(&img);
        assert_eq!(a, b);
        let (grads, d_img) = net.backward(&cache, &RadianceImage::zeros(8, 8)).unwrap();
        assert!(d_img.data.iter().all(|&v| v == 0.0));
        assert!(grads.buffers().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(net.backward(&cache, &RadianceImage::zeros(4, 8)).is_err());
    }

    #[test]
    fn interior_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut net = TcmNetwork::new(1, &mut rng).unwrap();
        net.layers[2] = Conv2d::uniform(1, 1, &mut rng);
        let (w, h) = (16, 12);
        let img = random_image(w, h, 4);
        let mut shifted = RadianceImage::zeros(w, h);
        for y in 0..h {
            for x in 0..w {
                shifted.set(x, y, img.get_clamped(x as isize - 1, y as isize));
            }
        }
        let (a, _) = net.forward(&img);
        let (b, _) = net.forward(&shifted);
        // receptive field is 4 px (laplacian + three 3x3 convs); stay clear of the border
        for y in 5..h - 5 {
            for x in 6..w - 5 {
                assert!((b.get(x, y) - a.get(x - 1, y)).abs() < 1e-12);
            }
        }
    }
}
