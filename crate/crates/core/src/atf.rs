//! Atmospheric transmission field: an MLP over encoded Gaussian position and
//! capture time that predicts per-Gaussian attenuation parameters, which
//! rescale the Gaussian's SH coefficients by `exp((mu_abs + mu_sca) * d)`.
//!
//! The exponent carries a positive sign. Learned coefficients are unsigned,
//! so the field can still express attenuation (negative sum) as well as
//! gain.
//!
//! Positions enter the network detached: no gradient flows from the
//! attenuation back into Gaussian geometry.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::sh::SH_COEFFS;

pub const DEFAULT_DEPTH: usize = 8;
pub const DEFAULT_WIDTH: usize = 256;
pub const DEFAULT_FREQUENCIES: usize = 10;
pub const OUTPUT_DIM: usize = 3;

/// Rows per work unit. Fixed so that reductions do not depend on the number
/// of worker threads.
const CHUNK_ROWS: usize = 64;

/// `(sin(2^k pi p), cos(2^k pi p))` for `k = 0..frequencies`, per component,
/// concatenated component-major.
pub fn positional_encoding(p: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * frequencies * p.len());
    encode_into(p, frequencies, &mut out);
    out
}

fn encode_into(p: &[f64], frequencies: usize, out: &mut Vec<f64>) {
    for &v in p {
        let mut freq = std::f64::consts::PI;
        for _ in 0..frequencies {
            let (s, c) = (freq * v).sin_cos();
            out.push(s);
            out.push(c);
            freq *= 2.0;
        }
    }
}

/// Isotropic normalization of world positions into the cube `[-1, 1]^3`
/// spanned by the scene's bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub center: [f64; 3],
    pub half_extent: f64,
}

impl SceneBox {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a [f64; 3]>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Self::unit();
        }
        let center = [0, 1, 2].map(|k| 0.5 * (lo[k] + hi[k]));
        let half = (0..3).map(|k| 0.5 * (hi[k] - lo[k])).fold(0.0, f64::max);
        Self {
            center,
            half_extent: if half > 0.0 { half } else { 1.0 },
        }
    }

    pub fn unit() -> Self {
        Self {
            center: [0.0; 3],
            half_extent: 1.0,
        }
    }

    pub fn normalize(&self, p: &[f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|k| (p[k] - self.center[k]) / self.half_extent)
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored `in_dim x out_dim`
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` initialization for weights and bias.
    fn uniform<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let mut l = Self::zeros(in_dim, out_dim);
        for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        l
    }
}

/// Attenuation of one Gaussian at one capture time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuationParams {
    pub mu_abs: f64,
    pub mu_sca: f64,
    pub distance: f64,
}

impl AttenuationParams {
    pub const IDENTITY: Self = Self {
        mu_abs: 0.0,
        mu_sca: 0.0,
        distance: 1.0,
    };

    pub fn factor(&self) -> f64 {
        ((self.mu_abs + self.mu_sca) * self.distance).exp()
    }
}

/// Scales every SH coefficient by the attenuation factor.
pub fn attenuate_sh(sh0: &[f64; SH_COEFFS], params: &AttenuationParams) -> Result<[f64; SH_COEFFS]> {
    let f = params.factor();
    if !f.is_finite() {
        return Err(Error::Numerical(format!(
            "attenuation factor overflow (mu_abs {}, mu_sca {}, d {})",
            params.mu_abs, params.mu_sca, params.distance
        )));
    }
    Ok(sh0.map(|c| f * c))
}

/// The attenuation MLP: `depth` ReLU hidden layers of `width` units and a
/// linear 3-unit head emitting `(mu_abs, mu_sca, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AtfNetwork {
    pub frequencies: usize,
    /// Hidden layers followed by the output head.
    pub layers: Vec<Linear>,
}

pub fn input_dim(frequencies: usize) -> usize {
    2 * frequencies * 3 + 2 * frequencies
}

impl AtfNetwork {
    /// Random hidden layers with a zero-weight head whose bias maps every
    /// input to `(0, 0, 1)`.
    pub fn new<R: Rng + ?Sized>(depth: usize, width: usize, frequencies: usize, rng: &mut R) -> Result<Self> {
        if depth == 0 || width == 0 || frequencies == 0 {
            return Err(Error::InvalidArgument(format!(
                "ATF needs positive depth/width/frequencies, got {depth}/{width}/{frequencies}"
            )));
        }
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = input_dim(frequencies);
        for _ in 0..depth {
            layers.push(Linear::uniform(fan_in, width, rng));
            fan_in = width;
        }
        let mut head = Linear::zeros(width, OUTPUT_DIM);
        head.bias = vec![0.0, 0.0, 1.0];
        layers.push(head);
        Ok(Self { frequencies, layers })
    }

    /// Same architecture with every parameter zero; used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            frequencies: self.frequencies,
            layers: self.layers.iter().map(|l| Linear::zeros(l.in_dim, l.out_dim)).collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn width(&self) -> usize {
        self.layers[0].out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameter buffers in a fixed order.
    pub fn buffers(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut expect = input_dim(self.frequencies);
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != expect || l.weight.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(Error::ShapeMismatch(format!("ATF layer {i} has inconsistent shape")));
            }
            expect = l.out_dim;
        }
        if expect != OUTPUT_DIM {
            return Err(Error::ShapeMismatch(format!("ATF head emits {expect} values, expected 3")));
        }
        Ok(())
    }

    /// Encodes one normalized position and time.
    pub fn encode(&self, position_norm: &[f64; 3], time_norm: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(input_dim(self.frequencies));
        encode_into(position_norm, self.frequencies, &mut out);
        encode_into(&[time_norm], self.frequencies, &mut out);
        out
    }

    /// Batched evaluation over normalized positions at one capture time.
    pub fn forward(&self, positions_norm: &[[f64; 3]], time_norm: f64) -> AtfCache {
        let in_dim = input_dim(self.frequencies);
        let chunks: Vec<ChunkCache> = positions_norm
            .par_chunks(CHUNK_ROWS)
            .map(|chunk| {
                let mut x = Vec::with_capacity(chunk.len() * in_dim);
                for p in chunk {
                    encode_into(p, self.frequencies, &mut x);
                    encode_into(&[time_norm], self.frequencies, &mut x);
                }
                self.forward_chunk(chunk.len(), x)
            })
            .collect();
        let params = chunks
            .iter()
            .flat_map(|c| {
                c.activations.last().unwrap().chunks_exact(OUTPUT_DIM).map(|o| AttenuationParams {
                    mu_abs: o[0],
                    mu_sca: o[1],
                    distance: o[2],
                })
            })
            .collect();
        AtfCache { chunks, params }
    }

    /// Evaluates a single input; identical to row `i` of a batched call.
    pub fn forward_one(&self, position_norm: &[f64; 3], time_norm: f64) -> AttenuationParams {
        self.forward(std::slice::from_ref(position_norm), time_norm).params[0]
    }

    fn forward_chunk(&self, rows: usize, input: Vec<f64>) -> ChunkCache {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input);
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let x = activations.last().unwrap();
            let mut z = vec![0.0; rows * layer.out_dim];
            gemm(rows, layer.in_dim, layer.out_dim, x, false, &layer.weight, false, &mut z, false);
            for row in z.chunks_exact_mut(layer.out_dim) {
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
                if li != last {
                    for v in row.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
            }
            activations.push(z);
        }
        ChunkCache { rows, activations }
    }

    /// Reverse pass for upstream gradients on `(mu_abs, mu_sca, d)`.
    pub fn backward(&self, cache: &AtfCache, d_params: &[[f64; 3]]) -> Result<AtfNetwork> {
        if d_params.len() != cache.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} attenuation gradients for a cache of {} rows",
                d_params.len(),
                cache.params.len()
            )));
        }
        if cache.chunks.first().is_some_and(|c| c.activations.len() != self.layers.len() + 1) {
            return Err(Error::InvalidArgument("ATF cache does not match network depth".into()));
        }
        let mut offsets = Vec::with_capacity(cache.chunks.len());
        let mut off = 0;
        for c in &cache.chunks {
            offsets.push(off);
            off += c.rows;
        }
        let partials: Vec<AtfNetwork> = cache
            .chunks
            .par_iter()
            .zip(offsets.par_iter())
            .map(|(chunk, &start)| {
                let mut grads = self.zeros_like();
                let rows = chunk.rows;
                let mut d_out: Vec<f64> =
                    d_params[start..start + rows].iter().flat_map(|d| d.iter().copied()).collect();
                for li in (0..self.layers.len()).rev() {
                    let layer = &self.layers[li];
                    let x = &chunk.activations[li];
                    let g = &mut grads.layers[li];
                    gemm(layer.in_dim, rows, layer.out_dim, x, true, &d_out, false, &mut g.weight, true);
                    for row in d_out.chunks_exact(layer.out_dim) {
                        for (b, d) in g.bias.iter_mut().zip(row) {
                            *b += d;
                        }
                    }
                    if li == 0 {
                        break;
                    }
                    let mut d_x = vec![0.0; rows * layer.in_dim];
                    gemm(rows, layer.out_dim, layer.in_dim, &d_out, false, &layer.weight, true, &mut d_x, false);
                    // ReLU of the previous layer
                    for (d, a) in d_x.iter_mut().zip(x) {
                        if *a <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    d_out = d_x;
                }
                grads
            })
            .collect();
        let mut total = self.zeros_like();
        for p in &partials {
            for (dst, src) in total.buffers_mut().into_iter().zip(p.buffers()) {
                for (a, b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
        Ok(total)
    }
}

struct ChunkCache {
    rows: usize,
    /// Input encoding followed by each layer's (post-activation) output.
    activations: Vec<Vec<f64>>,
}

/// Forward activations of one batched ATF evaluation.
pub struct AtfCache {
    chunks: Vec<ChunkCache>,
    pub params: Vec<AttenuationParams>,
}

impl AtfCache {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Hash of every hidden unit's on/off state, used to detect ReLU kinks
    /// between nearby evaluations.
    pub fn activation_pattern(&self, hasher: &mut impl std::hash::Hasher) {
        for c in &self.chunks {
            let n = c.activations.len();
            for a in &c.activations[1..n - 1] {
                for v in a {
                    hasher.write_u8((*v > 0.0) as u8);
                }
            }
        }
    }
}

/// Gradient of the attenuated SH with respect to the network and the
/// un-attenuated coefficients, given upstream gradients on the attenuated
/// coefficients.
pub fn atf_backward(
    net: &AtfNetwork,
    cache: &AtfCache,
    sh0: &[[f64; SH_COEFFS]],
    d_sh: &[[f64; SH_COEFFS]],
) -> Result<(AtfNetwork, Vec<[f64; SH_COEFFS]>)> {
    if sh0.len() != cache.len() || d_sh.len() != cache.len() {
        return Err(Error::ShapeMismatch(format!(
            "ATF backward got {} / {} SH rows for {} cached rows",
            sh0.len(),
            d_sh.len(),
            cache.len()
        )));
    }
    let mut d_params = Vec::with_capacity(cache.len());
    let mut d_sh0 = Vec::with_capacity(cache.len());
    for ((p, c0), g) in cache.params.iter().zip(sh0).zip(d_sh) {
        let f = p.factor();
        let d_factor: f64 = c0.iter().zip(g).map(|(a, b)| a * b).sum();
        let d_exponent = d_factor * f;
        d_params.push([
            d_exponent * p.distance,
            d_exponent * p.distance,
            d_exponent * (p.mu_abs + p.mu_sca),
        ]);
        d_sh0.push(g.map(|v| v * f));
    }
    Ok((net.backward(cache, &d_params)?, d_sh0))
}

/// Row-major `C = op(A) op(B)` (or `C += ...` when `accumulate`), where
/// `op(A)` is `m x k` and `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index touched by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_values_and_length() {
        let e = positional_encoding(&[0.0], 10);
        assert_eq!(e.len(), 20);
        for k in 0..10 {
            assert_eq!((e[2 * k], e[2 * k + 1]), (0.0, 1.0));
        }
        let e = positional_encoding(&[0.5], 2);
        let expect = [1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(positional_encoding(&[0.1, 0.2, 0.3], 10).len(), 60);
        assert_eq!(input_dim(10), 80);
    }

    #[test]
    fn initial_output_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = AtfNetwork::new(DEFAULT_DEPTH, DEFAULT_WIDTH, DEFAULT_FREQUENCIES, &mut rng).unwrap();
        assert_eq!(net.layers[0].in_dim, 80);
        assert_eq!(net.layers.len(), 9);
        let pts: Vec<[f64; 3]> = (0..70).map(|i| [i as f64 * 0.01, -0.3, 0.7]).collect();
        let cache = net.forward(&pts, 0.4);
        for p in &cache.params {
            assert_eq!(*p, AttenuationParams::IDENTITY);
            assert_eq!(p.factor(), 1.0);
        }
    }

    #[test]
    fn batch_rows_equal_single_evaluations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = AtfNetwork::new(3, 32, 4, &mut rng).unwrap();
        for w in net.layers.last_mut().unwrap().weight.iter_mut() {
            *w = rng.random_range(-0.1..0.1);
        }
        let pts: Vec<[f64; 3]> = (0..150)
            .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let batch = net.forward(&pts, 0.25);
        for (i, p) in pts.iter().enumerate() {
            assert_eq!(batch.params[i], net.forward_one(p, 0.25), "row {i}");
            assert_eq!(net.forward_one(p, 0.25), net.forward_one(p, 0.25));
        }
    }

    #[test]
    fn attenuation_rules() {
        let mut sh = [0.0; SH_COEFFS];
        sh[0] = 2.0;
        sh[5] = -0.7;
        assert_eq!(attenuate_sh(&sh, &AttenuationParams::IDENTITY).unwrap(), sh);
        let half = AttenuationParams {
            mu_abs: 0.5f64.ln() * 0.25,
            mu_sca: 0.5f64.ln() * 0.75,
            distance: 1.0,
        };
        assert!((attenuate_sh(&sh, &half).unwrap()[0] - 1.0).abs() < 1e-15);
        let zero_d = AttenuationParams {
            mu_abs: 3.0,
            mu_sca: -8.0,
            distance: 0.0,
        };
        assert_eq!(attenuate_sh(&sh, &zero_d).unwrap(), sh);
        let overflow = AttenuationParams {
            mu_abs: 1e3,
            mu_sca: 0.0,
            distance: 1.0,
        };
        assert!(attenuate_sh(&sh, &overflow).is_err());
    }

    #[test]
    fn uniform_scaling_commutes() {
        let p = AttenuationParams {
            mu_abs: -0.3,
            mu_sca: 0.1,
            distance: 1.7,
        };
        let sh: [f64; SH_COEFFS] = std::array::from_fn(|i| i as f64 * 0.1 - 0.4);
        let a = attenuate_sh(&sh.map(|v| 3.0 * v), &p).unwrap();
        let b = attenuate_sh(&sh, &p).unwrap().map(|v| 3.0 * v);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_and_identity_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = AtfNetwork::new(2, 16, 3, &mut rng).unwrap();
        let cache = net.forward(&[[0.1, 0.2, 0.3]], 0.5);
        let mut sh0 = [[0.0; SH_COEFFS]; 1];
        sh0[0][0] = 0.8;
        let (g, d_sh0) = atf_backward(&net, &cache, &sh0, &[[0.0; SH_COEFFS]]).unwrap();
        assert!(g.buffers().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(d_sh0[0].iter().all(|&v| v == 0.0));

        let mut up = [[0.0; SH_COEFFS]; 1];
        up[0][0] = 1.0;
        let (_, d_sh0) = atf_backward(&net, &cache, &sh0, &up).unwrap();
        assert_eq!(d_sh0[0][0], 1.0);
        assert!(atf_backward(&net, &cache, &sh0, &[]).is_err());
    }
}
