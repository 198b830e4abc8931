//! Five-point Laplacian on a regular grid.

use rayon::prelude::*;

/// Boundary rule for grid stencils.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    /// Wrap around in both axes.
    Periodic,
    /// Zero-flux Neumann boundary, realized as clamp-to-edge (replicate)
    /// sampling.
    Insulated,
}

#[inline]
fn neighbor(i: usize, delta: isize, n: usize, boundary: Boundary) -> usize {
    let j = i as isize + delta;
    match boundary {
        Boundary::Periodic => j.rem_euclid(n as isize) as usize,
        Boundary::Insulated => j.clamp(0, n as isize - 1) as usize,
    }
}

/// `u(x+1,y) + u(x-1,y) + u(x,y+1) + u(x,y-1) - 4 u(x,y)` (unit spacing).
pub fn laplacian(data: &[f64], width: usize, height: usize, boundary: Boundary) -> Vec<f64> {
    assert_eq!(data.len(), width * height);
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let up = neighbor(y, -1, height, boundary) * width;
        let down = neighbor(y, 1, height, boundary) * width;
        let here = y * width;
        for (x, o) in row.iter_mut().enumerate() {
            let l = neighbor(x, -1, width, boundary);
            let r = neighbor(x, 1, width, boundary);
            *o = data[here + r] + data[here + l] + data[down + x] + data[up + x]
                - 4.0 * data[here + x];
        }
    });
    out
}

/// Transpose of [`laplacian`], applied by scattering each output gradient
/// back along the stencil taps.
pub fn laplacian_adjoint(
    grad: &[f64],
    width: usize,
    height: usize,
    boundary: Boundary,
) -> Vec<f64> {
    assert_eq!(grad.len(), width * height);
    let mut out = vec![0.0; grad.len()];
    for y in 0..height {
        let up = neighbor(y, -1, height, boundary) * width;
        let down = neighbor(y, 1, height, boundary) * width;
        let here = y * width;
        for x in 0..width {
            let g = grad[here + x];
            let l = neighbor(x, -1, width, boundary);
            let r = neighbor(x, 1, width, boundary);
            out[here + r] += g;
            out[here + l] += g;
            out[down + x] += g;
            out[up + x] += g;
            out[here + x] -= 4.0 * g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_and_impulse() {
        let c = vec![0.7; 20];
        for b in [Boundary::Periodic, Boundary::Insulated] {
            assert!(laplacian(&c, 5, 4, b).iter().all(|&v| v == 0.0));
        }
        let mut u = vec![0.0; 25];
        u[12] = 1.0;
        let l = laplacian(&u, 5, 5, Boundary::Insulated);
        assert_eq!(l[12], -4.0);
        for i in [7, 11, 13, 17] {
            assert_eq!(l[i], 1.0);
        }
        assert_eq!(l.iter().filter(|&&v| v != 0.0).count(), 5);
    }

    #[test]
    fn linear_ramp_vanishes_in_interior() {
        let (w, h) = (7, 5);
        let u: Vec<f64> = (0..w * h).map(|i| (i % w) as f64).collect();
        let l = laplacian(&u, w, h, Boundary::Insulated);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                assert_eq!(l[y * w + x], 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn adjoint_identity_and_symmetry(
            u in prop::collection::vec(-1.0f64..1.0, 30),
            v in prop::collection::vec(-1.0f64..1.0, 30),
            periodic in any::<bool>(),
        ) {
            let b = if periodic { Boundary::Periodic } else { Boundary::Insulated };
            let lu = laplacian(&u, 6, 5, b);
            let ltv = laplacian_adjoint(&v, 6, 5, b);
            let lhs: f64 = lu.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs: f64 = u.iter().zip(&ltv).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() < 1e-12);
            // the operator is symmetric under both boundary rules
            let lv = laplacian(&v, 6, 5, b);
            for (a, b) in lv.iter().zip(&ltv) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
