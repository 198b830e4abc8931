//! Real spherical harmonics up to degree 3, in the sign convention used by
//! Gaussian-splatting renderers.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const MAX_SH_DEGREE: usize = 3;
pub const SH_COEFFS: usize = 16;

/// Offset added to the SH sum so that zero coefficients map to mid-gray.
pub const SH_DC_OFFSET: f64 = 0.5;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values for a unit direction. Entries above `degree` are zero.
pub fn basis(dir: &Vector3<f64>, degree: usize) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; SH_COEFFS];
    b[0] = SH_C0;
    if degree >= 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if degree >= 2 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if degree >= 3 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Partial derivatives of each basis polynomial with respect to the
/// direction components, treated as independent variables.
pub fn basis_grad(dir: &Vector3<f64>, degree: usize) -> [[f64; 3]; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [[0.0; 3]; SH_COEFFS];
    if degree >= 1 {
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let c = SH_C2;
        g[4] = [c[0] * y, c[0] * x, 0.0];
        g[5] = [0.0, c[1] * z, c[1] * y];
        g[6] = [-2.0 * c[2] * x, -2.0 * c[2] * y, 4.0 * c[2] * z];
        g[7] = [c[3] * z, 0.0, c[3] * x];
        g[8] = [2.0 * c[4] * x, -2.0 * c[4] * y, 0.0];
        if degree >= 3 {
            let c = SH_C3;
            let (xx, yy, zz) = (x * x, y * y, z * z);
            g[9] = [c[0] * 6.0 * x * y, c[0] * (3.0 * xx - 3.0 * yy), 0.0];
            g[10] = [c[1] * y * z, c[1] * x * z, c[1] * x * y];
            g[11] = [
                c[2] * (-2.0 * x * y),
                c[2] * (4.0 * zz - xx - 3.0 * yy),
                c[2] * 8.0 * y * z,
            ];
            g[12] = [
                c[3] * (-6.0 * x * z),
                c[3] * (-6.0 * y * z),
                c[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            g[13] = [
                c[4] * (4.0 * zz - 3.0 * xx - yy),
                c[4] * (-2.0 * x * y),
                c[4] * 8.0 * x * z,
            ];
            g[14] = [c[5] * 2.0 * x * z, -c[5] * 2.0 * y * z, c[5] * (xx - yy)];
            g[15] = [c[6] * (3.0 * xx - 3.0 * yy), c[6] * (-6.0 * x * y), 0.0];
        }
    }
    g
}

/// SH radiance `0.5 + sum_k c_k Y_k(dir)` without argument validation.
#[inline]
pub fn eval_unchecked(coeffs: &[f64], dir: &Vector3<f64>, degree: usize) -> f64 {
    let b = basis(dir, degree);
    let n = num_coeffs(degree);
    SH_DC_OFFSET + coeffs[..n].iter().zip(&b[..n]).map(|(c, y)| c * y).sum::<f64>()
}

/// Evaluates the SH radiance for a unit view direction.
///
/// The result is not clamped; consumers clamp to non-negative radiance.
pub fn eval_sh(coeffs: &[f64], dir: &Vector3<f64>, degree: usize) -> Result<f64> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "SH degree {degree} outside [0, {MAX_SH_DEGREE}]"
        )));
    }
    if coeffs.len() < num_coeffs(degree) {
        return Err(Error::InvalidArgument(format!(
            "degree {degree} needs {} SH coefficients, got {}",
            num_coeffs(degree),
            coeffs.len()
        )));
    }
    let norm = dir.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "view direction is not unit length (|d| = {norm})"
        )));
    }
    Ok(eval_unchecked(coeffs, dir, degree))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dir(theta: f64, phi: f64) -> Vector3<f64> {
        Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
    }

    #[test]
    fn dc_only() {
        let d = dir(0.4, 1.3);
        assert_eq!(eval_sh(&[0.0; 16], &d, 0).unwrap(), 0.5);
        let mut c = [0.0; 16];
        c[0] = 1.0;
        assert_abs_diff_eq!(eval_sh(&c, &d, 0).unwrap(), 0.5 + 0.282_094_79, epsilon = 1e-8);
    }

    #[test]
    fn degree_one_is_odd() {
        let d = dir(1.1, -0.7);
        let c = [0.3, 0.5, -0.2, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let plus = eval_sh(&c, &d, 1).unwrap() - eval_sh(&c, &d, 0).unwrap();
        let minus = eval_sh(&c, &(-d), 1).unwrap() - eval_sh(&c, &(-d), 0).unwrap();
        assert_eq!(eval_sh(&c, &d, 0).unwrap(), eval_sh(&c, &(-d), 0).unwrap());
        assert_abs_diff_eq!(plus, -minus, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let d = dir(0.2, 0.2);
        assert!(eval_sh(&[0.0; 16], &d, 4).is_err());
        assert!(eval_sh(&[0.0; 3], &d, 1).is_err());
        assert!(eval_sh(&[0.0; 16], &(d * 1.01), 1).is_err());
        assert!(eval_sh(&[0.0; 4], &d, 1).is_ok());
    }

    #[test]
    fn basis_grad_matches_finite_differences() {
        let d = Vector3::new(0.3, -0.5, 0.8);
        let g = basis_grad(&d, 3);
        let h = 1e-6;
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += h;
            m[axis] -= h;
            let (bp, bm) = (basis(&p, 3), basis(&m, 3));
            for k in 0..SH_COEFFS {
                let fd = (bp[k] - bm[k]) / (2.0 * h);
                assert_abs_diff_eq!(g[k][axis], fd, epsilon = 1e-8);
            }
        }
    }

    proptest! {
        #[test]
        fn higher_degree_with_zero_tail_matches_lower(
            theta in 0.0f64..3.14, phi in -3.14f64..3.14,
            c in prop::array::uniform16(-1.0f64..1.0),
            low in 0usize..3,
        ) {
            let d = dir(theta, phi);
            let mut coeffs = c;
            for v in coeffs.iter_mut().skip(num_coeffs(low)) { *v = 0.0; }
            for high in low..=3 {
                let a = eval_sh(&coeffs, &d, high).unwrap();
                let b = eval_sh(&coeffs, &d, low).unwrap();
                prop_assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
