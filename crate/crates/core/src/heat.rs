//! Explicit finite-difference solver for the 2D heat equation
//! `du/dt = alpha * lap(u)`.
//!
//! The forward-time centered-space update is stable for
//! `alpha * dt / dx^2 <= 1/4`; [`ConductionSpec`] refuses anything larger.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stencil::{laplacian, Boundary};

/// Largest stable diffusion number for the 2D five-point FTCS scheme.
pub const MAX_DIFFUSION_NUMBER: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureField {
    pub width: usize,
    pub height: usize,
    pub dx: f64,
    pub boundary: Boundary,
    pub data: Vec<f64>,
}

impl TemperatureField {
    pub fn new(width: usize, height: usize, dx: f64, boundary: Boundary, data: Vec<f64>) -> Result<Self> {
        if !(dx > 0.0 && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!("cell size must be positive, got {dx}")));
        }
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "field has {} values, expected {width}x{height}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite temperature".into()));
        }
        Ok(Self {
            width,
            height,
            dx,
            boundary,
            data,
        })
    }

    pub fn uniform(width: usize, height: usize, dx: f64, boundary: Boundary, value: f64) -> Result<Self> {
        Self::new(width, height, dx, boundary, vec![value; width * height])
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Diffusivity, time step and step count, validated against the FTCS
/// stability limit for one cell size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConductionSpec {
    pub alpha: f64,
    pub dt: f64,
    pub steps: usize,
    pub dx: f64,
}

impl ConductionSpec {
    pub fn new(alpha: f64, dt: f64, steps: usize, dx: f64) -> Result<Self> {
        if !(alpha >= 0.0 && dt >= 0.0 && dx > 0.0) || !(alpha.is_finite() && dt.is_finite() && dx.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid conduction parameters alpha={alpha} dt={dt} dx={dx}"
            )));
        }
        let r = alpha * dt / (dx * dx);
        if r > MAX_DIFFUSION_NUMBER {
            return Err(Error::InvalidArgument(format!(
                "unstable conduction step: alpha*dt/dx^2 = {r} exceeds {MAX_DIFFUSION_NUMBER}"
            )));
        }
        Ok(Self { alpha, dt, steps, dx })
    }

    /// Spec integrating to `time` in the fewest stable steps.
    pub fn for_duration(alpha: f64, time: f64, dx: f64) -> Result<Self> {
        if time <= 0.0 || alpha == 0.0 {
            return Self::new(alpha, 0.0, 0, dx);
        }
        let max_dt = MAX_DIFFUSION_NUMBER * dx * dx / alpha;
        let steps = (time / max_dt).ceil() as usize;
        Self::new(alpha, time / steps as f64, steps, dx)
    }

    pub fn diffusion_number(&self) -> f64 {
        self.alpha * self.dt / (self.dx * self.dx)
    }

    fn check_field(&self, field: &TemperatureField) -> Result<()> {
        if field.dx != self.dx {
            return Err(Error::InvalidArgument(format!(
                "conduction spec built for dx={} applied to field with dx={}",
                self.dx, field.dx
            )));
        }
        Ok(())
    }
}

/// One FTCS step: `u' = u + alpha*dt/dx^2 * lap(u)`.
pub fn heat_step(field: &TemperatureField, spec: &ConductionSpec) -> Result<TemperatureField> {
    spec.check_field(field)?;
    let mut out = field.clone();
    step_in_place(&mut out, spec.diffusion_number());
    Ok(out)
}

fn step_in_place(field: &mut TemperatureField, r: f64) {
    let lap = laplacian(&field.data, field.width, field.height, field.boundary);
    field
        .data
        .par_iter_mut()
        .zip(lap.par_iter())
        .for_each(|(u, l)| *u += r * l);
}

/// Applies `spec.steps` FTCS steps.
pub fn heat_simulate(field: &TemperatureField, spec: &ConductionSpec) -> Result<TemperatureField> {
    spec.check_field(field)?;
    let mut out = field.clone();
    let r = spec.diffusion_number();
    for _ in 0..spec.steps {
        step_in_place(&mut out, r);
    }
    Ok(out)
}

/// Heat flux across the face between cell `(x, y)` and its right neighbour
/// (`axis = 0`) or lower neighbour (`axis = 1`), following Fourier's law
/// with unit conductivity: `q = -(u_next - u_here) / dx`.
pub fn face_flux(field: &TemperatureField, x: usize, y: usize, axis: usize) -> f64 {
    let (w, h) = (field.width, field.height);
    let (nx, ny) = match (axis, field.boundary) {
        (0, Boundary::Periodic) => ((x + 1) % w, y),
        (0, Boundary::Insulated) => ((x + 1).min(w - 1), y),
        (_, Boundary::Periodic) => (x, (y + 1) % h),
        (_, Boundary::Insulated) => (x, (y + 1).min(h - 1)),
    };
    -(field.get(nx, ny) - field.get(x, y)) / field.dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stability_is_checked_at_construction() {
        assert!(ConductionSpec::new(1.0, 0.25, 1, 1.0).is_ok());
        assert!(ConductionSpec::new(1.0, 0.2501, 1, 1.0).is_err());
        let s = ConductionSpec::for_duration(2.0, 1.0, 0.1).unwrap();
        assert!(s.diffusion_number() <= MAX_DIFFUSION_NUMBER);
        assert!((s.dt * s.steps as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_field_is_fixed_point() {
        let f = TemperatureField::uniform(8, 6, 0.5, Boundary::Insulated, 3.5).unwrap();
        let spec = ConductionSpec::new(1.0, 0.0625, 10, 0.5).unwrap();
        assert_eq!(heat_simulate(&f, &spec).unwrap(), f);
    }

    #[test]
    fn hot_cell_spreads_to_neighbours() {
        let mut data = vec![0.0; 25];
        data[12] = 1.0;
        let f = TemperatureField::new(5, 5, 1.0, Boundary::Periodic, data).unwrap();
        let spec = ConductionSpec::new(1.0, 0.25, 1, 1.0).unwrap();
        let g = heat_step(&f, &spec).unwrap();
        assert_eq!(g.get(2, 2), 0.0);
        for (x, y) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(g.get(x, y), 0.25);
        }
    }

    #[test]
    fn zero_steps_returns_input() {
        let f = TemperatureField::new(3, 2, 1.0, Boundary::Periodic, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let spec = ConductionSpec::new(1.0, 0.1, 0, 1.0).unwrap();
        assert_eq!(heat_simulate(&f, &spec).unwrap(), f);
        let other = ConductionSpec::new(1.0, 0.1, 0, 2.0).unwrap();
        assert!(heat_simulate(&f, &other).is_err());
    }

    #[test]
    fn halves_equilibrate() {
        let (w, h) = (16, 16);
        let data = (0..w * h).map(|i| if i % w < w / 2 { 0.0 } else { 1.0 }).collect();
        let f = TemperatureField::new(w, h, 1.0, Boundary::Insulated, data).unwrap();
        let spec = ConductionSpec::new(1.0, 0.25, 2000, 1.0).unwrap();
        let g = heat_simulate(&f, &spec).unwrap();
        let dev = g.data.iter().map(|v| (v - 0.5).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-3, "max deviation {dev}");
    }

    #[test]
    fn step_equals_net_face_flux() {
        // energy balance: change of a cell = inflow - outflow over its faces
        let data: Vec<f64> = (0..42).map(|i| ((i * 37) % 11) as f64 / 11.0).collect();
        for b in [Boundary::Periodic, Boundary::Insulated] {
            let f = TemperatureField::new(7, 6, 0.5, b, data.clone()).unwrap();
            let spec = ConductionSpec::new(1.0, 0.05, 1, 0.5).unwrap();
            let g = heat_step(&f, &spec).unwrap();
            for y in 0..6 {
                for x in 0..7 {
                    let left = match (x, b) {
                        (0, Boundary::Insulated) => 0.0,
                        _ => face_flux(&f, (x + 6) % 7, y, 0),
                    };
                    let up = match (y, b) {
                        (0, Boundary::Insulated) => 0.0,
                        _ => face_flux(&f, x, (y + 5) % 6, 1),
                    };
                    let net_in = left - face_flux(&f, x, y, 0) + up - face_flux(&f, x, y, 1);
                    let expect = f.get(x, y) + spec.dt * spec.alpha * net_in / f.dx;
                    assert!((g.get(x, y) - expect).abs() < 1e-12);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn maximum_principle_and_conservation(
            data in prop::collection::vec(-2.0f64..5.0, 48),
            r in 0.0f64..=0.25,
            periodic in any::<bool>(),
        ) {
            let b = if periodic { Boundary::Periodic } else { Boundary::Insulated };
            let f = TemperatureField::new(8, 6, 1.0, b, data).unwrap();
            let spec = ConductionSpec::new(1.0, r, 1, 1.0).unwrap();
            let g = heat_step(&f, &spec).unwrap();
            let (lo, hi) = f.data.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            for &v in &g.data {
                prop_assert!(v <= hi + 1e-12 && v >= lo - 1e-12);
            }
            prop_assert!((g.total() - f.total()).abs() < 1e-11);
            // flux antisymmetry: the flux leaving one cell enters its neighbour
            prop_assert_eq!(face_flux(&f, 2, 3, 0), -(-(f.get(2, 3) - f.get(3, 3)) / f.dx));
        }
    }
}
