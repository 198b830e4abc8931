//! Analytic heat-kernel oracle for the FTCS solver.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermalsplat::heat::{heat_simulate, ConductionSpec, TemperatureField};
use thermalsplat::stencil::Boundary;
use thermalsplat::Result;

use crate::{all_of, Check};

/// Fundamental solution of `u_t = alpha * lap(u)` in the plane for a unit
/// point source released at time 0.
pub fn heat_kernel(x: f64, y: f64, alpha: f64, t: f64) -> f64 {
    (-(x * x + y * y) / (4.0 * alpha * t)).exp() / (4.0 * PI * alpha * t)
}

/// Grid and time used for the kernel comparison.
#[derive(Debug, Clone, Copy)]
pub struct KernelSetup {
    /// Half-width of the periodic square domain.
    pub half: f64,
    pub alpha: f64,
    pub time: f64,
    /// Diffusion number `alpha * dt / dx^2`, held fixed under refinement.
    pub r: f64,
}

impl Default for KernelSetup {
    fn default() -> Self {
        Self {
            half: 2.0,
            alpha: 1.0,
            time: 0.05,
            r: 0.2,
        }
    }
}

/// Max-abs error between the FTCS solution started from a discrete unit
/// delta at the origin and the analytic kernel, on a node grid of
/// `cells x cells` points.
pub fn kernel_error(setup: &KernelSetup, cells: usize) -> Result<f64> {
    let dx = 2.0 * setup.half / cells as f64;
    let steps = (setup.time * setup.alpha / (setup.r * dx * dx)).round() as usize;
    let dt = setup.time / steps as f64;
    let spec = ConductionSpec::new(setup.alpha, dt, steps, dx)?;
    let mut data = vec![0.0; cells * cells];
    let c = cells / 2;
    data[c * cells + c] = 1.0 / (dx * dx);
    let field = TemperatureField::new(cells, cells, dx, Boundary::Periodic, data)?;
    let out = heat_simulate(&field, &spec)?;
    let mut err: f64 = 0.0;
    for j in 0..cells {
        for i in 0..cells {
            let (x, y) = ((i as f64 - c as f64) * dx, (j as f64 - c as f64) * dx);
            err = err.max((out.get(i, j) - heat_kernel(x, y, setup.alpha, setup.time)).abs());
        }
    }
    Ok(err)
}

/// Worst relative drift of the total over `blocks` runs of 1000 periodic
/// steps on a random field.
pub fn conservation_drift(cells: usize, blocks: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..cells * cells).map(|_| rng.random_range(0.0..1.0)).collect();
    let dx = 1.0 / cells as f64;
    let mut field = TemperatureField::new(cells, cells, dx, Boundary::Periodic, data)?;
    let spec = ConductionSpec::new(1.0, 0.24 * dx * dx, 1000, dx)?;
    let mut worst: f64 = 0.0;
    for _ in 0..blocks {
        // Reference totals use compensated summation so rounding in the
        // check itself stays far below the tolerance.
        let before = kahan_sum(&field.data);
        field = heat_simulate(&field, &spec)?;
        let after = kahan_sum(&field.data);
        worst = worst.max(((after - before) / before).abs());
    }
    Ok(worst)
}

fn kahan_sum(v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for x in v {
        let y = x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

pub const KERNEL_TOLERANCE: f64 = 1e-3;
pub const CONSERVATION_TOLERANCE: f64 = 1e-12;
pub const RATIO_RANGE: (f64, f64) = (3.2, 4.8);
/// Grid at which the kernel error is judged; the coarser grid only enters
/// the convergence ratio.
pub const FINE_CELLS: usize = 256;

pub fn criterion() -> Check {
    let name = "physics oracle";
    let start = Instant::now();
    let run = || -> Result<Vec<Check>> {
        let setup = KernelSetup::default();
        let coarse = kernel_error(&setup, FINE_CELLS / 2)?;
        let fine = kernel_error(&setup, FINE_CELLS)?;
        let ratio = coarse / fine;
        let drift = conservation_drift(64, 3, 7)?;
        Ok(vec![
            Check::new(
                "heat kernel",
                fine < KERNEL_TOLERANCE,
                format!("max-abs {fine:.3e} at {FINE_CELLS}^2 < {KERNEL_TOLERANCE:e}"),
            ),
            Check::new(
                "conservation",
                drift < CONSERVATION_TOLERANCE,
                format!("relative drift {drift:.2e} per 1000 steps < {CONSERVATION_TOLERANCE:e}"),
            ),
            Check::new(
                "convergence",
                (RATIO_RANGE.0..=RATIO_RANGE.1).contains(&ratio),
                format!("error ratio {ratio:.3} per dx halving in [{}, {}]", RATIO_RANGE.0, RATIO_RANGE.1),
            ),
        ])
    };
    match run() {
        Ok(parts) => all_of(name, parts, start.elapsed(), Duration::from_secs(60)),
        Err(e) => Check::error(name, e),
    }
}
