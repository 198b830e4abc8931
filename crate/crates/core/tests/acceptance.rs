//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero if
//! any criterion fails.

use std::io::Write;
use std::process::ExitCode;
use std::time::Duration;

use thermalsplat_verify::gradcheck::{self, GradCheckConfig};
use thermalsplat_verify::{ablation, heat, identity, io, losses, metrics, Check};

const ABLATION_ITERATIONS: u64 = 3000;
const ABLATION_SEED: u64 = 0;
const ABLATION_BUDGET: Duration = Duration::from_secs(30 * 60);

fn report(c: &Check) {
    println!("{c}");
    let _ = std::io::stdout().flush();
}

fn main() -> ExitCode {
    let mut checks = Vec::new();
    for c in [
        gradcheck::criterion(&GradCheckConfig::default()),
        heat::criterion(),
        identity::criterion(),
        losses::criterion(),
    ] {
        report(&c);
        checks.push(c);
    }
    // The determinism check reuses the full-method run of the ablation.
    match ablation::run_experiments(ABLATION_ITERATIONS, ABLATION_SEED) {
        Ok(exp) => {
            for c in [
                ablation::ablation_criterion(&exp, ABLATION_BUDGET),
                ablation::determinism_criterion(&exp),
            ] {
                report(&c);
                checks.push(c);
            }
        }
        Err(e) => {
            for name in ["directional ablation", "determinism"] {
                let c = Check::error(name, &e);
                report(&c);
                checks.push(c);
            }
        }
    }
    for c in [io::criterion(), metrics::criterion()] {
        report(&c);
        checks.push(c);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("acceptance: {} of {} criteria passed", checks.len() - failed, checks.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
