//! Reference oracles and property suites for thermalsplat.
//!
//! Every oracle here is written independently of the library code it
//! checks: direct sums instead of separable filters, analytic solutions
//! instead of solvers, finite differences instead of hand-derived
//! adjoints. The acceptance test and the `verify` subcommand both run the
//! suites from this crate.

use std::fmt;
use std::time::Duration;

pub mod ablation;
pub mod gradcheck;
pub mod heat;
pub mod identity;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod scenes;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    /// A check that could not run because of an error.
    pub fn error(name: impl Into<String>, err: impl fmt::Display) -> Self {
        Self::new(name, false, format!("error: {err}"))
    }

    pub fn from_result(name: &str, r: thermalsplat::Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::error(name, e))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Combines sub-checks into one criterion line.
pub fn all_of(name: &str, parts: Vec<Check>, elapsed: Duration, budget: Duration) -> Check {
    let within = elapsed <= budget;
    let passed = within && parts.iter().all(|c| c.passed);
    let mut detail: Vec<String> = parts
        .iter()
        .map(|c| format!("{}{} ({})", if c.passed { "" } else { "FAILED " }, c.name, c.detail))
        .collect();
    detail.push(format!(
        "{:.1}s of {:.0}s budget{}",
        elapsed.as_secs_f64(),
        budget.as_secs_f64(),
        if within { "" } else { " EXCEEDED" }
    ));
    Check::new(name, passed, detail.join("; "))
}

/// The fast suites: everything except the training experiments.
pub fn quick_suites() -> Vec<Check> {
    vec![
        gradcheck::criterion(&gradcheck::GradCheckConfig::default()),
        heat::criterion(),
        identity::criterion(),
        losses::criterion(),
        io::criterion(),
        metrics::criterion(),
    ]
}
