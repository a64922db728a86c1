//! Shared helpers for the acceptance run.

use std::path::PathBuf;

use sanbus::experiment::{parse_config, ExperimentPlan};
use sanbus::Estimate;

pub fn bundled(name: &str) -> ExperimentPlan {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/examples").join(name);
    parse_config(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// `a <= b`, or the two intervals overlap.
pub fn le_within_ci(a: &Estimate, b: &Estimate) -> bool {
    a.value <= b.value || a.overlaps(b)
}

/// Collects one verdict per criterion.
#[derive(Debug, Default)]
pub struct Scorecard {
    failed: Vec<u32>,
}

impl Scorecard {
    pub fn record(&mut self, id: u32, title: &str, pass: bool, detail: &str) {
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{verdict}] {title}: {detail}");
        if !pass {
            self.failed.push(id);
        }
    }

    pub fn failed(&self) -> &[u32] {
        &self.failed
    }
}
