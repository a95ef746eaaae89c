//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `cargo test -p cgnsda-suite --test acceptance` runs all of them; criterion ids
//! given as arguments restrict the run.

use std::process::ExitCode;

use cgnsda::checks::{Suite, SuiteOptions, ALL};

fn main() -> ExitCode {
    let picked: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let ids = if picked.is_empty() { ALL.to_vec() } else { picked };
    let mut suite = Suite::new(SuiteOptions::default());
    let reports = suite.run_all(&ids);
    for r in &reports {
        println!("{}", r.line());
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("acceptance: {} passed, {failed} failed", reports.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
