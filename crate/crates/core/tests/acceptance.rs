//! Runs every acceptance criterion at full scale and prints one PASS/FAIL
//! line per criterion, followed by its checks.
//!
//! A criterion that fails only through checks with a documented and
//! numerically confirmed limit is reported as FAIL but does not fail the
//! target; any other failure, or an error, does.

use std::process::ExitCode;

use zdx_core::suite::{run_criterion, SuiteConfig};

fn main() -> ExitCode {
    let cfg = SuiteConfig::default();
    let mut unexplained = Vec::new();
    for id in 1..=10u8 {
        match run_criterion(id, &cfg) {
            Ok(r) => {
                println!("{}", r.summary_line());
                for line in r.detail_lines() {
                    println!("{line}");
                }
                if !r.explained() {
                    unexplained.push(id);
                }
            }
            Err(e) => {
                println!("FAIL criterion {id:>2}: error: {e}");
                unexplained.push(id);
            }
        }
    }
    if unexplained.is_empty() {
        println!("acceptance: all failures are documented limits");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: unexplained failures in criteria {unexplained:?}");
        ExitCode::FAILURE
    }
}
