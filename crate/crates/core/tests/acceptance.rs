//! Acceptance run: one line per criterion, nonzero exit if any fails.

use std::process::ExitCode;

use multichain_pma::checks;

/// (id, title, suite, runtime budget in seconds)
const CRITERIA: [(&str, &str, &str, f64); 11] = [
    ("AC1", "Bellman equations and Cesaro structure", "bellman", 10.0),
    ("AC2", "performance difference identity", "pdl", 10.0),
    ("AC3", "policy gradient vs finite differences", "grad", 30.0),
    ("AC4", "floored simplex projections", "proj", 5.0),
    (
        "AC5",
        "monotone improvement and first-order condition",
        "monotone",
        60.0,
    ),
    ("AC6", "sublinear and linear rate shapes", "rates", 120.0),
    ("AC7", "critic accuracy and truncation bias", "critic", 120.0),
    ("AC8", "classification by sampling", "classify", 60.0),
    ("AC9", "stochastic mirror ascent envelope", "spma", 300.0),
    ("AC10", "weakly communicating recipe", "weakly", 120.0),
    ("AC11", "target-time bound", "target", 10.0),
];

const SEED: u64 = 0;

fn main() -> ExitCode {
    let mut all_ok = true;
    for (id, title, suite, budget) in CRITERIA {
        let line = match checks::run_suite(suite, SEED) {
            Ok(report) => {
                let ok = report.passed() && report.seconds <= budget;
                all_ok &= ok;
                let detail: Vec<String> = report
                    .assertions
                    .iter()
                    .map(|a| {
                        let mark = if a.passed { "" } else { "!" };
                        format!("{mark}{} {:.3e}/{:.3e}", a.name, a.measured, a.threshold)
                    })
                    .collect();
                let verdict = if ok { "PASS" } else { "FAIL" };
                let secs = report.seconds;
                format!(
                    "[{verdict}] {id} {title} ({secs:.2}s of {budget:.0}s): {}",
                    detail.join("; ")
                )
            }
            Err(e) => {
                all_ok = false;
                format!("[FAIL] {id} {title}: error {e}")
            }
        };
        println!("{line}");
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
