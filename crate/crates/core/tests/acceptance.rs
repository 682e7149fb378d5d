//! Acceptance suite: one PASS/FAIL line per criterion.

use wristsense::acceptance::{run_full_acceptance, AcceptanceConfig};

#[test]
fn acceptance() {
    let report = run_full_acceptance(&AcceptanceConfig::default()).expect("suite runs");
    for c in &report.criteria {
        println!("{}", c.line());
    }
    let failed: Vec<u8> = report.criteria.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
