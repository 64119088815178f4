use std::time::Instant;

use taskff::harness::verify::run_verify;

#[test]
fn verify_suite_passes() {
    let start = Instant::now();
    let results = run_verify(7);
    for r in &results {
        println!("{:<52} {:>5} value={:.3e} tol={:.0e} {:.1}s", r.name, r.passed, r.value, r.tolerance, r.seconds);
    }
    assert!(results.iter().all(|r| r.passed));
    assert!(start.elapsed().as_secs_f64() <= 120.0);
}
