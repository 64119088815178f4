//! Acceptance criteria 1-7. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::Instant;

use taskff::gpr::Hyperparameters;
use taskff::harness::experiments::{
    generalization_experiment, squat_experiment, GENERALIZED_LABEL, REDUCED_LABEL,
};
use taskff::harness::verify::run_verify;
use taskff::harness::ExperimentConfig;
use taskff::harness::report::ExperimentReport;

struct Outcome {
    id: u8,
    passed: bool,
    detail: String,
}

fn line(o: &Outcome) {
    println!("criterion {}: {} {}", o.id, if o.passed { "PASS" } else { "FAIL" }, o.detail);
}

fn squat(freq: f64) -> Result<(ExperimentReport, f64), String> {
    let start = Instant::now();
    let report = squat_experiment(&ExperimentConfig::squat(0.06, freq)).map_err(|f| f.error.to_string())?;
    Ok((report, start.elapsed().as_secs_f64()))
}

fn tracking(id: u8, freq: f64, report: &ExperimentReport, secs: f64) -> Outcome {
    let first = report.runs[0].metrics.tracking_rms_m;
    let second = report.runs[1].metrics.tracking_rms_m;
    let ratio = second / first;
    Outcome {
        id,
        passed: ratio <= 0.2 && secs <= 60.0,
        detail: format!(
            "{freq} Hz: iteration-1 RMS {first:.3e} m, iteration-2 RMS {second:.3e} m, ratio {ratio:.3} (<= 0.2), {secs:.1} s (<= 60 s)"
        ),
    }
}

fn failed(id: u8, e: &str) -> Outcome {
    Outcome {
        id,
        passed: false,
        detail: format!("experiment failed: {e}"),
    }
}

fn main() {
    let mut out = Vec::new();

    match squat(0.25) {
        Ok((report, secs)) => {
            out.push(tracking(1, 0.25, &report, secs));

            let base = report.runs[0].metrics;
            let reduced = report.run(REDUCED_LABEL).expect("reduced-gain run").metrics;
            out.push(Outcome {
                id: 2,
                passed: reduced.tracking_rms_m <= base.tracking_rms_m
                    && reduced.trial_peak_torque_nm < base.trial_peak_torque_nm,
                detail: format!(
                    "RMS {:.3e} m vs baseline {:.3e} m, peak torque {:.2} N m vs {:.2} N m",
                    reduced.tracking_rms_m, base.tracking_rms_m, reduced.trial_peak_torque_nm, base.trial_peak_torque_nm
                ),
            });

            let fb1 = report.runs[0].metrics.feedback_rms_mps2;
            let fb2 = report.runs[1].metrics.feedback_rms_mps2;
            out.push(Outcome {
                id: 3,
                passed: fb2 <= 0.35 * fb1,
                detail: format!("feedback RMS {fb2:.3e} vs {fb1:.3e} m/s^2, ratio {:.3} (<= 0.35)", fb2 / fb1),
            });

            let first = &report.runs[0];
            let fit = first.learned.as_ref().map(|u| u.fit_rms[1]);
            let ptp = first.recorded.as_ref().map(|r| r.peak_to_peak()[1]);
            out.push(match (fit, ptp) {
                (Some(fit), Some(ptp)) => Outcome {
                    id: 4,
                    passed: fit <= 0.02 * ptp,
                    detail: format!("fit RMS {fit:.3e} m/s^2, peak-to-peak {ptp:.3e} m/s^2, ratio {:.2e} (<= 0.02)", fit / ptp),
                },
                _ => failed(4, "no recorded feedback"),
            });
        }
        Err(e) => {
            for id in 1..=4 {
                out.push(failed(id, &e));
            }
        }
    }

    let base = ExperimentConfig::squat(0.05, 0.25);
    out.push(
        match generalization_experiment(&base, &[0.02, 0.04, 0.06, 0.08], 0.05, &Hyperparameters::default()) {
            Ok(g) => {
                let none = g.report.runs[0].metrics.tracking_rms_m;
                let direct = g.report.runs[1].metrics.tracking_rms_m;
                let general = g.report.run(GENERALIZED_LABEL).expect("generalized run").metrics.tracking_rms_m;
                Outcome {
                    id: 5,
                    passed: general <= 1.25 * direct && general <= 0.3 * none,
                    detail: format!(
                        "generalized {general:.3e} m, direct {direct:.3e} m (x{:.2}, <= 1.25), no ff {none:.3e} m (x{:.3}, <= 0.3)",
                        general / direct,
                        general / none
                    ),
                }
            }
            Err(e) => failed(5, &e.to_string()),
        },
    );

    out.push(match squat(0.5) {
        Ok((report, secs)) => tracking(6, 0.5, &report, secs),
        Err(e) => failed(6, &e),
    });

    let start = Instant::now();
    let checks = run_verify(0);
    let secs = start.elapsed().as_secs_f64();
    let bad: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    out.push(Outcome {
        id: 7,
        passed: bad.is_empty() && secs <= 120.0,
        detail: format!("{} checks, {} failed {:?}, {secs:.1} s (<= 120 s)", checks.len(), bad.len(), bad),
    });

    for o in &out {
        line(o);
    }
    if out.iter().any(|o| !o.passed) {
        std::process::exit(1);
    }
}
