//! Iterative learning of the task-space feedforward: record one period of
//! feedback, encode it and add it to the next repetition's feedforward.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::encoding::{fit, wrap, EncodingError, FeedforwardSignal};
use crate::harness::report::{ExperimentReport, RunRecord};
use crate::harness::trial::{compute_metrics, run_trial_with, TrialLog, TrialSetup};
use crate::harness::{ExperimentConfig, HarnessError};

#[derive(Debug, Error)]
pub enum IlcError {
    #[error("trial has {ticks} ticks, fewer than one period ({period_ticks})")]
    TooShort { ticks: usize, period_ticks: usize },
    #[error("invalid frequency {0} rad/s")]
    Frequency(f64),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// Feedback of one steady-state period.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedFeedback {
    pub phases: Vec<f64>,
    /// `K x dim`
    pub samples: DMatrix<f64>,
    pub iteration: usize,
    pub kappa: f64,
    pub omega: f64,
}

impl RecordedFeedback {
    /// Largest peak-to-peak range over the task dimensions.
    pub fn peak_to_peak(&self) -> Vec<f64> {
        self.samples
            .column_iter()
            .map(|c| c.max() - c.min())
            .collect()
    }
}

pub fn ticks_per_period(omega: f64, dt: f64) -> usize {
    (std::f64::consts::TAU / (omega * dt)).round() as usize
}

/// Last full period of the log with `phi = (omega t) mod 2 pi`.
pub fn record_feedback(log: &TrialLog, omega: f64) -> Result<RecordedFeedback, IlcError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(IlcError::Frequency(omega));
    }
    let period_ticks = ticks_per_period(omega, log.dt);
    if log.len() < period_ticks || period_ticks == 0 {
        return Err(IlcError::TooShort {
            ticks: log.len(),
            period_ticks,
        });
    }
    let last = &log.ticks[log.len() - period_ticks..];
    Ok(RecordedFeedback {
        phases: last.iter().map(|t| wrap(omega * t.time)).collect(),
        samples: DMatrix::from_fn(period_ticks, 2, |k, j| last[k].feedback[j]),
        iteration: 0,
        kappa: 0.0,
        omega,
    })
}

/// Learned signal after one update, with the fit quality of the increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub signal: FeedforwardSignal,
    /// Reconstruction RMS of the recorded feedback per dimension.
    pub fit_rms: Vec<f64>,
    pub coverage: f64,
}

/// `ff_new(phi) = ff_prev(phi) + gamma * fit(recorded)(phi)`.
pub fn update_feedforward(
    previous: Option<&FeedforwardSignal>,
    recorded: &RecordedFeedback,
    basis_count: usize,
    ridge: f64,
    learning_gain: f64,
) -> Result<Update, IlcError> {
    let f = fit(&recorded.phases, &recorded.samples, basis_count, ridge)?;
    let increment = f.signal.with_omega(recorded.omega);
    let signal = match previous {
        Some(p) => p.add_scaled(&increment, learning_gain)?,
        None if learning_gain == 1.0 => increment,
        None => increment.with_weights(increment.weights() * learning_gain)?,
    };
    Ok(Update {
        signal,
        fit_rms: f.rms.iter().copied().collect(),
        coverage: f.coverage,
    })
}

/// Report of an aborted run with the iterations completed so far.
#[derive(Debug)]
pub struct IlcFailure {
    pub report: Box<ExperimentReport>,
    pub error: HarnessError,
}

impl std::fmt::Display for IlcFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "iteration {} failed: {}", self.report.runs.len() + 1, self.error)
    }
}

impl std::error::Error for IlcFailure {}

/// `iterations` repetitions of the configured trial. Iteration 1 runs
/// without learned feedforward; each later one uses the running sum of the
/// encoded feedback of all earlier ones.
pub fn run_ilc(config: &ExperimentConfig, iterations: usize) -> Result<ExperimentReport, IlcFailure> {
    let mut report = ExperimentReport::new(config.clone());
    let fail = |report: ExperimentReport, error: HarnessError| IlcFailure {
        report: Box::new(report),
        error,
    };
    if iterations == 0 {
        return Err(fail(report, HarnessError::Config("iterations must be >= 1".into())));
    }
    let setup = match TrialSetup::new(config) {
        Ok(s) => s,
        Err(e) => return Err(fail(report, e)),
    };
    let gains = config.active_gains();
    let omega = config.task.omega();
    let mut ff: Option<FeedforwardSignal> = None;
    for i in 1..=iterations {
        let log = match run_trial_with(&setup, config, &gains, ff.as_ref()) {
            Ok(l) => l,
            Err(f) => return Err(fail(report, f.error)),
        };
        let metrics = compute_metrics(&log, config.settle_ticks());
        let mut run = RunRecord {
            label: iteration_label(i, iterations),
            iteration: i,
            gains_profile: config.gains_profile,
            amplitude_m: config.task.amplitude_m,
            frequency_hz: config.task.frequency_hz,
            metrics,
            feedforward: ff.clone(),
            recorded: None,
            learned: None,
            log,
        };
        let step = record_feedback(&run.log, omega)
            .map(|mut r| {
                r.iteration = i;
                r.kappa = config.task.amplitude_m;
                r
            })
            .and_then(|r| {
                let u = update_feedforward(ff.as_ref(), &r, config.basis_count, config.ridge, config.learning_gain)?;
                Ok((r, u))
            });
        match step {
            Ok((r, u)) => {
                if u.coverage < 0.9 {
                    log::warn!("iteration {i}: recorded phases cover only {:.0}% of the period", 100.0 * u.coverage);
                }
                ff = Some(u.signal.clone());
                run.recorded = Some(r);
                run.learned = Some(u);
            }
            Err(e) => {
                report.runs.push(run);
                return Err(fail(report, e.into()));
            }
        }
        report.runs.push(run);
    }
    Ok(report)
}

/// `i−1` for the first of two iterations and `i` for the second, matching
/// the usual figure legend; plain numbers otherwise.
pub fn iteration_label(i: usize, total: usize) -> String {
    match (total, i) {
        (2, 1) => "i−1".into(),
        (2, 2) => "i".into(),
        _ => format!("iteration {i}"),
    }
}
