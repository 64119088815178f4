//! The squatting and generalization experiments.

use rayon::prelude::*;

use crate::encoding::FeedforwardSignal;
use crate::gpr::{train, FeedforwardDatabase, GprModel, Hyperparameters};
use crate::ilc::{run_ilc, IlcFailure};

use super::config::{check_reachability, ExperimentConfig, GainProfile};
use super::report::{ExperimentReport, RunRecord};
use super::trial::{compute_metrics, run_trial_with, TrialSetup};
use super::HarnessError;

pub const REDUCED_LABEL: &str = "i′";
pub const GENERALIZED_LABEL: &str = "i″";

fn failure(report: ExperimentReport, error: HarnessError) -> IlcFailure {
    IlcFailure {
        report: Box::new(report),
        error,
    }
}

/// One extra trial appended to a report.
fn extra_run(
    report: &mut ExperimentReport,
    config: &ExperimentConfig,
    label: &str,
    profile: GainProfile,
    ff: Option<FeedforwardSignal>,
) -> Result<(), HarnessError> {
    let setup = TrialSetup::new(config)?;
    let gains = match profile {
        GainProfile::Full => config.gains.clone(),
        GainProfile::Reduced => config.gains.reduced(),
    };
    let log = run_trial_with(&setup, config, &gains, ff.as_ref()).map_err(|f| f.error)?;
    report.runs.push(RunRecord {
        label: label.to_string(),
        iteration: report.runs.len() + 1,
        gains_profile: profile,
        amplitude_m: config.task.amplitude_m,
        frequency_hz: config.task.frequency_hz,
        metrics: compute_metrics(&log, config.settle_ticks()),
        feedforward: ff,
        recorded: None,
        learned: None,
        log,
    });
    Ok(())
}

/// Learning iterations at the configured gains; for the full profile with
/// at least two iterations, a final run with the reduced gains and the last
/// iteration's feedforward.
pub fn squat_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, IlcFailure> {
    let report = ExperimentReport::new(config.clone());
    if let Err(e) = config.validate() {
        return Err(failure(report, e));
    }
    let model = match config.load_model() {
        Ok(m) => m,
        Err(e) => return Err(failure(report, e)),
    };
    if let Err(e) = check_reachability(&model, config.task.amplitude_m) {
        return Err(failure(report, e));
    }
    let mut report = run_ilc(config, config.iterations)?;
    let last_ff = report.runs.last().and_then(|r| r.feedforward.clone());
    if config.gains_profile == GainProfile::Full && last_ff.is_some() {
        if let Err(e) = extra_run(&mut report, config, REDUCED_LABEL, GainProfile::Reduced, last_ff) {
            return Err(failure(report, e));
        }
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct GeneralizationResult {
    /// Runs at the query amplitude: no feedforward (`i−1`), directly
    /// learned (`i`) and generalized (`i″`).
    pub report: ExperimentReport,
    pub database: FeedforwardDatabase,
    pub model: GprModel,
    pub predicted: FeedforwardSignal,
}

/// Signal learned from the first iteration of a two-iteration run.
fn learned_signal(report: &ExperimentReport) -> Option<FeedforwardSignal> {
    report.runs.first()?.learned.as_ref().map(|u| u.signal.clone())
}

/// Learns one signal per amplitude (in parallel), fits the GP, and compares
/// the generalized feedforward at `query` with one learned there directly.
pub fn generalization_experiment(
    base: &ExperimentConfig,
    amplitudes: &[f64],
    query: f64,
    hyper: &Hyperparameters,
) -> Result<GeneralizationResult, HarnessError> {
    if amplitudes.len() < 2 {
        return Err(HarnessError::Config("the database needs at least two amplitudes".into()));
    }
    let model = base.load_model()?;
    for &a in amplitudes.iter().chain(std::iter::once(&query)) {
        check_reachability(&model, a)?;
    }
    let with_amp = |a: f64| ExperimentConfig {
        task: super::SquatTask {
            amplitude_m: a,
            ..base.task
        },
        gains_profile: GainProfile::Full,
        ..base.clone()
    };
    let mut jobs: Vec<f64> = amplitudes.to_vec();
    jobs.push(query);
    let runs: Vec<Result<ExperimentReport, IlcFailure>> =
        jobs.par_iter().map(|&a| run_ilc(&with_amp(a), 2)).collect();
    let mut reports = Vec::with_capacity(runs.len());
    for r in runs {
        reports.push(r.map_err(|f| f.error)?);
    }
    let direct = reports.pop().expect("query run");
    let mut database = FeedforwardDatabase::new();
    for (a, r) in amplitudes.iter().zip(&reports) {
        let s = learned_signal(r).ok_or_else(|| HarnessError::Config(format!("no signal learned at {a} m")))?;
        database.add_entry(&[*a], s)?;
    }
    let gp = train(&database, hyper)?;
    let predicted = gp.predict_signal(&[query])?;
    let mut report = direct;
    report.config = with_amp(query);
    let cfg = report.config.clone();
    extra_run(&mut report, &cfg, GENERALIZED_LABEL, GainProfile::Full, Some(predicted.clone()))?;
    Ok(GeneralizationResult {
        report,
        database,
        model: gp,
        predicted,
    })
}
