use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::controller::{control_step, ControlError, ControlGains, ControlInput, TaskReference};
use crate::encoding::{wrap, FeedforwardSignal};
use crate::model::RobotModel;
use crate::qp::{QpSettings, QpStatus};
use crate::simulator::{make_plant, step, Baumgarte, PlantModel, PlantState, SimError};

use super::config::{stance, ExperimentConfig};
use super::HarnessError;

pub const DRIFT_LIMIT_M: f64 = 1e-4;

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub time: f64,
    pub x_ref: Vector2<f64>,
    pub xdot_ref: Vector2<f64>,
    pub x: Vector2<f64>,
    pub xdot: Vector2<f64>,
    pub xddot_des: Vector2<f64>,
    /// Learned feedforward only; the reference acceleration is separate.
    pub learned: Vector2<f64>,
    pub feedback: Vector2<f64>,
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
    pub tau: DVector<f64>,
    pub cop_x: f64,
    pub status: QpStatus,
    pub qp_residual: f64,
}

impl TickRecord {
    /// `x_ref,z - x_z`
    pub fn error_z(&self) -> f64 {
        self.x_ref.y - self.x.y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialLog {
    pub dt: f64,
    pub ticks: Vec<TickRecord>,
    /// Largest contact drift seen, m.
    pub max_drift: f64,
}

impl TrialLog {
    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }
}

/// A trial that stopped early, with everything logged up to the failure.
#[derive(Debug)]
pub struct TrialFailure {
    pub log: TrialLog,
    pub error: HarnessError,
}

impl std::fmt::Display for TrialFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "trial aborted after {} ticks: {}", self.log.len(), self.error)
    }
}

impl std::error::Error for TrialFailure {}

/// Everything a trial needs that does not change between iterations.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub nominal: RobotModel,
    pub plant: PlantModel,
    pub q0: DVector<f64>,
    pub com0: Vector2<f64>,
}

impl TrialSetup {
    pub fn new(config: &ExperimentConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let nominal = config.load_model()?;
        let plant = make_plant(
            &nominal,
            &config.mismatch,
            config.dt,
            config.substeps,
            Baumgarte::for_step(config.dt),
        )?;
        let (q0, com0) = stance(&nominal)?;
        Ok(Self {
            nominal,
            plant,
            q0,
            com0,
        })
    }

    pub fn reference(&self, config: &ExperimentConfig, t: f64) -> TaskReference {
        let a = config.task.amplitude_m;
        let w = config.task.omega();
        let (s, c) = (w * t).sin_cos();
        TaskReference {
            position: self.com0 + Vector2::new(0.0, a * s),
            velocity: Vector2::new(0.0, a * w * c),
            acceleration: Vector2::new(0.0, -a * w * w * s),
        }
    }
}

/// Closed loop of the controller on the plant for the configured number
/// of periods. `ff` is applied from the end of the settling window on.
pub fn run_trial(
    config: &ExperimentConfig,
    ff: Option<&FeedforwardSignal>,
) -> Result<TrialLog, TrialFailure> {
    let setup = TrialSetup::new(config).map_err(|error| TrialFailure {
        log: TrialLog {
            dt: config.dt,
            ticks: Vec::new(),
            max_drift: 0.0,
        },
        error,
    })?;
    run_trial_with(&setup, config, &config.active_gains(), ff)
}

pub fn run_trial_with(
    setup: &TrialSetup,
    config: &ExperimentConfig,
    gains: &ControlGains,
    ff: Option<&FeedforwardSignal>,
) -> Result<TrialLog, TrialFailure> {
    let feet: Vec<usize> = (0..setup.nominal.feet().len()).collect();
    let mut log = TrialLog {
        dt: config.dt,
        ticks: Vec::with_capacity(config.total_ticks()),
        max_drift: 0.0,
    };
    let mut state = match PlantState::new(setup.plant.model(), setup.q0.clone(), DVector::zeros(setup.q0.len()), &feet) {
        Ok(s) => s,
        Err(e) => return Err(TrialFailure { log, error: e.into() }),
    };
    let settings = QpSettings::default();
    let omega = config.task.omega();
    let settle = config.settle_ticks();
    for k in 0..config.total_ticks() {
        let t = k as f64 * config.dt;
        state.time = t;
        let reference = setup.reference(config, t);
        let learned = match ff {
            Some(s) if k >= settle => {
                let v = s.evaluate(wrap(omega * t));
                Some(Vector2::new(v[0], v[1]))
            }
            _ => None,
        };
        let input = ControlInput {
            reference: &reference,
            posture_ref: &setup.q0,
            gains,
            learned,
            settings: &settings,
        };
        let (tau, d) = match control_step(&setup.nominal, &state, &input) {
            Ok(r) => r,
            Err(error) => {
                return Err(TrialFailure {
                    log,
                    error: error.into(),
                })
            }
        };
        log.ticks.push(TickRecord {
            time: t,
            x_ref: reference.position,
            xdot_ref: reference.velocity,
            x: d.com,
            xdot: d.com_velocity,
            xddot_des: d.xddot_des,
            learned: d.learned,
            feedback: d.feedback,
            qddot: d.qddot,
            lambda: d.lambda,
            tau: tau.clone(),
            cop_x: d.cop_x,
            status: d.status,
            qp_residual: d.residuals.max(),
        });
        state = match step(&setup.plant, &state, &tau) {
            Ok(s) => s,
            Err(error) => {
                return Err(TrialFailure {
                    log,
                    error: error.into(),
                })
            }
        };
        let drift = match state.contact_drift(setup.plant.model()) {
            Ok(d) => d,
            Err(error) => return Err(TrialFailure { log, error: error.into() }),
        };
        log.max_drift = log.max_drift.max(drift);
        if drift > DRIFT_LIMIT_M {
            return Err(TrialFailure {
                log,
                error: HarnessError::ContactDrift { time: t, drift },
            });
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// CoM_z tracking error RMS, m.
    pub tracking_rms_m: f64,
    pub max_error_m: f64,
    /// RMS of the CoM_z feedback component, m/s^2.
    pub feedback_rms_mps2: f64,
    /// Over all joints and ticks, N m.
    pub torque_rms_nm: f64,
    pub peak_torque_nm: f64,
    /// Peak torque including the settling window.
    pub trial_peak_torque_nm: f64,
    pub samples: usize,
}

fn rms(values: impl Iterator<Item = f64>) -> (f64, usize) {
    let (mut sq, mut n) = (0.0, 0usize);
    for v in values {
        sq += v * v;
        n += 1;
    }
    (if n == 0 { 0.0 } else { (sq / n as f64).sqrt() }, n)
}

/// Metrics over the ticks after the first `settle_ticks`.
pub fn compute_metrics(log: &TrialLog, settle_ticks: usize) -> Metrics {
    let s = settle_ticks.min(log.len());
    let ticks = &log.ticks[s..];
    metrics_from_columns(
        ticks.iter().map(|t| t.error_z()),
        ticks.iter().map(|t| t.feedback.y),
        log.ticks.iter().map(|t| t.tau.as_slice()),
        s,
    )
}

/// Same reductions from bare columns, so metrics recomputed from a CSV file
/// are identical to those of the in-memory log. Error and feedback start
/// after the settling window; `tau` covers the whole trial.
pub fn metrics_from_columns<'a>(
    error_z: impl Iterator<Item = f64> + Clone,
    feedback_z: impl Iterator<Item = f64>,
    tau: impl Iterator<Item = &'a [f64]> + Clone,
    settle_ticks: usize,
) -> Metrics {
    let (tracking_rms_m, samples) = rms(error_z.clone());
    let max_error_m = error_z.fold(0.0f64, |m, e| m.max(e.abs()));
    let (feedback_rms_mps2, _) = rms(feedback_z);
    let after = tau.clone().skip(settle_ticks).flat_map(|t| t.iter().copied());
    let (torque_rms_nm, _) = rms(after.clone());
    let peak = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0f64, |m, x| m.max(x.abs()));
    Metrics {
        tracking_rms_m,
        max_error_m,
        feedback_rms_mps2,
        torque_rms_nm,
        peak_torque_nm: peak(&mut after.into_iter()),
        trial_peak_torque_nm: peak(&mut tau.flat_map(|t| t.iter().copied())),
        samples,
    }
}

impl From<ControlError> for HarnessError {
    fn from(e: ControlError) -> Self {
        HarnessError::Control(Box::new(e))
    }
}

impl From<SimError> for HarnessError {
    fn from(e: SimError) -> Self {
        HarnessError::Simulation(Box::new(e))
    }
}
