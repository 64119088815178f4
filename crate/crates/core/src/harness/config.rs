use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::controller::ControlGains;
use crate::encoding::{DEFAULT_BASIS_COUNT, DEFAULT_RIDGE};
use crate::model::{bundled_biped, com_state, foot_constraint, load_model, Frames, RobotModel, BASE_DOF};
use crate::simulator::{MismatchSpec, DEFAULT_DT, DEFAULT_SUBSTEPS};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainProfile {
    Full,
    /// `P' = 0.2 P`
    Reduced,
}

impl GainProfile {
    pub fn as_str(self) -> &'static str {
        match self {
            GainProfile::Full => "full",
            GainProfile::Reduced => "reduced",
        }
    }
}

impl std::str::FromStr for GainProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Self::Full),
            "reduced" => Ok(Self::Reduced),
            other => Err(format!("unknown gain profile `{other}` (expected full or reduced)")),
        }
    }
}

/// Vertical CoM squat around the stance CoM: `z_ref = z0 + A sin(2 pi f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquatTask {
    pub amplitude_m: f64,
    pub frequency_hz: f64,
}

impl SquatTask {
    pub fn omega(&self) -> f64 {
        TAU * self.frequency_hz
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency_hz
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Model descriptor; the bundled biped when absent.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_mismatch")]
    pub mismatch: MismatchSpec,
    pub task: SquatTask,
    #[serde(default = "default_profile")]
    pub gains_profile: GainProfile,
    /// Full-gain values; the reduced profile is derived from them.
    #[serde(default)]
    pub gains: ControlGains,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_periods")]
    pub periods: usize,
    /// Periods before the learned feedforward switches on and metrics start.
    #[serde(default = "default_settle")]
    pub settle_periods: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_basis")]
    pub basis_count: usize,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    /// Scale of each learned increment.
    #[serde(default = "default_learning_gain")]
    pub learning_gain: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_mismatch() -> MismatchSpec {
    MismatchSpec::default_scenario("torso")
}
fn default_profile() -> GainProfile {
    GainProfile::Full
}
fn default_iterations() -> usize {
    2
}
fn default_periods() -> usize {
    4
}
fn default_settle() -> usize {
    1
}
fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}
fn default_basis() -> usize {
    DEFAULT_BASIS_COUNT
}
fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}
fn default_learning_gain() -> f64 {
    1.0
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// 6 cm at 0.25 Hz under the default mismatch.
    pub fn squat(amplitude_m: f64, frequency_hz: f64) -> Self {
        Self {
            model: None,
            mismatch: default_mismatch(),
            task: SquatTask {
                amplitude_m,
                frequency_hz,
            },
            gains_profile: GainProfile::Full,
            gains: ControlGains::default(),
            iterations: default_iterations(),
            periods: default_periods(),
            settle_periods: default_settle(),
            dt: DEFAULT_DT,
            substeps: DEFAULT_SUBSTEPS,
            basis_count: DEFAULT_BASIS_COUNT,
            ridge: DEFAULT_RIDGE,
            learning_gain: 1.0,
            seed: 0,
            output_dir: default_output(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Gains for the configured profile.
    pub fn active_gains(&self) -> ControlGains {
        match self.gains_profile {
            GainProfile::Full => self.gains.clone(),
            GainProfile::Reduced => self.gains.reduced(),
        }
    }

    pub fn ticks_per_period(&self) -> usize {
        (self.task.period() / self.dt).round() as usize
    }

    pub fn total_ticks(&self) -> usize {
        (self.periods as f64 * self.task.period() / self.dt).round() as usize
    }

    pub fn settle_ticks(&self) -> usize {
        self.settle_periods * self.ticks_per_period()
    }

    pub fn load_model(&self) -> Result<RobotModel, HarnessError> {
        match &self.model {
            None => Ok(bundled_biped()),
            Some(p) => Ok(load_model(p)?),
        }
    }

    /// Checks everything except reachability.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !(self.task.frequency_hz > 0.0 && self.task.frequency_hz.is_finite()) {
            return bad(format!("frequency must be > 0, got {}", self.task.frequency_hz));
        }
        if !(self.task.amplitude_m >= 0.0 && self.task.amplitude_m.is_finite()) {
            return bad(format!("amplitude must be >= 0, got {}", self.task.amplitude_m));
        }
        if self.periods < 3 {
            return bad(format!("periods must be >= 3, got {}", self.periods));
        }
        if self.settle_periods >= self.periods {
            return bad("settle periods must be fewer than the trial periods".into());
        }
        if self.iterations < 1 {
            return bad("iterations must be >= 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.substeps == 0 {
            return bad("dt must be > 0 and substeps >= 1".into());
        }
        let tpp = self.task.period() / self.dt;
        if (tpp - tpp.round()).abs() > 1e-6 {
            return bad(format!("the task period must be a whole number of ticks (period/dt = {tpp})"));
        }
        if self.basis_count == 0 || !(self.ridge >= 0.0) {
            return bad("basis count must be >= 1 and ridge >= 0".into());
        }
        if !(self.learning_gain > 0.0 && self.learning_gain <= 1.0) {
            return bad(format!("learning gain must be in (0, 1], got {}", self.learning_gain));
        }
        self.gains.validate().map_err(HarnessError::Config)
    }
}

/// Stance configuration and its CoM, the squat's center point.
pub fn stance(model: &RobotModel) -> Result<(DVector<f64>, Vector2<f64>), HarnessError> {
    let q = model
        .stance_q()
        .ok_or_else(|| HarnessError::Config(format!("model `{}` has no stance", model.name())))?;
    let com = com_state(model, &q, &DVector::zeros(q.len()))?.position;
    Ok((q, com))
}

/// Static sweep over the squat's CoM heights. Each height is reached by
/// Gauss-Newton on the feet-fixed kinematics from the stance; fails if any
/// solution leaves the joint limits or does not converge.
pub fn check_reachability(model: &RobotModel, amplitude_m: f64) -> Result<(), HarnessError> {
    let (q0, com0) = stance(model)?;
    let feet: Vec<usize> = (0..model.feet().len()).collect();
    let frames0 = Frames::at(model, &q0)?;
    let anchors = feet
        .iter()
        .map(|&f| Ok(foot_constraint(model, &frames0, f)?.position))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let samples = 11;
    let mut q = q0.clone();
    for k in 0..samples {
        // From the bottom of the squat to the top, warm-started.
        let dz = amplitude_m * (2.0 * k as f64 / (samples - 1) as f64 - 1.0);
        let target = com0 + Vector2::new(0.0, dz);
        if k == 0 {
            q = q0.clone();
        }
        let mut converged = false;
        for _ in 0..50 {
            let frames = Frames::at(model, &q)?;
            let rows = 3 * feet.len() + 2;
            let mut jac = DMatrix::zeros(rows, q.len());
            let mut err = DVector::zeros(rows);
            for (i, &f) in feet.iter().enumerate() {
                let c = foot_constraint(model, &frames, f)?;
                jac.rows_mut(3 * i, 3).copy_from(&c.jacobian);
                err.rows_mut(3 * i, 3).copy_from(&(anchors[i] - c.position));
            }
            let com = com_state(model, &q, &DVector::zeros(q.len()))?;
            jac.rows_mut(rows - 2, 2).copy_from(&com.jacobian);
            err.rows_mut(rows - 2, 2).copy_from(&(target - com.position));
            if err.amax() < 1e-10 {
                converged = true;
                break;
            }
            let svd = jac.svd(true, true);
            let dq = svd
                .solve(&err, 1e-9)
                .map_err(|e| HarnessError::Config(format!("reachability sweep: {e}")))?;
            q += dq;
        }
        if !converged {
            return Err(HarnessError::Config(format!(
                "squat amplitude {amplitude_m} m is not reachable: no posture puts the CoM at {dz:+.4} m"
            )));
        }
        for (j, spec) in model.joints().iter().enumerate() {
            let v = q[BASE_DOF + j];
            let (lo, hi) = spec.position_limits;
            if v < lo || v > hi {
                return Err(HarnessError::Config(format!(
                    "squat amplitude {amplitude_m} m is not reachable: joint `{}` reaches {v:.3} rad outside [{lo}, {hi}]",
                    spec.name
                )));
            }
        }
    }
    Ok(())
}
