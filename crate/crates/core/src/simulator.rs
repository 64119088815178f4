//! Ground-truth plant: the nominal model with injected mismatch, integrated
//! under bilateral flat-foot contacts with Baumgarte stabilization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    self, foot_constraint, Frames, LinkSpec, ModelError, RobotModel, BASE_DOF,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid mismatch: {field}: {reason}")]
    InvalidMismatch { field: String, reason: String },
    #[error("invalid plant setting: {0}")]
    InvalidPlant(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("singular contact KKT matrix (condition estimate {condition:.3e})")]
    SingularKkt { condition: f64 },
    #[error("non-finite state at t = {time} s")]
    NonFinite { time: f64 },
    #[error("expected {expected} torques, got {found}")]
    TorqueDimension { expected: usize, found: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidMismatch {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Point mass rigidly attached to a link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub link: String,
    pub mass_kg: f64,
    /// Attachment point in link coordinates; the link CoM when omitted.
    #[serde(default)]
    pub offset_m: Option<[f64; 2]>,
}

/// Discrepancies between the nominal model and the simulated plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MismatchSpec {
    /// Applied to every link (mass and inertia).
    pub mass_scale: f64,
    /// Per-link factors, multiplied onto `mass_scale`.
    pub link_mass_scale: BTreeMap<String, f64>,
    /// Viscous friction for every joint, N m s/rad.
    pub joint_friction_nms: f64,
    /// Per-joint overrides of `joint_friction_nms`.
    pub joint_friction_override: BTreeMap<String, f64>,
    pub payload: Option<Payload>,
    pub gravity_delta_mps2: f64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl MismatchSpec {
    /// Plant identical to the nominal model.
    pub fn identity() -> Self {
        Self {
            mass_scale: 1.0,
            link_mass_scale: BTreeMap::new(),
            joint_friction_nms: 0.0,
            joint_friction_override: BTreeMap::new(),
            payload: None,
            gravity_delta_mps2: 0.0,
        }
    }

    /// Masses x1.15, 0.5 N m s/rad joint friction and a 2 kg payload on
    /// the given link.
    pub fn default_scenario(payload_link: &str) -> Self {
        Self {
            mass_scale: 1.15,
            joint_friction_nms: 0.5,
            payload: Some(Payload {
                link: payload_link.to_string(),
                mass_kg: 2.0,
                offset_m: None,
            }),
            ..Self::identity()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.mass_scale == 1.0
            && self.link_mass_scale.values().all(|&s| s == 1.0)
            && self.joint_friction_nms == 0.0
            && self.joint_friction_override.values().all(|&b| b == 0.0)
            && self.payload.as_ref().is_none_or(|p| p.mass_kg == 0.0)
            && self.gravity_delta_mps2 == 0.0
    }

    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| invalid("mismatch", e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("mismatch spec serializes")
    }
}

/// Constraint stabilization gains: `alpha` (1/s) and `beta` (1/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baumgarte {
    pub alpha: f64,
    pub beta: f64,
}

impl Baumgarte {
    /// `alpha = 2/dt * 0.05`, `beta = alpha^2 / 4`.
    pub fn for_step(dt: f64) -> Self {
        let alpha = 2.0 / dt * 0.05;
        Self {
            alpha,
            beta: alpha * alpha / 4.0,
        }
    }
}

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_SUBSTEPS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    model: RobotModel,
    friction: DVector<f64>,
    dt: f64,
    substeps: usize,
    baumgarte: Baumgarte,
}

/// Applies `mismatch` to `nominal`. `dt` is the duration of one [`step`],
/// split into `substeps` integrator steps.
pub fn make_plant(
    nominal: &RobotModel,
    mismatch: &MismatchSpec,
    dt: f64,
    substeps: usize,
    baumgarte: Baumgarte,
) -> Result<PlantModel, SimError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SimError::InvalidPlant(format!("dt must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(SimError::InvalidPlant("substeps must be at least 1".into()));
    }
    if !(baumgarte.alpha >= 0.0 && baumgarte.beta >= 0.0) {
        return Err(SimError::InvalidPlant("Baumgarte gains must be non-negative".into()));
    }
    let friction = joint_friction(nominal, mismatch)?;
    let model = if mismatch.is_identity() {
        nominal.clone()
    } else {
        let links = mismatched_links(nominal, mismatch)?;
        let gravity = nominal.gravity() + mismatch.gravity_delta_mps2;
        if !gravity.is_finite() {
            return Err(invalid("gravity_delta_mps2", "must be finite"));
        }
        nominal.with_inertial_parameters(links, gravity)?
    };
    Ok(PlantModel {
        model,
        friction,
        dt,
        substeps,
        baumgarte,
    })
}

fn joint_friction(nominal: &RobotModel, mismatch: &MismatchSpec) -> Result<DVector<f64>, SimError> {
    let check = |field: &str, b: f64| {
        if b >= 0.0 && b.is_finite() {
            Ok(b)
        } else {
            Err(invalid(field, format!("friction must be >= 0, got {b}")))
        }
    };
    let base = check("joint_friction_nms", mismatch.joint_friction_nms)?;
    let mut friction = DVector::from_element(nominal.num_joints(), base);
    for (name, &b) in &mismatch.joint_friction_override {
        let field = format!("joint_friction_override.{name}");
        let j = nominal
            .joint_index(name)
            .ok_or_else(|| invalid(&field, "unknown joint"))?;
        friction[j] = check(&field, b)?;
    }
    Ok(friction)
}

fn mismatched_links(nominal: &RobotModel, mismatch: &MismatchSpec) -> Result<Vec<LinkSpec>, SimError> {
    let mut links = nominal.links().to_vec();
    for name in mismatch.link_mass_scale.keys() {
        if nominal.link_id(name).is_err() {
            return Err(invalid(format!("link_mass_scale.{name}"), "unknown link"));
        }
    }
    for link in &mut links {
        let s = mismatch.mass_scale * mismatch.link_mass_scale.get(&link.name).copied().unwrap_or(1.0);
        if !(s > 0.0 && s.is_finite()) {
            return Err(invalid(
                format!("link_mass_scale.{}", link.name),
                format!("scaled mass must stay positive (factor {s})"),
            ));
        }
        link.mass *= s;
        link.inertia *= s;
    }
    if let Some(p) = &mismatch.payload {
        let id = nominal
            .link_id(&p.link)
            .map_err(|_| invalid("payload.link", format!("unknown link `{}`", p.link)))?;
        if !(p.mass_kg >= 0.0 && p.mass_kg.is_finite()) {
            return Err(invalid("payload.mass_kg", "must be >= 0"));
        }
        let link = &mut links[id.0];
        let at = p.offset_m.map_or(link.com, |o| Vector2::new(o[0], o[1]));
        let total = link.mass + p.mass_kg;
        let com = (link.com * link.mass + at * p.mass_kg) / total;
        link.inertia += link.mass * (link.com - com).norm_squared() + p.mass_kg * (at - com).norm_squared();
        link.com = com;
        link.mass = total;
    }
    Ok(links)
}

impl PlantModel {
    /// The true (mismatched) model.
    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn friction(&self) -> &DVector<f64> {
        &self.friction
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn baumgarte(&self) -> Baumgarte {
        self.baumgarte
    }
}

/// A foot held to the ground at its anchor (heel x, heel z, toe z).
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub foot: usize,
    pub anchor: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub time: f64,
    pub contacts: Vec<Contact>,
}

impl PlantState {
    /// State whose listed feet are anchored where they currently are.
    pub fn new(
        model: &RobotModel,
        q: DVector<f64>,
        qdot: DVector<f64>,
        feet: &[usize],
    ) -> Result<Self, SimError> {
        let n = model.num_coordinates();
        for v in [&q, &qdot] {
            if v.len() != n {
                return Err(ModelError::Dimension {
                    expected: n,
                    found: v.len(),
                }
                .into());
            }
        }
        if !q.iter().chain(qdot.iter()).all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { time: 0.0 });
        }
        let frames = Frames::at(model, &q)?;
        let contacts = feet
            .iter()
            .map(|&foot| {
                Ok(Contact {
                    foot,
                    anchor: foot_constraint(model, &frames, foot)?.position,
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self {
            q,
            qdot,
            time: 0.0,
            contacts,
        })
    }

    /// Largest displacement of any constrained coordinate from its anchor.
    pub fn contact_drift(&self, model: &RobotModel) -> Result<f64, SimError> {
        let frames = Frames::at(model, &self.q)?;
        let mut drift = 0.0f64;
        for c in &self.contacts {
            let pos = foot_constraint(model, &frames, c.foot)?.position;
            drift = drift.max((pos - c.anchor).amax());
        }
        Ok(drift)
    }
}

/// Joint-space solution of the contact-constrained dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedAccel {
    pub qddot: DVector<f64>,
    /// Per contact: heel fx, heel fz, toe fz (N).
    pub lambda: DVector<f64>,
}

impl ConstrainedAccel {
    /// Sum of the vertical contact forces.
    pub fn vertical_force(&self) -> f64 {
        self.lambda
            .iter()
            .enumerate()
            .filter(|(i, _)| i % 3 != 0)
            .map(|(_, f)| f)
            .sum()
    }
}

/// Stacked contact rows of `state` evaluated on `model`.
pub struct ContactRows {
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: DVector<f64>,
    pub drift: DVector<f64>,
}

pub fn contact_rows(model: &RobotModel, state: &PlantState) -> Result<ContactRows, SimError> {
    let n = model.num_coordinates();
    let k = 3 * state.contacts.len();
    let frames = Frames::with_velocity(model, &state.q, &state.qdot)?;
    let mut jacobian = DMatrix::zeros(k, n);
    let mut jdot_qdot = DVector::zeros(k);
    let mut drift = DVector::zeros(k);
    for (i, c) in state.contacts.iter().enumerate() {
        let fc = foot_constraint(model, &frames, c.foot)?;
        jacobian.rows_mut(3 * i, 3).copy_from(&fc.jacobian);
        jdot_qdot.rows_mut(3 * i, 3).copy_from(&fc.jdot_qdot);
        drift.rows_mut(3 * i, 3).copy_from(&(fc.position - c.anchor));
    }
    Ok(ContactRows {
        jacobian,
        jdot_qdot,
        drift,
    })
}

/// Solves `M qdd + h + b qdot = S^T tau + J^T lambda` together with the
/// stabilized contact rows `J qdd + Jdot qdot = -2 alpha J qdot - beta drift`.
pub fn constrained_accel(
    plant: &PlantModel,
    state: &PlantState,
    tau: &DVector<f64>,
) -> Result<ConstrainedAccel, SimError> {
    let model = &plant.model;
    let n = model.num_joints();
    if tau.len() != n {
        return Err(SimError::TorqueDimension {
            expected: n,
            found: tau.len(),
        });
    }
    let m = model::mass_matrix(model, &state.q)?;
    let h = model::bias_forces(model, &state.q, &state.qdot)?;
    let mut rhs = -h;
    for j in 0..n {
        rhs[BASE_DOF + j] += tau[j] - plant.friction[j] * state.qdot[BASE_DOF + j];
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| SimError::SingularKkt {
            condition: condition_estimate(&m),
        })?;
    let free = chol.solve(&rhs);
    if state.contacts.is_empty() {
        return Ok(ConstrainedAccel {
            qddot: free,
            lambda: DVector::zeros(0),
        });
    }
    let rows = contact_rows(model, state)?;
    let Baumgarte { alpha, beta } = plant.baumgarte;
    let jqd = &rows.jacobian * &state.qdot;
    let target = -&rows.jdot_qdot - jqd * (2.0 * alpha) - &rows.drift * beta;
    // Schur complement: (J M^-1 J^T) lambda = target - J M^-1 rhs.
    let minv_jt = chol.solve(&rows.jacobian.transpose());
    let schur = &rows.jacobian * &minv_jt;
    let schur_rhs = &target - &rows.jacobian * &free;
    let lambda = match schur.clone().cholesky() {
        Some(c) if condition_estimate(&schur) < 1e12 => c.solve(&schur_rhs),
        _ => {
            return Err(SimError::SingularKkt {
                condition: condition_estimate(&schur),
            })
        }
    };
    let qddot = free + minv_jt * &lambda;
    for (i, c) in state.contacts.iter().enumerate() {
        let fz = [lambda[3 * i + 1], lambda[3 * i + 2]];
        if fz.iter().any(|&f| f < -1e-9) {
            log::warn!(
                "t = {:.4}: foot {} pulls on the ground (fz = {:?})",
                state.time,
                c.foot,
                fz
            );
        }
    }
    Ok(ConstrainedAccel { qddot, lambda })
}

/// Ratio of the extreme eigenvalues of a symmetric matrix.
fn condition_estimate(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigenvalues();
    let hi = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let lo = eig.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Advances `state` by one plant step `dt` using semi-implicit Euler
/// substeps. Torques are held over the step.
pub fn step(plant: &PlantModel, state: &PlantState, tau: &DVector<f64>) -> Result<PlantState, SimError> {
    let h = plant.dt / plant.substeps as f64;
    let mut next = state.clone();
    for _ in 0..plant.substeps {
        let acc = constrained_accel(plant, &next, tau)?;
        next.qdot += acc.qddot * h;
        next.q += &next.qdot * h;
        next.time += h;
        if !next.q.iter().chain(next.qdot.iter()).all(|v| v.is_finite()) {
            return Err(SimError::NonFinite { time: next.time });
        }
    }
    next.time = state.time + plant.dt;
    Ok(next)
}
