//! Whole-body inverse-dynamics controller: one QP per tick over joint
//! accelerations and contact forces, built on the nominal model.
//!
//! Decision vector `z = (qdd, lambda)` where `lambda` holds, per foot in
//! contact, heel fx, heel fz, toe fx, toe fz. Torques are not decision
//! variables; they follow from the actuated rows of the dynamics.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    self, com_state, foot_constraint, Frames, ModelError, RobotModel, BASE_DOF,
};
use crate::qp::{self, KktResiduals, QpError, QpProblem, QpSettings, QpStatus};
use crate::simulator::PlantState;

/// Contact force components per foot.
pub const FORCES_PER_FOOT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("the controller needs at least one foot in contact")]
    NoContact,
    #[error("{what}: expected length {expected}, got {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("QP not solved ({}) at t = {time} s, residual {residual:.3e}", status.as_str())]
    QpFailed {
        status: QpStatus,
        time: f64,
        residual: f64,
        diagnostics: Box<ControlDiagnostics>,
    },
}

/// Desired CoM motion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskReference {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    pub acceleration: Vector2<f64>,
}

impl TaskReference {
    pub fn stationary(position: Vector2<f64>) -> Self {
        Self {
            position,
            velocity: Vector2::zeros(),
            acceleration: Vector2::zeros(),
        }
    }
}

/// Which inequality families enter the QP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitSet {
    pub torque: bool,
    pub acceleration: bool,
    pub friction: bool,
    pub center_of_pressure: bool,
    /// Keeps the CoP this far inside heel and toe, m.
    pub cop_margin_m: f64,
}

impl Default for LimitSet {
    fn default() -> Self {
        Self {
            torque: true,
            acceleration: true,
            friction: true,
            center_of_pressure: true,
            cop_margin_m: 0.0,
        }
    }
}

impl LimitSet {
    pub fn none() -> Self {
        Self {
            torque: false,
            acceleration: false,
            friction: false,
            center_of_pressure: false,
            cop_margin_m: 0.0,
        }
    }
}

/// Gains and cost weights. Limits, friction coefficient and foot geometry
/// come from the nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlGains {
    /// CoM stiffness (x, z), 1/s^2.
    pub px: [f64; 2],
    /// CoM damping (x, z), 1/s.
    pub dx: [f64; 2],
    pub pq: f64,
    pub dq: f64,
    pub wx: [f64; 2],
    pub wq: f64,
    pub w_lambda: f64,
    pub w_tau: f64,
    pub limits: LimitSet,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            px: [400.0; 2],
            dx: [40.0; 2],
            pq: 50.0,
            dq: 5.0,
            wx: [1e4; 2],
            wq: 1.0,
            w_lambda: 1e-3,
            w_tau: 1e-4,
            limits: LimitSet::default(),
        }
    }
}

impl ControlGains {
    /// `P' = 0.2 P`, `D' = sqrt(0.2) D` on the CoM task.
    pub fn reduced(&self) -> Self {
        let s = 0.2f64;
        Self {
            px: self.px.map(|p| p * s),
            dx: self.dx.map(|d| d * s.sqrt()),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let scalars = [self.pq, self.dq, self.wq, self.w_lambda, self.w_tau, self.limits.cop_margin_m];
        let mut all = self.px.iter().chain(&self.dx).chain(&self.wx).chain(&scalars);
        if all.any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err("gains and weights must be finite and non-negative".into());
        }
        if self.wx.iter().any(|&w| w <= 0.0) {
            return Err("task weights must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDiagnostics {
    pub xddot_des: Vector2<f64>,
    /// Reference acceleration plus learned feedforward.
    pub feedforward: Vector2<f64>,
    /// The learned part of `feedforward`.
    pub learned: Vector2<f64>,
    pub feedback: Vector2<f64>,
    pub com: Vector2<f64>,
    pub com_velocity: Vector2<f64>,
    pub qddot: DVector<f64>,
    pub lambda: DVector<f64>,
    pub tau: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub residuals: KktResiduals,
    /// Combined CoP of all feet in contact, world x (m). NaN without load.
    pub cop_x: f64,
}

/// `xdd_des = xdd_ref + ff + Px (x_ref - x) + Dx (xd_ref - xd)`; returns
/// `(xdd_des, feedback)`.
pub fn desired_task_accel(
    reference: &TaskReference,
    x: &Vector2<f64>,
    xdot: &Vector2<f64>,
    gains: &ControlGains,
    ff: Option<&Vector2<f64>>,
) -> (Vector2<f64>, Vector2<f64>) {
    let p = Vector2::from(gains.px);
    let d = Vector2::from(gains.dx);
    let feedback = p.component_mul(&(reference.position - x)) + d.component_mul(&(reference.velocity - xdot));
    let feedforward = reference.acceleration + ff.copied().unwrap_or_else(Vector2::zeros);
    (feedforward + feedback, feedback)
}

/// `qdd = Pq (q_ref - q) - Dq qd` on the joints, zero on the base.
pub fn posture_desired_accel(
    q_ref: &DVector<f64>,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    gains: &ControlGains,
) -> DVector<f64> {
    let mut out = DVector::zeros(q.len());
    for i in BASE_DOF..q.len() {
        out[i] = gains.pq * (q_ref[i] - q[i]) - gains.dq * qdot[i];
    }
    out
}

pub const NULLSPACE_DAMPING: f64 = 1e-6;

/// `I - J^+ J` with `J^+ = J^T (J J^T + delta^2 I)^-1`.
pub fn nullspace_projector(j: &DMatrix<f64>) -> DMatrix<f64> {
    let n = j.ncols();
    let k = j.nrows();
    let jjt = j * j.transpose() + DMatrix::identity(k, k) * (NULLSPACE_DAMPING * NULLSPACE_DAMPING);
    let chol = jjt.cholesky().expect("damped Gram matrix is positive definite");
    DMatrix::identity(n, n) - j.transpose() * chol.solve(j)
}

/// Nominal quantities shared by QP assembly and torque extraction.
#[derive(Debug, Clone)]
pub struct ContactDynamics {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// `4k x (n+3)`: heel x, heel z, toe x, toe z per foot.
    pub force_jacobian: DMatrix<f64>,
    /// `3k x (n+3)` motion constraint rows and their `Jdot qdot`.
    pub constraint_jacobian: DMatrix<f64>,
    pub constraint_bias: DVector<f64>,
    /// World heel and toe x per foot.
    pub foot_x: Vec<(f64, f64)>,
}

pub fn contact_dynamics(
    nominal: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    feet: &[usize],
) -> Result<ContactDynamics, ControlError> {
    let n = nominal.num_coordinates();
    let frames = Frames::with_velocity(nominal, q, qdot)?;
    let mut force_jacobian = DMatrix::zeros(FORCES_PER_FOOT * feet.len(), n);
    let mut constraint_jacobian = DMatrix::zeros(3 * feet.len(), n);
    let mut constraint_bias = DVector::zeros(3 * feet.len());
    let mut foot_x = Vec::with_capacity(feet.len());
    for (i, &foot) in feet.iter().enumerate() {
        let fc = foot_constraint(nominal, &frames, foot)?;
        force_jacobian.rows_mut(4 * i, 2).copy_from(&fc.heel_jacobian);
        force_jacobian.rows_mut(4 * i + 2, 2).copy_from(&fc.toe_jacobian);
        constraint_jacobian.rows_mut(3 * i, 3).copy_from(&fc.jacobian);
        constraint_bias.rows_mut(3 * i, 3).copy_from(&fc.jdot_qdot);
        foot_x.push((fc.heel.x, fc.toe.x));
    }
    Ok(ContactDynamics {
        mass_matrix: model::mass_matrix(nominal, q)?,
        bias: model::bias_forces(nominal, q, qdot)?,
        force_jacobian,
        constraint_jacobian,
        constraint_bias,
        foot_x,
    })
}

/// Affine torque map `tau = T z + t0` from the actuated rows.
fn torque_map(dyn_: &ContactDynamics, nj: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = dyn_.mass_matrix.nrows();
    let nl = dyn_.force_jacobian.nrows();
    let mut t = DMatrix::zeros(nj, n + nl);
    t.view_mut((0, 0), (nj, n))
        .copy_from(&dyn_.mass_matrix.rows(BASE_DOF, nj));
    t.view_mut((0, n), (nj, nl))
        .copy_from(&(-dyn_.force_jacobian.columns(BASE_DOF, nj).transpose()));
    (t, dyn_.bias.rows(BASE_DOF, nj).into_owned())
}

/// Adds `0.5 |A z - b|^2_W` (diagonal `W`) to `(H, g)`.
fn add_least_squares(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &DVector<f64>,
) {
    let mut wa = a.clone();
    for (i, mut row) in wa.row_iter_mut().enumerate() {
        row *= w[i];
    }
    *h += a.transpose() * &wa;
    *g -= wa.transpose() * b;
}

/// Per-tick QP inputs besides the model and state.
#[derive(Debug, Clone)]
pub struct QpTargets {
    pub xddot_des: Vector2<f64>,
    pub posture: DVector<f64>,
    pub lambda_des: DVector<f64>,
    pub tau_des: DVector<f64>,
}

/// Vertical load share `weight / (2 k)` at each heel and toe.
pub fn default_lambda_des(nominal: &RobotModel, feet: usize) -> DVector<f64> {
    let per_point = nominal.total_mass() * nominal.gravity() / (2 * feet) as f64;
    DVector::from_fn(FORCES_PER_FOOT * feet, |i, _| if i % 2 == 1 { per_point } else { 0.0 })
}

pub fn variable_names(nominal: &RobotModel, feet: &[usize]) -> Vec<String> {
    let mut names: Vec<String> = ["x", "z", "pitch"].iter().map(|s| format!("qdd_{s}")).collect();
    names.extend(nominal.joints().iter().map(|j| format!("qdd_{}", j.name)));
    for &f in feet {
        let foot = &nominal.feet()[f].name;
        for c in ["heel_fx", "heel_fz", "toe_fx", "toe_fz"] {
            names.push(format!("lam_{foot}_{c}"));
        }
    }
    names
}

pub fn assemble_qp(
    nominal: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    feet: &[usize],
    targets: &QpTargets,
    gains: &ControlGains,
) -> Result<QpProblem, ControlError> {
    let n = nominal.num_coordinates();
    check("q", q.len(), n)?;
    check("qdot", qdot.len(), n)?;
    check("posture", targets.posture.len(), n)?;
    if feet.is_empty() {
        return Err(ControlError::NoContact);
    }
    let dyn_ = contact_dynamics(nominal, q, qdot, feet)?;
    assemble_from(nominal, q, qdot, feet, &dyn_, targets, gains)
}

fn check(what: &'static str, found: usize, expected: usize) -> Result<(), ControlError> {
    if found == expected {
        Ok(())
    } else {
        Err(ControlError::Dimension {
            what,
            expected,
            found,
        })
    }
}

fn assemble_from(
    nominal: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    feet: &[usize],
    dyn_: &ContactDynamics,
    targets: &QpTargets,
    gains: &ControlGains,
) -> Result<QpProblem, ControlError> {
    let n = nominal.num_coordinates();
    let nj = nominal.num_joints();
    let nl = FORCES_PER_FOOT * feet.len();
    let d = n + nl;
    check("lambda_des", targets.lambda_des.len(), nl)?;
    check("tau_des", targets.tau_des.len(), nj)?;

    let mut h = DMatrix::zeros(d, d);
    let mut g = DVector::zeros(d);

    let com = com_state(nominal, q, qdot)?;
    let mut a = DMatrix::zeros(2, d);
    a.view_mut((0, 0), (2, n)).copy_from(&com.jacobian);
    let b = targets.xddot_des - com.jdot_qdot;
    add_least_squares(&mut h, &mut g, &a, &DVector::from_column_slice(b.as_slice()), &DVector::from_column_slice(&gains.wx));

    if gains.wq > 0.0 {
        let mut a = DMatrix::zeros(n, d);
        a.view_mut((0, 0), (n, n)).copy_from(&nullspace_projector(&com.jacobian));
        add_least_squares(&mut h, &mut g, &a, &targets.posture, &DVector::from_element(n, gains.wq));
    }
    if gains.w_lambda > 0.0 {
        let mut a = DMatrix::zeros(nl, d);
        a.view_mut((0, n), (nl, nl)).fill_with_identity();
        add_least_squares(&mut h, &mut g, &a, &targets.lambda_des, &DVector::from_element(nl, gains.w_lambda));
    }
    let (t, t0) = torque_map(dyn_, nj);
    if gains.w_tau > 0.0 {
        add_least_squares(&mut h, &mut g, &t, &(&targets.tau_des - &t0), &DVector::from_element(nj, gains.w_tau));
    }
    // Exact symmetry for the solver's check.
    let h = (&h + h.transpose()) * 0.5;

    let nc = dyn_.constraint_jacobian.nrows();
    let mut eq = DMatrix::zeros(BASE_DOF + nc, d);
    let mut eq_rhs = DVector::zeros(BASE_DOF + nc);
    eq.view_mut((0, 0), (BASE_DOF, n))
        .copy_from(&dyn_.mass_matrix.rows(0, BASE_DOF));
    eq.view_mut((0, n), (BASE_DOF, nl))
        .copy_from(&(-dyn_.force_jacobian.columns(0, BASE_DOF).transpose()));
    eq_rhs.rows_mut(0, BASE_DOF).copy_from(&(-dyn_.bias.rows(0, BASE_DOF)));
    eq.view_mut((BASE_DOF, 0), (nc, n)).copy_from(&dyn_.constraint_jacobian);
    eq_rhs.rows_mut(BASE_DOF, nc).copy_from(&(-&dyn_.constraint_bias));

    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    let limits = &gains.limits;
    if limits.torque {
        for (j, joint) in nominal.joints().iter().enumerate() {
            let tj = t.row(j).transpose();
            rows.push((tj.clone(), joint.torque_limit - t0[j]));
            rows.push((-tj, joint.torque_limit + t0[j]));
        }
    }
    if limits.acceleration {
        for (j, joint) in nominal.joints().iter().enumerate() {
            let mut e = DVector::zeros(d);
            e[BASE_DOF + j] = 1.0;
            rows.push((e.clone(), joint.accel_limit));
            rows.push((-e, joint.accel_limit));
        }
    }
    let mu = nominal.friction_coefficient();
    for (i, &(heel_x, toe_x)) in dyn_.foot_x.iter().enumerate() {
        let base = n + FORCES_PER_FOOT * i;
        let (hfx, hfz, tfx, tfz) = (base, base + 1, base + 2, base + 3);
        if limits.friction {
            for (fx, fz) in [(hfx, hfz), (tfx, tfz)] {
                for sign in [1.0, -1.0] {
                    let mut r = DVector::zeros(d);
                    r[fx] = sign;
                    r[fz] = -mu;
                    rows.push((r, 0.0));
                }
            }
        }
        if limits.center_of_pressure {
            // CoP = (heel_x fz_h + toe_x fz_t) / (fz_h + fz_t) inside
            // [heel + m, toe - m]. The pair also keeps both normal forces
            // non-negative.
            let (lo, hi) = if heel_x <= toe_x { (heel_x, toe_x) } else { (toe_x, heel_x) };
            let (lo, hi) = (lo + limits.cop_margin_m, hi - limits.cop_margin_m);
            let mut r = DVector::zeros(d);
            r[hfz] = lo - heel_x;
            r[tfz] = lo - toe_x;
            rows.push((r, 0.0));
            let mut r = DVector::zeros(d);
            r[hfz] = heel_x - hi;
            r[tfz] = toe_x - hi;
            rows.push((r, 0.0));
        } else {
            for fz in [hfz, tfz] {
                let mut r = DVector::zeros(d);
                r[fz] = -1.0;
                rows.push((r, 0.0));
            }
        }
    }
    let mut gi = DMatrix::zeros(rows.len(), d);
    let mut hi = DVector::zeros(rows.len());
    for (k, (r, b)) in rows.into_iter().enumerate() {
        gi.row_mut(k).copy_from(&r.transpose());
        hi[k] = b;
    }
    let mut problem = QpProblem::new(h, g)
        .with_equalities(eq, eq_rhs)
        .with_inequalities(gi, hi);
    problem.variable_names = variable_names(nominal, feet);
    Ok(problem)
}

/// `tau = M_a qdd + h_a - J_a^T lambda` with nominal quantities.
pub fn extract_torques(
    nominal: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    feet: &[usize],
    qddot: &DVector<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>, ControlError> {
    let dyn_ = contact_dynamics(nominal, q, qdot, feet)?;
    check("qddot", qddot.len(), nominal.num_coordinates())?;
    check("lambda", lambda.len(), FORCES_PER_FOOT * feet.len())?;
    Ok(torques_from(&dyn_, nominal.num_joints(), qddot, lambda))
}

fn torques_from(dyn_: &ContactDynamics, nj: usize, qddot: &DVector<f64>, lambda: &DVector<f64>) -> DVector<f64> {
    dyn_.mass_matrix.rows(BASE_DOF, nj) * qddot + dyn_.bias.rows(BASE_DOF, nj)
        - dyn_.force_jacobian.columns(BASE_DOF, nj).transpose() * lambda
}

/// Simulator contact forces (heel fx, heel fz, toe fz per foot) in the
/// controller layout.
pub fn lambda_from_plant(plant_lambda: &DVector<f64>) -> DVector<f64> {
    let k = plant_lambda.len() / 3;
    DVector::from_fn(FORCES_PER_FOOT * k, |i, _| {
        let (foot, c) = (i / 4, i % 4);
        match c {
            0 => plant_lambda[3 * foot],
            1 => plant_lambda[3 * foot + 1],
            2 => 0.0,
            _ => plant_lambda[3 * foot + 2],
        }
    })
}

/// Combined centre of pressure along x; NaN when the feet carry no load.
pub fn center_of_pressure(foot_x: &[(f64, f64)], lambda: &DVector<f64>) -> f64 {
    let mut moment = 0.0;
    let mut normal = 0.0;
    for (i, &(heel, toe)) in foot_x.iter().enumerate() {
        let (fh, ft) = (lambda[4 * i + 1], lambda[4 * i + 3]);
        moment += heel * fh + toe * ft;
        normal += fh + ft;
    }
    if normal > 0.0 {
        moment / normal
    } else {
        f64::NAN
    }
}

/// Everything the controller needs at one tick besides the state.
#[derive(Debug, Clone)]
pub struct ControlInput<'a> {
    pub reference: &'a TaskReference,
    pub posture_ref: &'a DVector<f64>,
    pub gains: &'a ControlGains,
    pub learned: Option<Vector2<f64>>,
    pub settings: &'a QpSettings,
}

/// Feedback law, QP and torque extraction for one tick.
pub fn control_step(
    nominal: &RobotModel,
    state: &PlantState,
    input: &ControlInput<'_>,
) -> Result<(DVector<f64>, ControlDiagnostics), ControlError> {
    let feet: Vec<usize> = state.contacts.iter().map(|c| c.foot).collect();
    if feet.is_empty() {
        return Err(ControlError::NoContact);
    }
    let n = nominal.num_coordinates();
    check("q", state.q.len(), n)?;
    check("qdot", state.qdot.len(), n)?;
    check("posture", input.posture_ref.len(), n)?;
    let com = com_state(nominal, &state.q, &state.qdot)?;
    let learned = input.learned.unwrap_or_else(Vector2::zeros);
    let (xddot_des, feedback) = desired_task_accel(
        input.reference,
        &com.position,
        &com.velocity,
        input.gains,
        input.learned.as_ref(),
    );
    let targets = QpTargets {
        xddot_des,
        posture: posture_desired_accel(input.posture_ref, &state.q, &state.qdot, input.gains),
        lambda_des: default_lambda_des(nominal, feet.len()),
        tau_des: DVector::zeros(nominal.num_joints()),
    };
    let dyn_ = contact_dynamics(nominal, &state.q, &state.qdot, &feet)?;
    let problem = assemble_from(nominal, &state.q, &state.qdot, &feet, &dyn_, &targets, input.gains)?;
    let sol = qp::solve(&problem, input.settings)?;
    let qddot = sol.z.rows(0, n).into_owned();
    let lambda = sol.z.rows(n, sol.z.len() - n).into_owned();
    let tau = torques_from(&dyn_, nominal.num_joints(), &qddot, &lambda);
    let diagnostics = ControlDiagnostics {
        xddot_des,
        feedforward: input.reference.acceleration + learned,
        learned,
        feedback,
        com: com.position,
        com_velocity: com.velocity,
        cop_x: center_of_pressure(&dyn_.foot_x, &lambda),
        qddot,
        lambda,
        tau: tau.clone(),
        status: sol.status,
        iterations: sol.iterations,
        residuals: sol.residuals,
    };
    if sol.status != QpStatus::Optimal {
        return Err(ControlError::QpFailed {
            status: sol.status,
            time: state.time,
            residual: sol.residuals.max(),
            diagnostics: Box::new(diagnostics),
        });
    }
    Ok((tau, diagnostics))
}
