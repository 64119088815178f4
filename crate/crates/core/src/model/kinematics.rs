//! World-frame kinematics: point positions, Jacobians, `Jdot qdot` terms and
//! centre-of-mass quantities.

use nalgebra::{DMatrix, DVector, Vector2};

use super::spatial::{perp, rotation};
use super::{DofKind, LinkId, ModelError, RobotModel};

/// World pose and motion of every body frame of the tree.
#[derive(Debug, Clone)]
pub struct Frames {
    pub angle: Vec<f64>,
    pub origin: Vec<Vector2<f64>>,
    pub rate: Vec<f64>,
    pub velocity: Vec<Vector2<f64>>,
    /// Origin acceleration under zero generalized acceleration.
    pub bias_accel: Vec<Vector2<f64>>,
}

impl Frames {
    /// Positions only; velocities are zero.
    pub fn at(model: &RobotModel, q: &DVector<f64>) -> Result<Self, ModelError> {
        Self::with_velocity(model, q, &DVector::zeros(model.num_coordinates()))
    }

    pub fn with_velocity(
        model: &RobotModel,
        q: &DVector<f64>,
        qdot: &DVector<f64>,
    ) -> Result<Self, ModelError> {
        model.check_len(q)?;
        model.check_len(qdot)?;
        let bodies = model.bodies();
        let nb = bodies.len();
        let mut frames = Frames {
            angle: vec![0.0; nb],
            origin: vec![Vector2::zeros(); nb],
            rate: vec![0.0; nb],
            velocity: vec![Vector2::zeros(); nb],
            bias_accel: vec![Vector2::zeros(); nb],
        };
        for (i, body) in bodies.iter().enumerate() {
            let (p_angle, p_origin, p_rate, p_vel, p_acc) = match body.parent {
                Some(p) => (
                    frames.angle[p],
                    frames.origin[p],
                    frames.rate[p],
                    frames.velocity[p],
                    frames.bias_accel[p],
                ),
                None => (0.0, Vector2::zeros(), 0.0, Vector2::zeros(), Vector2::zeros()),
            };
            let (local_origin, local_angle) = body.joint_pose(q[i]);
            let r = rotation(p_angle) * local_origin;
            let mut velocity = p_vel + p_rate * perp(&r);
            let mut accel = p_acc - p_rate * p_rate * r;
            let mut rate = p_rate;
            match body.kind {
                DofKind::PrismaticX | DofKind::PrismaticZ => {
                    let axis = rotation(p_angle) * body.motion_subspace().fixed_rows::<2>(1);
                    let slide = axis * qdot[i];
                    velocity += slide;
                    accel += 2.0 * p_rate * perp(&slide);
                }
                DofKind::Revolute { axis } => rate += axis * qdot[i],
            }
            frames.angle[i] = p_angle + local_angle;
            frames.origin[i] = p_origin + r;
            frames.rate[i] = rate;
            frames.velocity[i] = velocity;
            frames.bias_accel[i] = accel;
        }
        Ok(frames)
    }

    fn world_point(&self, body: usize, point: &Vector2<f64>) -> Vector2<f64> {
        self.origin[body] + rotation(self.angle[body]) * point
    }

    /// `3 x (n+3)` Jacobian of a body point: rows world x, world z, pitch.
    fn jacobian_rows(&self, model: &RobotModel, body: usize, point: &Vector2<f64>) -> DMatrix<f64> {
        let bodies = model.bodies();
        let target = self.world_point(body, point);
        let mut jac = DMatrix::zeros(3, bodies.len());
        let mut cursor = Some(body);
        while let Some(j) = cursor {
            let parent_angle = bodies[j].parent.map_or(0.0, |p| self.angle[p]);
            match bodies[j].kind {
                DofKind::PrismaticX | DofKind::PrismaticZ => {
                    let axis =
                        rotation(parent_angle) * bodies[j].motion_subspace().fixed_rows::<2>(1);
                    jac[(0, j)] = axis.x;
                    jac[(1, j)] = axis.y;
                }
                DofKind::Revolute { axis } => {
                    let col = axis * perp(&(target - self.origin[j]));
                    jac[(0, j)] = col.x;
                    jac[(1, j)] = col.y;
                    jac[(2, j)] = axis;
                }
            }
            cursor = bodies[j].parent;
        }
        jac
    }

    fn point_bias(&self, body: usize, point: &Vector2<f64>) -> Vector2<f64> {
        let r = rotation(self.angle[body]) * point;
        let w = self.rate[body];
        self.bias_accel[body] - w * w * r
    }
}

/// World position of a body-fixed point.
pub fn point_position(
    model: &RobotModel,
    q: &DVector<f64>,
    link: LinkId,
    point: &Vector2<f64>,
) -> Result<Vector2<f64>, ModelError> {
    let body = model.body_of(link)?;
    Ok(Frames::at(model, q)?.world_point(body, point))
}

/// World velocity of a body-fixed point.
pub fn point_velocity(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    link: LinkId,
    point: &Vector2<f64>,
) -> Result<Vector2<f64>, ModelError> {
    let body = model.body_of(link)?;
    let frames = Frames::with_velocity(model, q, qdot)?;
    let r = rotation(frames.angle[body]) * point;
    Ok(frames.velocity[body] + frames.rate[body] * perp(&r))
}

/// Jacobian of a body-fixed point. With `with_pitch`, a third row holding
/// the body's pitch rate is appended (flat-foot contacts).
pub fn point_jacobian(
    model: &RobotModel,
    q: &DVector<f64>,
    link: LinkId,
    point: &Vector2<f64>,
    with_pitch: bool,
) -> Result<DMatrix<f64>, ModelError> {
    let body = model.body_of(link)?;
    let jac = Frames::at(model, q)?.jacobian_rows(model, body, point);
    Ok(if with_pitch { jac } else { jac.rows(0, 2).into_owned() })
}

/// `Jdot qdot` of a body-fixed point: its acceleration at zero `qddot`.
pub fn jacobian_dot_times_qdot(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    link: LinkId,
    point: &Vector2<f64>,
) -> Result<Vector2<f64>, ModelError> {
    let body = model.body_of(link)?;
    Ok(Frames::with_velocity(model, q, qdot)?.point_bias(body, point))
}

/// World position of a link's centre of mass.
pub fn link_com_position(
    model: &RobotModel,
    q: &DVector<f64>,
    link: LinkId,
) -> Result<Vector2<f64>, ModelError> {
    let com = model
        .links()
        .get(link.0)
        .ok_or_else(|| ModelError::UnknownBody(format!("#{}", link.0)))?
        .com;
    point_position(model, q, link, &com)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComState {
    pub position: Vector2<f64>,
    pub velocity: Vector2<f64>,
    /// `2 x (n+3)`
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: Vector2<f64>,
}

/// Whole-body centre-of-mass position, velocity, Jacobian and `Jdot qdot`.
pub fn com_state(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<ComState, ModelError> {
    let frames = Frames::with_velocity(model, q, qdot)?;
    let total = model.total_mass();
    let mut position = Vector2::zeros();
    let mut jacobian = DMatrix::zeros(2, model.num_coordinates());
    let mut bias = Vector2::zeros();
    for (i, link) in model.links().iter().enumerate() {
        let body = model.body_of(LinkId(i))?;
        let w = link.mass / total;
        position += w * frames.world_point(body, &link.com);
        jacobian += w * frames.jacobian_rows(model, body, &link.com).rows(0, 2);
        bias += w * frames.point_bias(body, &link.com);
    }
    let velocity = Vector2::from_iterator((&jacobian * qdot).iter().copied());
    Ok(ComState {
        position,
        velocity,
        jacobian,
        jdot_qdot: bias,
    })
}

/// Kinematic constraint rows of a flat foot: heel x, heel z and toe z.
///
/// The three rows fix the foot's planar pose without the redundancy of
/// constraining both points in both directions.
#[derive(Debug, Clone)]
pub struct FootConstraint {
    /// `3 x (n+3)`
    pub jacobian: DMatrix<f64>,
    pub jdot_qdot: nalgebra::Vector3<f64>,
    /// Current heel x, heel z, toe z.
    pub position: nalgebra::Vector3<f64>,
    /// World heel and toe positions.
    pub heel: Vector2<f64>,
    pub toe: Vector2<f64>,
    /// `2 x (n+3)` Jacobians of the heel and toe points.
    pub heel_jacobian: DMatrix<f64>,
    pub toe_jacobian: DMatrix<f64>,
}

pub fn foot_constraint(
    model: &RobotModel,
    frames: &Frames,
    foot: usize,
) -> Result<FootConstraint, ModelError> {
    let spec = model
        .feet()
        .get(foot)
        .ok_or_else(|| ModelError::UnknownBody(format!("foot #{foot}")))?;
    let body = model.body_of(LinkId(spec.link))?;
    let heel_jacobian = frames.jacobian_rows(model, body, &spec.heel).rows(0, 2).into_owned();
    let toe_jacobian = frames.jacobian_rows(model, body, &spec.toe).rows(0, 2).into_owned();
    let heel = frames.world_point(body, &spec.heel);
    let toe = frames.world_point(body, &spec.toe);
    let heel_bias = frames.point_bias(body, &spec.heel);
    let toe_bias = frames.point_bias(body, &spec.toe);
    let mut jacobian = DMatrix::zeros(3, model.num_coordinates());
    jacobian.rows_mut(0, 2).copy_from(&heel_jacobian);
    jacobian.row_mut(2).copy_from(&toe_jacobian.row(1));
    Ok(FootConstraint {
        jacobian,
        jdot_qdot: nalgebra::Vector3::new(heel_bias.x, heel_bias.y, toe_bias.y),
        position: nalgebra::Vector3::new(heel.x, heel.y, toe.y),
        heel,
        toe,
        heel_jacobian,
        toe_jacobian,
    })
}

/// Rotation of a link in the world frame.
pub fn link_angle(model: &RobotModel, q: &DVector<f64>, link: LinkId) -> Result<f64, ModelError> {
    let body = model.body_of(link)?;
    Ok(Frames::at(model, q)?.angle[body])
}
