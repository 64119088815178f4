//! Planar floating-base robot description, kinematics and rigid-body dynamics.
//!
//! The floating base is modelled as three virtual joints (prismatic x,
//! prismatic z, revolute pitch) ahead of the base link, so the generalized
//! coordinates are `[x, z, pitch, joint_1, .., joint_n]` and every body in
//! the internal tree carries exactly one degree of freedom.

mod descriptor;
pub mod dynamics;
pub mod kinematics;
pub mod spatial;

use nalgebra::{DVector, Matrix3, Vector2};
use thiserror::Error;

pub use descriptor::{
    load_model, FootDescriptor, JointDescriptor, LinkDescriptor, ModelDescriptor,
    StanceDescriptor, MODEL_FORMAT_VERSION,
};
pub use dynamics::{bias_forces, gravity_forces, inverse_dynamics, mass_matrix};
pub use kinematics::{
    com_state, foot_constraint, jacobian_dot_times_qdot, link_com_position, point_jacobian,
    link_angle, point_position, point_velocity, ComState, FootConstraint, Frames,
};

/// Number of floating-base coordinates of the planar base.
pub const BASE_DOF: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("cannot read model file {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("model parse failure: {0}")]
    Parse(String),
    #[error("unsupported model format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("unknown body `{0}`")]
    UnknownBody(String),
    #[error("expected a vector of length {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub name: String,
    /// kg
    pub mass: f64,
    /// Rotational inertia about the link centre of mass, kg m^2.
    pub inertia: f64,
    /// Centre of mass in link coordinates, m.
    pub com: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    /// +1 or -1: sense of rotation relative to the +x toward +z convention.
    pub axis: f64,
    pub parent: usize,
    pub child: usize,
    /// Joint origin in parent link coordinates, m.
    pub placement: Vector2<f64>,
    /// rad
    pub position_limits: (f64, f64),
    /// N m
    pub torque_limit: f64,
    /// rad/s^2
    pub accel_limit: f64,
}

/// A flat foot touching the ground at a heel and a toe point.
#[derive(Debug, Clone, PartialEq)]
pub struct FootSpec {
    pub name: String,
    pub link: usize,
    pub heel: Vector2<f64>,
    pub toe: Vector2<f64>,
}

/// Optional nominal standing configuration shipped with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Stance {
    pub base: [f64; 3],
    pub joints: Vec<f64>,
}

/// Handle to a link of a particular [`RobotModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinkId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum DofKind {
    PrismaticX,
    PrismaticZ,
    Revolute { axis: f64 },
}

/// One single-DoF body of the internal tree, indexed by its coordinate.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Body {
    pub parent: Option<usize>,
    pub kind: DofKind,
    pub placement: Vector2<f64>,
    pub link: Option<usize>,
    pub inertia: Matrix3<f64>,
}

impl Body {
    pub fn motion_subspace(&self) -> nalgebra::Vector3<f64> {
        match self.kind {
            DofKind::PrismaticX => nalgebra::Vector3::new(0.0, 1.0, 0.0),
            DofKind::PrismaticZ => nalgebra::Vector3::new(0.0, 0.0, 1.0),
            DofKind::Revolute { axis } => nalgebra::Vector3::new(axis, 0.0, 0.0),
        }
    }

    /// Child origin (parent coordinates) and rotation for coordinate value `q`.
    pub fn joint_pose(&self, q: f64) -> (Vector2<f64>, f64) {
        match self.kind {
            DofKind::PrismaticX => (self.placement + Vector2::new(q, 0.0), 0.0),
            DofKind::PrismaticZ => (self.placement + Vector2::new(0.0, q), 0.0),
            DofKind::Revolute { axis } => (self.placement, axis * q),
        }
    }
}

/// Immutable planar floating-base robot.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    name: String,
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    base_link: usize,
    feet: Vec<FootSpec>,
    friction_coefficient: f64,
    gravity: f64,
    stance: Option<Stance>,
    bodies: Vec<Body>,
    link_body: Vec<usize>,
}

impl RobotModel {
    /// Validates the parts and builds the internal tree. Joints may be given in
    /// any order; they are stored parent-before-child (stable in input order).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        links: Vec<LinkSpec>,
        joints: Vec<JointSpec>,
        base_link: usize,
        feet: Vec<FootSpec>,
        friction_coefficient: f64,
        gravity: f64,
        stance: Option<Stance>,
    ) -> Result<Self, ModelError> {
        if links.is_empty() {
            return Err(invalid("links", "at least one link is required"));
        }
        for (i, link) in links.iter().enumerate() {
            if !(link.mass > 0.0 && link.mass.is_finite()) {
                return Err(invalid(
                    format!("links[{i}].mass_kg"),
                    format!("link `{}` must have positive mass, got {}", link.name, link.mass),
                ));
            }
            if !(link.inertia > 0.0 && link.inertia.is_finite()) {
                return Err(invalid(
                    format!("links[{i}].inertia_kgm2"),
                    format!(
                        "link `{}` must have positive inertia, got {}",
                        link.name, link.inertia
                    ),
                ));
            }
        }
        if !(friction_coefficient >= 0.0) {
            return Err(invalid("friction_coefficient", "must be >= 0"));
        }
        if !gravity.is_finite() {
            return Err(invalid("gravity_mps2", "must be finite"));
        }
        if base_link >= links.len() {
            return Err(invalid("base.link", "base link index out of range"));
        }
        if joints.is_empty() {
            return Err(invalid("joints", "at least one actuated joint is required"));
        }

        // Every non-base link must be the child of exactly one joint.
        let mut child_of: Vec<Option<usize>> = vec![None; links.len()];
        for (j, joint) in joints.iter().enumerate() {
            if joint.parent >= links.len() || joint.child >= links.len() {
                return Err(invalid(format!("joints[{j}]"), "link index out of range"));
            }
            if joint.child == base_link {
                return Err(invalid(
                    format!("joints[{j}].child"),
                    "the base link cannot be a joint child",
                ));
            }
            if child_of[joint.child].is_some() {
                return Err(invalid(
                    format!("joints[{j}].child"),
                    format!("link `{}` has more than one parent joint", links[joint.child].name),
                ));
            }
            if !(joint.axis == 1.0 || joint.axis == -1.0) {
                return Err(invalid(format!("joints[{j}].axis"), "must be +1 or -1"));
            }
            let (lo, hi) = joint.position_limits;
            if !(lo < hi) {
                return Err(invalid(
                    format!("joints[{j}].position_limits_rad"),
                    "lower limit must be below upper limit",
                ));
            }
            if !(joint.torque_limit > 0.0) || !(joint.accel_limit > 0.0) {
                return Err(invalid(
                    format!("joints[{j}]"),
                    "torque and acceleration limits must be positive",
                ));
            }
            child_of[joint.child] = Some(j);
        }

        // Kahn-style ordering from the base; anything left over is disconnected
        // or part of a cycle.
        let mut placed = vec![false; links.len()];
        placed[base_link] = true;
        let mut order = Vec::with_capacity(joints.len());
        let mut used = vec![false; joints.len()];
        loop {
            let mut progressed = false;
            for (j, joint) in joints.iter().enumerate() {
                if !used[j] && placed[joint.parent] {
                    used[j] = true;
                    placed[joint.child] = true;
                    order.push(j);
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        if let Some(i) = placed.iter().position(|p| !p) {
            return Err(invalid(
                format!("links[{i}]"),
                format!("link `{}` is not connected to the base", links[i].name),
            ));
        }
        let joints: Vec<JointSpec> = order.into_iter().map(|j| joints[j].clone()).collect();

        for (f, foot) in feet.iter().enumerate() {
            if foot.link >= links.len() {
                return Err(invalid(format!("feet[{f}].link"), "link index out of range"));
            }
            if (foot.toe - foot.heel).norm() <= 0.0 {
                return Err(invalid(format!("feet[{f}]"), "heel and toe must differ"));
            }
        }
        if let Some(stance) = &stance {
            if stance.joints.len() != joints.len() {
                return Err(invalid(
                    "stance.joints_rad",
                    format!("expected {} joint angles", joints.len()),
                ));
            }
        }

        let mut model = RobotModel {
            name: name.into(),
            links,
            joints,
            base_link,
            feet,
            friction_coefficient,
            gravity,
            stance,
            bodies: Vec::new(),
            link_body: Vec::new(),
        };
        model.build_tree();
        Ok(model)
    }

    fn build_tree(&mut self) {
        let zero = Matrix3::zeros();
        let mut bodies = vec![
            Body {
                parent: None,
                kind: DofKind::PrismaticX,
                placement: Vector2::zeros(),
                link: None,
                inertia: zero,
            },
            Body {
                parent: Some(0),
                kind: DofKind::PrismaticZ,
                placement: Vector2::zeros(),
                link: None,
                inertia: zero,
            },
            Body {
                parent: Some(1),
                kind: DofKind::Revolute { axis: 1.0 },
                placement: Vector2::zeros(),
                link: Some(self.base_link),
                inertia: self.link_inertia(self.base_link),
            },
        ];
        let mut link_body = vec![usize::MAX; self.links.len()];
        link_body[self.base_link] = 2;
        for joint in &self.joints {
            let index = bodies.len();
            bodies.push(Body {
                parent: Some(link_body[joint.parent]),
                kind: DofKind::Revolute { axis: joint.axis },
                placement: joint.placement,
                link: Some(joint.child),
                inertia: self.link_inertia(joint.child),
            });
            link_body[joint.child] = index;
        }
        self.bodies = bodies;
        self.link_body = link_body;
    }

    fn link_inertia(&self, link: usize) -> Matrix3<f64> {
        let l = &self.links[link];
        spatial::spatial_inertia(l.mass, l.inertia, &l.com)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of actuated joints `n`.
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Number of generalized coordinates, `n + 3`.
    pub fn num_coordinates(&self) -> usize {
        self.joints.len() + BASE_DOF
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn feet(&self) -> &[FootSpec] {
        &self.feet
    }

    pub fn base_link(&self) -> LinkId {
        LinkId(self.base_link)
    }

    pub fn friction_coefficient(&self) -> f64 {
        self.friction_coefficient
    }

    /// Gravity magnitude (m/s^2), acting along -z.
    pub fn gravity(&self) -> f64 {
        self.gravity
    }

    pub fn stance(&self) -> Option<&Stance> {
        self.stance.as_ref()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn link_id(&self, name: &str) -> Result<LinkId, ModelError> {
        self.links
            .iter()
            .position(|l| l.name == name)
            .map(LinkId)
            .ok_or_else(|| ModelError::UnknownBody(name.to_string()))
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub(crate) fn bodies(&self) -> &[Body] {
        &self.bodies
    }

    pub(crate) fn body_of(&self, link: LinkId) -> Result<usize, ModelError> {
        self.link_body
            .get(link.0)
            .copied()
            .ok_or_else(|| ModelError::UnknownBody(format!("#{}", link.0)))
    }

    /// Generalized coordinates of the bundled stance, if the model has one.
    pub fn stance_q(&self) -> Option<DVector<f64>> {
        self.stance.as_ref().map(|s| {
            DVector::from_iterator(
                self.num_coordinates(),
                s.base.iter().chain(s.joints.iter()).copied(),
            )
        })
    }

    /// Copy of this model with replaced link parameters, gravity and
    /// (optionally) the same topology. Used to build mismatched plants.
    pub fn with_inertial_parameters(
        &self,
        links: Vec<LinkSpec>,
        gravity: f64,
    ) -> Result<Self, ModelError> {
        if links.len() != self.links.len() {
            return Err(ModelError::Dimension {
                expected: self.links.len(),
                found: links.len(),
            });
        }
        RobotModel::new(
            self.name.clone(),
            links,
            self.joints.clone(),
            self.base_link,
            self.feet.clone(),
            self.friction_coefficient,
            gravity,
            self.stance.clone(),
        )
    }

    pub(crate) fn check_len(&self, v: &DVector<f64>) -> Result<(), ModelError> {
        if v.len() != self.num_coordinates() {
            return Err(ModelError::Dimension {
                expected: self.num_coordinates(),
                found: v.len(),
            });
        }
        Ok(())
    }
}

/// The planar biped shipped with the crate (two 3-joint legs and a torso).
pub const BUNDLED_BIPED: &str = include_str!("../../data/planar_biped.toml");

/// Point-mass pendulum on a mount link that can be pinned via its foot.
pub const BUNDLED_PENDULUM: &str = include_str!("../../data/pendulum.toml");

/// Parses [`BUNDLED_BIPED`].
pub fn bundled_biped() -> RobotModel {
    RobotModel::from_toml_str(BUNDLED_BIPED).expect("bundled biped descriptor is valid")
}

/// Parses [`BUNDLED_PENDULUM`].
pub fn bundled_pendulum() -> RobotModel {
    RobotModel::from_toml_str(BUNDLED_PENDULUM).expect("bundled pendulum descriptor is valid")
}
