//! TOML model descriptor.
//!
//! ```toml
//! format_version = 1
//! name = "planar_biped"
//! gravity_mps2 = 9.81            # magnitude, acting along -z
//! friction_coefficient = 0.8
//! base_link = "torso"
//!
//! [[links]]
//! name = "torso"
//! mass_kg = 20.0
//! inertia_kgm2 = 0.6             # about the link centre of mass
//! com_m = [0.0, 0.2]             # link coordinates (x, z)
//!
//! [[joints]]
//! name = "l_hip"
//! type = "revolute"
//! axis = 1                       # +1: rotates +x toward +z
//! parent = "torso"
//! child = "l_thigh"
//! placement_m = [0.0, 0.0]       # joint origin in parent coordinates
//! position_limits_rad = [-1.5, 1.5]
//! torque_limit_nm = 300.0
//! accel_limit_radps2 = 500.0
//!
//! [[feet]]
//! name = "left"
//! link = "l_foot"
//! heel_m = [-0.05, -0.06]
//! toe_m = [0.15, -0.06]
//!
//! [stance]                       # optional
//! base = [0.0, 0.76, 0.0]        # x m, z m, pitch rad
//! joints_rad = [...]             # in joint order
//! ```

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::{FootSpec, JointKind, JointSpec, LinkSpec, ModelError, RobotModel, Stance};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub format_version: u32,
    pub name: String,
    #[serde(default = "default_gravity")]
    pub gravity_mps2: f64,
    pub friction_coefficient: f64,
    pub base_link: String,
    pub links: Vec<LinkDescriptor>,
    pub joints: Vec<JointDescriptor>,
    #[serde(default)]
    pub feet: Vec<FootDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stance: Option<StanceDescriptor>,
}

fn default_gravity() -> f64 {
    9.81
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDescriptor {
    pub name: String,
    pub mass_kg: f64,
    pub inertia_kgm2: f64,
    pub com_m: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDescriptor {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default = "default_axis")]
    pub axis: i32,
    pub parent: String,
    pub child: String,
    pub placement_m: [f64; 2],
    pub position_limits_rad: [f64; 2],
    pub torque_limit_nm: f64,
    pub accel_limit_radps2: f64,
}

fn default_axis() -> i32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootDescriptor {
    pub name: String,
    pub link: String,
    pub heel_m: [f64; 2],
    pub toe_m: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StanceDescriptor {
    pub base: [f64; 3],
    pub joints_rad: Vec<f64>,
}

/// Reads and validates a model descriptor file.
pub fn load_model(path: impl AsRef<Path>) -> Result<RobotModel, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    RobotModel::from_toml_str(&text)
}

impl ModelDescriptor {
    pub fn into_model(self) -> Result<RobotModel, ModelError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Version {
                found: self.format_version,
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let links: Vec<LinkSpec> = self
            .links
            .iter()
            .map(|l| LinkSpec {
                name: l.name.clone(),
                mass: l.mass_kg,
                inertia: l.inertia_kgm2,
                com: Vector2::from(l.com_m),
            })
            .collect();
        let index = |name: &str, field: String| -> Result<usize, ModelError> {
            links
                .iter()
                .position(|l| l.name == name)
                .ok_or_else(|| ModelError::Invalid {
                    field,
                    reason: format!("no link named `{name}`"),
                })
        };
        let mut names = std::collections::HashSet::new();
        for (i, l) in links.iter().enumerate() {
            if !names.insert(l.name.as_str()) {
                return Err(ModelError::Invalid {
                    field: format!("links[{i}].name"),
                    reason: format!("duplicate link name `{}`", l.name),
                });
            }
        }
        let base = index(&self.base_link, "base_link".into())?;
        let mut joints = Vec::with_capacity(self.joints.len());
        for (j, d) in self.joints.iter().enumerate() {
            let kind = match d.kind.as_str() {
                "revolute" => JointKind::Revolute,
                other => {
                    return Err(ModelError::Invalid {
                        field: format!("joints[{j}].type"),
                        reason: format!("unsupported joint type `{other}`"),
                    })
                }
            };
            joints.push(JointSpec {
                name: d.name.clone(),
                kind,
                axis: f64::from(d.axis),
                parent: index(&d.parent, format!("joints[{j}].parent"))?,
                child: index(&d.child, format!("joints[{j}].child"))?,
                placement: Vector2::from(d.placement_m),
                position_limits: (d.position_limits_rad[0], d.position_limits_rad[1]),
                torque_limit: d.torque_limit_nm,
                accel_limit: d.accel_limit_radps2,
            });
        }
        let mut feet = Vec::with_capacity(self.feet.len());
        for (f, d) in self.feet.iter().enumerate() {
            feet.push(FootSpec {
                name: d.name.clone(),
                link: index(&d.link, format!("feet[{f}].link"))?,
                heel: Vector2::from(d.heel_m),
                toe: Vector2::from(d.toe_m),
            });
        }
        let stance = self.stance.map(|s| Stance {
            base: s.base,
            joints: s.joints_rad,
        });
        RobotModel::new(
            self.name,
            links,
            joints,
            base,
            feet,
            self.friction_coefficient,
            self.gravity_mps2,
            stance,
        )
    }
}

impl RobotModel {
    pub fn from_toml_str(text: &str) -> Result<Self, ModelError> {
        let descriptor: ModelDescriptor =
            toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
        descriptor.into_model()
    }

    /// Descriptor reproducing this model (joints in internal order).
    pub fn to_descriptor(&self) -> ModelDescriptor {
        let link_name = |i: usize| self.links()[i].name.clone();
        ModelDescriptor {
            format_version: MODEL_FORMAT_VERSION,
            name: self.name().to_string(),
            gravity_mps2: self.gravity(),
            friction_coefficient: self.friction_coefficient(),
            base_link: link_name(self.base_link().0),
            links: self
                .links()
                .iter()
                .map(|l| LinkDescriptor {
                    name: l.name.clone(),
                    mass_kg: l.mass,
                    inertia_kgm2: l.inertia,
                    com_m: [l.com.x, l.com.y],
                })
                .collect(),
            joints: self
                .joints()
                .iter()
                .map(|j| JointDescriptor {
                    name: j.name.clone(),
                    kind: "revolute".into(),
                    axis: j.axis as i32,
                    parent: link_name(j.parent),
                    child: link_name(j.child),
                    placement_m: [j.placement.x, j.placement.y],
                    position_limits_rad: [j.position_limits.0, j.position_limits.1],
                    torque_limit_nm: j.torque_limit,
                    accel_limit_radps2: j.accel_limit,
                })
                .collect(),
            feet: self
                .feet()
                .iter()
                .map(|f| FootDescriptor {
                    name: f.name.clone(),
                    link: link_name(f.link),
                    heel_m: [f.heel.x, f.heel.y],
                    toe_m: [f.toe.x, f.toe.y],
                })
                .collect(),
            stance: self.stance().map(|s| StanceDescriptor {
                base: s.base,
                joints_rad: s.joints.clone(),
            }),
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(&self.to_descriptor()).expect("descriptor serializes")
    }
}
