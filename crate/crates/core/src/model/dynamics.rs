//! Composite-rigid-body mass matrix and recursive Newton-Euler inverse dynamics.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::spatial::{crf, crm, motion_transform};
use super::{ModelError, RobotModel};

/// Parent-to-child motion transforms for every body at configuration `q`.
fn transforms(model: &RobotModel, q: &DVector<f64>) -> Vec<Matrix3<f64>> {
    model
        .bodies()
        .iter()
        .enumerate()
        .map(|(i, body)| {
            let (origin, theta) = body.joint_pose(q[i]);
            motion_transform(&origin, theta)
        })
        .collect()
}

/// Joint-space inertia matrix `M(q)`, `(n+3) x (n+3)`.
pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>, ModelError> {
    model.check_len(q)?;
    let bodies = model.bodies();
    let nb = bodies.len();
    let xs = transforms(model, q);
    let mut composite: Vec<Matrix3<f64>> = bodies.iter().map(|b| b.inertia).collect();
    for i in (0..nb).rev() {
        if let Some(p) = bodies[i].parent {
            let folded = xs[i].transpose() * composite[i] * xs[i];
            composite[p] += folded;
        }
    }
    let mut m = DMatrix::zeros(nb, nb);
    for i in 0..nb {
        let s_i = bodies[i].motion_subspace();
        let mut f = composite[i] * s_i;
        m[(i, i)] = s_i.dot(&f);
        let mut j = i;
        while let Some(p) = bodies[j].parent {
            f = xs[j].transpose() * f;
            j = p;
            let value = bodies[j].motion_subspace().dot(&f);
            m[(i, j)] = value;
            m[(j, i)] = value;
        }
    }
    Ok(m)
}

/// Generalized forces realizing `qddot` at `(q, qdot)`, gravity included:
/// `M(q) qddot + h(q, qdot)`.
pub fn inverse_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
    qddot: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    model.check_len(q)?;
    model.check_len(qdot)?;
    model.check_len(qddot)?;
    let bodies = model.bodies();
    let nb = bodies.len();
    let xs = transforms(model, q);
    // Gravity enters as an upward acceleration of the world frame.
    let a_world = Vector3::new(0.0, 0.0, model.gravity());
    let mut v = vec![Vector3::zeros(); nb];
    let mut a = vec![Vector3::zeros(); nb];
    let mut f = vec![Vector3::zeros(); nb];
    for i in 0..nb {
        let s = bodies[i].motion_subspace();
        let vj = s * qdot[i];
        let (v_parent, a_parent) = match bodies[i].parent {
            Some(p) => (v[p], a[p]),
            None => (Vector3::zeros(), a_world),
        };
        v[i] = xs[i] * v_parent + vj;
        a[i] = xs[i] * a_parent + s * qddot[i] + crm(&v[i]) * vj;
        let inertia = bodies[i].inertia;
        f[i] = inertia * a[i] + crf(&v[i]) * (inertia * v[i]);
    }
    let mut tau = DVector::zeros(nb);
    for i in (0..nb).rev() {
        tau[i] = bodies[i].motion_subspace().dot(&f[i]);
        if let Some(p) = bodies[i].parent {
            let fp = xs[i].transpose() * f[i];
            f[p] += fp;
        }
    }
    Ok(tau)
}

/// Nonlinear terms `h(q, qdot)`: Coriolis, centrifugal and gravity forces.
pub fn bias_forces(
    model: &RobotModel,
    q: &DVector<f64>,
    qdot: &DVector<f64>,
) -> Result<DVector<f64>, ModelError> {
    let zero = DVector::zeros(model.num_coordinates());
    inverse_dynamics(model, q, qdot, &zero)
}

/// Generalized gravity forces, `h(q, 0)`.
pub fn gravity_forces(model: &RobotModel, q: &DVector<f64>) -> Result<DVector<f64>, ModelError> {
    let zero = DVector::zeros(model.num_coordinates());
    inverse_dynamics(model, q, &zero, &zero)
}
