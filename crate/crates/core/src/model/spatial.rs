//! Planar (x-z plane) spatial vector algebra.
//!
//! Motion vectors are `(omega, vx, vz)`: the angular rate about the axis
//! normal to the plane and the linear velocity of the frame origin, both in
//! frame coordinates. Force vectors are `(moment, fx, fz)` with the moment
//! taken about the frame origin. Angles are positive when rotating +x toward
//! +z.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Rotation taking frame coordinates to parent coordinates.
pub fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// `omega x r` for a scalar planar rate.
pub fn perp(r: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-r.y, r.x)
}

/// Planar cross product `a x b` (a scalar).
pub fn cross2(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Motion transform from a parent frame to a child frame whose origin sits
/// at `origin` (parent coordinates) and which is rotated by `theta`.
pub fn motion_transform(origin: &Vector2<f64>, theta: f64) -> Matrix3<f64> {
    let e = rotation(theta).transpose();
    let ep = e * perp(origin);
    Matrix3::new(
        1.0, 0.0, 0.0, //
        ep.x, e[(0, 0)], e[(0, 1)], //
        ep.y, e[(1, 0)], e[(1, 1)],
    )
}

/// Motion cross-product operator `v x`.
pub fn crm(v: &Vector3<f64>) -> Matrix3<f64> {
    let (w, vx, vz) = (v[0], v[1], v[2]);
    Matrix3::new(
        0.0, 0.0, 0.0, //
        vz, 0.0, -w, //
        -vx, w, 0.0,
    )
}

/// Force cross-product operator `v x*`.
pub fn crf(v: &Vector3<f64>) -> Matrix3<f64> {
    -crm(v).transpose()
}

/// Spatial inertia about a frame origin for a body with the given mass,
/// rotational inertia about its centre of mass, and centre-of-mass offset.
pub fn spatial_inertia(mass: f64, inertia_com: f64, com: &Vector2<f64>) -> Matrix3<f64> {
    let (cx, cz) = (com.x, com.y);
    Matrix3::new(
        inertia_com + mass * com.norm_squared(),
        -mass * cz,
        mass * cx,
        -mass * cz,
        mass,
        0.0,
        mass * cx,
        0.0,
        mass,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn transform_moves_velocity_to_child_origin() {
        // Pure rotation about the parent origin seen from a child 1 m along x.
        let x = motion_transform(&Vector2::new(1.0, 0.0), 0.0);
        let v = x * Vector3::new(2.0, 0.0, 0.0);
        assert_relative_eq!(v, Vector3::new(2.0, 0.0, 2.0));
    }

    #[test]
    fn crf_is_negative_transpose_of_crm() {
        let v = Vector3::new(0.3, -1.2, 0.7);
        assert_relative_eq!(crf(&v) + crm(&v).transpose(), Matrix3::zeros());
    }

    #[test]
    fn inertia_yields_momentum_of_point_mass() {
        let com = Vector2::new(0.0, -0.5);
        let inertia = spatial_inertia(2.0, 0.0, &com);
        // Spinning at 1 rad/s about the origin: the mass moves at +0.5 m/s in x.
        let h = inertia * Vector3::new(1.0, 0.0, 0.0);
        assert_relative_eq!(h, Vector3::new(0.5, 1.0, 0.0), epsilon = 1e-12);
    }
}
