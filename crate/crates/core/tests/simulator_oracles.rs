use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskff::model::{
    bias_forces, bundled_biped, bundled_pendulum, com_state, gravity_forces, mass_matrix,
    point_jacobian, RobotModel, BASE_DOF,
};
use taskff::simulator::{
    constrained_accel, contact_rows, make_plant, step, Baumgarte, MismatchSpec, PlantModel,
    PlantState,
};

fn plant(model: &RobotModel, mismatch: &MismatchSpec, dt: f64, substeps: usize) -> PlantModel {
    make_plant(model, mismatch, dt, substeps, Baumgarte::for_step(dt)).unwrap()
}

/// Minimum-norm (tau, lambda) with `S^T tau + J^T lambda = g(q)`.
fn static_oracle(model: &RobotModel, state: &PlantState) -> (DVector<f64>, DVector<f64>) {
    let n = model.num_coordinates();
    let nj = model.num_joints();
    let rows = contact_rows(model, state).unwrap();
    let k = rows.jacobian.nrows();
    let mut a = DMatrix::zeros(n, nj + k);
    for j in 0..nj {
        a[(BASE_DOF + j, j)] = 1.0;
    }
    a.view_mut((0, nj), (n, k)).copy_from(&rows.jacobian.transpose());
    let g = gravity_forces(model, &state.q).unwrap();
    let x = a.svd(true, true).solve(&g, 1e-12).unwrap();
    (x.rows(0, nj).into_owned(), x.rows(nj, k).into_owned())
}

fn standing(model: &RobotModel) -> PlantState {
    let q = model.stance_q().unwrap();
    PlantState::new(model, q, DVector::zeros(model.num_coordinates()), &[0, 1]).unwrap()
}

fn random_state(rng: &mut ChaCha8Rng, model: &RobotModel) -> PlantState {
    let mut q = model.stance_q().unwrap();
    let mut qd = DVector::zeros(q.len());
    for i in 0..q.len() {
        q[i] += rng.gen_range(-0.2..0.2);
        qd[i] = rng.gen_range(-1.0..1.0);
    }
    let mut s = PlantState::new(model, q, qd, &[0, 1]).unwrap();
    for c in &mut s.contacts {
        c.anchor.x += rng.gen_range(-1e-3..1e-3);
        c.anchor.z += rng.gen_range(-1e-3..1e-3);
    }
    s
}

#[test]
fn identity_plant_reproduces_nominal_quantities() {
    let nominal = bundled_biped();
    let p = plant(&nominal, &MismatchSpec::identity(), 1e-3, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let s = random_state(&mut rng, &nominal);
        let a = mass_matrix(&nominal, &s.q).unwrap() - mass_matrix(p.model(), &s.q).unwrap();
        let b = bias_forces(&nominal, &s.q, &s.qdot).unwrap() - bias_forces(p.model(), &s.q, &s.qdot).unwrap();
        let foot = nominal.feet()[0].clone();
        let link = taskff::model::LinkId(foot.link);
        let c = point_jacobian(&nominal, &s.q, link, &foot.toe, true).unwrap()
            - point_jacobian(p.model(), &s.q, link, &foot.toe, true).unwrap();
        assert!(a.amax() <= 1e-12 && b.amax() <= 1e-12 && c.amax() <= 1e-12);
    }
}

#[test]
fn constrained_accel_satisfies_dynamics_and_stabilized_contacts() {
    let nominal = bundled_biped();
    let p = plant(&nominal, &MismatchSpec::default_scenario("torso"), 1e-3, 10);
    let model = p.model();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let s = random_state(&mut rng, model);
        let tau = DVector::from_fn(6, |_, _| rng.gen_range(-50.0..50.0));
        let acc = constrained_accel(&p, &s, &tau).unwrap();
        let rows = contact_rows(model, &s).unwrap();
        let m = mass_matrix(model, &s.q).unwrap();
        let h = bias_forces(model, &s.q, &s.qdot).unwrap();
        let mut lhs = &m * &acc.qddot + h - rows.jacobian.transpose() * &acc.lambda;
        for j in 0..6 {
            lhs[BASE_DOF + j] += p.friction()[j] * s.qdot[BASE_DOF + j] - tau[j];
        }
        assert!(lhs.amax() <= 1e-8, "dynamics residual {:e}", lhs.amax());
        let b = p.baumgarte();
        let con = &rows.jacobian * &acc.qddot + &rows.jdot_qdot
            + (&rows.jacobian * &s.qdot) * (2.0 * b.alpha)
            + &rows.drift * b.beta;
        assert!(con.amax() <= 1e-8, "constraint residual {:e}", con.amax());
    }
}

#[test]
fn gravity_compensation_holds_the_biped_still() {
    let nominal = bundled_biped();
    let p = plant(&nominal, &MismatchSpec::identity(), 1e-3, 10);
    let s = standing(&nominal);
    let (tau, lambda) = static_oracle(&nominal, &s);
    let acc = constrained_accel(&p, &s, &tau).unwrap();
    assert!(acc.qddot.amax() <= 1e-9, "{}", acc.qddot.amax());
    assert!((&acc.lambda - &lambda).amax() <= 1e-6);
    let weight = nominal.total_mass() * nominal.gravity();
    assert!((acc.vertical_force() - weight).abs() <= 1e-6);
}

#[test]
fn standing_two_seconds_keeps_base_height_and_contacts() {
    let nominal = bundled_biped();
    let p = plant(&nominal, &MismatchSpec::identity(), 1e-3, 10);
    let mut s = standing(&nominal);
    let (tau, _) = static_oracle(&nominal, &s);
    let z0 = s.q[1];
    for _ in 0..2000 {
        s = step(&p, &s, &tau).unwrap();
    }
    assert!((s.time - 2.0).abs() < 1e-9);
    assert!((s.q[1] - z0).abs() < 1e-3);
    assert!(s.contact_drift(&nominal).unwrap() < 1e-4);
}

#[test]
fn contact_drift_stays_small_during_a_ten_second_episode() {
    // Mismatched plant under gravity compensation, a joint PD around the
    // stance and a periodic knee torque: the body moves but the feet must not.
    let nominal = bundled_biped();
    let p = plant(&nominal, &MismatchSpec::default_scenario("torso"), 1e-3, 10);
    let mut s = standing(&nominal);
    let q0 = s.q.clone();
    let knees = [nominal.joint_index("l_knee").unwrap(), nominal.joint_index("r_knee").unwrap()];
    let mut max_drift = 0.0f64;
    let mut min_normal = f64::INFINITY;
    for _ in 0..10_000 {
        let (mut tau, _) = static_oracle(p.model(), &s);
        for j in 0..6 {
            let i = BASE_DOF + j;
            tau[j] += 200.0 * (q0[i] - s.q[i]) - 20.0 * s.qdot[i];
        }
        for &k in &knees {
            tau[k] += 5.0 * (s.time * std::f64::consts::PI).sin();
        }
        let tau = tau + p.friction().component_mul(&s.qdot.rows(BASE_DOF, 6));
        let acc = constrained_accel(&p, &s, &tau).unwrap();
        for i in 0..acc.lambda.len() {
            if i % 3 != 0 {
                min_normal = min_normal.min(acc.lambda[i]);
            }
        }
        s = step(&p, &s, &tau).unwrap_or_else(|e| panic!("{e}"));
        max_drift = max_drift.max(s.contact_drift(p.model()).unwrap());
    }
    assert!(max_drift < 1e-4, "drift {max_drift:e}");
    assert!(min_normal >= -1e-9, "normal force {min_normal}");
}

fn pendulum_energy(model: &RobotModel, s: &PlantState) -> f64 {
    let m = mass_matrix(model, &s.q).unwrap();
    let kinetic = 0.5 * s.qdot.dot(&(&m * &s.qdot));
    let com = com_state(model, &s.q, &s.qdot).unwrap().position;
    kinetic + model.total_mass() * model.gravity() * com.y
}

#[test]
fn passive_pendulum_conserves_energy() {
    let model = bundled_pendulum();
    let p = plant(&model, &MismatchSpec::identity(), 1e-4, 1);
    let q = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]);
    let mut s = PlantState::new(&model, q, DVector::zeros(4), &[0]).unwrap();
    // Energy measured from the lowest bob position.
    let floor = {
        let hanging = PlantState::new(&model, DVector::zeros(4), DVector::zeros(4), &[0]).unwrap();
        pendulum_energy(&model, &hanging)
    };
    let e0 = pendulum_energy(&model, &s) - floor;
    let tau = DVector::zeros(1);
    let mut worst = 0.0f64;
    for _ in 0..50_000 {
        s = step(&p, &s, &tau).unwrap();
        worst = worst.max((pendulum_energy(&model, &s) - floor - e0).abs());
    }
    assert!(worst / e0 < 1e-3, "relative drift {}", worst / e0);
}

#[test]
fn free_floating_pendulum_conserves_energy_without_gravity() {
    let model = bundled_pendulum();
    let spec = MismatchSpec {
        gravity_delta_mps2: -model.gravity(),
        ..MismatchSpec::identity()
    };
    let p = plant(&model, &spec, 1e-4, 1);
    let qd = DVector::from_vec(vec![0.3, -0.2, 1.0, -2.0]);
    let mut s = PlantState::new(p.model(), DVector::zeros(4), qd, &[]).unwrap();
    let e0 = pendulum_energy(p.model(), &s);
    let tau = DVector::zeros(1);
    let mut worst = 0.0f64;
    for _ in 0..50_000 {
        s = step(&p, &s, &tau).unwrap();
        worst = worst.max((pendulum_energy(p.model(), &s) - e0).abs());
    }
    assert!(worst / e0 < 1e-3, "relative drift {}", worst / e0);
}
