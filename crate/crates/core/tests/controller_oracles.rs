use nalgebra::{DMatrix, DVector, Vector2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskff::controller::{
    assemble_qp, contact_dynamics, control_step, default_lambda_des, extract_torques,
    lambda_from_plant, nullspace_projector, posture_desired_accel, ControlGains, ControlInput,
    LimitSet, QpTargets, TaskReference,
};
use taskff::model::{bundled_biped, com_state, gravity_forces, RobotModel, BASE_DOF};
use taskff::qp::{solve, QpSettings, QpStatus};
use taskff::simulator::{
    constrained_accel, make_plant, step, Baumgarte, MismatchSpec, PlantModel, PlantState,
};

const FEET: [usize; 2] = [0, 1];

fn identity_plant(model: &RobotModel) -> PlantModel {
    make_plant(model, &MismatchSpec::identity(), 1e-3, 10, Baumgarte::for_step(1e-3)).unwrap()
}

/// Perturbed stance with a velocity that respects the foot constraints.
fn random_state(rng: &mut ChaCha8Rng, model: &RobotModel) -> PlantState {
    let mut q = model.stance_q().unwrap();
    for i in BASE_DOF..q.len() {
        q[i] += rng.gen_range(-0.15..0.15);
    }
    let raw = DVector::from_fn(q.len(), |_, _| rng.gen_range(-0.5..0.5));
    let dyn_ = contact_dynamics(model, &q, &raw, &FEET).unwrap();
    let qdot = nullspace_projector(&dyn_.constraint_jacobian) * raw;
    PlantState::new(model, q, qdot, &FEET).unwrap()
}

fn targets(model: &RobotModel, state: &PlantState, gains: &ControlGains, xdd: Vector2<f64>) -> QpTargets {
    let q_ref = model.stance_q().unwrap();
    QpTargets {
        xddot_des: xdd,
        posture: posture_desired_accel(&q_ref, &state.q, &state.qdot, gains),
        lambda_des: default_lambda_des(model, FEET.len()),
        tau_des: DVector::zeros(model.num_joints()),
    }
}

#[test]
fn hessian_is_positive_semidefinite() {
    let model = bundled_biped();
    let gains = ControlGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let s = random_state(&mut rng, &model);
        let xdd = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let p = assemble_qp(&model, &s.q, &s.qdot, &FEET, &targets(&model, &s, &gains, xdd), &gains).unwrap();
        let min = p.hessian.symmetric_eigenvalues().min();
        assert!(min >= -1e-9, "{min}");
        assert_eq!(p.num_variables(), 17);
        assert_eq!(p.num_equalities(), 9);
    }
}

#[test]
fn closed_loop_task_acceleration_matches_the_command() {
    let model = bundled_biped();
    let plant = identity_plant(&model);
    let gains = ControlGains {
        wq: 0.0,
        w_lambda: 0.0,
        w_tau: 0.0,
        limits: LimitSet::none(),
        ..ControlGains::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..30 {
        let s = random_state(&mut rng, &model);
        let xdd = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-2.0..2.0));
        let p = assemble_qp(&model, &s.q, &s.qdot, &FEET, &targets(&model, &s, &gains, xdd), &gains).unwrap();
        let sol = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        let qdd = sol.z.rows(0, 9).into_owned();
        let lambda = sol.z.rows(9, 8).into_owned();
        let tau = extract_torques(&model, &s.q, &s.qdot, &FEET, &qdd, &lambda).unwrap();
        let acc = constrained_accel(&plant, &s, &tau).unwrap();
        let com = com_state(&model, &s.q, &s.qdot).unwrap();
        let measured = &com.jacobian * &acc.qddot + DVector::from_column_slice(com.jdot_qdot.as_slice());
        let err = (measured - DVector::from_column_slice(xdd.as_slice())).amax();
        assert!(err <= 1e-6, "{err:e}");
    }
}

#[test]
fn equality_rows_hold_at_the_plant_solution() {
    let model = bundled_biped();
    let plant = identity_plant(&model);
    let gains = ControlGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let s = random_state(&mut rng, &model);
        let p = assemble_qp(&model, &s.q, &s.qdot, &FEET, &targets(&model, &s, &gains, Vector2::zeros()), &gains).unwrap();
        let sol = solve(&p, &QpSettings::default()).unwrap();
        let qdd = sol.z.rows(0, 9).into_owned();
        let lambda = sol.z.rows(9, 8).into_owned();
        let tau = extract_torques(&model, &s.q, &s.qdot, &FEET, &qdd, &lambda).unwrap();
        let acc = constrained_accel(&plant, &s, &tau).unwrap();
        let mut z = DVector::zeros(17);
        z.rows_mut(0, 9).copy_from(&acc.qddot);
        z.rows_mut(9, 8).copy_from(&lambda_from_plant(&acc.lambda));
        let r = (&p.eq_matrix * z - &p.eq_rhs).amax();
        assert!(r <= 1e-8, "{r:e}");
    }
}

#[test]
fn static_torques_match_the_static_oracle() {
    let model = bundled_biped();
    let q = model.stance_q().unwrap();
    let zero = DVector::zeros(9);
    let dyn_ = contact_dynamics(&model, &q, &zero, &FEET).unwrap();
    // Minimum-norm (tau, lambda) with S^T tau + J^T lambda = g(q).
    let mut a = DMatrix::zeros(9, 6 + 8);
    for j in 0..6 {
        a[(BASE_DOF + j, j)] = 1.0;
    }
    a.view_mut((0, 6), (9, 8)).copy_from(&dyn_.force_jacobian.transpose());
    let x = a.svd(true, true).solve(&gravity_forces(&model, &q).unwrap(), 1e-12).unwrap();
    let lambda = x.rows(6, 8).into_owned();
    let weight: f64 = lambda[1] + lambda[3] + lambda[5] + lambda[7];
    assert!((weight - model.total_mass() * model.gravity()).abs() < 1e-8);
    let tau = extract_torques(&model, &q, &zero, &FEET, &zero, &lambda).unwrap();
    assert!((tau - x.rows(0, 6)).amax() <= 1e-8);
}

#[test]
fn zero_gravity_rest_needs_no_torque() {
    let model = bundled_biped();
    let plant = make_plant(
        &model,
        &MismatchSpec {
            gravity_delta_mps2: -model.gravity(),
            ..MismatchSpec::identity()
        },
        1e-3,
        1,
        Baumgarte::for_step(1e-3),
    )
    .unwrap();
    let q = model.stance_q().unwrap();
    let zero = DVector::zeros(9);
    let tau = extract_torques(plant.model(), &q, &zero, &FEET, &zero, &DVector::zeros(8)).unwrap();
    assert_eq!(tau, DVector::zeros(6));
}

#[test]
fn torques_are_affine_in_accelerations_and_forces() {
    let model = bundled_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let s = random_state(&mut rng, &model);
    let tau = |qdd: &DVector<f64>, l: &DVector<f64>| extract_torques(&model, &s.q, &s.qdot, &FEET, qdd, l).unwrap();
    let zero9 = DVector::zeros(9);
    let zero8 = DVector::zeros(8);
    let h_a = tau(&zero9, &zero8);
    let q1 = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
    let q2 = DVector::from_fn(9, |_, _| rng.gen_range(-1.0..1.0));
    let l = DVector::from_fn(8, |_, _| rng.gen_range(0.0..100.0));
    let lhs = tau(&(&q1 + &q2), &l);
    let rhs = tau(&q1, &l) + tau(&q2, &zero8) - &h_a;
    assert!((lhs - rhs).amax() < 1e-9);
}

#[test]
fn scaling_all_weights_keeps_the_argmin() {
    let model = bundled_biped();
    let base = ControlGains::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let s = random_state(&mut rng, &model);
        let xdd = Vector2::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let c = rng.gen_range(0.1..10.0);
        let scaled = ControlGains {
            wx: base.wx.map(|w| w * c),
            wq: base.wq * c,
            w_lambda: base.w_lambda * c,
            w_tau: base.w_tau * c,
            ..base.clone()
        };
        let t = targets(&model, &s, &base, xdd);
        let a = solve(&assemble_qp(&model, &s.q, &s.qdot, &FEET, &t, &base).unwrap(), &QpSettings::default()).unwrap();
        let b = solve(&assemble_qp(&model, &s.q, &s.qdot, &FEET, &t, &scaled).unwrap(), &QpSettings::default()).unwrap();
        assert_eq!(a.status, QpStatus::Optimal);
        assert_eq!(b.status, QpStatus::Optimal);
        let diff = (&a.z - &b.z).amax();
        assert!(diff <= 1e-7, "c = {c}: {diff:e}");
    }
}

#[test]
fn converged_stand_has_negligible_feedback() {
    let model = bundled_biped();
    let plant = identity_plant(&model);
    let q_ref = model.stance_q().unwrap();
    let mut s = PlantState::new(&model, q_ref.clone(), DVector::zeros(9), &FEET).unwrap();
    let com0 = com_state(&model, &s.q, &s.qdot).unwrap().position;
    let reference = TaskReference::stationary(com0);
    let gains = ControlGains::default();
    let settings = QpSettings::default();
    let input = ControlInput {
        reference: &reference,
        posture_ref: &q_ref,
        gains: &gains,
        learned: None,
        settings: &settings,
    };
    let mut last = Vector2::zeros();
    for _ in 0..1200 {
        let (tau, diag) = control_step(&model, &s, &input).unwrap();
        assert_eq!(diag.xddot_des - diag.feedforward - diag.feedback, Vector2::zeros());
        last = diag.feedback;
        s = step(&plant, &s, &tau).unwrap();
    }
    assert!(last.norm() <= 1e-4, "{last:?}");
}

#[test]
fn control_step_rejects_a_state_without_contacts() {
    let model = bundled_biped();
    let q = model.stance_q().unwrap();
    let s = PlantState::new(&model, q.clone(), DVector::zeros(9), &[]).unwrap();
    let reference = TaskReference::stationary(Vector2::zeros());
    let gains = ControlGains::default();
    let settings = QpSettings::default();
    let input = ControlInput {
        reference: &reference,
        posture_ref: &q,
        gains: &gains,
        learned: None,
        settings: &settings,
    };
    assert!(control_step(&model, &s, &input).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn projector_annihilates_the_task(seed in any::<u64>(), rows in 1usize..4, cols in 4usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let j = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let p = nullspace_projector(&j);
        prop_assert!((&j * &p).norm() <= 1e-6 * j.norm());
        prop_assert!((&p * &p - &p).amax() <= 1e-8);
    }
}
