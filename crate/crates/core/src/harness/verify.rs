//! Self-check suite run by `taskff verify`: dynamics, QP, contact, GPR and
//! encoding properties on the bundled models.

use std::f64::consts::TAU;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::encoding::FeedforwardSignal;
use crate::gpr::{train, FeedforwardDatabase, Hyperparameters};
use crate::model::{
    bundled_biped, bundled_pendulum, com_state, inverse_dynamics, mass_matrix, point_jacobian, point_position,
    LinkId, RobotModel, BASE_DOF,
};
use crate::qp::{solve, QpProblem, QpSettings, QpStatus};
use crate::simulator::{make_plant, step, Baumgarte, MismatchSpec, PlantState};

use super::config::ExperimentConfig;
use super::trial::{run_trial, DRIFT_LIMIT_M};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub seconds: f64,
}

fn check(name: &'static str, tolerance: f64, f: impl FnOnce() -> Result<f64, String>) -> CheckResult {
    let start = Instant::now();
    let (passed, value) = match f() {
        Ok(v) => (v <= tolerance, v),
        Err(e) => {
            log::error!("{name}: {e}");
            (false, f64::NAN)
        }
    };
    CheckResult {
        name,
        passed,
        value,
        tolerance,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(model.num_coordinates(), |i, _| {
        if i < 2 {
            rng.gen_range(-1.0..1.0)
        } else {
            rng.gen_range(-1.5..1.5)
        }
    })
}

fn s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub fn run_verify(seed: u64) -> Vec<CheckResult> {
    let biped = bundled_biped();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    out.push(check("mass matrix symmetric (1000 samples)", 1e-10, || {
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let m = mass_matrix(&biped, &random_q(&biped, &mut rng)).map_err(s)?;
            worst = worst.max((&m - m.transpose()).amax());
            if m.symmetric_eigenvalues().min() <= 0.0 {
                return Err("mass matrix not positive definite".into());
            }
        }
        Ok(worst)
    }));

    out.push(check("mass matrix equals inverse-dynamics columns", 1e-8, || {
        let mut worst = 0.0f64;
        let n = biped.num_coordinates();
        let zero = DVector::zeros(n);
        for _ in 0..100 {
            let q = random_q(&biped, &mut rng);
            let m = mass_matrix(&biped, &q).map_err(s)?;
            let base = inverse_dynamics(&biped, &q, &zero, &zero).map_err(s)?;
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                let col = inverse_dynamics(&biped, &q, &zero, &e).map_err(s)? - &base;
                worst = worst.max((col - m.column(j)).amax());
            }
        }
        Ok(worst)
    }));

    out.push(check("point Jacobian vs finite differences (relative)", 1e-5, || {
        let mut worst = 0.0f64;
        let eps = 1e-6;
        let foot = biped.feet()[0].clone();
        let link = LinkId(foot.link);
        for _ in 0..100 {
            let q = random_q(&biped, &mut rng);
            let j = point_jacobian(&biped, &q, link, &foot.toe, false).map_err(s)?;
            let mut fd = DMatrix::zeros(2, q.len());
            for c in 0..q.len() {
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[c] += eps;
                qm[c] -= eps;
                let d = (point_position(&biped, &qp, link, &foot.toe).map_err(s)?
                    - point_position(&biped, &qm, link, &foot.toe).map_err(s)?)
                    / (2.0 * eps);
                fd.set_column(c, &d);
            }
            worst = worst.max((&j - &fd).norm() / j.norm().max(1.0));
        }
        Ok(worst)
    }));

    out.push(check("passive pendulum energy drift over 5 s (relative)", 1e-3, || {
        let model = bundled_pendulum();
        let plant = make_plant(&model, &MismatchSpec::identity(), 1e-4, 1, Baumgarte::for_step(1e-4)).map_err(s)?;
        let energy = |st: &PlantState| -> Result<f64, String> {
            let m = mass_matrix(&model, &st.q).map_err(s)?;
            let com = com_state(&model, &st.q, &st.qdot).map_err(s)?.position;
            Ok(0.5 * st.qdot.dot(&(&m * &st.qdot)) + model.total_mass() * model.gravity() * com.y)
        };
        let n = model.num_coordinates();
        let floor = energy(&PlantState::new(&model, DVector::zeros(n), DVector::zeros(n), &[0]).map_err(s)?)?;
        let mut q = DVector::zeros(n);
        q[BASE_DOF] = 1.0;
        let mut st = PlantState::new(&model, q, DVector::zeros(n), &[0]).map_err(s)?;
        let e0 = energy(&st)? - floor;
        let tau = DVector::zeros(model.num_joints());
        let mut worst = 0.0f64;
        for _ in 0..50_000 {
            st = step(&plant, &st, &tau).map_err(s)?;
            worst = worst.max((energy(&st)? - floor - e0).abs());
        }
        Ok(worst / e0)
    }));

    out.push(check("QP hand-solved cases", 1e-9, || {
        let settings = QpSettings::default();
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-1.0, -2.0]);
        let a = solve(&QpProblem::new(h.clone(), g.clone()), &settings).map_err(s)?;
        let b = solve(
            &QpProblem::new(h, g).with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::zeros(1)),
            &settings,
        )
        .map_err(s)?;
        let c = solve(
            &QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
                .with_inequalities(DMatrix::from_element(1, 1, -1.0), DVector::from_element(1, -1.0)),
            &settings,
        )
        .map_err(s)?;
        Ok([
            (a.z[0] - 1.0).abs(),
            (a.z[1] - 2.0).abs(),
            (a.objective + 2.5).abs(),
            (b.z[0] + 0.5).abs(),
            (b.z[1] - 0.5).abs(),
            (c.z[0] - 1.0).abs(),
            (c.ineq_duals[0] - 2.0).abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max))
    }));

    out.push(check("QP KKT residuals on 200 random problems", 1e-6, || {
        let settings = QpSettings::default();
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let d = rng.gen_range(2..=40);
            let rank = rng.gen_range(1..=d);
            let f = DMatrix::from_fn(rank, d, |_, _| rng.gen_range(-1.0..1.0));
            let mut h = f.tr_mul(&f);
            for i in 0..d {
                h[(i, i)] += 1e-3;
            }
            let g = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
            let anchor = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
            let p = rng.gen_range(0..d / 2 + 1);
            let a = DMatrix::from_fn(p, d, |_, _| rng.gen_range(-1.0..1.0));
            let b = &a * &anchor;
            let m = rng.gen_range(0..=2 * d);
            let gi = DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0));
            let hi = &gi * &anchor + DVector::from_fn(m, |_, _| rng.gen_range(0.01..1.0));
            let sol = solve(
                &QpProblem::new(h, g).with_equalities(a, b).with_inequalities(gi, hi),
                &settings,
            )
            .map_err(s)?;
            if sol.status != QpStatus::Optimal {
                return Err(format!("status {:?}", sol.status));
            }
            worst = worst.max(sol.residuals.max());
        }
        Ok(worst)
    }));

    out.push(check("contact drift during a mismatched squat (m)", DRIFT_LIMIT_M, || {
        let mut config = ExperimentConfig::squat(0.06, 0.5);
        config.periods = 3;
        let log = run_trial(&config, None).map_err(s)?;
        let mu = biped.friction_coefficient();
        for t in &log.ticks {
            if t.status != QpStatus::Optimal {
                return Err(format!("QP status {:?} at t = {}", t.status, t.time));
            }
            for (j, spec) in biped.joints().iter().enumerate() {
                if t.tau[j].abs() > spec.torque_limit + 1e-6 {
                    return Err(format!("torque limit exceeded at t = {}", t.time));
                }
            }
            for c in t.lambda.as_slice().chunks(2) {
                if c[1] < -1e-6 || c[0].abs() > mu * c[1] + 1e-6 {
                    return Err(format!("contact force outside the friction cone at t = {}", t.time));
                }
            }
        }
        Ok(log.max_drift)
    }));

    out.push(check("GPR noise-free interpolation (10 entries)", 1e-8, || {
        let hyper = Hyperparameters {
            noise_variance: 0.0,
            ..Hyperparameters::default()
        };
        let mut db = FeedforwardDatabase::new();
        for k in 0..10 {
            let kappa = 0.01 * (k + 1) as f64;
            let w = DMatrix::from_fn(25, 2, |i, j| (kappa * 40.0 + i as f64 * 0.3 + j as f64).sin());
            db.add_entry(&[kappa], FeedforwardSignal::uniform(w, 1.0, TAU * 0.25).map_err(s)?)
                .map_err(s)?;
        }
        let model = train(&db, &hyper).map_err(s)?;
        let mut worst = 0.0f64;
        for e in db.entries() {
            worst = worst.max((model.predict(&e.kappa).map_err(s)?.mean - e.signal.weights()).amax());
        }
        Ok(worst)
    }));

    out.push(check("encoding periodicity", 1e-12, || {
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let l = rng.gen_range(1..40);
            let w = DMatrix::from_fn(l, 2, |_, _| rng.gen_range(-2.0..2.0));
            let sig = FeedforwardSignal::uniform(w, rng.gen_range(0.1..3.0), 1.0).map_err(s)?;
            let phi = rng.gen_range(-50.0..50.0);
            let turns = rng.gen_range(-5..5) as f64;
            worst = worst.max((sig.evaluate(phi) - sig.evaluate(phi + TAU * turns)).amax());
        }
        Ok(worst)
    }));

    out
}
