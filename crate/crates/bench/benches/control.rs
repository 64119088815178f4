use std::f64::consts::TAU;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};
use taskff::controller::{control_step, ControlInput};
use taskff::encoding::{fit, FeedforwardSignal};
use taskff::gpr::{train, FeedforwardDatabase, Hyperparameters};
use taskff::qp::{solve, QpProblem, QpSettings};
use taskff::simulator::step;
use taskff_bench::standing;

fn controller(c: &mut Criterion) {
    let (config, setup, state) = standing();
    let reference = setup.reference(&config, 0.3);
    let gains = config.active_gains();
    let settings = QpSettings::default();
    let input = ControlInput {
        reference: &reference,
        posture_ref: &setup.q0,
        gains: &gains,
        learned: None,
        settings: &settings,
    };
    c.bench_function("control_step", |b| {
        b.iter(|| control_step(black_box(&setup.nominal), black_box(&state), &input).unwrap())
    });
    let (tau, _) = control_step(&setup.nominal, &state, &input).unwrap();
    c.bench_function("plant_step_1ms", |b| b.iter(|| step(&setup.plant, black_box(&state), &tau).unwrap()));
}

fn qp(c: &mut Criterion) {
    let d = 17;
    let h = DMatrix::from_fn(d, d, |i, j| 1.0 / (1.0 + i as f64 + j as f64)) + DMatrix::identity(d, d);
    let g = DVector::from_fn(d, |i, _| (i as f64).sin());
    let a = DMatrix::from_fn(6, d, |i, j| ((i * d + j) as f64).cos());
    let gi = DMatrix::from_fn(30, d, |i, j| ((i + 3 * j) as f64).sin());
    let problem = QpProblem::new(h, g)
        .with_equalities(a, DVector::zeros(6))
        .with_inequalities(gi, DVector::from_element(30, 0.1));
    let settings = QpSettings::default();
    c.bench_function("qp_solve_17x6x30", |b| b.iter(|| solve(black_box(&problem), &settings).unwrap()));
}

fn learning(c: &mut Criterion) {
    let k = 4000;
    let phases: Vec<f64> = (0..k).map(|i| TAU * i as f64 / k as f64).collect();
    let samples = DMatrix::from_fn(k, 2, |i, j| (phases[i] + j as f64).sin());
    c.bench_function("fit_l25_4000", |b| b.iter(|| fit(black_box(&phases), &samples, 25, 1e-6).unwrap()));

    let mut db = FeedforwardDatabase::new();
    for kappa in [0.02, 0.04, 0.06, 0.08] {
        let w = DMatrix::from_fn(25, 2, |i, j| (kappa * 30.0 + i as f64 + j as f64).sin());
        db.add_entry(&[kappa], FeedforwardSignal::uniform(w, 1.0, TAU * 0.25).unwrap()).unwrap();
    }
    let model = train(&db, &Hyperparameters::default()).unwrap();
    c.bench_function("gpr_predict", |b| b.iter(|| model.predict(black_box(&[0.05])).unwrap()));
}

criterion_group!(benches, controller, qp, learning);
criterion_main!(benches);
