use std::f64::consts::TAU;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskff::encoding::{fit, FeedforwardSignal, DEFAULT_RIDGE};

fn random_signal(rng: &mut ChaCha8Rng, l: usize, dim: usize) -> FeedforwardSignal {
    let w = DMatrix::from_fn(l, dim, |_, _| rng.gen_range(-2.0..2.0));
    FeedforwardSignal::uniform(w, rng.gen_range(0.1..3.0), rng.gen_range(0.5..5.0)).unwrap()
}

fn grid(k: usize) -> Vec<f64> {
    (0..k).map(|i| TAU * i as f64 / k as f64).collect()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 256,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn evaluate_is_periodic(seed in any::<u64>(), phi in -50.0f64..50.0, turns in -5i32..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = rng.gen_range(1..40);
        let s = random_signal(&mut rng, l, 2);
        let a = s.evaluate(phi);
        let b = s.evaluate(phi + TAU * turns as f64);
        prop_assert!((a - b).amax() <= 1e-12);
    }

    #[test]
    fn evaluate_is_linear_in_gain(seed in any::<u64>(), phi in 0.0f64..TAU, c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_signal(&mut rng, 25, 2);
        let scaled = s.clone().with_gain(s.gain() * c);
        prop_assert!((scaled.evaluate(phi) - s.evaluate(phi) * c).amax() <= 1e-12);
    }
}

#[test]
fn refitting_a_reconstruction_returns_its_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let phases = grid(400);
    for _ in 0..20 {
        let s = random_signal(&mut rng, 25, 2).with_gain(1.0);
        let y = DMatrix::from_fn(phases.len(), 2, |k, j| s.evaluate(phases[k])[j]);
        let f = fit(&phases, &y, 25, 0.0).unwrap();
        let diff = (f.signal.weights() - s.weights()).amax();
        assert!(diff <= 1e-8, "{diff:e}");
        // With the default ridge the projection is only perturbed slightly.
        let g = fit(&phases, &y, 25, DEFAULT_RIDGE).unwrap();
        assert!((g.signal.weights() - s.weights()).amax() <= 1e-3);
    }
}

#[test]
fn fitted_noise_is_smooth() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let phases = grid(2000);
    let y = DMatrix::from_fn(phases.len(), 1, |_, _| rng.gen_range(-1.0..1.0));
    let s = fit(&phases, &y, 25, DEFAULT_RIDGE).unwrap().signal;
    let bound: f64 = s
        .weights()
        .column(0)
        .iter()
        .zip(s.widths())
        .map(|(w, h)| w.abs() * h)
        .sum::<f64>()
        * s.gain();
    let eps = 1e-6;
    let mut steepest = 0.0f64;
    for k in 0..5000 {
        let phi = TAU * k as f64 / 5000.0;
        let d = (s.evaluate(phi + eps)[0] - s.evaluate(phi - eps)[0]) / (2.0 * eps);
        steepest = steepest.max(d.abs());
    }
    assert!(steepest <= bound, "{steepest} > {bound}");
}

#[test]
fn sine_fit_matches_the_independent_reference() {
    // Reconstruction of sin at phases halfway between the fit samples.
    let phases = grid(1000);
    let y = DMatrix::from_fn(1000, 1, |k, _| phases[k].sin());
    let s = fit(&phases, &y, 25, DEFAULT_RIDGE).unwrap().signal;
    let mut sq = 0.0;
    for k in 0..1000 {
        let phi = TAU * (k as f64 + 0.5) / 1000.0;
        sq += (s.evaluate(phi)[0] - phi.sin()).powi(2);
    }
    assert!((sq / 1000.0f64).sqrt() <= 0.01);
}
