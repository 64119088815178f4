use std::f64::consts::TAU;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskff::encoding::FeedforwardSignal;
use taskff::gpr::{select_length_scale, train, FeedforwardDatabase, GprError, Hyperparameters};

const DB_KAPPA: [f64; 4] = [0.02, 0.04, 0.06, 0.08];

fn signal(w: DMatrix<f64>) -> FeedforwardSignal {
    FeedforwardSignal::uniform(w, 1.0, TAU * 0.25).unwrap()
}

fn random_db(rng: &mut ChaCha8Rng, kappa: &[f64]) -> FeedforwardDatabase {
    let mut db = FeedforwardDatabase::new();
    for &k in kappa {
        let w = DMatrix::from_fn(25, 2, |_, _| rng.gen_range(-1.0..1.0));
        db.add_entry(&[k], signal(w)).unwrap();
    }
    db
}

fn db_from(kappa: &[f64], weights: &[DMatrix<f64>]) -> FeedforwardDatabase {
    let mut db = FeedforwardDatabase::new();
    for (k, w) in kappa.iter().zip(weights) {
        db.add_entry(&[*k], signal(w.clone())).unwrap();
    }
    db
}

#[test]
fn four_entry_database_trains_with_defaults() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let db = random_db(&mut rng, &DB_KAPPA);
    let model = train(&db, &Hyperparameters::default()).unwrap();
    let s = model.predict_signal(&[0.05]).unwrap();
    assert_eq!(s.weights().shape(), (25, 2));
    assert!(s.weights().iter().all(|v| v.is_finite()));
}

#[test]
fn noise_free_prediction_reproduces_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let kappa: Vec<f64> = (1..=10).map(|k| 0.01 * k as f64).collect();
    let db = random_db(&mut rng, &kappa);
    let hyper = Hyperparameters {
        noise_variance: 0.0,
        ..Hyperparameters::default()
    };
    let model = train(&db, &hyper).unwrap();
    for e in db.entries() {
        let p = model.predict(&e.kappa).unwrap();
        assert!((p.mean - e.signal.weights()).amax() <= 1e-8);
    }
}

#[test]
fn variance_at_training_points_is_at_most_the_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let db = random_db(&mut rng, &DB_KAPPA);
    let hyper = Hyperparameters::default();
    let model = train(&db, &hyper).unwrap();
    for k in DB_KAPPA {
        let v = model.predict(&[k]).unwrap().variance;
        assert!(v.iter().all(|&x| x <= hyper.noise_variance + 1e-10), "{}", v.max());
    }
}

#[test]
fn variance_grows_outside_the_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let db = random_db(&mut rng, &DB_KAPPA);
    let model = train(&db, &Hyperparameters::default()).unwrap();
    for side in [1.0, -1.0] {
        let edge = if side > 0.0 { 0.08 } else { 0.02 };
        let mut last = model.predict(&[edge]).unwrap().variance;
        for step in 1..=40 {
            let v = model.predict(&[edge + side * 0.0025 * step as f64]).unwrap().variance;
            assert!(v.iter().zip(last.iter()).all(|(a, b)| a >= b));
            last = v;
        }
    }
}

#[test]
fn zero_targets_predict_zero_everywhere() {
    let w = vec![DMatrix::zeros(25, 2); 4];
    let model = train(&db_from(&DB_KAPPA, &w), &Hyperparameters::default()).unwrap();
    for k in [0.0, 0.03, 0.05, 0.2] {
        assert_eq!(model.predict(&[k]).unwrap().mean, DMatrix::zeros(25, 2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prediction_is_linear_in_targets(seed in any::<u64>(), query in 0.0f64..0.12, a in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<DMatrix<f64>> {
            (0..4).map(|_| DMatrix::from_fn(25, 2, |_, _| rng.gen_range(-1.0..1.0))).collect()
        };
        let y1 = draw(&mut rng);
        let y2 = draw(&mut rng);
        let sum: Vec<DMatrix<f64>> = y1.iter().zip(&y2).map(|(p, q)| p * a + q).collect();
        let hyper = Hyperparameters { signal_variance: Some(0.5), ..Hyperparameters::default() };
        let predict = |w: &[DMatrix<f64>]| train(&db_from(&DB_KAPPA, w), &hyper).unwrap().predict(&[query]).unwrap().mean;
        let lhs = predict(&sum);
        let rhs = predict(&y1) * a + predict(&y2);
        prop_assert!((lhs - rhs).amax() <= 1e-9);
    }
}

#[test]
fn doubling_targets_doubles_the_noise_free_prediction() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w: Vec<DMatrix<f64>> = (0..4).map(|_| DMatrix::from_fn(25, 2, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let doubled: Vec<DMatrix<f64>> = w.iter().map(|m| m * 2.0).collect();
    let hyper = Hyperparameters {
        noise_variance: 0.0,
        ..Hyperparameters::default()
    };
    let p = train(&db_from(&DB_KAPPA, &w), &hyper).unwrap().predict(&[0.05]).unwrap().mean;
    let q = train(&db_from(&DB_KAPPA, &doubled), &hyper).unwrap().predict(&[0.05]).unwrap().mean;
    assert!((q - p * 2.0).amax() <= 1e-9);
}

#[test]
fn database_directory_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let db = random_db(&mut rng, &DB_KAPPA);
    let dir = tempfile::tempdir().unwrap();
    db.save(dir.path()).unwrap();
    assert!(dir.path().join("index.toml").is_file());
    assert_eq!(FeedforwardDatabase::load(dir.path()).unwrap(), db);
}

#[test]
fn loading_a_missing_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        FeedforwardDatabase::load(&dir.path().join("nope")),
        Err(GprError::Io { .. })
    ));
}

#[test]
fn coincident_inputs_without_noise_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let db = random_db(&mut rng, &[0.04, 0.04 + 1e-12, 0.06]);
    let hyper = Hyperparameters {
        noise_variance: 0.0,
        ..Hyperparameters::default()
    };
    assert!(matches!(train(&db, &hyper), Err(GprError::NotPositiveDefinite(_))));
}

#[test]
fn length_scale_selection_prefers_the_smooth_scale() {
    let kappa: Vec<f64> = (0..10).map(|k| 0.01 * k as f64).collect();
    let w: Vec<DMatrix<f64>> = kappa
        .iter()
        .map(|k| DMatrix::from_fn(25, 2, |i, j| ((k * 20.0) + i as f64 * 0.1 + j as f64).sin()))
        .collect();
    let grid = [0.002, 0.02, 0.05];
    let (best, errors) = select_length_scale(&db_from(&kappa, &w), &Hyperparameters::default(), &grid).unwrap();
    assert_eq!(errors.len(), 3);
    assert_ne!(best, 0.002);
}
