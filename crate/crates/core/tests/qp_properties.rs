use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taskff::qp::{kkt_residuals, solve, QpProblem, QpSettings, QpStatus};

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

/// PSD Hessian, possibly rank deficient.
fn random_psd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let rank = rng.gen_range(1..=d);
    let f = random_matrix(rng, rank, d);
    f.tr_mul(&f)
}

struct Feasible {
    problem: QpProblem,
    anchor: DVector<f64>,
}

/// Random problem whose constraint set contains `anchor` strictly inside
/// the inequalities. A ridge keeps the objective bounded below.
fn random_feasible(rng: &mut ChaCha8Rng) -> Feasible {
    let d = rng.gen_range(2..=40);
    let p = rng.gen_range(0..d / 2 + 1);
    let m = rng.gen_range(0..=2 * d);
    let mut h_mat = random_psd(rng, d);
    for i in 0..d {
        h_mat[(i, i)] += 1e-3;
    }
    let g = random_vector(rng, d) * 3.0;
    let anchor = random_vector(rng, d);
    let a = random_matrix(rng, p, d);
    let b = &a * &anchor;
    let gi = random_matrix(rng, m, d);
    let slack = DVector::from_fn(m, |_, _| rng.gen_range(0.01..1.0));
    let hi = &gi * &anchor + slack;
    Feasible {
        problem: QpProblem::new(h_mat, g)
            .with_equalities(a, b)
            .with_inequalities(gi, hi),
        anchor,
    }
}

/// Random feasible point on a segment from the anchor along a direction in
/// the null space of the equality constraints.
fn random_feasible_point(rng: &mut ChaCha8Rng, f: &Feasible) -> DVector<f64> {
    let p = &f.problem;
    let d = p.num_variables();
    let dir = random_vector(rng, d);
    let dir = if p.num_equalities() > 0 {
        let a = &p.eq_matrix;
        let aat = a * a.transpose();
        let correction = a.transpose() * aat.lu().solve(&(a * &dir)).unwrap();
        dir - correction
    } else {
        dir
    };
    let slack = &p.ineq_rhs - &p.ineq_matrix * &f.anchor;
    let gd = &p.ineq_matrix * &dir;
    let mut t_max = 10.0f64;
    for i in 0..gd.len() {
        if gd[i] > 0.0 {
            t_max = t_max.min(slack[i] / gd[i]);
        }
    }
    &f.anchor + dir * (t_max * rng.gen_range(0.0..1.0))
}

#[test]
fn random_problems_certify_kkt_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let settings = QpSettings::default();
    for case in 0..200 {
        let f = random_feasible(&mut rng);
        let sol = solve(&f.problem, &settings).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}: {:?}", sol.residuals);
        let r = kkt_residuals(&f.problem, &sol.z, &sol.eq_duals, &sol.ineq_duals);
        assert!(r.max() <= 1e-6, "case {case}: {r:?}");
    }
}

#[test]
fn rank_deficient_hessians_certify() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..200 {
        let d = rng.gen_range(2..=40);
        let rank = rng.gen_range(1..=d);
        let f = random_matrix(&mut rng, rank, d);
        let h = f.tr_mul(&f);
        // Linear term in the range of H keeps the objective bounded.
        let g = f.tr_mul(&random_vector(&mut rng, rank));
        let anchor = random_vector(&mut rng, d);
        let m = rng.gen_range(0..=d);
        let gi = random_matrix(&mut rng, m, d);
        let hi = &gi * &anchor + DVector::from_fn(m, |_, _| rng.gen_range(0.0..0.5));
        let p = QpProblem::new(h, g).with_inequalities(gi, hi);
        let sol = solve(&p, &QpSettings::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal, "case {case}: {:?}", sol.residuals);
    }
}

#[test]
fn solver_beats_random_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..50 {
        let f = random_feasible(&mut rng);
        let sol = solve(&f.problem, &QpSettings::default()).unwrap();
        let best = f.problem.objective(&sol.z);
        for _ in 0..100 {
            let z = random_feasible_point(&mut rng, &f);
            let obj = f.problem.objective(&z);
            assert!(best <= obj + 1e-7, "case {case}: {best} > {obj}");
        }
    }
}

#[test]
fn equality_only_matches_direct_kkt_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let d = rng.gen_range(2..20);
        let p = rng.gen_range(1..d);
        let mut h = random_psd(&mut rng, d);
        for i in 0..d {
            h[(i, i)] += 0.1;
        }
        let g = random_vector(&mut rng, d);
        let a = random_matrix(&mut rng, p, d);
        let b = random_vector(&mut rng, p);
        let mut kkt = DMatrix::zeros(d + p, d + p);
        kkt.view_mut((0, 0), (d, d)).copy_from(&h);
        kkt.view_mut((0, d), (d, p)).copy_from(&a.transpose());
        kkt.view_mut((d, 0), (p, d)).copy_from(&a);
        let mut rhs = DVector::zeros(d + p);
        rhs.rows_mut(0, d).copy_from(&-&g);
        rhs.rows_mut(d, p).copy_from(&b);
        let direct = kkt.lu().solve(&rhs).unwrap();
        let sol = solve(&QpProblem::new(h, g).with_equalities(a, b), &QpSettings::default()).unwrap();
        let diff = (&sol.z - direct.rows(0, d)).amax();
        assert!(diff <= 1e-8, "{diff:e}");
    }
}

#[test]
fn solve_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let f = random_feasible(&mut rng);
    let a = solve(&f.problem, &QpSettings::default()).unwrap();
    let b = solve(&f.problem, &QpSettings::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn infeasible_equalities_and_bounds_report_violation() {
    // x1 + x2 = 4 with x1 <= 1, x2 <= 1.
    let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2))
        .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![4.0]))
        .with_inequalities(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 1.0]));
    let sol = solve(&p, &QpSettings::default()).unwrap();
    assert_eq!(sol.status, QpStatus::Infeasible);
    assert!(sol.min_violation.unwrap() > 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn objective_scaling_leaves_argmin_unchanged(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_feasible(&mut rng);
        let base = solve(&f.problem, &QpSettings::default()).unwrap();
        let mut scaled = f.problem.clone();
        scaled.hessian *= c;
        scaled.linear *= c;
        let sol = solve(&scaled, &QpSettings::default()).unwrap();
        prop_assert_eq!(base.status, QpStatus::Optimal);
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        let diff = (&sol.z - &base.z).amax();
        prop_assert!(diff <= 1e-8, "diff {:e}", diff);
    }
}
