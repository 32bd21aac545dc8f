mod common;

use common::{random_constraints, random_fractional, rng, uniform_matrix};
use proptest::prelude::*;
use rand::Rng;
use rau::projection::{project_polytope, ProjectionConfig};
use rau::rounding::{round_assignment, round_samples, rounding_deviation, RoundingConfig};
use rau::{usw, Assignment, AssignmentConstraints};

/// Fractional input either as a mixture of integral solutions or as the
/// projection of a random point, which has no integral structure at all.
fn random_input(r: &mut impl Rng, c: &AssignmentConstraints) -> Assignment {
    if r.random::<bool>() {
        let parts = r.random_range(2..=4);
        return random_fractional(r, c, parts);
    }
    let (n, m) = c.dims();
    let x: Vec<f64> = (0..n * m).map(|_| 2.0 * r.random::<f64>() - 0.5).collect();
    let cfg = ProjectionConfig { tol: 1e-12, max_iters: 100_000 };
    project_polytope(&x, c, &cfg).unwrap().iterate
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn half_matrix_splits_between_two_matchings() {
    let c = AssignmentConstraints::uniform(2, 2, 1, 1).unwrap();
    let a = Assignment::fractional(2, 2, vec![0.5; 4]).unwrap();
    let samples = round_samples(&a, &c, &RoundingConfig::new(3), 10_000).unwrap();
    let mut identity = 0;
    for s in &samples {
        match s.values() {
            [1.0, 0.0, 0.0, 1.0] => identity += 1,
            [0.0, 1.0, 1.0, 0.0] => {}
            other => panic!("unexpected sample {other:?}"),
        }
    }
    let sd = (10_000.0f64 * 0.25).sqrt();
    assert!((identity as f64 - 5_000.0).abs() <= 3.0 * sd, "{identity}");
}

#[test]
fn single_row_is_categorical() {
    let c = AssignmentConstraints::uniform(1, 2, 1, 1).unwrap();
    let a = Assignment::fractional(1, 2, vec![0.25, 0.75]).unwrap();
    let samples = round_samples(&a, &c, &RoundingConfig::new(4), 10_000).unwrap();
    let second = samples.iter().filter(|s| s.values() == [0.0, 1.0]).count();
    assert_eq!(samples.iter().filter(|s| s.values() == [1.0, 0.0]).count() + second, 10_000);
    let sd = (10_000.0f64 * 0.75 * 0.25).sqrt();
    assert!((second as f64 - 7_500.0).abs() <= 3.0 * sd, "{second}");
}

#[test]
fn deviation_examples() {
    let integral = Assignment::fractional(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert_eq!(rounding_deviation(&integral), 0.0);
    let row = Assignment::fractional(1, 2, vec![0.5, 0.5]).unwrap();
    assert!((rounding_deviation(&row) - 1.0).abs() < 1e-15);
    let halves = Assignment::fractional(2, 2, vec![0.5; 4]).unwrap();
    assert!((rounding_deviation(&halves) - 2.0).abs() < 1e-15);
}

#[test]
fn samples_are_exactly_feasible() {
    let mut r = rng(51);
    for i in 0..1000 {
        let n = r.random_range(1..=6);
        let m = r.random_range(2..=7);
        let c = random_constraints(&mut r, n, m, 3);
        let a = random_input(&mut r, &c);
        let s = round_assignment(&a, &c, &RoundingConfig::new(i)).unwrap();
        assert!(s.is_integral());
        assert!(s.values().iter().all(|&v| v == 0.0 || v == 1.0));
        for p in 0..n {
            let row: f64 = (0..m).map(|q| s.get(p, q)).sum();
            assert_eq!(row, c.demands()[p] as f64);
        }
        for q in 0..m {
            let col: f64 = (0..n).map(|p| s.get(p, q)).sum();
            assert!(col <= c.caps()[q] as f64);
        }
        assert!(c.conflicts().iter().all(|&(p, q)| s.get(p, q) == 0.0));
    }
}

#[test]
fn marginals_are_preserved() {
    let mut r = rng(52);
    let draws = 10_000;
    for inst in 0..20 {
        let n = r.random_range(2..=5);
        let m = r.random_range(2..=6);
        let c = random_constraints(&mut r, n, m, 3);
        let a = random_input(&mut r, &c);
        let samples = round_samples(&a, &c, &RoundingConfig::new(1000 + inst), draws).unwrap();
        for i in 0..n * m {
            let target = a.values()[i];
            let hits = samples.iter().filter(|s| s.values()[i] == 1.0).count() as f64;
            let sd = (draws as f64 * target * (1.0 - target)).sqrt();
            assert!(
                (hits - draws as f64 * target).abs() <= 3.0 * sd + 1e-6,
                "instance {inst} entry {i}: {hits} vs {}",
                draws as f64 * target
            );
        }
    }
}

#[test]
fn welfare_is_preserved_in_expectation() {
    let mut r = rng(53);
    for inst in 0..10 {
        let (n, m) = (4, 6);
        let c = random_constraints(&mut r, n, m, 3);
        let a = random_input(&mut r, &c);
        let s = uniform_matrix(&mut r, n, m);
        let samples = round_samples(&a, &c, &RoundingConfig::new(inst), 10_000).unwrap();
        let welfare: Vec<f64> = samples.iter().map(|x| usw(x, &s).unwrap()).collect();
        let (mean, sd) = mean_sd(&welfare);
        let target = usw(&a, &s).unwrap();
        assert!((mean - target).abs() <= 3.0 * sd / 100.0 + 1e-12, "{mean} vs {target}");
    }
}

#[test]
fn deviation_formula_matches_monte_carlo() {
    let mut r = rng(54);
    for inst in 0..10 {
        let n = r.random_range(2..=5);
        let m = r.random_range(2..=6);
        let c = random_constraints(&mut r, n, m, 3);
        let a = random_input(&mut r, &c);
        let samples = round_samples(&a, &c, &RoundingConfig::new(inst), 10_000).unwrap();
        let dists: Vec<f64> = samples
            .iter()
            .map(|s| s.values().iter().zip(a.values()).map(|(x, y)| (x - y).abs()).sum())
            .collect();
        let (mean, sd) = mean_sd(&dists);
        let formula = rounding_deviation(&a);
        assert!((mean - formula).abs() <= 3.0 * sd / 100.0 + 1e-9, "{mean} vs {formula}");
        // upper bound nm - 2 ||1/2 - a||_1
        let bound = (n * m) as f64 - 2.0 * a.values().iter().map(|v| (0.5 - v).abs()).sum::<f64>();
        assert!(formula <= bound + 1e-12);
    }
}

#[test]
fn rejects_infeasible_input() {
    let c = AssignmentConstraints::uniform(1, 2, 1, 1).unwrap();
    let a = Assignment::fractional(1, 2, vec![0.5, 0.6]).unwrap();
    assert!(round_assignment(&a, &c, &RoundingConfig::new(0)).is_err());
    let conflicted = AssignmentConstraints::new(vec![1], vec![1, 1], vec![(0, 0)]).unwrap();
    let b = Assignment::fractional(1, 2, vec![0.5, 0.5]).unwrap();
    assert!(round_assignment(&b, &conflicted, &RoundingConfig::new(0)).is_err());
}

#[test]
fn seeds_drive_the_stream() {
    let mut r = rng(55);
    let c = random_constraints(&mut r, 5, 6, 3);
    let a = random_input(&mut r, &c);
    let first = round_samples(&a, &c, &RoundingConfig::new(9), 50).unwrap();
    let again = round_samples(&a, &c, &RoundingConfig::new(9), 50).unwrap();
    assert_eq!(first, again);
    assert_eq!(first[0], round_assignment(&a, &c, &RoundingConfig::new(9)).unwrap());
    let other = round_samples(&a, &c, &RoundingConfig::new(10), 50).unwrap();
    assert_ne!(first, other);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn deviation_is_bounded(values in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let len = values.len();
        let a = Assignment::fractional(1, len, values.clone()).unwrap();
        let d = rounding_deviation(&a);
        let bound = len as f64 - 2.0 * values.iter().map(|v| (0.5 - v).abs()).sum::<f64>();
        prop_assert!(d >= -1e-12);
        prop_assert!(d <= bound + 1e-12);
    }

    #[test]
    fn rounding_is_deterministic(seed in any::<u64>(), inst in any::<u64>()) {
        let mut r = rng(inst);
        let c = random_constraints(&mut r, 3, 4, 2);
        let a = random_input(&mut r, &c);
        let cfg = RoundingConfig::new(seed);
        prop_assert_eq!(round_assignment(&a, &c, &cfg).unwrap(), round_assignment(&a, &c, &cfg).unwrap());
    }
}
