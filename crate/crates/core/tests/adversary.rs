mod common;

use common::{dot, random_constraints, rng, uniform_matrix};
use proptest::prelude::*;
use rand::Rng;
use rau::adversary::{
    adversary, adversary_box, adversary_ellipsoid, adversary_sphere, adversary_vertices,
};
use rau::uncertainty::{expand_l1, sample_member, Ellipsoid};
use rau::{usw, AffinityMatrix, Assignment, Geometry, UncertaintySet};

fn identity2() -> Assignment {
    Assignment::fractional(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()
}

fn mat(n: usize, m: usize, v: &[f64]) -> AffinityMatrix {
    AffinityMatrix::new(n, m, v.to_vec()).unwrap()
}

/// Projected gradient descent on `a . S` over the Euclidean ball.
fn sphere_oracle(a: &[f64], center: &[f64], radius: f64) -> f64 {
    let mut s = center.to_vec();
    for _ in 0..500 {
        for (x, g) in s.iter_mut().zip(a) {
            *x -= 0.05 * g;
        }
        let d: Vec<f64> = s.iter().zip(center).map(|(x, c)| x - c).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius {
            for (x, (dv, c)) in s.iter_mut().zip(d.iter().zip(center)) {
                *x = c + dv * radius / norm;
            }
        }
    }
    dot(a, &s)
}

/// Minimum of `a0 x + a1 y` over grid points of the 1x2 ellipsoid, with the
/// grid spanning `[lo, hi]^2`.
fn grid_min_1x2(a: [f64; 2], c: [f64; 2], w: [f64; 2], r: f64, lo: [f64; 2], hi: [f64; 2], steps: usize) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        let x = lo[0] + (hi[0] - lo[0]) * i as f64 / steps as f64;
        let qx = (x - c[0]) * (x - c[0]) / w[0];
        if qx > r {
            continue;
        }
        for j in 0..=steps {
            let y = lo[1] + (hi[1] - lo[1]) * j as f64 / steps as f64;
            if qx + (y - c[1]) * (y - c[1]) / w[1] <= r {
                best = best.min(a[0] * x + a[1] * y);
            }
        }
    }
    best
}

#[test]
fn box_examples() {
    let lower = mat(2, 2, &[0.1, 0.2, 0.3, 0.4]);
    let upper = lower.map(|v| v + 0.1).unwrap();
    let r = adversary_box(&identity2(), &lower, &upper).unwrap();
    assert!((r.worst_usw - 0.25).abs() < 1e-15);
    assert_eq!(r.worst_scores, lower);

    let zeros = Assignment::fractional(2, 2, vec![0.0; 4]).unwrap();
    assert_eq!(adversary_box(&zeros, &lower, &upper).unwrap().worst_usw, 0.0);

    let s = mat(2, 2, &[0.5, 0.2, 0.1, 0.9]);
    let r = adversary_box(&identity2(), &s, &s).unwrap();
    assert_eq!(r.worst_usw, usw(&identity2(), &s).unwrap());
}

#[test]
fn sphere_examples() {
    let s0 = mat(2, 2, &[0.5, 0.2, 0.1, 0.9]);
    let r = adversary_sphere(&identity2(), &s0, 0.1).unwrap();
    let closed = 0.7 - 0.1 * 2f64.sqrt() / 2.0;
    assert!((r.worst_usw - closed).abs() < 1e-12);
    assert!((r.worst_usw - 0.62929).abs() < 1e-5);
    let oracle = sphere_oracle(identity2().values(), s0.values(), 0.1) / 2.0;
    assert!((r.worst_usw - oracle).abs() < 1e-9, "{} vs {oracle}", r.worst_usw);

    let tiny = adversary_sphere(&identity2(), &s0, 1e-12).unwrap();
    assert!((tiny.worst_usw - 0.7).abs() < 1e-11);

    let zeros = Assignment::fractional(2, 2, vec![0.0; 4]).unwrap();
    let z = adversary_sphere(&zeros, &s0, 0.1).unwrap();
    assert_eq!(z.worst_usw, 0.0);
    assert_eq!(z.worst_scores, s0);
}

#[test]
fn sphere_matches_projected_gradient_on_random_fractional_inputs() {
    let mut r = rng(21);
    for _ in 0..50 {
        let c = random_constraints(&mut r, 3, 4, 2);
        let a = common::random_fractional(&mut r, &c, 3);
        let center = uniform_matrix(&mut r, 3, 4);
        let radius = 0.05 + 0.5 * r.random::<f64>();
        let got = adversary_sphere(&a, &center, radius).unwrap().worst_usw;
        let oracle = sphere_oracle(a.values(), center.values(), radius) / 3.0;
        assert!((got - oracle).abs() < 1e-9);
    }
}

#[test]
fn untruncated_ellipsoid_example() {
    let a = Assignment::fractional(1, 2, vec![1.0, 1.0]).unwrap();
    let e = Ellipsoid {
        center: mat(1, 2, &[0.5, 0.5]),
        diag_weights: mat(1, 2, &[1.0, 4.0]),
        radius_sq: 1.0,
        truncated: false,
    };
    let r = adversary_ellipsoid(&a, &e).unwrap();
    let s5 = 5f64.sqrt();
    assert!((r.worst_scores.get(0, 0) - (0.5 - 1.0 / s5)).abs() < 1e-12);
    assert!((r.worst_scores.get(0, 1) - (0.5 - 4.0 / s5)).abs() < 1e-12);
    assert!((r.worst_usw - (1.0 - s5)).abs() < 1e-12);
    assert!((r.worst_usw - -1.2361).abs() < 1e-4);
    // grid cross-check over the ellipse's bounding box
    let grid = grid_min_1x2([1.0, 1.0], [0.5, 0.5], [1.0, 4.0], 1.0, [-0.5, -1.5], [1.5, 2.5], 400);
    assert!(grid >= r.worst_usw - 1e-12 && grid - r.worst_usw < 0.02, "{grid}");
}

#[test]
fn truncated_ellipsoid_example() {
    let a = Assignment::fractional(1, 2, vec![1.0, 1.0]).unwrap();
    let e = Ellipsoid {
        center: mat(1, 2, &[0.5, 0.5]),
        diag_weights: mat(1, 2, &[1.0, 4.0]),
        radius_sq: 1.0,
        truncated: true,
    };
    let r = adversary_ellipsoid(&a, &e).unwrap();
    // the unconstrained minimizer leaves the box; clamping pins both
    // coordinates to 0, which already satisfies the quadratic constraint
    assert_eq!(r.worst_scores.get(0, 1), 0.0);
    assert_eq!(r.worst_scores.get(0, 0), 0.0);
    assert_eq!(r.dual_multiplier, 0.0);
    let grid = grid_min_1x2([1.0, 1.0], [0.5, 0.5], [1.0, 4.0], 1.0, [0.0, 0.0], [1.0, 1.0], 2000);
    assert!((grid - r.worst_usw).abs() < 1e-4, "{grid} vs {}", r.worst_usw);
}

#[test]
fn interior_box_corner_needs_no_multiplier() {
    // the unit-box corner already satisfies the quadratic constraint
    let a = Assignment::fractional(1, 2, vec![1.0, 0.0]).unwrap();
    let e = Ellipsoid {
        center: mat(1, 2, &[0.1, 0.5]),
        diag_weights: mat(1, 2, &[1.0, 1.0]),
        radius_sq: 1.0,
        truncated: true,
    };
    let r = adversary_ellipsoid(&a, &e).unwrap();
    assert_eq!(r.dual_multiplier, 0.0);
    assert_eq!(r.worst_scores.get(0, 0), 0.0);
    assert_eq!(r.worst_usw, 0.0);
}

#[test]
fn isotropic_ellipsoid_matches_sphere() {
    let mut r = rng(22);
    for _ in 0..100 {
        let c = random_constraints(&mut r, 3, 4, 2);
        let a = common::random_fractional(&mut r, &c, 2);
        let center = uniform_matrix(&mut r, 3, 4);
        let radius = 0.01 + r.random::<f64>();
        let e = Ellipsoid {
            center: center.clone(),
            diag_weights: AffinityMatrix::filled(3, 4, 1.0).unwrap(),
            radius_sq: radius * radius,
            truncated: false,
        };
        let x = adversary_ellipsoid(&a, &e).unwrap().worst_usw;
        let y = adversary_sphere(&a, &center, radius).unwrap().worst_usw;
        assert!((x - y).abs() < 1e-10);
    }
}

#[test]
fn vertex_examples() {
    let s = mat(2, 2, &[0.3, 0.6, 0.9, 0.1]);
    let r = adversary_vertices(&identity2(), std::slice::from_ref(&s)).unwrap();
    assert_eq!(r.worst_scores, s);

    // zeroing all but one paper's row turns the minimum into the
    // egalitarian value: (1/n) min_p sum_r A S
    let keep0 = mat(2, 2, &[0.8, 0.3, 0.0, 0.0]);
    let keep1 = mat(2, 2, &[0.0, 0.0, 0.4, 0.6]);
    let r = adversary_vertices(&identity2(), &[keep0, keep1]).unwrap();
    let by_hand = (0.8f64).min(0.6) / 2.0;
    assert!((r.worst_usw - by_hand).abs() < 1e-15);

    // equal welfare, different off-assignment entries: the first one wins
    let other = mat(2, 2, &[0.3, 0.0, 0.0, 0.1]);
    let twin = adversary_vertices(&identity2(), &[s.clone(), other.clone()]).unwrap();
    assert_eq!(twin.worst_scores, s);
    let twin = adversary_vertices(&identity2(), &[other.clone(), s.clone()]).unwrap();
    assert_eq!(twin.worst_scores, other);
    assert!(adversary_vertices(&identity2(), &[]).is_err());
}

#[test]
fn dispatch_matches_direct_calls() {
    let mut r = rng(23);
    let center = uniform_matrix(&mut r, 2, 3);
    let a = Assignment::fractional(2, 3, vec![1.0, 0.0, 0.0, 0.0, 0.5, 0.5]).unwrap();
    let single = UncertaintySet::singleton(center.clone());
    assert_eq!(adversary(&a, &single).unwrap().worst_usw, usw(&a, &center).unwrap());

    let lower = center.map(|v| v * 0.5).unwrap();
    let b = UncertaintySet::box_set(lower.clone(), center.clone(), 0.0).unwrap();
    assert_eq!(adversary(&a, &b).unwrap(), adversary_box(&a, &lower, &center).unwrap());

    let w = AffinityMatrix::filled(2, 3, 0.05).unwrap();
    let t = UncertaintySet::ellipsoid(center.clone(), w.clone(), 3.0, true, 0.05).unwrap();
    let Geometry::Ellipsoid(e) = t.geometry() else { unreachable!() };
    assert_eq!(adversary(&a, &t).unwrap(), adversary_ellipsoid(&a, e).unwrap());
}

#[test]
fn l1_expansion_lowers_the_largest_entry() {
    let center = mat(1, 3, &[0.5, 0.6, 0.7]);
    let w = AffinityMatrix::filled(1, 3, 0.01).unwrap();
    let base = UncertaintySet::new(
        Geometry::Ellipsoid(Ellipsoid {
            center,
            diag_weights: w,
            radius_sq: 1.0,
            truncated: true,
        }),
        0.05,
        0.3,
    )
    .unwrap();
    let a = Assignment::fractional(1, 3, vec![0.2, 0.7, 0.1]).unwrap();
    let before = adversary(&a, &base).unwrap();
    let expanded = expand_l1(&base, 0.3).unwrap();
    let after = adversary(&a, &expanded).unwrap();
    assert!((before.worst_usw - after.worst_usw - 0.3 * 0.7).abs() < 1e-12);
    assert!((after.worst_usw - usw(&a, &after.worst_scores).unwrap()).abs() < 1e-12);
    // the realized point sits at L1 distance eta from a member of the base set
    assert!(base.contains(&before.worst_scores, 1e-9));
    assert!((after.worst_scores.l1_distance(&before.worst_scores) - 0.3).abs() < 1e-12);
}

fn random_set(r: &mut impl Rng, kind: usize, n: usize, m: usize) -> UncertaintySet {
    let center = uniform_matrix(r, n, m);
    match kind {
        0 => {
            let lower = center.map(|v| v * 0.7).unwrap();
            UncertaintySet::box_set(lower, center, 0.0).unwrap()
        }
        1 => UncertaintySet::sphere(center, 0.3, 0.0).unwrap(),
        2 | 3 => {
            let w = uniform_matrix(r, n, m).map(|v| 0.005 + 0.05 * v).unwrap();
            UncertaintySet::ellipsoid(center, w, 0.5 + 4.0 * r.random::<f64>(), kind == 3, 0.05).unwrap()
        }
        4 => {
            let w = uniform_matrix(r, n, m).map(|v| 0.005 + 0.05 * v).unwrap();
            let lower = center.map(|v| (v - 0.1).max(0.0)).unwrap();
            let upper = center.map(|v| (v + 0.1).min(1.0)).unwrap();
            UncertaintySet::new(
                Geometry::BoxedEllipsoid {
                    ellipsoid: Ellipsoid {
                        center,
                        diag_weights: w,
                        radius_sq: 1.0,
                        truncated: false,
                    },
                    lower,
                    upper,
                },
                0.0,
                0.0,
            )
            .unwrap()
        }
        _ => {
            let verts = (0..3).map(|_| uniform_matrix(r, n, m)).collect();
            UncertaintySet::vertex_polytope(verts, 0.0).unwrap()
        }
    }
}

#[test]
fn adversary_is_sound_for_every_geometry() {
    let mut r = rng(24);
    for kind in 0..6 {
        let set = random_set(&mut r, kind, 3, 4);
        let c = random_constraints(&mut r, 3, 4, 2);
        let a = common::random_fractional(&mut r, &c, 3);
        let worst = adversary(&a, &set).unwrap();
        assert!(set.contains(&worst.worst_scores, 1e-7), "{}", set.geometry().kind_name());
        assert!((worst.worst_usw - usw(&a, &worst.worst_scores).unwrap()).abs() < 1e-12);
        for _ in 0..100_000 {
            let s = sample_member(&set, &mut r);
            assert!(worst.worst_usw <= usw(&a, &s).unwrap() + 1e-9);
        }
    }
}

#[test]
fn larger_radius_never_raises_the_worst_case() {
    let mut r = rng(25);
    for i in 0..100 {
        let c = random_constraints(&mut r, 3, 4, 2);
        let a = common::random_fractional(&mut r, &c, 2);
        let center = uniform_matrix(&mut r, 3, 4);
        let w = uniform_matrix(&mut r, 3, 4).map(|v| 0.01 + 0.1 * v).unwrap();
        let mut prev = f64::INFINITY;
        for radius_sq in [0.1, 0.5, 1.0, 4.0, 20.0] {
            let e = Ellipsoid {
                center: center.clone(),
                diag_weights: w.clone(),
                radius_sq,
                truncated: i % 2 == 0,
            };
            let v = adversary_ellipsoid(&a, &e).unwrap().worst_usw;
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}

proptest! {
    #[test]
    fn worst_scores_are_members(seed in any::<u64>(), kind in 0usize..6) {
        let mut r = rng(seed);
        let set = random_set(&mut r, kind, 2, 3);
        let c = random_constraints(&mut r, 2, 3, 2);
        let a = common::random_fractional(&mut r, &c, 2);
        let worst = adversary(&a, &set).unwrap();
        prop_assert!(set.contains(&worst.worst_scores, 1e-7));
        prop_assert!(worst.residual <= 1e-7);
        prop_assert!((worst.worst_usw - usw(&a, &worst.worst_scores).unwrap()).abs() < 1e-12);
        prop_assert!(worst.worst_usw <= usw(&a, &set.center()).unwrap() + 1e-12);
    }
}
