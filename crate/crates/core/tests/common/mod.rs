//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rau::{AffinityMatrix, Assignment, AssignmentConstraints};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Every integral assignment satisfying `c`, by walking all 0/1 matrices.
pub fn enumerate_integral(c: &AssignmentConstraints) -> Vec<Vec<f64>> {
    let (n, m) = c.dims();
    assert!(n * m <= 16, "enumeration is for tiny instances");
    let mut out = Vec::new();
    for mask in 0u32..(1 << (n * m)) {
        let x: Vec<f64> = (0..n * m).map(|i| ((mask >> i) & 1) as f64).collect();
        let rows_ok = (0..n).all(|p| x[p * m..(p + 1) * m].iter().sum::<f64>() == c.demands()[p] as f64);
        let cols_ok = (0..m).all(|r| (0..n).map(|p| x[p * m + r]).sum::<f64>() <= c.caps()[r] as f64);
        let coi_ok = c.conflicts().iter().all(|&(p, r)| x[p * m + r] == 0.0);
        if rows_ok && cols_ok && coi_ok {
            out.push(x);
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn welfare(x: &[f64], s: &[f64], n: usize) -> f64 {
    dot(x, s) / n as f64
}

pub fn uniform_matrix(rng: &mut impl Rng, n: usize, m: usize) -> AffinityMatrix {
    AffinityMatrix::new(n, m, (0..n * m).map(|_| rng.random::<f64>()).collect()).unwrap()
}

/// Random feasible constraints with demands in `1..=k_max`, caps large
/// enough for feasibility and a few conflicts that leave every paper
/// coverable.
pub fn random_constraints(rng: &mut impl Rng, n: usize, m: usize, k_max: u32) -> AssignmentConstraints {
    loop {
        let demands: Vec<u32> = (0..n).map(|_| rng.random_range(1..=k_max.min(m as u32))).collect();
        let caps: Vec<u32> = (0..m).map(|_| rng.random_range(1..=n as u32)).collect();
        let mut conflicts = Vec::new();
        for p in 0..n {
            for r in 0..m {
                if rng.random::<f64>() < 0.15 {
                    conflicts.push((p, r));
                }
            }
        }
        let c = AssignmentConstraints::new(demands, caps, conflicts).unwrap();
        if rau::validate_instance((n, m), &c).feasible {
            return c;
        }
    }
}

/// Exact Euclidean projection onto the fractional polytope of `c` by dual
/// coordinate ascent. Each row and column multiplier is set by bisection,
/// and sweeps continue until the primal point is feasible and stops moving
/// at machine precision. Feasibility matters: when every entry is clamped
/// the dual can drift across flat regions without moving the primal.
pub fn exact_projection(x: &[f64], c: &AssignmentConstraints) -> Vec<f64> {
    let (n, m) = c.dims();
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; m];
    let allowed = |p: usize, r: usize| !c.is_conflict(p, r);
    let primal = |alpha: &[f64], beta: &[f64]| -> Vec<f64> {
        let mut y = vec![0.0; n * m];
        for p in 0..n {
            for r in 0..m {
                if allowed(p, r) {
                    y[p * m + r] = (x[p * m + r] - alpha[p] - beta[r]).clamp(0.0, 1.0);
                }
            }
        }
        y
    };
    let solve = |f: &dyn Fn(f64) -> f64, target: f64| -> f64 {
        // f is non-increasing in the shift
        let (mut lo, mut hi) = (-1e3, 1e3);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut prev = primal(&alpha, &beta);
    for _ in 0..200_000 {
        for p in 0..n {
            let row = |a: f64| -> f64 {
                (0..m)
                    .filter(|&r| allowed(p, r))
                    .map(|r| (x[p * m + r] - a - beta[r]).clamp(0.0, 1.0))
                    .sum()
            };
            alpha[p] = solve(&row, c.demands()[p] as f64);
        }
        for r in 0..m {
            let col = |b: f64| -> f64 {
                (0..n)
                    .filter(|&p| allowed(p, r))
                    .map(|p| (x[p * m + r] - alpha[p] - b).clamp(0.0, 1.0))
                    .sum()
            };
            beta[r] = if col(0.0) <= c.caps()[r] as f64 {
                0.0
            } else {
                solve(&col, c.caps()[r] as f64).max(0.0)
            };
        }
        let y = primal(&alpha, &beta);
        let change = y.iter().zip(&prev).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let row_gap = (0..n)
            .map(|p| ((0..m).map(|r| y[p * m + r]).sum::<f64>() - c.demands()[p] as f64).abs())
            .fold(0.0, f64::max);
        let col_gap = (0..m)
            .map(|r| (0..n).map(|p| y[p * m + r]).sum::<f64>() - c.caps()[r] as f64)
            .fold(0.0, f64::max);
        prev = y;
        if change < 1e-13 && row_gap < 1e-10 && col_gap < 1e-10 {
            break;
        }
    }
    prev
}

/// Random fractional point of the polytope: an average of random integral
/// solutions, found by the flow solver on random scores.
pub fn random_fractional(rng: &mut impl Rng, c: &AssignmentConstraints, parts: usize) -> Assignment {
    let (n, m) = c.dims();
    let mut acc = vec![0.0; n * m];
    let mut weights: Vec<f64> = (0..parts).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    for w in weights {
        let s = uniform_matrix(rng, n, m);
        let a = rau::solve_known(&s, c).unwrap();
        for (x, v) in acc.iter_mut().zip(a.values()) {
            *x += w * v;
        }
    }
    // clear float dust so row sums stay within tolerance
    for v in acc.iter_mut() {
        if *v < 1e-12 {
            *v = 0.0;
        } else if *v > 1.0 - 1e-12 {
            *v = 1.0;
        }
    }
    Assignment::fractional(n, m, acc).unwrap()
}
