//! Marginal-preserving dependent rounding of fractional assignments.
//!
//! Works on the bipartite graph of strictly fractional entries. Each round
//! picks a cycle, or a path between two degree-one nodes, and moves its
//! edges alternately up and down by the same amount until one edge becomes
//! integral. The direction is random with probabilities that keep every
//! entry's expectation fixed. Interior nodes keep their sums; path
//! endpoints are reviewers whose other entries are integral, so their
//! fractional edge can reach 1 without exceeding the cap (see
//! docs/formats.md for the argument).

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RauError, Result};
use crate::model::{Assignment, AssignmentConstraints, AssignmentKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundingConfig {
    pub seed: u64,
    /// Entries within this distance of 0 or 1 count as integral.
    pub marginal_tol: f64,
}

impl RoundingConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            marginal_tol: 1e-9,
        }
    }
}

/// Round with a fresh generator seeded from `cfg.seed`.
pub fn round_assignment(a: &Assignment, c: &AssignmentConstraints, cfg: &RoundingConfig) -> Result<Assignment> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    round_with_rng(a, c, cfg.marginal_tol, &mut rng)
}

/// `count` independent samples drawn from one generator stream.
pub fn round_samples(
    a: &Assignment,
    c: &AssignmentConstraints,
    cfg: &RoundingConfig,
    count: usize,
) -> Result<Vec<Assignment>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..count)
        .map(|_| round_with_rng(a, c, cfg.marginal_tol, &mut rng))
        .collect()
}

struct Graph {
    n: usize,
    m: usize,
    x: Vec<f64>,
    /// Fractional neighbours; papers are nodes `0..n`, reviewers `n..n+m`.
    adj: Vec<BTreeSet<usize>>,
    leaves: BTreeSet<usize>,
    /// Entries equal to 1 per reviewer.
    col_ones: Vec<u32>,
}

impl Graph {
    fn entry(&self, u: usize, v: usize) -> usize {
        let (p, r) = if u < self.n { (u, v - self.n) } else { (v, u - self.n) };
        p * self.m + r
    }

    fn refresh_leaf(&mut self, v: usize) {
        if self.adj[v].len() == 1 {
            self.leaves.insert(v);
        } else {
            self.leaves.remove(&v);
        }
    }

    /// Fix entry `(p, r)` at `value` (0 or 1) and drop it from the graph.
    fn settle(&mut self, p: usize, r: usize, value: f64) {
        let i = p * self.m + r;
        self.x[i] = value;
        if value == 1.0 {
            self.col_ones[r] += 1;
        }
        let rv = self.n + r;
        self.adj[p].remove(&rv);
        self.adj[rv].remove(&p);
        self.refresh_leaf(p);
        self.refresh_leaf(rv);
    }
}

pub fn round_with_rng(
    a: &Assignment,
    c: &AssignmentConstraints,
    marginal_tol: f64,
    rng: &mut impl Rng,
) -> Result<Assignment> {
    a.check(c)?;
    let (n, m) = a.dims();
    if a.is_integral() {
        return Ok(a.clone());
    }
    let mut g = Graph {
        n,
        m,
        x: a.values().to_vec(),
        adj: vec![BTreeSet::new(); n + m],
        leaves: BTreeSet::new(),
        col_ones: vec![0; m],
    };
    for p in 0..n {
        for r in 0..m {
            let i = p * m + r;
            let v = g.x[i];
            if v <= marginal_tol {
                g.x[i] = 0.0;
            } else if v >= 1.0 - marginal_tol {
                g.x[i] = 1.0;
                g.col_ones[r] += 1;
            } else {
                g.adj[p].insert(n + r);
                g.adj[n + r].insert(p);
            }
        }
    }
    for v in 0..n + m {
        g.refresh_leaf(v);
    }
    let caps = c.caps();

    let mut on_walk = vec![usize::MAX; n + m];
    let mut walk: Vec<usize> = Vec::new();
    loop {
        // Leaves that must not be path endpoints: papers (their row sum is
        // integral up to tolerance) and reviewers already at their cap.
        let stuck = g.leaves.iter().copied().find(|&v| {
            v < n || g.col_ones[v - n] >= caps[v - n]
        });
        if let Some(v) = stuck {
            let u = *g.adj[v].iter().next().expect("leaf has one neighbour");
            let (p, r) = if v < n { (v, u - n) } else { (u, v - n) };
            let value = if v < n && g.x[p * m + r] >= 0.5 { 1.0 } else { 0.0 };
            g.settle(p, r, value);
            continue;
        }
        let start = match g.leaves.iter().next() {
            Some(&v) => v,
            None => match (0..n + m).find(|&v| !g.adj[v].is_empty()) {
                Some(v) => v,
                None => break,
            },
        };

        // Walk until a node repeats (cycle) or a leaf is reached (path).
        walk.clear();
        walk.push(start);
        on_walk[start] = 0;
        let mut prev = usize::MAX;
        let mut cur = start;
        let (lo, hi) = loop {
            let next = g.adj[cur].iter().copied().find(|&w| w != prev);
            let Some(next) = next else {
                break (0, walk.len() - 1);
            };
            if on_walk[next] != usize::MAX {
                let first = on_walk[next];
                walk.push(next);
                break (first, walk.len() - 1);
            }
            on_walk[next] = walk.len();
            walk.push(next);
            prev = cur;
            cur = next;
        };
        for &v in &walk {
            on_walk[v] = usize::MAX;
        }
        let nodes = &walk[lo..=hi];
        let edges: Vec<usize> = nodes.windows(2).map(|w| g.entry(w[0], w[1])).collect();

        // even positions move up by theta_up, odd positions down
        let mut theta_up = f64::INFINITY;
        let mut theta_down = f64::INFINITY;
        for (k, &e) in edges.iter().enumerate() {
            let v = g.x[e];
            if k % 2 == 0 {
                theta_up = theta_up.min(1.0 - v);
                theta_down = theta_down.min(v);
            } else {
                theta_up = theta_up.min(v);
                theta_down = theta_down.min(1.0 - v);
            }
        }
        let up = rng.random::<f64>() < theta_down / (theta_up + theta_down);
        let shift = if up { theta_up } else { -theta_down };
        for (k, &e) in edges.iter().enumerate() {
            let delta = if k % 2 == 0 { shift } else { -shift };
            g.x[e] += delta;
        }
        for &e in &edges {
            let (p, r) = (e / m, e % m);
            let v = g.x[e];
            if v <= marginal_tol {
                g.settle(p, r, 0.0);
            } else if v >= 1.0 - marginal_tol {
                g.settle(p, r, 1.0);
            }
        }
    }

    let out = Assignment::from_raw(n, m, g.x, AssignmentKind::Integral);
    out.check(c)
        .map_err(|e| RauError::InvalidAssignment(format!("rounding produced an invalid sample: {e}")))?;
    Ok(out)
}

/// Expected L1 distance `2 (||a||_1 - ||a||_2^2)` between `a` and any
/// rounding that preserves its entries in expectation.
pub fn rounding_deviation(a: &Assignment) -> f64 {
    let l1: f64 = a.values().iter().map(|v| v.abs()).sum();
    let l2sq: f64 = a.values().iter().map(|v| v * v).sum();
    2.0 * (l1 - l2sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integral_input_unchanged() {
        let c = AssignmentConstraints::uniform(2, 2, 1, 1).unwrap();
        let a = Assignment::fractional(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let out = round_assignment(&a, &c, &RoundingConfig::new(1)).unwrap();
        assert_eq!(out.values(), a.values());
    }

    #[test]
    fn two_by_two_half_splits_evenly() {
        let c = AssignmentConstraints::uniform(2, 2, 1, 1).unwrap();
        let a = Assignment::fractional(2, 2, vec![0.5; 4]).unwrap();
        let samples = round_samples(&a, &c, &RoundingConfig::new(7), 10_000).unwrap();
        let diag = samples.iter().filter(|s| s.get(0, 0) == 1.0).count();
        for s in &samples {
            s.check(&c).unwrap();
            assert!(s.values() == [1.0, 0.0, 0.0, 1.0] || s.values() == [0.0, 1.0, 1.0, 0.0]);
        }
        // 3 sigma of Binomial(10^4, 0.5) is 150
        assert!((diag as i64 - 5000).abs() <= 150, "{diag}");
    }

    #[test]
    fn single_row_is_categorical() {
        let c = AssignmentConstraints::uniform(1, 2, 1, 1).unwrap();
        let a = Assignment::fractional(1, 2, vec![0.25, 0.75]).unwrap();
        let samples = round_samples(&a, &c, &RoundingConfig::new(3), 10_000).unwrap();
        let hits = samples.iter().filter(|s| s.get(0, 1) == 1.0).count() as f64;
        let sd = (10_000.0f64 * 0.75 * 0.25).sqrt();
        assert!((hits - 7500.0).abs() <= 3.0 * sd, "{hits}");
    }

    #[test]
    fn deterministic_per_seed() {
        let c = AssignmentConstraints::uniform(3, 4, 2, 2).unwrap();
        let a = Assignment::fractional(3, 4, vec![0.5; 12]).unwrap();
        let x = round_assignment(&a, &c, &RoundingConfig::new(99)).unwrap();
        let y = round_assignment(&a, &c, &RoundingConfig::new(99)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn deviation_examples() {
        let int = Assignment::fractional(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(rounding_deviation(&int), 0.0);
        let half = Assignment::fractional(1, 2, vec![0.5, 0.5]).unwrap();
        assert!((rounding_deviation(&half) - 1.0).abs() < 1e-15);
        let quarter = Assignment::fractional(2, 2, vec![0.5; 4]).unwrap();
        assert!((rounding_deviation(&quarter) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_infeasible_input() {
        let c = AssignmentConstraints::uniform(1, 2, 1, 1).unwrap();
        let a = Assignment::fractional(1, 2, vec![0.3, 0.3]).unwrap();
        assert!(round_assignment(&a, &c, &RoundingConfig::new(0)).is_err());
    }

    #[test]
    fn fractional_column_caps_respected() {
        // reviewer 2 carries 1.5 of load with cap 2; reviewer 0 sits at cap 1
        let c = AssignmentConstraints::uniform(3, 3, 1, 2).unwrap();
        let c = AssignmentConstraints::new(c.demands().to_vec(), vec![1, 2, 2], vec![]).unwrap();
        let a = Assignment::fractional(3, 3, vec![0.6, 0.1, 0.3, 0.4, 0.0, 0.6, 0.0, 0.4, 0.6]).unwrap();
        for seed in 0..500 {
            let s = round_assignment(&a, &c, &RoundingConfig::new(seed)).unwrap();
            s.check(&c).unwrap();
        }
    }
}
