//! Known-score assignment as min-cost flow.
//!
//! The network is `source -> paper (cap k_p) -> reviewer (cap 1, non-conflicted
//! pairs only) -> sink (cap u_r)`. Scores are scaled by [`COST_SCALE`] and
//! rounded to integers, so the flow solver never compares floats. Costs are
//! shifted so every paper-reviewer arc is non-negative; every feasible flow
//! carries exactly `K` units through those arcs, so the shift changes all
//! objective values by the same constant.
//!
//! Ties between equally good assignments are broken by a secondary cost of
//! `r * (n - p)` per assigned pair, which steers early papers toward
//! low-index reviewers. The secondary costs of a whole assignment stay below
//! one unit of scaled score, so they never override a real score difference.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use crate::error::{RauError, Result};
use crate::model::{
    ensure_dims, usw, validate_instance, AffinityMatrix, Assignment, AssignmentConstraints,
    AssignmentKind,
};

/// Scores are multiplied by this factor and rounded before solving.
pub const COST_SCALE: f64 = 1e9;

const INF: i128 = i128::MAX / 4;

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    cap: i64,
    cost: i128,
}

/// Source/paper/reviewer/sink network. Arc `e ^ 1` is the reverse of arc `e`.
#[derive(Debug, Clone)]
pub struct FlowNetwork {
    n: usize,
    m: usize,
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    /// `(p, r, arc index)` for every paper-reviewer arc.
    pair_arcs: Vec<(usize, usize, usize)>,
}

impl FlowNetwork {
    fn source(&self) -> usize {
        0
    }

    fn sink(&self) -> usize {
        self.n + self.m + 1
    }

    fn paper(&self, p: usize) -> usize {
        1 + p
    }

    fn reviewer(&self, r: usize) -> usize {
        1 + self.n + r
    }

    fn add_arc(&mut self, from: usize, to: usize, cap: i64, cost: i128) -> usize {
        let e = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.adj[from].push(e);
        self.adj[to].push(e + 1);
        e
    }

    fn build(c: &AssignmentConstraints, pair_cost: impl Fn(usize, usize) -> i128) -> Self {
        let (n, m) = c.dims();
        let mut net = Self {
            n,
            m,
            arcs: Vec::with_capacity(2 * (n * m + n + m)),
            adj: vec![Vec::new(); n + m + 2],
            pair_arcs: Vec::with_capacity(n * m),
        };
        for p in 0..n {
            let (s, pn) = (net.source(), net.paper(p));
            net.add_arc(s, pn, c.demands()[p] as i64, 0);
        }
        for p in 0..n {
            for r in 0..m {
                if c.is_conflict(p, r) {
                    continue;
                }
                let (pn, rn) = (net.paper(p), net.reviewer(r));
                let e = net.add_arc(pn, rn, 1, pair_cost(p, r));
                net.pair_arcs.push((p, r, e));
            }
        }
        for r in 0..m {
            let (rn, t) = (net.reviewer(r), net.sink());
            net.add_arc(rn, t, c.caps()[r] as i64, 0);
        }
        net
    }

    /// Network with zero costs, used for feasibility checks.
    pub fn unweighted(c: &AssignmentConstraints) -> Self {
        Self::build(c, |_, _| 0)
    }

    /// Network whose min-cost flow maximizes `USW(A, s)`.
    pub fn weighted(s: &AffinityMatrix, c: &AssignmentConstraints) -> Self {
        let (n, m) = c.dims();
        let scaled: Vec<i128> = s
            .values()
            .iter()
            .map(|v| (v * COST_SCALE).round() as i128)
            .collect();
        let top = scaled.iter().copied().max().unwrap_or(0);
        let tie_unit = (c.total_demand() as i128) * (n as i128) * (m as i128) + 1;
        Self::build(c, |p, r| {
            (top - scaled[p * m + r]) * tie_unit + (r as i128) * ((n - p) as i128)
        })
    }

    /// Edmonds-Karp max flow from source to sink.
    pub fn max_flow(&mut self) -> u64 {
        let (s, t) = (self.source(), self.sink());
        let mut total = 0u64;
        let mut parent = vec![usize::MAX; self.adj.len()];
        loop {
            parent.fill(usize::MAX);
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.adj.len()];
            seen[s] = true;
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for &e in &self.adj[u] {
                    let v = self.arcs[e].to;
                    if self.arcs[e].cap > 0 && !seen[v] {
                        seen[v] = true;
                        parent[v] = e;
                        queue.push_back(v);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let pushed = self.augment(&parent);
            total += pushed as u64;
        }
    }

    fn augment(&mut self, parent: &[usize]) -> i64 {
        let (s, t) = (self.source(), self.sink());
        let mut bottleneck = i64::MAX;
        let mut v = t;
        while v != s {
            let e = parent[v];
            bottleneck = bottleneck.min(self.arcs[e].cap);
            v = self.arcs[e ^ 1].to;
        }
        let mut v = t;
        while v != s {
            let e = parent[v];
            self.arcs[e].cap -= bottleneck;
            self.arcs[e ^ 1].cap += bottleneck;
            v = self.arcs[e ^ 1].to;
        }
        bottleneck
    }

    /// Successive shortest paths with Johnson potentials. All forward costs
    /// are non-negative, so the initial potentials are zero. Returns the
    /// amount of flow routed (at most `limit`).
    pub fn min_cost_flow(&mut self, limit: u64) -> u64 {
        let (s, t) = (self.source(), self.sink());
        let nodes = self.adj.len();
        let mut potential = vec![0i128; nodes];
        let mut dist = vec![INF; nodes];
        let mut parent = vec![usize::MAX; nodes];
        let mut routed = 0u64;
        while routed < limit {
            dist.fill(INF);
            parent.fill(usize::MAX);
            dist[s] = 0;
            let mut heap = BinaryHeap::new();
            heap.push(Reverse((0i128, s)));
            while let Some(Reverse((d, u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &e in &self.adj[u] {
                    let arc = &self.arcs[e];
                    if arc.cap <= 0 {
                        continue;
                    }
                    let v = arc.to;
                    let nd = d + arc.cost + potential[u] - potential[v];
                    if nd < dist[v] {
                        dist[v] = nd;
                        parent[v] = e;
                        heap.push(Reverse((nd, v)));
                    }
                }
            }
            if dist[t] >= INF {
                break;
            }
            for v in 0..nodes {
                if dist[v] < INF {
                    potential[v] += dist[v];
                }
            }
            let pushed = self.augment_limited(&parent, limit - routed);
            routed += pushed as u64;
        }
        routed
    }

    fn augment_limited(&mut self, parent: &[usize], limit: u64) -> i64 {
        let (s, t) = (self.source(), self.sink());
        let mut bottleneck = limit.min(i64::MAX as u64) as i64;
        let mut v = t;
        while v != s {
            let e = parent[v];
            bottleneck = bottleneck.min(self.arcs[e].cap);
            v = self.arcs[e ^ 1].to;
        }
        let mut v = t;
        while v != s {
            let e = parent[v];
            self.arcs[e].cap -= bottleneck;
            self.arcs[e ^ 1].cap += bottleneck;
            v = self.arcs[e ^ 1].to;
        }
        bottleneck
    }

    /// Read the current flow off the paper-reviewer arcs.
    pub fn assignment(&self) -> Assignment {
        let mut values = vec![0.0; self.n * self.m];
        for &(p, r, e) in &self.pair_arcs {
            if self.arcs[e].cap == 0 {
                values[p * self.m + r] = 1.0;
            }
        }
        Assignment::from_raw(self.n, self.m, values, AssignmentKind::Integral)
    }
}

/// Integral assignment maximizing `USW(A, s)` subject to `c`.
pub fn solve_known(s: &AffinityMatrix, c: &AssignmentConstraints) -> Result<Assignment> {
    ensure_dims(c.dims(), s.dims())?;
    let demand = c.total_demand();
    let mut net = FlowNetwork::weighted(s, c);
    let routed = net.min_cost_flow(demand);
    if routed < demand {
        let reason = validate_instance(s.dims(), c)
            .reason
            .map_or_else(|| format!("routed {routed} of {demand}"), |r| r.to_string());
        return Err(RauError::Infeasible(reason));
    }
    Ok(net.assignment())
}

/// Maximin assignment over the box `[lower, upper]`: optimize the lower
/// corner. Returns the assignment and its worst-case welfare.
pub fn solve_box(
    lower: &AffinityMatrix,
    upper: &AffinityMatrix,
    c: &AssignmentConstraints,
) -> Result<(Assignment, f64)> {
    ensure_dims(lower.dims(), upper.dims())?;
    if lower.values().iter().zip(upper.values()).any(|(l, u)| l > u) {
        return Err(RauError::InvalidSet("box lower bound exceeds upper bound".into()));
    }
    let a = solve_known(lower, c)?;
    let worst = usw(&a, lower)?;
    Ok((a, worst))
}

/// Maximin assignment over the Frobenius ball of `radius` around `center`:
/// optimize the center, then subtract `radius * ||A||_F / n`.
pub fn solve_sphere(
    center: &AffinityMatrix,
    radius: f64,
    c: &AssignmentConstraints,
) -> Result<(Assignment, f64)> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(RauError::InvalidSet(format!("sphere radius must be positive, got {radius}")));
    }
    let a = solve_known(center, c)?;
    let worst = usw(&a, center)? - radius * a.frobenius_norm() / a.n() as f64;
    Ok((a, worst))
}
