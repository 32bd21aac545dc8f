//! Instance data: affinity matrices, assignment constraints, assignments, and
//! the utilitarian welfare objective shared by every solver.
//!
//! All matrices are dense and row-major. Entry `(p, r)` lives at index
//! `p * m + r`, which is also the vectorization order used by the ellipsoid
//! code in [`crate::uncertainty`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{RauError, Result};
use crate::flow::FlowNetwork;

/// Tolerance used when checking fractional assignments.
pub const FRACTIONAL_TOL: f64 = 1e-6;

/// Dense `n x m` matrix of paper-reviewer scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(RauError::InvalidMatrix(format!(
                "dimensions must be positive, got {n}x{m}"
            )));
        }
        if values.len() != n * m {
            return Err(RauError::InvalidMatrix(format!(
                "expected {} values for a {n}x{m} matrix, got {}",
                n * m,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(RauError::InvalidMatrix(format!(
                "non-finite entry at ({}, {})",
                i / m,
                i % m
            )));
        }
        Ok(Self { n, m, values })
    }

    /// Like [`AffinityMatrix::new`] but also requires every entry in `[0, 1]`.
    pub fn new_unit_box(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        let s = Self::new(n, m, values)?;
        if !s.is_unit_box() {
            return Err(RauError::InvalidMatrix(
                "entries must lie in [0, 1]".to_string(),
            ));
        }
        Ok(s)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(RauError::InvalidMatrix("ragged rows".to_string()));
        }
        Self::new(n, m, rows.concat())
    }

    pub fn filled(n: usize, m: usize, value: f64) -> Result<Self> {
        Self::new(n, m, vec![value; n * m])
    }

    pub fn zeros(n: usize, m: usize) -> Result<Self> {
        Self::filled(n, m, 0.0)
    }

    pub(crate) fn from_raw(n: usize, m: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * m);
        Self { n, m, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, p: usize, r: usize) -> f64 {
        self.values[p * self.m + r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.m..(p + 1) * self.m]
    }

    pub fn is_unit_box(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise map; the result is re-validated for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.n, self.m, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        ensure_dims(self.dims(), other.dims())?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::new(self.n, self.m, values)
    }

    pub fn l1_distance(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

pub(crate) fn ensure_dims(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected != got {
        return Err(RauError::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Paper demands `k_p`, reviewer load caps `u_r`, and conflict pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ConstraintsFile", into = "ConstraintsFile")]
pub struct AssignmentConstraints {
    demands: Vec<u32>,
    caps: Vec<u32>,
    conflicts: Vec<(usize, usize)>,
    conflict_mask: Vec<bool>,
}

/// On-disk layout of [`AssignmentConstraints`].
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ConstraintsFile {
    demands: Vec<u32>,
    caps: Vec<u32>,
    #[serde(default)]
    conflicts: Vec<[usize; 2]>,
}

impl TryFrom<ConstraintsFile> for AssignmentConstraints {
    type Error = RauError;

    fn try_from(f: ConstraintsFile) -> Result<Self> {
        let conflicts = f.conflicts.into_iter().map(|[p, r]| (p, r)).collect();
        Self::new(f.demands, f.caps, conflicts)
    }
}

impl From<AssignmentConstraints> for ConstraintsFile {
    fn from(c: AssignmentConstraints) -> Self {
        Self {
            demands: c.demands,
            caps: c.caps,
            conflicts: c.conflicts.into_iter().map(|(p, r)| [p, r]).collect(),
        }
    }
}

impl AssignmentConstraints {
    pub fn new(demands: Vec<u32>, caps: Vec<u32>, mut conflicts: Vec<(usize, usize)>) -> Result<Self> {
        let (n, m) = (demands.len(), caps.len());
        if n == 0 || m == 0 {
            return Err(RauError::InvalidConstraints(
                "need at least one paper and one reviewer".to_string(),
            ));
        }
        conflicts.sort_unstable();
        conflicts.dedup();
        let mut conflict_mask = vec![false; n * m];
        for &(p, r) in &conflicts {
            if p >= n || r >= m {
                return Err(RauError::InvalidConstraints(format!(
                    "conflict ({p}, {r}) outside a {n}x{m} instance"
                )));
            }
            conflict_mask[p * m + r] = true;
        }
        Ok(Self {
            demands,
            caps,
            conflicts,
            conflict_mask,
        })
    }

    /// Every paper needs `k` reviews, every reviewer takes at most `u`.
    pub fn uniform(n: usize, m: usize, k: u32, u: u32) -> Result<Self> {
        Self::new(vec![k; n], vec![u; m], Vec::new())
    }

    pub fn n(&self) -> usize {
        self.demands.len()
    }

    pub fn m(&self) -> usize {
        self.caps.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n(), self.m())
    }

    pub fn demands(&self) -> &[u32] {
        &self.demands
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn conflicts(&self) -> &[(usize, usize)] {
        &self.conflicts
    }

    pub fn is_conflict(&self, p: usize, r: usize) -> bool {
        self.conflict_mask[p * self.m() + r]
    }

    /// Row-major mask, `true` where the pair is conflicted.
    pub fn conflict_mask(&self) -> &[bool] {
        &self.conflict_mask
    }

    /// Total review load `K`.
    pub fn total_demand(&self) -> u64 {
        self.demands.iter().map(|&k| k as u64).sum()
    }

    pub fn total_capacity(&self) -> u64 {
        self.caps.iter().map(|&u| u as u64).sum()
    }

    /// Restrict to a subset of papers and reviewers (indices into the original).
    pub fn restrict(&self, papers: &[usize], reviewers: &[usize]) -> Result<Self> {
        let demands = papers.iter().map(|&p| self.demands[p]).collect();
        let caps = reviewers.iter().map(|&r| self.caps[r]).collect();
        let mut conflicts = Vec::new();
        for (pi, &p) in papers.iter().enumerate() {
            for (ri, &r) in reviewers.iter().enumerate() {
                if self.is_conflict(p, r) {
                    conflicts.push((pi, ri));
                }
            }
        }
        Self::new(demands, caps, conflicts)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignmentKind {
    Fractional,
    Integral,
}

/// A fractional or integral `n x m` assignment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    n: usize,
    m: usize,
    values: Vec<f64>,
    kind: AssignmentKind,
}

impl Assignment {
    pub fn new(n: usize, m: usize, values: Vec<f64>, kind: AssignmentKind) -> Result<Self> {
        if values.len() != n * m {
            return Err(RauError::InvalidAssignment(format!(
                "expected {} entries, got {}",
                n * m,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(RauError::InvalidAssignment("non-finite entry".to_string()));
        }
        if kind == AssignmentKind::Integral && values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(RauError::InvalidAssignment(
                "integral assignment has an entry outside {0, 1}".to_string(),
            ));
        }
        Ok(Self { n, m, values, kind })
    }

    pub fn fractional(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, m, values, AssignmentKind::Fractional)
    }

    pub fn integral(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(n, m, values, AssignmentKind::Integral)
    }

    pub fn from_rows(rows: &[Vec<f64>], kind: AssignmentKind) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(RauError::InvalidAssignment("ragged rows".to_string()));
        }
        Self::new(n, m, rows.concat(), kind)
    }

    pub fn zeros(n: usize, m: usize, kind: AssignmentKind) -> Self {
        Self {
            n,
            m,
            values: vec![0.0; n * m],
            kind,
        }
    }

    pub(crate) fn from_raw(n: usize, m: usize, values: Vec<f64>, kind: AssignmentKind) -> Self {
        Self { n, m, values, kind }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n, self.m)
    }

    pub fn kind(&self) -> AssignmentKind {
        self.kind
    }

    pub fn is_integral(&self) -> bool {
        self.kind == AssignmentKind::Integral
    }

    pub fn get(&self, p: usize, r: usize) -> f64 {
        self.values[p * self.m + r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row_sum(&self, p: usize) -> f64 {
        self.values[p * self.m..(p + 1) * self.m].iter().sum()
    }

    pub fn col_sum(&self, r: usize) -> f64 {
        (0..self.n).map(|p| self.values[p * self.m + r]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    /// Pairs `(p, r)` with `A[p][r] = 1` for integral assignments.
    pub fn assigned_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.values.len())
            .filter(|&i| self.values[i] == 1.0)
            .map(|i| (i / self.m, i % self.m))
            .collect()
    }

    /// Largest violation of the assignment constraints (row equalities,
    /// column caps, box, conflicts).
    pub fn max_violation(&self, c: &AssignmentConstraints) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, &v) in self.values.iter().enumerate() {
            worst = worst.max(-v).max(v - 1.0);
            if c.conflict_mask()[i] {
                worst = worst.max(v.abs());
            }
        }
        for p in 0..self.n {
            worst = worst.max((self.row_sum(p) - c.demands()[p] as f64).abs());
        }
        for r in 0..self.m {
            worst = worst.max(self.col_sum(r) - c.caps()[r] as f64);
        }
        worst
    }

    /// Check every assignment invariant against `c`: entries in `[0, 1]`
    /// (`{0, 1}` if integral), zero on conflicts, row sums equal to `k_p`,
    /// column sums at most `u_r`. Fractional checks use [`FRACTIONAL_TOL`];
    /// integral checks are exact.
    pub fn check(&self, c: &AssignmentConstraints) -> Result<()> {
        ensure_dims(c.dims(), self.dims())?;
        let tol = match self.kind {
            AssignmentKind::Fractional => FRACTIONAL_TOL,
            AssignmentKind::Integral => 0.0,
        };
        for (i, &v) in self.values.iter().enumerate() {
            let (p, r) = (i / self.m, i % self.m);
            if self.kind == AssignmentKind::Integral && v != 0.0 && v != 1.0 {
                return Err(RauError::InvalidAssignment(format!(
                    "entry ({p}, {r}) = {v} is not 0/1"
                )));
            }
            if v < -tol || v > 1.0 + tol {
                return Err(RauError::InvalidAssignment(format!(
                    "entry ({p}, {r}) = {v} outside [0, 1]"
                )));
            }
            if c.conflict_mask()[i] && v != 0.0 {
                return Err(RauError::InvalidAssignment(format!(
                    "conflicted entry ({p}, {r}) = {v}"
                )));
            }
        }
        for p in 0..self.n {
            let s = self.row_sum(p);
            let k = c.demands()[p] as f64;
            if (s - k).abs() > tol {
                return Err(RauError::InvalidAssignment(format!(
                    "paper {p} has load {s}, demand {k}"
                )));
            }
        }
        for r in 0..self.m {
            let s = self.col_sum(r);
            let u = c.caps()[r] as f64;
            if s > u + tol {
                return Err(RauError::InvalidAssignment(format!(
                    "reviewer {r} has load {s}, cap {u}"
                )));
            }
        }
        Ok(())
    }
}

/// Utilitarian social welfare `(1/n) sum_{p,r} A[p][r] * S[p][r]`.
pub fn usw(a: &Assignment, s: &AffinityMatrix) -> Result<f64> {
    ensure_dims(a.dims(), s.dims())?;
    Ok(dot(a.values(), s.values()) / a.n() as f64)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Why an instance has no feasible assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Infeasibility {
    DimensionMismatch { expected: (usize, usize), got: (usize, usize) },
    DemandExceedsCapacity { demand: u64, capacity: u64 },
    PaperFullyConflicted { paper: usize },
    PaperUndercovered { paper: usize, eligible: usize, demand: u32 },
    FlowShortfall { max_flow: u64, demand: u64 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { expected, got } => {
                write!(f, "dimension mismatch: matrix {expected:?}, constraints {got:?}")
            }
            Self::DemandExceedsCapacity { demand, capacity } => {
                write!(f, "demand exceeds capacity ({demand} > {capacity})")
            }
            Self::PaperFullyConflicted { paper } => write!(f, "paper {paper} fully conflicted"),
            Self::PaperUndercovered {
                paper,
                eligible,
                demand,
            } => write!(
                f,
                "paper {paper} has {eligible} eligible reviewers but needs {demand}"
            ),
            Self::FlowShortfall { max_flow, demand } => {
                write!(f, "max flow {max_flow} is below total demand {demand}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub reason: Option<Infeasibility>,
    pub total_demand: u64,
    pub total_capacity: u64,
    pub max_flow: u64,
}

impl FeasibilityReport {
    pub fn into_result(self) -> Result<()> {
        match self.reason {
            None => Ok(()),
            Some(reason) => Err(RauError::Infeasible(reason.to_string())),
        }
    }
}

/// Decide whether an integral assignment exists for a `dims` instance under
/// `c`, via max-flow on the demand/cap graph with conflicted arcs removed.
pub fn validate_instance(dims: (usize, usize), c: &AssignmentConstraints) -> FeasibilityReport {
    let total_demand = c.total_demand();
    let total_capacity = c.total_capacity();
    let report = |reason: Option<Infeasibility>, max_flow: u64| FeasibilityReport {
        feasible: reason.is_none(),
        reason,
        total_demand,
        total_capacity,
        max_flow,
    };
    if dims != c.dims() {
        return report(
            Some(Infeasibility::DimensionMismatch {
                expected: dims,
                got: c.dims(),
            }),
            0,
        );
    }
    if total_demand > total_capacity {
        return report(
            Some(Infeasibility::DemandExceedsCapacity {
                demand: total_demand,
                capacity: total_capacity,
            }),
            0,
        );
    }
    let m = c.m();
    for (p, &k) in c.demands().iter().enumerate() {
        let eligible = (0..m).filter(|&r| !c.is_conflict(p, r) && c.caps()[r] > 0).count();
        if k > 0 && eligible == 0 {
            return report(Some(Infeasibility::PaperFullyConflicted { paper: p }), 0);
        }
        if (eligible as u64) < k as u64 {
            return report(
                Some(Infeasibility::PaperUndercovered {
                    paper: p,
                    eligible,
                    demand: k,
                }),
                0,
            );
        }
    }
    let mut net = FlowNetwork::unweighted(c);
    let max_flow = net.max_flow();
    if max_flow < total_demand {
        return report(
            Some(Infeasibility::FlowShortfall {
                max_flow,
                demand: total_demand,
            }),
            max_flow,
        );
    }
    report(None, max_flow)
}
