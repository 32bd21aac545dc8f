//! Supergradient ascent on the worst-case welfare over the fractional
//! assignment polytope.
//!
//! Each iteration asks the adversary for the worst scores `S_t` at the
//! current iterate, keeps the best iterate seen so far, steps along the
//! supergradient `S_t / n` and projects back onto the polytope.

use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use crate::adversary::adversary;
use crate::error::{RauError, Result};
use crate::flow::solve_known;
use crate::model::{Assignment, AssignmentConstraints, AssignmentKind, FRACTIONAL_TOL};
use crate::projection::{project_polytope, ProjectionConfig};
use crate::uncertainty::{l1_diameter_bound, Ellipsoid, Geometry, UncertaintySet};

pub const DEFAULT_MAX_ITERS_CAP: usize = 5_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Iterations without sufficient improvement before stopping.
    pub window: usize,
    pub min_improvement: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            window: 200,
            min_improvement: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RraConfig {
    pub epsilon: f64,
    /// Supergradient norm bound; computed from the set when absent.
    pub lambda: Option<f64>,
    pub max_iters_cap: Option<usize>,
    pub step_size_override: Option<f64>,
    pub record_trace: bool,
    pub early_stop: Option<EarlyStop>,
    pub projection: ProjectionConfig,
}

impl Default for RraConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            lambda: None,
            max_iters_cap: Some(DEFAULT_MAX_ITERS_CAP),
            step_size_override: None,
            record_trace: false,
            early_stop: None,
            projection: ProjectionConfig::default(),
        }
    }
}

impl RraConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub t: usize,
    pub adv_usw: f64,
    /// Frobenius norm of the move from this iterate to the next.
    pub step_norm: f64,
    pub best_usw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RraResult {
    pub best_fractional: Assignment,
    pub best_adversarial_usw: f64,
    pub iterations_run: usize,
    /// Iteration count `ceil(2K (lambda / epsilon)^2)` that certifies an
    /// `epsilon`-optimal answer.
    pub converged_bound: u64,
    /// Iterations actually scheduled (the bound clipped to the cap).
    pub iteration_limit: usize,
    pub lambda: f64,
    pub step_size: f64,
    /// True when the full certified schedule ran.
    pub certified: bool,
    pub stopped_early: bool,
    pub interrupted: bool,
    /// Projections that hit their iteration limit with a residual above
    /// tolerance; such iterates are never reported as best.
    pub projection_warnings: usize,
    pub trace: Option<Vec<TraceEntry>>,
}

fn ellipsoid_norm_bound(e: &Ellipsoid) -> f64 {
    e.center.frobenius_norm() + (e.radius_sq * e.max_weight()).sqrt()
}

/// Bound `lambda >= sup_S ||S||_F / n` on the supergradient norm.
pub fn gradient_bound(set: &UncertaintySet) -> f64 {
    let (n, m) = set.dims();
    let cube = ((n * m) as f64).sqrt();
    let box_norm = |l: &crate::model::AffinityMatrix, u: &crate::model::AffinityMatrix| {
        l.values()
            .iter()
            .zip(u.values())
            .map(|(a, b)| (a * a).max(b * b))
            .sum::<f64>()
            .sqrt()
    };
    let norm = match set.geometry() {
        Geometry::Singleton { center } => center.frobenius_norm(),
        Geometry::Box { lower, upper } => box_norm(lower, upper),
        Geometry::Sphere { center, radius } => center.frobenius_norm() + radius,
        Geometry::Ellipsoid(e) if e.truncated => ellipsoid_norm_bound(e).min(cube),
        Geometry::Ellipsoid(e) => ellipsoid_norm_bound(e),
        Geometry::BoxedEllipsoid {
            ellipsoid,
            lower,
            upper,
        } => ellipsoid_norm_bound(ellipsoid).min(box_norm(lower, upper)),
        Geometry::VertexPolytope { vertices } => vertices
            .iter()
            .map(|v| v.frobenius_norm())
            .fold(0.0, f64::max),
    };
    (norm + set.l1_expansion()) / n as f64
}

pub fn rra_solve(set: &UncertaintySet, c: &AssignmentConstraints, cfg: &RraConfig) -> Result<RraResult> {
    rra_solve_with(set, c, cfg, |_| ControlFlow::Continue(()))
}

/// Like [`rra_solve`], calling `observer` after every iteration. Returning
/// `ControlFlow::Break` stops the run and the best iterate so far is
/// returned.
pub fn rra_solve_with(
    set: &UncertaintySet,
    c: &AssignmentConstraints,
    cfg: &RraConfig,
    mut observer: impl FnMut(&TraceEntry) -> ControlFlow<()>,
) -> Result<RraResult> {
    if set.dims() != c.dims() {
        return Err(RauError::DimensionMismatch {
            expected: c.dims(),
            got: set.dims(),
        });
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(RauError::InvalidParameter(format!("epsilon must be positive, got {}", cfg.epsilon)));
    }
    if let Some(l) = cfg.lambda {
        if !(l > 0.0 && l.is_finite()) {
            return Err(RauError::InvalidParameter(format!("lambda must be positive, got {l}")));
        }
    }
    if let Some(a) = cfg.step_size_override {
        if !(a > 0.0 && a.is_finite()) {
            return Err(RauError::InvalidParameter(format!("step size must be positive, got {a}")));
        }
    }
    let (n, m) = c.dims();
    let lambda = cfg.lambda.unwrap_or_else(|| gradient_bound(set));
    let k_total = c.total_demand() as f64;
    let bound_f = (2.0 * k_total * (lambda / cfg.epsilon).powi(2)).ceil();
    let converged_bound = if bound_f >= u64::MAX as f64 { u64::MAX } else { bound_f as u64 };
    let iteration_limit = match cfg.max_iters_cap {
        Some(cap) => converged_bound.min(cap as u64) as usize,
        None => usize::try_from(converged_bound).unwrap_or(usize::MAX),
    };
    let step_size = match cfg.step_size_override {
        Some(a) => a,
        None if lambda > 0.0 => cfg.epsilon / (lambda * lambda),
        None => 0.0,
    };

    let start = solve_known(&set.center(), c)?;
    let mut current = Assignment::from_raw(n, m, start.values().to_vec(), AssignmentKind::Fractional);
    let mut current_feasible = true;
    let mut best: Option<(Assignment, f64)> = None;
    let mut trace = cfg.record_trace.then(Vec::new);
    let mut projection_warnings = 0;
    let mut iterations_run = 0;
    let mut stopped_early = false;
    let mut interrupted = false;
    let mut last_improvement_at = 0;
    let mut improvement_ref = f64::NEG_INFINITY;
    let nf = n as f64;

    let mut t = 0;
    loop {
        let adv = adversary(&current, set)?;
        if current_feasible && best.as_ref().is_none_or(|(_, w)| adv.worst_usw > *w) {
            best = Some((current.clone(), adv.worst_usw));
        }
        let best_usw = best.as_ref().map_or(f64::NEG_INFINITY, |(_, w)| *w);
        if t >= iteration_limit {
            break;
        }

        let scale = step_size / nf;
        let stepped: Vec<f64> = current
            .values()
            .iter()
            .zip(adv.worst_scores.values())
            .map(|(a, s)| a + scale * s)
            .collect();
        let proj = project_polytope(&stepped, c, &cfg.projection)?;
        let step_norm = proj
            .iterate
            .values()
            .iter()
            .zip(current.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        current_feasible = proj.residual <= FRACTIONAL_TOL;
        if !proj.converged && proj.residual > 10.0 * cfg.projection.tol {
            projection_warnings += 1;
        }
        current = proj.iterate;
        t += 1;
        iterations_run = t;

        let entry = TraceEntry {
            t: t - 1,
            adv_usw: adv.worst_usw,
            step_norm,
            best_usw,
        };
        if let Some(tr) = trace.as_mut() {
            tr.push(entry);
        }
        if observer(&entry).is_break() {
            interrupted = true;
            break;
        }
        if let Some(es) = cfg.early_stop {
            if best_usw > improvement_ref + es.min_improvement {
                improvement_ref = best_usw;
                last_improvement_at = t;
            } else if t - last_improvement_at >= es.window {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_fractional, best_adversarial_usw) =
        best.ok_or_else(|| RauError::Infeasible("no feasible iterate produced".into()))?;
    Ok(RraResult {
        best_fractional,
        best_adversarial_usw,
        iterations_run,
        converged_bound,
        iteration_limit,
        lambda,
        step_size,
        certified: iteration_limit as u64 == converged_bound && !stopped_early && !interrupted,
        stopped_early,
        interrupted,
        projection_warnings,
        trace,
    })
}

/// Two-sided comparison of adversarial and true welfare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub true_usw: f64,
    pub adversarial_usw: f64,
    pub diameter_bound: f64,
    pub gamma: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub holds: bool,
}

/// Check `true - (L + gamma)/n <= adversarial <= true + gamma/n`, which must
/// hold whenever the set is a valid `(delta, gamma)` set for `s_true`.
pub fn sandwich_check(
    a: &Assignment,
    set: &UncertaintySet,
    s_true: &crate::model::AffinityMatrix,
) -> Result<SandwichReport> {
    let true_usw = crate::model::usw(a, s_true)?;
    let adversarial_usw = adversary(a, set)?.worst_usw;
    let n = a.n() as f64;
    let diameter_bound = l1_diameter_bound(set);
    let gamma = set.gamma();
    let lower_bound = true_usw - (diameter_bound + gamma) / n;
    let upper_bound = true_usw + gamma / n;
    let slack = 1e-9;
    Ok(SandwichReport {
        true_usw,
        adversarial_usw,
        diameter_bound,
        gamma,
        lower_bound,
        upper_bound,
        holds: adversarial_usw >= lower_bound - slack && adversarial_usw <= upper_bound + slack,
    })
}
