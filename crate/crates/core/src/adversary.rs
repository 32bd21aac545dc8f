//! Worst-case scores for a fixed assignment.

use serde::Serialize;

use crate::error::{RauError, Result};
use crate::model::{dot, ensure_dims, AffinityMatrix, Assignment};
use crate::uncertainty::{quad_form, unit_box, Ellipsoid, Geometry, UncertaintySet};

/// Cap on dual bisection steps (bracketing included).
pub const MAX_BISECTION_ITERS: usize = 200;
/// Target `|q(S) - R|` for the dual bisection.
pub const BISECTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdversaryResult {
    pub worst_scores: AffinityMatrix,
    pub worst_usw: f64,
    /// Multiplier on the quadratic constraint; zero for other geometries or
    /// when that constraint is slack.
    pub dual_multiplier: f64,
    pub iterations: usize,
    /// Largest violation of the set's constraints by `worst_scores`.
    pub residual: f64,
}

fn finish(a: &Assignment, worst_scores: AffinityMatrix, dual: f64, iterations: usize, residual: f64) -> AdversaryResult {
    let worst_usw = dot(a.values(), worst_scores.values()) / a.n() as f64;
    AdversaryResult {
        worst_scores,
        worst_usw,
        dual_multiplier: dual,
        iterations,
        residual,
    }
}

pub fn adversary_box(a: &Assignment, lower: &AffinityMatrix, upper: &AffinityMatrix) -> Result<AdversaryResult> {
    ensure_dims(a.dims(), lower.dims())?;
    ensure_dims(a.dims(), upper.dims())?;
    Ok(finish(a, lower.clone(), 0.0, 0, 0.0))
}

pub fn adversary_sphere(a: &Assignment, center: &AffinityMatrix, radius: f64) -> Result<AdversaryResult> {
    ensure_dims(a.dims(), center.dims())?;
    if !(radius > 0.0) {
        return Err(RauError::InvalidParameter(format!("sphere radius must be positive, got {radius}")));
    }
    let norm = a.frobenius_norm();
    if norm == 0.0 {
        return Ok(finish(a, center.clone(), 0.0, 0, 0.0));
    }
    let values = center
        .values()
        .iter()
        .zip(a.values())
        .map(|(c, x)| c - radius * x / norm)
        .collect();
    let s = AffinityMatrix::from_raw(center.n(), center.m(), values);
    Ok(finish(a, s, 0.0, 0, 0.0))
}

/// Minimizer of `<A, S>` over a diagonal ellipsoid, truncated to the unit
/// box when the ellipsoid says so.
pub fn adversary_ellipsoid(a: &Assignment, e: &Ellipsoid) -> Result<AdversaryResult> {
    ensure_dims(a.dims(), e.center.dims())?;
    if e.truncated {
        let (l, u) = unit_box(e.center.dims());
        adversary_boxed_ellipsoid(a, e, &l, &u)
    } else {
        let x = a.values();
        let w = e.diag_weights.values();
        let spread: f64 = x.iter().zip(w).map(|(x, w)| x * x * w).sum();
        if x.iter().all(|&v| v == 0.0) {
            return Ok(finish(a, e.center.clone(), 0.0, 0, 0.0));
        }
        if !(spread > 0.0) {
            return Err(RauError::InvalidSet("degenerate ellipsoid direction".into()));
        }
        let scale = e.radius_sq.sqrt() / spread.sqrt();
        let values = e
            .center
            .values()
            .iter()
            .zip(x.iter().zip(w))
            .map(|(c, (x, w))| c - scale * w * x)
            .collect();
        let s = AffinityMatrix::from_raw(e.center.n(), e.center.m(), values);
        let residual = (quad_form(e.center.values(), w, s.values()) - e.radius_sq).max(0.0);
        Ok(finish(a, s, spread.sqrt() / (2.0 * e.radius_sq.sqrt()), 0, residual))
    }
}

/// Minimizer of `<A, S>` over an ellipsoid intersected with the box
/// `[lower, upper]`, by bisection on the multiplier `nu` of the quadratic
/// constraint. For fixed `nu` the Lagrangian separates and its minimizer is
/// `clamp(c_i - a_i w_i / (2 nu), l_i, u_i)`.
pub fn adversary_boxed_ellipsoid(
    a: &Assignment,
    e: &Ellipsoid,
    lower: &AffinityMatrix,
    upper: &AffinityMatrix,
) -> Result<AdversaryResult> {
    ensure_dims(a.dims(), e.center.dims())?;
    ensure_dims(a.dims(), lower.dims())?;
    let (n, m) = a.dims();
    let x = a.values();
    let c = e.center.values();
    let w = e.diag_weights.values();
    let (lo, hi) = (lower.values(), upper.values());
    let radius_sq = e.radius_sq;

    // Entries with zero weight sit at the box point nearest the center for
    // every multiplier; only the weighted ones move.
    let mut base = vec![0.0; n * m];
    let mut q_fixed = 0.0;
    let mut active = Vec::new();
    for i in 0..n * m {
        if x[i] > 0.0 {
            active.push(i);
        } else {
            let s = c[i].clamp(lo[i], hi[i]);
            base[i] = s;
            q_fixed += (s - c[i]) * (s - c[i]) / w[i];
        }
    }
    let point_at = |nu: f64, out: &mut [f64]| -> f64 {
        let mut q = q_fixed;
        for (slot, &i) in out.iter_mut().zip(&active) {
            let target = if nu == 0.0 { lo[i] } else { c[i] - x[i] * w[i] / (2.0 * nu) };
            let s = target.clamp(lo[i], hi[i]);
            *slot = s;
            q += (s - c[i]) * (s - c[i]) / w[i];
        }
        q
    };
    let assemble = |moved: &[f64]| {
        let mut values = base.clone();
        for (&i, &s) in active.iter().zip(moved) {
            values[i] = s;
        }
        AffinityMatrix::from_raw(n, m, values)
    };

    let mut buf = vec![0.0; active.len()];
    let q0 = point_at(0.0, &mut buf);
    if q0 <= radius_sq {
        // the box corner alone is optimal; quadratic constraint slack
        return Ok(finish(a, assemble(&buf), 0.0, 0, 0.0));
    }

    let mut iterations = 0;
    let mut nu_lo = 0.0;
    let mut nu_hi = 1.0;
    let mut q_hi = point_at(nu_hi, &mut buf);
    while q_hi > radius_sq {
        iterations += 1;
        if iterations >= MAX_BISECTION_ITERS {
            return Err(RauError::AdversaryNonConvergence {
                iterations,
                residual: q_hi - radius_sq,
            });
        }
        nu_lo = nu_hi;
        nu_hi *= 2.0;
        q_hi = point_at(nu_hi, &mut buf);
    }
    let mut mid_buf = vec![0.0; active.len()];
    while radius_sq - q_hi > BISECTION_TOL {
        iterations += 1;
        if iterations >= MAX_BISECTION_ITERS {
            return Err(RauError::AdversaryNonConvergence {
                iterations,
                residual: radius_sq - q_hi,
            });
        }
        let nu_mid = 0.5 * (nu_lo + nu_hi);
        if nu_mid <= nu_lo || nu_mid >= nu_hi {
            break; // bracket exhausted at machine precision
        }
        let q_mid = point_at(nu_mid, &mut mid_buf);
        if q_mid > radius_sq {
            nu_lo = nu_mid;
        } else {
            nu_hi = nu_mid;
            q_hi = q_mid;
            std::mem::swap(&mut buf, &mut mid_buf);
        }
    }
    // `buf` holds the point at nu_hi, which is always feasible
    Ok(finish(a, assemble(&buf), nu_hi, iterations, 0.0))
}

/// Vertex with the smallest welfare; ties go to the lowest index.
pub fn adversary_vertices(a: &Assignment, vertices: &[AffinityMatrix]) -> Result<AdversaryResult> {
    if vertices.is_empty() {
        return Err(RauError::InvalidSet("no vertices".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (i, v) in vertices.iter().enumerate() {
        ensure_dims(a.dims(), v.dims())?;
        let value = dot(a.values(), v.values());
        if value < best.1 {
            best = (i, value);
        }
    }
    Ok(finish(a, vertices[best.0].clone(), 0.0, vertices.len(), 0.0))
}

/// Worst case over any supported set.
///
/// A symbolic L1 expansion of radius `eta` is realized exactly: the
/// adversary subtracts `eta` from the entry with the largest assignment
/// weight, lowering welfare by `eta * max_i a_i / n`.
pub fn adversary(a: &Assignment, set: &UncertaintySet) -> Result<AdversaryResult> {
    ensure_dims(set.dims(), a.dims())?;
    let mut result = match set.geometry() {
        Geometry::Singleton { center } => finish(a, center.clone(), 0.0, 0, 0.0),
        Geometry::Box { lower, upper } => adversary_box(a, lower, upper)?,
        Geometry::Sphere { center, radius } => adversary_sphere(a, center, *radius)?,
        Geometry::Ellipsoid(e) => adversary_ellipsoid(a, e)?,
        Geometry::BoxedEllipsoid {
            ellipsoid,
            lower,
            upper,
        } => adversary_boxed_ellipsoid(a, ellipsoid, lower, upper)?,
        Geometry::VertexPolytope { vertices } => adversary_vertices(a, vertices)?,
    };
    let eta = set.l1_expansion();
    if eta > 0.0 {
        let x = a.values();
        let mut arg = 0;
        for (i, &v) in x.iter().enumerate() {
            if v > x[arg] {
                arg = i;
            }
        }
        if x[arg] > 0.0 {
            let (n, m) = result.worst_scores.dims();
            let mut values = result.worst_scores.into_values();
            values[arg] -= eta;
            result = finish(
                a,
                AffinityMatrix::from_raw(n, m, values),
                result.dual_multiplier,
                result.iterations,
                result.residual,
            );
        }
    }
    Ok(result)
}
