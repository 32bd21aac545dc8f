//! Euclidean projection onto the fractional assignment polytope.
//!
//! Dykstra's method alternates between two blocks, each an exact
//! projection: rows (`sum = k_p`, box, conflicts) and columns
//! (`sum <= u_r`, box, conflicts).

use serde::{Deserialize, Serialize};

use crate::error::{RauError, Result};
use crate::model::{Assignment, AssignmentConstraints, AssignmentKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionState {
    pub iterate: Assignment,
    /// Dykstra corrections for the row block and the column block.
    pub corrections: [Vec<f64>; 2],
    /// Largest row-sum violation of `iterate` (columns, box and conflicts
    /// hold exactly).
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Shift `tau` with `sum_j clamp(v_j - tau, 0, 1) = target`.
///
/// The sum is piecewise linear and non-increasing in `tau`; Newton steps on
/// it land exactly once the set of unclamped entries settles, and a
/// bisection fallback keeps every step inside the current bracket.
fn capped_shift(values: &[f64], target: f64) -> f64 {
    let len = values.len() as f64;
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    lo -= 1.0; // sum = len >= target
    if target >= len {
        return lo;
    }
    if target <= 0.0 {
        return hi;
    }
    let tol = 1e-12 * target.max(1.0);
    let mut tau = ((values.iter().sum::<f64>() - target) / len).clamp(lo, hi);
    for _ in 0..200 {
        let mut sum = 0.0;
        let mut free = 0usize;
        for &v in values {
            let y = v - tau;
            if y >= 1.0 {
                sum += 1.0;
            } else if y > 0.0 {
                sum += y;
                free += 1;
            }
        }
        let gap = sum - target;
        if gap.abs() <= tol {
            return tau;
        }
        if gap > 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let newton = if free > 0 { tau + gap / free as f64 } else { f64::NAN };
        tau = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    tau
}

/// Projection of `x` onto `{y in [0,1]^allowed : sum y = k}`, zero outside
/// `allowed`. Writes into `out`.
fn project_row_into(x: &[f64], k: f64, allowed: &[bool], out: &mut [f64], scratch: &mut Vec<f64>) {
    scratch.clear();
    scratch.extend(x.iter().zip(allowed).filter(|(_, &ok)| ok).map(|(&v, _)| v));
    if scratch.is_empty() {
        out.iter_mut().for_each(|o| *o = 0.0);
        return;
    }
    let tau = capped_shift(scratch, k);
    for ((o, &v), &ok) in out.iter_mut().zip(x).zip(allowed) {
        *o = if ok { (v - tau).clamp(0.0, 1.0) } else { 0.0 };
    }
}

/// Projection onto `{y in [0,1]^allowed : sum y <= u}`.
fn project_col_into(x: &[f64], u: f64, allowed: &[bool], out: &mut [f64], scratch: &mut Vec<f64>) {
    let mut total = 0.0;
    for ((o, &v), &ok) in out.iter_mut().zip(x).zip(allowed) {
        *o = if ok { v.clamp(0.0, 1.0) } else { 0.0 };
        total += *o;
    }
    if total > u {
        project_row_into(x, u, allowed, out, scratch);
    }
}

/// Projection of `x` onto `{y in [0,1]^allowed : sum y = k}`.
pub fn project_row(x: &[f64], k: u32, allowed: &[bool]) -> Result<Vec<f64>> {
    if allowed.len() != x.len() {
        return Err(RauError::InvalidParameter("mask length differs from vector length".into()));
    }
    let eligible = allowed.iter().filter(|&&ok| ok).count();
    if eligible < k as usize {
        return Err(RauError::Infeasible(format!(
            "row needs {k} entries but only {eligible} are allowed"
        )));
    }
    let mut out = vec![0.0; x.len()];
    project_row_into(x, k as f64, allowed, &mut out, &mut Vec::new());
    Ok(out)
}

/// Projection of `x` onto `{y in [0,1]^allowed : sum y <= u}`.
pub fn project_col(x: &[f64], u: u32, allowed: &[bool]) -> Result<Vec<f64>> {
    if allowed.len() != x.len() {
        return Err(RauError::InvalidParameter("mask length differs from vector length".into()));
    }
    let mut out = vec![0.0; x.len()];
    project_col_into(x, u as f64, allowed, &mut out, &mut Vec::new());
    Ok(out)
}

/// Project a row-major `n x m` point onto the fractional assignment
/// polytope. Hitting `max_iters` is not an error: the state is returned
/// with `converged = false`.
pub fn project_polytope(
    point: &[f64],
    c: &AssignmentConstraints,
    cfg: &ProjectionConfig,
) -> Result<ProjectionState> {
    let (n, m) = c.dims();
    if point.len() != n * m {
        return Err(RauError::DimensionMismatch {
            expected: (n, m),
            got: (point.len() / m.max(1), m),
        });
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(RauError::InvalidMatrix("non-finite entry in projection input".into()));
    }
    let mask = c.conflict_mask();
    let allowed: Vec<bool> = mask.iter().map(|&conflict| !conflict).collect();
    for p in 0..n {
        let eligible = allowed[p * m..(p + 1) * m].iter().filter(|&&ok| ok).count();
        if eligible < c.demands()[p] as usize {
            return Err(RauError::Infeasible(format!(
                "paper {p} needs {} reviewers but only {eligible} are allowed",
                c.demands()[p]
            )));
        }
    }
    // column-major view of the mask
    let allowed_t: Vec<bool> = (0..n * m).map(|i| allowed[(i % n) * m + i / n]).collect();
    let demands: Vec<f64> = c.demands().iter().map(|&k| k as f64).collect();
    let caps: Vec<f64> = c.caps().iter().map(|&u| u as f64).collect();

    let mut x: Vec<f64> = point.to_vec();
    let mut y = vec![0.0; n * m];
    let mut p_corr = vec![0.0; n * m];
    let mut q_corr = vec![0.0; n * m];
    let mut buf = vec![0.0; n * m];
    let mut col_in = vec![0.0; n];
    let mut col_out = vec![0.0; n];
    let mut scratch = Vec::with_capacity(2 * m.max(n));

    let mut iterations = 0;
    let mut converged = false;
    let mut residual = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        // row block: y = P_rows(x + p); p = x + p - y
        for (b, (xv, pv)) in buf.iter_mut().zip(x.iter().zip(&p_corr)) {
            *b = xv + pv;
        }
        for p in 0..n {
            let r = p * m..(p + 1) * m;
            project_row_into(&buf[r.clone()], demands[p], &allowed[r.clone()], &mut y[r], &mut scratch);
        }
        for i in 0..n * m {
            p_corr[i] = buf[i] - y[i];
        }
        // column block: x' = P_cols(y + q); q = y + q - x'
        let mut change: f64 = 0.0;
        for r in 0..m {
            for p in 0..n {
                col_in[p] = y[p * m + r] + q_corr[p * m + r];
            }
            project_col_into(&col_in, caps[r], &allowed_t[r * n..(r + 1) * n], &mut col_out, &mut scratch);
            for p in 0..n {
                let i = p * m + r;
                q_corr[i] = col_in[p] - col_out[p];
                change = change.max((col_out[p] - x[i]).abs());
                x[i] = col_out[p];
            }
        }
        residual = row_residual(&x, &demands, m);
        if change < cfg.tol && residual <= cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(ProjectionState {
        iterate: Assignment::from_raw(n, m, x, AssignmentKind::Fractional),
        corrections: [p_corr, q_corr],
        residual,
        iterations,
        converged,
    })
}

fn row_residual(x: &[f64], demands: &[f64], m: usize) -> f64 {
    demands
        .iter()
        .enumerate()
        .map(|(p, &k)| (x[p * m..(p + 1) * m].iter().sum::<f64>() - k).abs())
        .fold(0.0, f64::max)
}
