//! Uncertainty sets over affinity matrices.
//!
//! A set carries a geometry plus `(delta, gamma)` metadata: with probability
//! at least `1 - delta` it contains a point within L1 distance `gamma` of the
//! true scores.
//!
//! Ellipsoids are stored in the normalized form
//!
//! ```text
//! sum_i (S_i - c_i)^2 / w_i <= R
//! ```
//!
//! with diagonal weights `w` and `i = p * m + r`. A Gaussian model with
//! per-entry variances `sigma^2` at level `1 - delta` maps to `w = sigma^2`,
//! `R = chi2_{nm}(1 - delta)`. The validation-error constructions, whose
//! constraint reads `(1/nm) sum_i (S_i - c_i)^2 / alpha_i <= xi + eta`, map to
//! `w = alpha`, `R = nm (xi + eta)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::chi2::{chi2_radius, Chi2Method};
use crate::error::{RauError, Result};
use crate::model::{ensure_dims, AffinityMatrix};

/// Smallest variance accepted from statistical models that report zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Diagonal ellipsoid `sum_i (S_i - c_i)^2 / w_i <= R`, optionally
/// intersected with the unit hypercube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: AffinityMatrix,
    pub diag_weights: AffinityMatrix,
    pub radius_sq: f64,
    pub truncated: bool,
}

impl Ellipsoid {
    /// The quadratic form `sum_i (S_i - c_i)^2 / w_i`.
    pub fn quadratic_form(&self, s: &AffinityMatrix) -> f64 {
        quad_form(self.center.values(), self.diag_weights.values(), s.values())
    }

    pub fn max_weight(&self) -> f64 {
        self.diag_weights.values().iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) fn quad_form(center: &[f64], weights: &[f64], s: &[f64]) -> f64 {
    s.iter()
        .zip(center)
        .zip(weights)
        .map(|((x, c), w)| (x - c) * (x - c) / w)
        .sum()
}

/// Euclidean projection of `s` onto `{y : quad_form(y) <= R, lower <= y <= upper}`
/// by bisection on the multiplier; `y_i = clamp((w_i s_i + nu c_i) / (w_i + nu))`.
fn nearest_point(e: &Ellipsoid, lower: Option<&AffinityMatrix>, upper: Option<&AffinityMatrix>, s: &[f64]) -> Vec<f64> {
    let c = e.center.values();
    let w = e.diag_weights.values();
    let at = |nu: f64| -> Vec<f64> {
        (0..s.len())
            .map(|i| {
                let y = (w[i] * s[i] + nu * c[i]) / (w[i] + nu);
                let y = lower.map_or(y, |l| y.max(l.values()[i]));
                upper.map_or(y, |u| y.min(u.values()[i]))
            })
            .collect()
    };
    let y0 = at(0.0);
    if quad_form(c, w, &y0) <= e.radius_sq {
        return y0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while quad_form(c, w, &at(hi)) > e.radius_sq && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if quad_form(c, w, &at(mid)) > e.radius_sq {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(hi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Geometry {
    Singleton {
        center: AffinityMatrix,
    },
    Box {
        lower: AffinityMatrix,
        upper: AffinityMatrix,
    },
    Sphere {
        center: AffinityMatrix,
        radius: f64,
    },
    Ellipsoid(Ellipsoid),
    /// An (untruncated) ellipsoid intersected with an arbitrary box.
    BoxedEllipsoid {
        ellipsoid: Ellipsoid,
        lower: AffinityMatrix,
        upper: AffinityMatrix,
    },
    VertexPolytope {
        vertices: Vec<AffinityMatrix>,
    },
}

impl Geometry {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::Singleton { center } | Self::Sphere { center, .. } => center.dims(),
            Self::Box { lower, .. } => lower.dims(),
            Self::Ellipsoid(e) | Self::BoxedEllipsoid { ellipsoid: e, .. } => e.center.dims(),
            Self::VertexPolytope { vertices } => vertices[0].dims(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Singleton { .. } => "singleton",
            Self::Box { .. } => "box",
            Self::Sphere { .. } => "sphere",
            Self::Ellipsoid(e) if e.truncated => "truncated ellipsoid",
            Self::Ellipsoid(_) => "ellipsoid",
            Self::BoxedEllipsoid { .. } => "boxed ellipsoid",
            Self::VertexPolytope { .. } => "vertex polytope",
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RauError::InvalidSet(msg));
        match self {
            Self::Singleton { .. } => Ok(()),
            Self::Box { lower, upper } => validate_box(lower, upper),
            Self::Sphere { radius, .. } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad(format!("sphere radius must be positive, got {radius}"));
                }
                Ok(())
            }
            Self::Ellipsoid(e) => {
                validate_ellipsoid(e)?;
                if e.truncated {
                    let unit = unit_box(e.center.dims());
                    ensure_nonempty(e, &unit.0, &unit.1)?;
                }
                Ok(())
            }
            Self::BoxedEllipsoid {
                ellipsoid,
                lower,
                upper,
            } => {
                validate_ellipsoid(ellipsoid)?;
                if ellipsoid.truncated {
                    return bad("boxed ellipsoid must store the box explicitly".into());
                }
                validate_box(lower, upper)?;
                ensure_dims(ellipsoid.center.dims(), lower.dims())?;
                ensure_nonempty(ellipsoid, lower, upper)
            }
            Self::VertexPolytope { vertices } => {
                let Some(first) = vertices.first() else {
                    return bad("vertex polytope needs at least one vertex".into());
                };
                for v in vertices {
                    ensure_dims(first.dims(), v.dims())?;
                }
                Ok(())
            }
        }
    }
}

fn validate_box(lower: &AffinityMatrix, upper: &AffinityMatrix) -> Result<()> {
    ensure_dims(lower.dims(), upper.dims())?;
    if let Some(i) = lower
        .values()
        .iter()
        .zip(upper.values())
        .position(|(l, u)| l > u)
    {
        return Err(RauError::InvalidSet(format!(
            "box lower bound exceeds upper bound at index {i}"
        )));
    }
    Ok(())
}

fn validate_ellipsoid(e: &Ellipsoid) -> Result<()> {
    ensure_dims(e.center.dims(), e.diag_weights.dims())?;
    if !(e.radius_sq > 0.0 && e.radius_sq.is_finite()) {
        return Err(RauError::InvalidSet(format!(
            "ellipsoid radius_sq must be positive, got {}",
            e.radius_sq
        )));
    }
    if e.diag_weights.values().iter().any(|&w| w <= 0.0) {
        return Err(RauError::InvalidSet(
            "ellipsoid weights must be strictly positive".into(),
        ));
    }
    Ok(())
}

/// The point of the box closest to the center in the quadratic form must
/// satisfy the constraint, otherwise the intersection is empty.
fn ensure_nonempty(e: &Ellipsoid, lower: &AffinityMatrix, upper: &AffinityMatrix) -> Result<()> {
    let closest = clamp_into(&e.center, lower, upper);
    if e.quadratic_form(&closest) > e.radius_sq {
        return Err(RauError::InvalidSet(
            "ellipsoid does not meet the box (empty set)".into(),
        ));
    }
    Ok(())
}

pub(crate) fn unit_box(dims: (usize, usize)) -> (AffinityMatrix, AffinityMatrix) {
    let (n, m) = dims;
    (
        AffinityMatrix::from_raw(n, m, vec![0.0; n * m]),
        AffinityMatrix::from_raw(n, m, vec![1.0; n * m]),
    )
}

pub(crate) fn clamp_into(
    s: &AffinityMatrix,
    lower: &AffinityMatrix,
    upper: &AffinityMatrix,
) -> AffinityMatrix {
    let values = s
        .values()
        .iter()
        .zip(lower.values().iter().zip(upper.values()))
        .map(|(&x, (&l, &u))| x.clamp(l, u))
        .collect();
    AffinityMatrix::from_raw(s.n(), s.m(), values)
}

/// A `(delta, gamma)` uncertainty set.
///
/// `l1_expansion` records a symbolic Minkowski sum with the L1 ball of that
/// radius, produced by [`expand_l1`] for geometries whose widened shape has
/// no simple closed form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    geometry: Geometry,
    delta: f64,
    gamma: f64,
    #[serde(default)]
    l1_expansion: f64,
}

impl UncertaintySet {
    pub fn new(geometry: Geometry, delta: f64, gamma: f64) -> Result<Self> {
        Self::with_expansion(geometry, delta, gamma, 0.0)
    }

    pub fn with_expansion(
        geometry: Geometry,
        delta: f64,
        gamma: f64,
        l1_expansion: f64,
    ) -> Result<Self> {
        geometry.validate()?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(RauError::InvalidSet(format!("delta must be in [0, 1], got {delta}")));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(RauError::InvalidSet(format!("gamma must be >= 0, got {gamma}")));
        }
        if !(l1_expansion >= 0.0 && l1_expansion.is_finite()) {
            return Err(RauError::InvalidSet(format!(
                "l1 expansion must be >= 0, got {l1_expansion}"
            )));
        }
        Ok(Self {
            geometry,
            delta,
            gamma,
            l1_expansion,
        })
    }

    pub fn singleton(center: AffinityMatrix) -> Self {
        Self {
            geometry: Geometry::Singleton { center },
            delta: 0.0,
            gamma: 0.0,
            l1_expansion: 0.0,
        }
    }

    pub fn box_set(lower: AffinityMatrix, upper: AffinityMatrix, delta: f64) -> Result<Self> {
        Self::new(Geometry::Box { lower, upper }, delta, 0.0)
    }

    pub fn sphere(center: AffinityMatrix, radius: f64, delta: f64) -> Result<Self> {
        Self::new(Geometry::Sphere { center, radius }, delta, 0.0)
    }

    pub fn ellipsoid(
        center: AffinityMatrix,
        diag_weights: AffinityMatrix,
        radius_sq: f64,
        truncated: bool,
        delta: f64,
    ) -> Result<Self> {
        Self::new(
            Geometry::Ellipsoid(Ellipsoid {
                center,
                diag_weights,
                radius_sq,
                truncated,
            }),
            delta,
            0.0,
        )
    }

    pub fn vertex_polytope(vertices: Vec<AffinityMatrix>, delta: f64) -> Result<Self> {
        Self::new(Geometry::VertexPolytope { vertices }, delta, 0.0)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn l1_expansion(&self) -> f64 {
        self.l1_expansion
    }

    pub fn dims(&self) -> (usize, usize) {
        self.geometry.dims()
    }

    /// A deterministic member of the set: the center for centered
    /// geometries (clamped into any box), the box midpoint, or vertex 0.
    pub fn center(&self) -> AffinityMatrix {
        match &self.geometry {
            Geometry::Singleton { center } | Geometry::Sphere { center, .. } => center.clone(),
            Geometry::Box { lower, upper } => {
                let values = lower
                    .values()
                    .iter()
                    .zip(upper.values())
                    .map(|(l, u)| 0.5 * (l + u))
                    .collect();
                AffinityMatrix::from_raw(lower.n(), lower.m(), values)
            }
            Geometry::Ellipsoid(e) => {
                if e.truncated {
                    let (l, u) = unit_box(e.center.dims());
                    clamp_into(&e.center, &l, &u)
                } else {
                    e.center.clone()
                }
            }
            Geometry::BoxedEllipsoid {
                ellipsoid,
                lower,
                upper,
            } => clamp_into(&ellipsoid.center, lower, upper),
            Geometry::VertexPolytope { vertices } => vertices[0].clone(),
        }
    }

    /// Membership test with absolute slack `tol` on every constraint.
    ///
    /// With a symbolic L1 expansion on a quadratic geometry the L1 distance
    /// is measured to the Euclidean nearest point of the base set, which
    /// over-estimates it: the answer may be a false negative, never a false
    /// positive.
    pub fn contains(&self, s: &AffinityMatrix, tol: f64) -> bool {
        if s.dims() != self.dims() {
            return false;
        }
        let in_box = |lower: &AffinityMatrix, upper: &AffinityMatrix, slack: f64| {
            let excess: f64 = s
                .values()
                .iter()
                .zip(lower.values().iter().zip(upper.values()))
                .map(|(&x, (&l, &u))| (l - x).max(x - u).max(0.0))
                .sum();
            if slack > 0.0 {
                excess <= slack + tol
            } else {
                s.values()
                    .iter()
                    .zip(lower.values().iter().zip(upper.values()))
                    .all(|(&x, (&l, &u))| x >= l - tol && x <= u + tol)
            }
        };
        match &self.geometry {
            Geometry::Singleton { center } => s.l1_distance(center) <= self.l1_expansion + tol,
            Geometry::Box { lower, upper } => in_box(lower, upper, self.l1_expansion),
            Geometry::Sphere { center, radius } if self.l1_expansion == 0.0 => {
                let d2: f64 = s
                    .values()
                    .iter()
                    .zip(center.values())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d2.sqrt() <= radius + tol
            }
            Geometry::Ellipsoid(e) if self.l1_expansion == 0.0 => {
                let quad_ok = e.quadratic_form(s) <= e.radius_sq + tol;
                if e.truncated {
                    let (l, u) = unit_box(e.center.dims());
                    quad_ok && in_box(&l, &u, 0.0)
                } else {
                    quad_ok
                }
            }
            Geometry::BoxedEllipsoid {
                ellipsoid,
                lower,
                upper,
            } if self.l1_expansion == 0.0 => {
                ellipsoid.quadratic_form(s) <= ellipsoid.radius_sq + tol && in_box(lower, upper, 0.0)
            }
            Geometry::VertexPolytope { vertices } => vertices
                .iter()
                .any(|v| v.l1_distance(s) <= self.l1_expansion + tol),
            // Expanded quadratic sets: the L1 distance to the Euclidean
            // nearest point bounds the true L1 distance from above, so this
            // never accepts a non-member.
            g => {
                let (e, lower, upper) = match g {
                    Geometry::Sphere { center, radius } => (
                        Ellipsoid {
                            center: center.clone(),
                            diag_weights: center.map(|_| 1.0).expect("finite"),
                            radius_sq: radius * radius,
                            truncated: false,
                        },
                        None,
                        None,
                    ),
                    Geometry::Ellipsoid(e) if e.truncated => {
                        let (l, u) = unit_box(e.center.dims());
                        (e.clone(), Some(l), Some(u))
                    }
                    Geometry::Ellipsoid(e) => (e.clone(), None, None),
                    Geometry::BoxedEllipsoid {
                        ellipsoid,
                        lower,
                        upper,
                    } => (ellipsoid.clone(), Some(lower.clone()), Some(upper.clone())),
                    _ => unreachable!("handled above"),
                };
                let near = nearest_point(&e, lower.as_ref(), upper.as_ref(), s.values());
                let d: f64 = near.iter().zip(s.values()).map(|(a, b)| (a - b).abs()).sum();
                d <= self.l1_expansion + tol
            }
        }
    }
}

/// Validation-sample squared errors `(f*(p_i, r_i) - f_hat(p_i, r_i))^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledErrorEstimate {
    squared_errors: Vec<f64>,
    delta: f64,
}

impl SampledErrorEstimate {
    pub fn new(squared_errors: Vec<f64>, delta: f64) -> Result<Self> {
        if squared_errors.is_empty() {
            return Err(RauError::InvalidParameter("empty error sample".into()));
        }
        if squared_errors.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return Err(RauError::InvalidParameter(
                "squared errors must lie in [0, 1]".into(),
            ));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(RauError::InvalidParameter(format!(
                "delta must be in (0, 1), got {delta}"
            )));
        }
        Ok(Self {
            squared_errors,
            delta,
        })
    }

    /// Number of sampled pairs `T`.
    pub fn pair_count(&self) -> usize {
        self.squared_errors.len()
    }

    pub fn squared_errors(&self) -> &[f64] {
        &self.squared_errors
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Empirical square error.
    pub fn mean(&self) -> f64 {
        self.squared_errors.iter().sum::<f64>() / self.pair_count() as f64
    }
}

/// Per-pair probability ratios `alpha(p, r)` with their extremes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityRatios {
    ratios: AffinityMatrix,
    alpha_min: f64,
    alpha_max: f64,
}

impl ProbabilityRatios {
    pub fn new(ratios: AffinityMatrix) -> Result<Self> {
        let alpha_min = ratios.values().iter().copied().fold(f64::INFINITY, f64::min);
        let alpha_max = ratios.values().iter().copied().fold(0.0, f64::max);
        if alpha_min <= 0.0 {
            return Err(RauError::InvalidParameter(
                "probability ratios must be positive".into(),
            ));
        }
        Ok(Self {
            ratios,
            alpha_min,
            alpha_max,
        })
    }

    pub fn ratios(&self) -> &AffinityMatrix {
        &self.ratios
    }

    pub fn alpha_min(&self) -> f64 {
        self.alpha_min
    }

    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }
}

/// Ellipsoid from a Gaussian model: center `mu`, per-entry variances
/// `sigma_diag`, level `1 - delta`.
pub fn build_gaussian_ellipsoid(
    mu: &AffinityMatrix,
    sigma_diag: &AffinityMatrix,
    delta: f64,
    truncate: bool,
    method: Chi2Method,
) -> Result<UncertaintySet> {
    ensure_dims(mu.dims(), sigma_diag.dims())?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RauError::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    if sigma_diag.values().iter().any(|&v| v <= 0.0) {
        return Err(RauError::InvalidParameter(
            "variances must be strictly positive".into(),
        ));
    }
    let radius_sq = chi2_radius(mu.len(), delta, method)?;
    UncertaintySet::ellipsoid(mu.clone(), sigma_diag.clone(), radius_sq, truncate, delta)
}

/// Excess error term for the inductive construction.
pub fn inductive_excess_error(n: usize, m: usize, alpha_min: f64, pairs: usize, delta: f64) -> f64 {
    let (n, m) = (n as f64, m as f64);
    let spread = 1.0 / pairs as f64 + (n + m) / (n * m * alpha_min * alpha_min);
    (spread * (1.0 / delta).ln() / 2.0).sqrt()
}

/// Excess error term for the transductive construction.
pub fn transductive_excess_error(pairs: usize, delta: f64) -> f64 {
    ((1.0 / delta).ln() / (2.0 * pairs as f64)).sqrt()
}

fn error_ellipsoid(
    s_hat: &AffinityMatrix,
    weights: AffinityMatrix,
    est: &SampledErrorEstimate,
    eta: f64,
) -> Result<UncertaintySet> {
    let radius_sq = s_hat.len() as f64 * (est.mean() + eta);
    if radius_sq <= 0.0 {
        return Err(RauError::InvalidParameter(
            "error bound collapsed to zero".into(),
        ));
    }
    UncertaintySet::ellipsoid(s_hat.clone(), weights, radius_sq, true, est.delta())
}

/// Ellipsoid from a predictor validated on historic data, with importance
/// weights `alpha(p, r)` supplied by the caller.
pub fn build_inductive_ellipsoid(
    s_hat: &AffinityMatrix,
    ratios: &ProbabilityRatios,
    est: &SampledErrorEstimate,
) -> Result<UncertaintySet> {
    ensure_dims(s_hat.dims(), ratios.ratios().dims())?;
    let (n, m) = s_hat.dims();
    let eta = inductive_excess_error(n, m, ratios.alpha_min(), est.pair_count(), est.delta());
    error_ellipsoid(s_hat, ratios.ratios().clone(), est, eta)
}

/// Ellipsoid from a predictor validated on pairs sampled from the current
/// venue with per-pair probabilities `sample_probs`.
pub fn build_transductive_ellipsoid(
    s_hat: &AffinityMatrix,
    sample_probs: &AffinityMatrix,
    est: &SampledErrorEstimate,
) -> Result<UncertaintySet> {
    ensure_dims(s_hat.dims(), sample_probs.dims())?;
    let total: f64 = sample_probs.values().iter().sum();
    if (total - 1.0).abs() > 1e-9 || sample_probs.values().iter().any(|&p| p <= 0.0) {
        return Err(RauError::InvalidParameter(format!(
            "sampling probabilities must be positive and sum to 1 (sum = {total})"
        )));
    }
    let uniform = 1.0 / s_hat.len() as f64;
    let ratios = sample_probs.map(|p| uniform / p)?;
    let eta = transductive_excess_error(est.pair_count(), est.delta());
    error_ellipsoid(s_hat, ratios, est, eta)
}

/// Intersection of `(delta_i, 0)` sets; the result has `delta = sum delta_i`.
///
/// Supported conjunctions: any number of boxes, at most one quadratic
/// constraint (sphere or ellipsoid), and singletons that lie inside every
/// other member. Vertex polytopes only intersect with nothing.
pub fn intersect(sets: &[UncertaintySet]) -> Result<UncertaintySet> {
    let Some(first) = sets.first() else {
        return Err(RauError::InvalidParameter("nothing to intersect".into()));
    };
    let dims = first.dims();
    for s in sets {
        ensure_dims(dims, s.dims())?;
        if s.gamma() > 0.0 {
            return Err(RauError::InvalidSet(
                "intersection needs gamma = 0 members; expand them first".into(),
            ));
        }
        if s.l1_expansion() > 0.0 {
            return Err(RauError::Unsupported(
                "cannot intersect a set carrying a symbolic L1 expansion".into(),
            ));
        }
    }
    let delta = sets.iter().map(UncertaintySet::delta).sum::<f64>().min(1.0);
    if sets.len() == 1 {
        return UncertaintySet::new(first.geometry().clone(), delta, 0.0);
    }

    let mut singleton: Option<&AffinityMatrix> = None;
    let mut quadratic: Option<Ellipsoid> = None;
    let mut quadratic_is_sphere: Option<(AffinityMatrix, f64)> = None;
    let mut bounds: Option<(AffinityMatrix, AffinityMatrix)> = None;
    let add_box = |l: &AffinityMatrix, u: &AffinityMatrix,
                       bounds: &mut Option<(AffinityMatrix, AffinityMatrix)>|
     -> Result<()> {
        *bounds = Some(match bounds.take() {
            None => (l.clone(), u.clone()),
            Some((bl, bu)) => (bl.zip_map(l, f64::max)?, bu.zip_map(u, f64::min)?),
        });
        Ok(())
    };
    for s in sets {
        match s.geometry() {
            Geometry::Singleton { center } => match singleton {
                Some(prev) if prev != center => {
                    return Err(RauError::InvalidSet("disjoint singletons (empty set)".into()))
                }
                _ => singleton = Some(center),
            },
            Geometry::Box { lower, upper } => add_box(lower, upper, &mut bounds)?,
            Geometry::Sphere { center, radius } => {
                if quadratic.is_some() {
                    return Err(multi_quadratic());
                }
                quadratic_is_sphere = Some((center.clone(), *radius));
                quadratic = Some(Ellipsoid {
                    center: center.clone(),
                    diag_weights: AffinityMatrix::from_raw(dims.0, dims.1, vec![1.0; center.len()]),
                    radius_sq: radius * radius,
                    truncated: false,
                });
            }
            Geometry::Ellipsoid(e) => {
                if quadratic.is_some() {
                    return Err(multi_quadratic());
                }
                let mut e = e.clone();
                if e.truncated {
                    let (l, u) = unit_box(dims);
                    add_box(&l, &u, &mut bounds)?;
                    e.truncated = false;
                }
                quadratic = Some(e);
            }
            Geometry::BoxedEllipsoid {
                ellipsoid,
                lower,
                upper,
            } => {
                if quadratic.is_some() {
                    return Err(multi_quadratic());
                }
                add_box(lower, upper, &mut bounds)?;
                quadratic = Some(ellipsoid.clone());
            }
            Geometry::VertexPolytope { .. } => {
                return Err(RauError::Unsupported(
                    "vertex polytopes cannot be intersected with other sets".into(),
                ))
            }
        }
    }

    if let Some((l, u)) = &bounds {
        validate_box(l, u).map_err(|_| RauError::InvalidSet("boxes do not overlap (empty set)".into()))?;
    }

    if let Some(center) = singleton {
        let point = UncertaintySet::singleton(center.clone());
        for s in sets {
            if !s.contains(center, 1e-12) {
                return Err(RauError::InvalidSet(
                    "singleton lies outside another member (empty set)".into(),
                ));
            }
        }
        return UncertaintySet::new(point.geometry, delta, 0.0);
    }

    let geometry = match (quadratic, bounds) {
        (None, Some((lower, upper))) => Geometry::Box { lower, upper },
        (Some(_), None) if quadratic_is_sphere.is_some() => {
            let (center, radius) = quadratic_is_sphere.unwrap();
            Geometry::Sphere { center, radius }
        }
        (Some(e), None) => Geometry::Ellipsoid(e),
        (Some(mut e), Some((lower, upper))) => {
            let (ul, uu) = unit_box(dims);
            if lower == ul && upper == uu {
                e.truncated = true;
                Geometry::Ellipsoid(e)
            } else {
                Geometry::BoxedEllipsoid {
                    ellipsoid: e,
                    lower,
                    upper,
                }
            }
        }
        (None, None) => unreachable!("every member contributes a constraint"),
    };
    UncertaintySet::new(geometry, delta, 0.0)
}

fn multi_quadratic() -> RauError {
    RauError::Unsupported(
        "intersections with more than one quadratic constraint are not supported".into(),
    )
}

/// Minkowski sum with the L1 ball of radius `eta`, trading `eta` of the
/// set's `gamma` for a larger set.
///
/// Boxes are widened by `eta` per entry (the L-infinity ball contains the L1
/// ball) and the widening is clipped at the unit hypercube, never cutting
/// into the original box. Other geometries keep `eta` symbolically.
pub fn expand_l1(set: &UncertaintySet, eta: f64) -> Result<UncertaintySet> {
    if !(eta >= 0.0 && eta <= set.gamma()) {
        return Err(RauError::InvalidParameter(format!(
            "eta must lie in [0, gamma = {}], got {eta}",
            set.gamma()
        )));
    }
    let gamma = (set.gamma() - eta).max(0.0);
    if eta == 0.0 {
        let mut out = set.clone();
        out.gamma = gamma;
        return Ok(out);
    }
    match set.geometry() {
        Geometry::Box { lower, upper } if set.l1_expansion() == 0.0 => {
            let lower = lower.map(|l| (l - eta).max(0.0).min(l))?;
            let upper = upper.map(|u| (u + eta).min(1.0).max(u))?;
            UncertaintySet::new(Geometry::Box { lower, upper }, set.delta(), gamma)
        }
        g => UncertaintySet::with_expansion(g.clone(), set.delta(), gamma, set.l1_expansion() + eta),
    }
}

/// Upper bound on the L1 diameter `sup ||S - S'||_1` over the set.
///
/// For ellipsoids this uses `2 sqrt(R sum_i w_i)` (Cauchy-Schwarz), which is
/// never larger than `2 sqrt(nm R max_i w_i)`.
pub fn l1_diameter_bound(set: &UncertaintySet) -> f64 {
    let ellipsoid_bound = |e: &Ellipsoid| {
        let total_weight: f64 = e.diag_weights.values().iter().sum();
        2.0 * (e.radius_sq * total_weight).sqrt()
    };
    let box_width = |l: &AffinityMatrix, u: &AffinityMatrix| -> f64 {
        l.values().iter().zip(u.values()).map(|(a, b)| b - a).sum()
    };
    let base = match set.geometry() {
        Geometry::Singleton { .. } => 0.0,
        Geometry::Box { lower, upper } => box_width(lower, upper),
        Geometry::Sphere { center, radius } => 2.0 * radius * (center.len() as f64).sqrt(),
        Geometry::Ellipsoid(e) => {
            let b = ellipsoid_bound(e);
            if e.truncated {
                b.min(e.center.len() as f64)
            } else {
                b
            }
        }
        Geometry::BoxedEllipsoid {
            ellipsoid,
            lower,
            upper,
        } => ellipsoid_bound(ellipsoid).min(box_width(lower, upper)),
        Geometry::VertexPolytope { vertices } => {
            let mut best: f64 = 0.0;
            for (i, a) in vertices.iter().enumerate() {
                for b in &vertices[i + 1..] {
                    best = best.max(a.l1_distance(b));
                }
            }
            best
        }
    };
    base + 2.0 * set.l1_expansion()
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; only used for sampling test points.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random point of the unit Euclidean ball in `d` dimensions.
fn unit_ball_point(d: usize, rng: &mut impl Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let radius = rng.random::<f64>().powf(1.0 / d as f64);
    dir.into_iter().map(|x| x * radius / norm).collect()
}

/// Draw a random member of the set. Points are spread over the whole set
/// (boundary included) but not uniformly; this is meant for Monte-Carlo
/// checks such as soundness of an adversary.
pub fn sample_member(set: &UncertaintySet, rng: &mut impl Rng) -> AffinityMatrix {
    let (n, m) = set.dims();
    let base = match set.geometry() {
        Geometry::Singleton { center } => center.clone(),
        Geometry::Box { lower, upper } => {
            let values = lower
                .values()
                .iter()
                .zip(upper.values())
                .map(|(&l, &u)| {
                    // favor the faces so the corner behaviour gets exercised
                    match rng.random_range(0..4) {
                        0 => l,
                        1 => u,
                        _ => l + (u - l) * rng.random::<f64>(),
                    }
                })
                .collect();
            AffinityMatrix::from_raw(n, m, values)
        }
        Geometry::Sphere { center, radius } => {
            let ball = unit_ball_point(center.len(), rng);
            let values = center
                .values()
                .iter()
                .zip(ball)
                .map(|(c, b)| c + radius * b)
                .collect();
            AffinityMatrix::from_raw(n, m, values)
        }
        Geometry::Ellipsoid(e) => {
            let raw = ellipsoid_point(e, rng);
            if e.truncated {
                let (l, u) = unit_box((n, m));
                pull_into_box(e, &raw, &l, &u)
            } else {
                raw
            }
        }
        Geometry::BoxedEllipsoid {
            ellipsoid,
            lower,
            upper,
        } => {
            let raw = ellipsoid_point(ellipsoid, rng);
            pull_into_box(ellipsoid, &raw, lower, upper)
        }
        Geometry::VertexPolytope { vertices } => {
            // random convex combination
            let weights: Vec<f64> = vertices
                .iter()
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut values = vec![0.0; n * m];
            for (v, w) in vertices.iter().zip(&weights) {
                for (acc, x) in values.iter_mut().zip(v.values()) {
                    *acc += x * w / total;
                }
            }
            AffinityMatrix::from_raw(n, m, values)
        }
    };
    let eta = set.l1_expansion();
    if eta == 0.0 {
        return base;
    }
    // add a random vector of L1 norm at most eta
    let weights: Vec<f64> = (0..n * m).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = weights.iter().sum();
    let scale = eta * rng.random::<f64>();
    let values = base
        .values()
        .iter()
        .zip(weights)
        .map(|(&x, w)| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            x + sign * scale * w / total
        })
        .collect();
    AffinityMatrix::from_raw(n, m, values)
}

fn ellipsoid_point(e: &Ellipsoid, rng: &mut impl Rng) -> AffinityMatrix {
    let ball = unit_ball_point(e.center.len(), rng);
    let r = e.radius_sq.sqrt();
    let values = e
        .center
        .values()
        .iter()
        .zip(e.diag_weights.values())
        .zip(ball)
        .map(|((c, w), b)| c + r * w.sqrt() * b)
        .collect();
    AffinityMatrix::from_raw(e.center.n(), e.center.m(), values)
}

/// Clamp `raw` into the box, then back off toward the box point closest to
/// the center until the quadratic constraint holds.
fn pull_into_box(
    e: &Ellipsoid,
    raw: &AffinityMatrix,
    lower: &AffinityMatrix,
    upper: &AffinityMatrix,
) -> AffinityMatrix {
    let clamped = clamp_into(raw, lower, upper);
    if e.quadratic_form(&clamped) <= e.radius_sq {
        return clamped;
    }
    let anchor = clamp_into(&e.center, lower, upper);
    let lerp = |t: f64| {
        let values = anchor
            .values()
            .iter()
            .zip(clamped.values())
            .map(|(a, b)| a + t * (b - a))
            .collect();
        AffinityMatrix::from_raw(raw.n(), raw.m(), values)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if e.quadratic_form(&lerp(mid)) <= e.radius_sq {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lerp(lo)
}
