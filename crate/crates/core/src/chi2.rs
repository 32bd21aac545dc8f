//! Chi-square quantiles by bisection on the regularized incomplete gamma
//! function.

use serde::{Deserialize, Serialize};

use crate::error::{RauError, Result};

/// How the `1 - delta` chi-square quantile is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chi2Method {
    /// Numeric inversion of the CDF.
    #[default]
    Exact,
    /// `k + 2 sqrt(k ln(1/delta)) + 2 ln(1/delta)`, always at least the exact value.
    UpperBound,
}

const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + 7.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // series
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut denom = a;
        for _ in 0..1_000_000 {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum.ln() + log_prefix).exp().min(1.0)
    } else {
        // modified Lentz continued fraction for Q(a, x)
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..1_000_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - (h.ln() + log_prefix).exp()).max(0.0)
    }
}

pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// Quantile of the chi-square distribution with `dof` degrees of freedom.
pub fn chi2_inv(dof: usize, prob: f64) -> Result<f64> {
    if dof == 0 {
        return Err(RauError::InvalidParameter("chi-square needs dof >= 1".into()));
    }
    if !(prob > 0.0 && prob < 1.0) {
        return Err(RauError::InvalidParameter(format!(
            "chi-square quantile level must be in (0, 1), got {prob}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = dof as f64 + 1.0;
    while chi2_cdf(hi, dof) < prob {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < prob {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Closed-form upper bound on the `1 - delta` quantile.
pub fn chi2_upper_bound(dof: usize, delta: f64) -> f64 {
    let k = dof as f64;
    let l = (1.0 / delta).ln();
    k + 2.0 * (k * l).sqrt() + 2.0 * l
}

/// `1 - delta` quantile using the chosen method.
pub fn chi2_radius(dof: usize, delta: f64, method: Chi2Method) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(RauError::InvalidParameter(format!(
            "delta must be in (0, 1), got {delta}"
        )));
    }
    match method {
        Chi2Method::Exact => chi2_inv(dof, 1.0 - delta),
        Chi2Method::UpperBound => Ok(chi2_upper_bound(dof, delta)),
    }
}
