//! Synthetic ground truth with noisy estimates: dummy reviewers and
//! systematically overestimated papers.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::chi2::Chi2Method;
use crate::error::{RauError, Result};
use crate::model::{ensure_dims, AffinityMatrix};
use crate::uncertainty::{build_gaussian_ellipsoid, UncertaintySet};

use super::keyword::subsample_indices;

/// True scores, the estimate handed to the solvers, and the per-entry
/// standard deviation the solvers believe the estimate has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub s_true: AffinityMatrix,
    pub s_est: AffinityMatrix,
    pub noise_sd: AffinityMatrix,
}

impl SyntheticTruth {
    pub fn new(s_true: AffinityMatrix, s_est: AffinityMatrix, noise_sd: AffinityMatrix) -> Result<Self> {
        ensure_dims(s_true.dims(), s_est.dims())?;
        ensure_dims(s_true.dims(), noise_sd.dims())?;
        if noise_sd.values().iter().any(|&s| s < 0.0) {
            return Err(RauError::InvalidParameter("noise sd must be non-negative".into()));
        }
        Ok(Self {
            s_true,
            s_est,
            noise_sd,
        })
    }

    /// Truncated Gaussian ellipsoid around the estimate at level `1 - delta`.
    pub fn uncertainty_set(&self, delta: f64) -> Result<UncertaintySet> {
        let var = self.noise_sd.map(|s| (s * s).max(crate::uncertainty::VARIANCE_FLOOR))?;
        build_gaussian_ellipsoid(&self.s_est, &var, delta, true, Chi2Method::Exact)
    }

    pub fn restrict(&self, papers: &[usize], reviewers: &[usize]) -> Result<Self> {
        let pick = |s: &AffinityMatrix| {
            let rows: Vec<Vec<f64>> = papers
                .iter()
                .map(|&p| reviewers.iter().map(|&r| s.get(p, r)).collect())
                .collect();
            AffinityMatrix::from_rows(&rows)
        };
        Self::new(pick(&self.s_true)?, pick(&self.s_est)?, pick(&self.noise_sd)?)
    }

    /// Seeded row/column subsample (papers first, then reviewers).
    pub fn subsample(&self, paper_frac: f64, reviewer_frac: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let papers = subsample_indices(self.s_true.n(), paper_frac, &mut rng)?;
        let reviewers = subsample_indices(self.s_true.m(), reviewer_frac, &mut rng)?;
        self.restrict(&papers, &reviewers)
    }
}

/// Base truth `S*[p][r] = q_p * U[p][r]^sharpness` with paper quality
/// `q_p ~ U[quality_lo, quality_hi]` and `U ~ U[0, 1]`. A sharpness below 1
/// crowds each paper's best reviewers together near `q_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthParams {
    pub n: usize,
    pub m: usize,
    pub quality_lo: f64,
    pub quality_hi: f64,
    pub sharpness: f64,
}

impl Default for TruthParams {
    fn default() -> Self {
        Self {
            n: 30,
            m: 45,
            quality_lo: 0.3,
            quality_hi: 0.6,
            sharpness: 0.25,
        }
    }
}

pub fn generate_truth(params: &TruthParams, seed: u64) -> Result<AffinityMatrix> {
    let TruthParams {
        n,
        m,
        quality_lo,
        quality_hi,
        sharpness,
    } = *params;
    if !(0.0 <= quality_lo && quality_lo <= quality_hi && quality_hi <= 1.0) || !(sharpness > 0.0) {
        return Err(RauError::InvalidParameter("bad truth generator parameters".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let quality: Vec<f64> = (0..n)
        .map(|_| quality_lo + (quality_hi - quality_lo) * rng.random::<f64>())
        .collect();
    let mut values = Vec::with_capacity(n * m);
    for q in &quality {
        for _ in 0..m {
            values.push(q * rng.random::<f64>().powf(sharpness));
        }
    }
    AffinityMatrix::new(n, m, values)
}

/// Noise model shared by the dummy-reviewer and noisy-paper generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub real_sd: f64,
    pub dummy_true: f64,
    pub dummy_sd: f64,
    pub overestimate: f64,
    pub noisy_sd: f64,
    /// 0-based reviewer ranks (by true affinity, best first) that a noisy
    /// paper overestimates; end exclusive.
    pub noisy_ranks: (usize, usize),
    pub delta: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            real_sd: 0.02,
            dummy_true: 0.1,
            dummy_sd: 0.15,
            overestimate: 0.3,
            noisy_sd: 0.15,
            noisy_ranks: (19, 29),
            delta: 0.05,
        }
    }
}

fn normal(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| RauError::InvalidParameter(format!("bad noise sd {sd}: {e}")))
}

/// Real reviewers' estimates are truth plus `N(0, real_sd)`, clamped to
/// `[0, 1]`; the draws are taken row-major before anything else so they do
/// not depend on the number of dummies or noisy papers.
fn perturb_real(base: &AffinityMatrix, sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let noise = normal(sd)?;
    Ok(base
        .values()
        .iter()
        .map(|&s| (s + noise.sample(rng)).clamp(0.0, 1.0))
        .collect())
}

/// Append `n_dummies` reviewers of true affinity `dummy_true` whose
/// estimates are drawn from `N(dummy_true, dummy_sd)` and clamped.
pub fn gen_dummy_experiment(
    base: &AffinityMatrix,
    n_dummies: usize,
    seed: u64,
    params: &NoiseParams,
) -> Result<(SyntheticTruth, UncertaintySet)> {
    let (n, m) = base.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let real = perturb_real(base, params.real_sd, &mut rng)?;
    let dummy_noise = normal(params.dummy_sd)?;
    let dummy_est: Vec<f64> = (0..n * n_dummies)
        .map(|_| (params.dummy_true + dummy_noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();

    let width = m + n_dummies;
    let mut s_true = Vec::with_capacity(n * width);
    let mut s_est = Vec::with_capacity(n * width);
    let mut sd = Vec::with_capacity(n * width);
    for p in 0..n {
        s_true.extend_from_slice(base.row(p));
        s_est.extend_from_slice(&real[p * m..(p + 1) * m]);
        sd.extend(std::iter::repeat_n(params.real_sd, m));
        s_true.extend(std::iter::repeat_n(params.dummy_true, n_dummies));
        s_est.extend_from_slice(&dummy_est[p * n_dummies..(p + 1) * n_dummies]);
        sd.extend(std::iter::repeat_n(params.dummy_sd, n_dummies));
    }
    let truth = SyntheticTruth::new(
        AffinityMatrix::new(n, width, s_true)?,
        AffinityMatrix::new(n, width, s_est)?,
        AffinityMatrix::new(n, width, sd)?,
    )?;
    let set = truth.uncertainty_set(params.delta)?;
    Ok((truth, set))
}

/// Pick `n_noisy` papers at random; for each, the reviewers at the
/// configured true-affinity ranks get their estimate raised by
/// `overestimate` (clamped) and their believed sd set to `noisy_sd`.
pub fn gen_noisy_papers(
    base: &AffinityMatrix,
    n_noisy: usize,
    seed: u64,
    params: &NoiseParams,
) -> Result<(SyntheticTruth, UncertaintySet)> {
    let (n, m) = base.dims();
    if m < 30 {
        return Err(RauError::InvalidParameter(format!(
            "noisy-paper experiment needs at least 30 reviewers, got {m}"
        )));
    }
    if n_noisy > n {
        return Err(RauError::InvalidParameter(format!("cannot pick {n_noisy} of {n} papers")));
    }
    let (lo, hi) = params.noisy_ranks;
    if !(lo < hi && hi <= m) {
        return Err(RauError::InvalidParameter("noisy rank window out of range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut est = perturb_real(base, params.real_sd, &mut rng)?;
    let mut sd = vec![params.real_sd; n * m];
    let mut noisy = sample(&mut rng, n, n_noisy).into_vec();
    noisy.sort_unstable();
    for &p in &noisy {
        let row = base.row(p);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        for &r in &order[lo..hi] {
            let i = p * m + r;
            est[i] = (est[i] + params.overestimate).clamp(0.0, 1.0);
            sd[i] = params.noisy_sd;
        }
    }
    let truth = SyntheticTruth::new(base.clone(), AffinityMatrix::new(n, m, est)?, AffinityMatrix::new(n, m, sd)?)?;
    let set = truth.uncertainty_set(params.delta)?;
    Ok((truth, set))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> AffinityMatrix {
        generate_truth(&TruthParams::default(), 1).unwrap()
    }

    #[test]
    fn truth_shape_and_range() {
        let s = base();
        assert_eq!(s.dims(), (30, 45));
        assert!(s.values().iter().all(|&v| (0.0..=0.6).contains(&v)));
        assert_eq!(s, generate_truth(&TruthParams::default(), 1).unwrap());
    }

    #[test]
    fn dummy_columns() {
        let b = base();
        let (t, set) = gen_dummy_experiment(&b, 5, 9, &NoiseParams::default()).unwrap();
        assert_eq!(t.s_true.dims(), (30, 50));
        for p in 0..30 {
            for r in 45..50 {
                assert_eq!(t.s_true.get(p, r), 0.1);
                assert_eq!(t.noise_sd.get(p, r), 0.15);
            }
            for r in 0..45 {
                assert_eq!(t.s_true.get(p, r), b.get(p, r));
                assert_eq!(t.noise_sd.get(p, r), 0.02);
            }
        }
        assert!(t.s_est.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(set.dims(), (30, 50));
    }

    #[test]
    fn no_dummies_is_small_perturbation() {
        let b = base();
        let (t, _) = gen_dummy_experiment(&b, 0, 9, &NoiseParams::default()).unwrap();
        assert_eq!(t.s_true, b);
        let max_dev = t.s_est.values().iter().zip(b.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev < 0.1);
        // real-reviewer noise does not depend on the dummy count
        let (t5, _) = gen_dummy_experiment(&b, 5, 9, &NoiseParams::default()).unwrap();
        assert_eq!(t5.s_est.get(3, 7), t.s_est.get(3, 7));
    }

    #[test]
    fn noisy_papers_touch_ten_entries_each() {
        let b = base();
        let (clean, _) = gen_noisy_papers(&b, 0, 4, &NoiseParams::default()).unwrap();
        let (t, _) = gen_noisy_papers(&b, 3, 4, &NoiseParams::default()).unwrap();
        let raised: usize = t.noise_sd.values().iter().filter(|&&s| s == 0.15).count();
        assert_eq!(raised, 30);
        for p in 0..30 {
            let count = (0..45).filter(|&r| t.noise_sd.get(p, r) == 0.15).count();
            assert!(count == 0 || count == 10);
            if count == 10 {
                let row = b.row(p);
                let mut sorted = row.to_vec();
                sorted.sort_by(|a, c| c.total_cmp(a));
                for r in 0..45 {
                    if t.noise_sd.get(p, r) == 0.15 {
                        let rank = sorted.iter().position(|&v| v == row[r]).unwrap();
                        assert!((19..29).contains(&rank));
                        assert!(t.s_est.get(p, r) <= 1.0);
                        assert!(t.s_est.get(p, r) > clean.s_est.get(p, r) || t.s_est.get(p, r) == 1.0);
                    }
                }
            }
        }
        let narrow = AffinityMatrix::filled(2, 29, 0.5).unwrap();
        assert!(gen_noisy_papers(&narrow, 1, 0, &NoiseParams::default()).is_err());
    }

    #[test]
    fn subsample_keeps_alignment() {
        let b = base();
        let (t, _) = gen_dummy_experiment(&b, 4, 2, &NoiseParams::default()).unwrap();
        let s = t.subsample(0.5, 0.5, 11).unwrap();
        assert_eq!(s.s_true.dims(), (15, 24));
        assert_eq!(s, t.subsample(0.5, 0.5, 11).unwrap());
        assert_eq!(t.subsample(1.0, 1.0, 3).unwrap(), t);
    }
}
