//! Keyword-based mean/variance model for affinity scores.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chi2::Chi2Method;
use crate::error::{RauError, Result};
use crate::model::AffinityMatrix;
use crate::uncertainty::{build_gaussian_ellipsoid, UncertaintySet, VARIANCE_FLOOR};

/// Paper keyword sets and reviewer keyword multiplicities over a shared
/// vocabulary.
///
/// JSON form: `{"vocab": [...], "papers": [[idx, ...]], "reviewers": [[[idx, count], ...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordProfile {
    pub vocab: Vec<String>,
    pub papers: Vec<Vec<usize>>,
    pub reviewers: Vec<Vec<(usize, u32)>>,
}

impl KeywordProfile {
    pub fn validate(&self) -> Result<()> {
        if self.vocab.is_empty() {
            return Err(RauError::InvalidParameter("empty vocabulary".into()));
        }
        if self.papers.is_empty() || self.reviewers.is_empty() {
            return Err(RauError::InvalidParameter("profile needs papers and reviewers".into()));
        }
        let v = self.vocab.len();
        let bad_paper = self.papers.iter().flatten().any(|&i| i >= v);
        let bad_reviewer = self.reviewers.iter().flatten().any(|&(i, _)| i >= v);
        if bad_paper || bad_reviewer {
            return Err(RauError::InvalidParameter(format!(
                "keyword index out of range for vocabulary of size {v}"
            )));
        }
        Ok(())
    }

    pub fn n_papers(&self) -> usize {
        self.papers.len()
    }

    pub fn n_reviewers(&self) -> usize {
        self.reviewers.len()
    }

    /// Rows and columns restricted to the given paper and reviewer indices.
    pub fn restrict(&self, papers: &[usize], reviewers: &[usize]) -> Self {
        Self {
            vocab: self.vocab.clone(),
            papers: papers.iter().map(|&p| self.papers[p].clone()).collect(),
            reviewers: reviewers.iter().map(|&r| self.reviewers[r].clone()).collect(),
        }
    }
}

/// Map non-zero counts onto evenly spaced values in `[0.2, 1]` by the rank
/// of their distinct value. Equal counts share a value; a single distinct
/// value maps to 1.
pub fn rescale_counts(counts: &[u32]) -> Vec<f64> {
    let mut distinct: Vec<u32> = counts.iter().copied().filter(|&c| c > 0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let d = distinct.len();
    counts
        .iter()
        .map(|&c| {
            if c == 0 {
                0.0
            } else if d == 1 {
                1.0
            } else {
                let rank = distinct.binary_search(&c).expect("count is present");
                0.2 + 0.8 * rank as f64 / (d - 1) as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordModel {
    pub mu: AffinityMatrix,
    pub sigma_diag: AffinityMatrix,
    pub set: UncertaintySet,
}

/// Mean and variance of each pair's affinity from keyword overlap, and the
/// `1 - delta` Gaussian ellipsoid around the mean truncated to the unit
/// hypercube.
///
/// The mean is a half-decaying weighted average of the paper's keywords'
/// rescaled reviewer counts, sorted decreasingly. The variance is
/// `(M_p M_r)^-2` where `M` counts distinct keywords on each side.
pub fn keyword_model(profile: &KeywordProfile, delta: f64) -> Result<KeywordModel> {
    let (mu, sigma_diag) = keyword_moments(profile)?;
    let set = build_gaussian_ellipsoid(&mu, &sigma_diag, delta, true, Chi2Method::Exact)?;
    Ok(KeywordModel { mu, sigma_diag, set })
}

pub fn keyword_moments(profile: &KeywordProfile) -> Result<(AffinityMatrix, AffinityMatrix)> {
    profile.validate()?;
    let v = profile.vocab.len();
    let (n, m) = (profile.n_papers(), profile.n_reviewers());

    let reviewer_vecs: Vec<Vec<f64>> = profile
        .reviewers
        .iter()
        .map(|entries| {
            let mut counts = vec![0u32; v];
            for &(i, c) in entries {
                counts[i] += c;
            }
            rescale_counts(&counts)
        })
        .collect();
    let reviewer_support: Vec<usize> = reviewer_vecs
        .iter()
        .map(|r| r.iter().filter(|&&x| x > 0.0).count())
        .collect();

    let mut mu = Vec::with_capacity(n * m);
    let mut var = Vec::with_capacity(n * m);
    let mut overlap = Vec::new();
    for keywords in &profile.papers {
        let mut kw = keywords.clone();
        kw.sort_unstable();
        kw.dedup();
        let mp = kw.len();
        let z: f64 = (0..mp).map(|i| 0.5f64.powi(i as i32)).sum();
        for (r, rv) in reviewer_vecs.iter().enumerate() {
            let mr = reviewer_support[r];
            if mp == 0 || mr == 0 {
                mu.push(0.0);
                var.push(VARIANCE_FLOOR);
                continue;
            }
            overlap.clear();
            overlap.extend(kw.iter().map(|&i| rv[i]).filter(|&x| x > 0.0));
            overlap.sort_unstable_by(|a, b| b.total_cmp(a));
            let weighted: f64 = overlap
                .iter()
                .enumerate()
                .map(|(i, x)| 0.5f64.powi(i as i32) * x)
                .sum();
            mu.push((weighted / z).clamp(0.0, 1.0));
            var.push((1.0 / (mp * mr) as f64).powi(2).max(VARIANCE_FLOOR));
        }
    }
    Ok((AffinityMatrix::new(n, m, mu)?, AffinityMatrix::new(n, m, var)?))
}

/// Seeded without-replacement subsample of `floor(frac * len)` indices,
/// returned in increasing order.
pub fn subsample_indices(len: usize, frac: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(RauError::InvalidParameter(format!("fraction must be in (0, 1], got {frac}")));
    }
    let count = (frac * len as f64 + 1e-9).floor() as usize;
    if count == 0 {
        return Err(RauError::InvalidParameter("subsample is empty".into()));
    }
    let mut idx = sample(rng, len, count).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Subsample papers, then reviewers, from one seeded stream.
pub fn subsample_profile(profile: &KeywordProfile, paper_frac: f64, reviewer_frac: f64, seed: u64) -> Result<KeywordProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let papers = subsample_indices(profile.n_papers(), paper_frac, &mut rng)?;
    let reviewers = subsample_indices(profile.n_reviewers(), reviewer_frac, &mut rng)?;
    Ok(profile.restrict(&papers, &reviewers))
}

/// Knobs for [`generate_profile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileParams {
    pub n_papers: usize,
    pub n_reviewers: usize,
    pub n_topics: usize,
    pub keywords_per_topic: usize,
}

impl Default for ProfileParams {
    fn default() -> Self {
        Self {
            n_papers: 200,
            n_reviewers: 300,
            n_topics: 10,
            keywords_per_topic: 6,
        }
    }
}

/// Synthetic venue: keywords are grouped into topics; papers draw one to
/// four keywords mostly from one topic, reviewers accumulate keyword counts
/// from one or two topics over a heavy-tailed number of past papers (one to
/// twenty, mean about five), so some reviewers look far more certain than
/// others.
pub fn generate_profile(params: &ProfileParams, seed: u64) -> Result<KeywordProfile> {
    let ProfileParams {
        n_papers,
        n_reviewers,
        n_topics,
        keywords_per_topic,
    } = *params;
    if n_papers == 0 || n_reviewers == 0 || n_topics == 0 || keywords_per_topic == 0 {
        return Err(RauError::InvalidParameter("profile sizes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = n_topics * keywords_per_topic;
    let vocab = (0..v)
        .map(|i| format!("topic{}-kw{}", i / keywords_per_topic, i % keywords_per_topic))
        .collect();
    let pick = |topic: usize, rng: &mut ChaCha8Rng| {
        if rng.random::<f64>() < 0.85 {
            topic * keywords_per_topic + rng.random_range(0..keywords_per_topic)
        } else {
            rng.random_range(0..v)
        }
    };
    let papers = (0..n_papers)
        .map(|_| {
            let topic = rng.random_range(0..n_topics);
            let count = rng.random_range(1..=4);
            let mut kws: Vec<usize> = (0..count).map(|_| pick(topic, &mut rng)).collect();
            kws.sort_unstable();
            kws.dedup();
            kws
        })
        .collect();
    let reviewers = (0..n_reviewers)
        .map(|_| {
            let topics = [rng.random_range(0..n_topics), rng.random_range(0..n_topics)];
            let past_papers = 1 + ((-(1.0 - rng.random::<f64>()).ln() * 4.0) as usize).min(19);
            let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
            for _ in 0..past_papers {
                let topic = topics[rng.random_range(0..2)];
                for _ in 0..rng.random_range(1..=3) {
                    *counts.entry(pick(topic, &mut rng)).or_default() += 1;
                }
            }
            counts.into_iter().collect()
        })
        .collect();
    Ok(KeywordProfile {
        vocab,
        papers,
        reviewers,
    })
}
