//! Experiments comparing the mean-score LP with robust assignment.

pub mod keyword;
pub mod synthetic;

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::adversary;
use crate::error::Result;
use crate::flow::solve_known;
use crate::model::{usw, AffinityMatrix, Assignment, AssignmentConstraints};
use crate::rounding::{round_assignment, RoundingConfig};
use crate::rra::{rra_solve, sandwich_check, EarlyStop, RraConfig, SandwichReport};
use crate::uncertainty::UncertaintySet;

pub use keyword::{generate_profile, keyword_model, subsample_profile, KeywordModel, KeywordProfile, ProfileParams};
pub use synthetic::{gen_dummy_experiment, gen_noisy_papers, generate_truth, NoiseParams, SyntheticTruth, TruthParams};

/// Reviews per paper and papers per reviewer used by the experiments.
pub const DEFAULT_DEMAND: u32 = 3;
pub const DEFAULT_CAP: u32 = 6;

/// Membership slack used when deciding whether the truth lies in a set.
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NaiveLp,
    Rra,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::NaiveLp => "naive_lp",
            Self::Rra => "rra",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub methods: Vec<Method>,
    pub rra: RraConfig,
    /// Record wall-clock times; off by default so reports are reproducible
    /// byte for byte.
    pub timings: bool,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::NaiveLp, Method::Rra],
            rra: RraConfig {
                epsilon: 0.05,
                max_iters_cap: Some(2_000),
                early_stop: Some(EarlyStop::default()),
                ..RraConfig::default()
            },
            timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub adversarial_usw: f64,
    pub average_usw: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_usw: Option<f64>,
    /// True welfare as a percentage of the known-truth optimum.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_pct_of_optimum: Option<f64>,
    /// Adversarial welfare of the fractional solution before rounding.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fractional_adversarial_usw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sandwich: Option<SandwichReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub methods: Vec<MethodReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimum_true_usw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth_in_set: Option<bool>,
}

impl ComparisonReport {
    pub fn method(&self, method: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == method)
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Run each method on one instance and score the integral results.
///
/// `naive_lp` solves the LP at the set's center; `rra` runs robust ascent
/// and rounds with `seed`. Average welfare is measured at the center, true
/// welfare at `s_true` when given.
pub fn run_comparison(
    set: &UncertaintySet,
    c: &AssignmentConstraints,
    s_true: Option<&AffinityMatrix>,
    cfg: &ComparisonConfig,
    seed: u64,
) -> Result<ComparisonReport> {
    let center = set.center();
    let (n, m) = set.dims();
    let optimum_true_usw = match s_true {
        Some(s) => Some(usw(&solve_known(s, c)?, s)?),
        None => None,
    };
    let truth_in_set = s_true.map(|s| set.contains(s, MEMBERSHIP_TOL));

    let mut methods = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let (assignment, fractional_adv, iterations): (Assignment, Option<f64>, Option<usize>) = match method {
            Method::NaiveLp => (solve_known(&center, c)?, None, None),
            Method::Rra => {
                let out = rra_solve(set, c, &cfg.rra)?;
                let rounded = round_assignment(&out.best_fractional, c, &RoundingConfig::new(seed))?;
                (rounded, Some(out.best_adversarial_usw), Some(out.iterations_run))
            }
        };
        let runtime_ms = cfg.timings.then(|| elapsed_ms(start));
        let adversarial_usw = adversary(&assignment, set)?.worst_usw;
        let average_usw = usw(&assignment, &center)?;
        let true_usw = s_true.map(|s| usw(&assignment, s)).transpose()?;
        let true_pct_of_optimum = match (true_usw, optimum_true_usw) {
            (Some(t), Some(opt)) if opt > 0.0 => Some(100.0 * t / opt),
            _ => None,
        };
        let sandwich = match (s_true, truth_in_set) {
            (Some(s), Some(true)) => Some(sandwich_check(&assignment, set, s)?),
            _ => None,
        };
        methods.push(MethodReport {
            method,
            adversarial_usw,
            average_usw,
            true_usw,
            true_pct_of_optimum,
            fractional_adversarial_usw: fractional_adv,
            iterations,
            sandwich,
            runtime_ms,
        });
    }
    Ok(ComparisonReport {
        seed,
        n,
        m,
        methods,
        optimum_true_usw,
        truth_in_set,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let len = values.len() as f64;
        let mean = values.iter().sum::<f64>() / len;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1.0)
        } else {
            0.0
        };
        Some(Self {
            mean,
            sd: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub adversarial_usw: Stats,
    pub average_usw: Stats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_usw: Option<Stats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_pct_of_optimum: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    /// Swept quantity for this group, e.g. the number of dummy reviewers.
    pub value: usize,
    pub runs: Vec<ComparisonReport>,
    pub summary: Vec<MethodSummary>,
    pub sandwich_checked: usize,
    pub sandwich_violations: usize,
}

impl GroupReport {
    fn new(value: usize, runs: Vec<ComparisonReport>, methods: &[Method]) -> Self {
        let summary = methods
            .iter()
            .filter_map(|&method| {
                let pick = |f: &dyn Fn(&MethodReport) -> Option<f64>| -> Vec<f64> {
                    runs.iter().filter_map(|r| r.method(method).and_then(f)).collect()
                };
                Some(MethodSummary {
                    method,
                    adversarial_usw: Stats::of(&pick(&|r| Some(r.adversarial_usw)))?,
                    average_usw: Stats::of(&pick(&|r| Some(r.average_usw)))?,
                    true_usw: Stats::of(&pick(&|r| r.true_usw)),
                    true_pct_of_optimum: Stats::of(&pick(&|r| r.true_pct_of_optimum)),
                })
            })
            .collect();
        let sandwiches: Vec<&SandwichReport> = runs
            .iter()
            .flat_map(|r| r.methods.iter().filter_map(|m| m.sandwich.as_ref()))
            .collect();
        Self {
            value,
            sandwich_checked: sandwiches.len(),
            sandwich_violations: sandwiches.iter().filter(|s| !s.holds).count(),
            runs,
            summary,
        }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    DummyReviewers,
    NoisyPapers,
    Keyword,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub reps: usize,
    pub demand: u32,
    pub cap: u32,
    pub comparison: ComparisonConfig,
    pub groups: Vec<GroupReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human-readable table with welfare scaled by 100.
    pub fn render_table(&self) -> String {
        let swept = match self.experiment {
            ExperimentKind::DummyReviewers => "dummies",
            ExperimentKind::NoisyPapers => "noisy",
            ExperimentKind::Keyword => "group",
        };
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{swept:>8} {:>9} {:>17} {:>17} {:>17} {:>15}",
            "method", "adversarial x100", "average x100", "true x100", "true % opt"
        );
        for g in &self.groups {
            for s in &g.summary {
                let fmt = |st: Option<&Stats>, scale: f64| match st {
                    Some(st) => format!("{:.1} ± {:.1}", st.mean * scale, st.sd * scale),
                    None => "-".to_string(),
                };
                let _ = writeln!(
                    out,
                    "{:>8} {:>9} {:>17} {:>17} {:>17} {:>15}",
                    g.value,
                    s.method.name(),
                    fmt(Some(&s.adversarial_usw), 100.0),
                    fmt(Some(&s.average_usw), 100.0),
                    fmt(s.true_usw.as_ref(), 100.0),
                    fmt(s.true_pct_of_optimum.as_ref(), 1.0),
                );
            }
        }
        out
    }
}

/// Seed of repetition `rep`.
pub fn rep_seed(base: u64, rep: usize) -> u64 {
    base.wrapping_add(rep as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExperiment {
    /// Ground truth for the real reviewers; generated from `truth_params`
    /// and `seed` when absent.
    pub base: Option<AffinityMatrix>,
    pub truth_params: TruthParams,
    /// Values of the swept count (dummy reviewers or noisy papers).
    pub counts: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub demand: u32,
    pub cap: u32,
    pub noise: NoiseParams,
    pub comparison: ComparisonConfig,
}

impl Default for SyntheticExperiment {
    fn default() -> Self {
        Self {
            base: None,
            truth_params: TruthParams::default(),
            counts: vec![0],
            reps: 100,
            seed: 7,
            demand: DEFAULT_DEMAND,
            cap: DEFAULT_CAP,
            noise: NoiseParams::default(),
            comparison: ComparisonConfig::default(),
        }
    }
}

fn run_synthetic(
    cfg: &SyntheticExperiment,
    kind: ExperimentKind,
    generate: impl Fn(&AffinityMatrix, usize, u64, &NoiseParams) -> Result<(SyntheticTruth, UncertaintySet)> + Sync,
) -> Result<ExperimentReport> {
    let base = match &cfg.base {
        Some(b) => b.clone(),
        None => generate_truth(&cfg.truth_params, cfg.seed)?,
    };
    let groups = cfg
        .counts
        .iter()
        .map(|&count| {
            let runs = (0..cfg.reps)
                .into_par_iter()
                .map(|rep| {
                    let seed = rep_seed(cfg.seed, rep);
                    let (truth, set) = generate(&base, count, seed, &cfg.noise)?;
                    let (n, m) = truth.s_true.dims();
                    let c = AssignmentConstraints::uniform(n, m, cfg.demand, cfg.cap)?;
                    run_comparison(&set, &c, Some(&truth.s_true), &cfg.comparison, seed)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroupReport::new(count, runs, &cfg.comparison.methods))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        experiment: kind,
        seed: cfg.seed,
        reps: cfg.reps,
        demand: cfg.demand,
        cap: cfg.cap,
        comparison: cfg.comparison.clone(),
        groups,
    })
}

/// True welfare of both methods as dummy reviewers are added.
pub fn dummy_reviewer_experiment(cfg: &SyntheticExperiment) -> Result<ExperimentReport> {
    run_synthetic(cfg, ExperimentKind::DummyReviewers, gen_dummy_experiment)
}

/// True welfare of both methods as papers get overestimated reviewers.
pub fn noisy_paper_experiment(cfg: &SyntheticExperiment) -> Result<ExperimentReport> {
    run_synthetic(cfg, ExperimentKind::NoisyPapers, gen_noisy_papers)
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeywordExperiment {
    pub profile: KeywordProfile,
    pub delta: f64,
    /// Fraction of papers and of reviewers kept in each repetition.
    pub subsample: f64,
    pub reps: usize,
    pub seed: u64,
    pub demand: u32,
    pub cap: u32,
    pub comparison: ComparisonConfig,
}

impl KeywordExperiment {
    /// Defaults for the keyword comparison. The certified step size moves
    /// too slowly on instances of this size, so RRA runs with a fixed step
    /// of 5 for at most 300 iterations.
    pub fn new(profile: KeywordProfile) -> Self {
        let mut comparison = ComparisonConfig::default();
        comparison.rra.step_size_override = Some(5.0);
        comparison.rra.max_iters_cap = Some(300);
        Self {
            profile,
            delta: 0.05,
            subsample: 0.6,
            reps: 100,
            seed: 7,
            demand: DEFAULT_DEMAND,
            cap: DEFAULT_CAP,
            comparison,
        }
    }
}

/// Adversarial and average welfare on repeated subsamples of a keyword
/// profile.
pub fn keyword_experiment(cfg: &KeywordExperiment) -> Result<ExperimentReport> {
    cfg.profile.validate()?;
    let runs = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = rep_seed(cfg.seed, rep);
            let sub = subsample_profile(&cfg.profile, cfg.subsample, cfg.subsample, seed)?;
            let model = keyword_model(&sub, cfg.delta)?;
            let (n, m) = model.mu.dims();
            let c = AssignmentConstraints::uniform(n, m, cfg.demand, cfg.cap)?;
            run_comparison(&model.set, &c, None, &cfg.comparison, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport {
        experiment: ExperimentKind::Keyword,
        seed: cfg.seed,
        reps: cfg.reps,
        demand: cfg.demand,
        cap: cfg.cap,
        comparison: cfg.comparison.clone(),
        groups: vec![GroupReport::new(0, runs, &cfg.comparison.methods)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_methods_agree() {
        let s = AffinityMatrix::new(2, 3, vec![0.9, 0.2, 0.4, 0.8, 0.3, 0.1]).unwrap();
        let set = UncertaintySet::singleton(s.clone());
        let c = AssignmentConstraints::uniform(2, 3, 1, 1).unwrap();
        let report = run_comparison(&set, &c, Some(&s), &ComparisonConfig::default(), 1).unwrap();
        let naive = report.method(Method::NaiveLp).unwrap();
        let rra = report.method(Method::Rra).unwrap();
        assert_eq!(naive.adversarial_usw, rra.adversarial_usw);
        assert_eq!(naive.average_usw, rra.average_usw);
        assert_eq!(naive.true_pct_of_optimum, Some(100.0));
        assert_eq!(report.truth_in_set, Some(true));
    }

    #[test]
    fn stats_basics() {
        let s = Stats::of(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (2.0, 1.0, 3.0));
        assert!((s.sd - 2f64.sqrt()).abs() < 1e-15);
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn default_constraints_match_experiments() {
        let e = SyntheticExperiment::default();
        assert_eq!((e.demand, e.cap), (3, 6));
    }

    #[test]
    fn small_dummy_sweep_is_reproducible() {
        let cfg = SyntheticExperiment {
            truth_params: TruthParams {
                n: 6,
                m: 9,
                ..TruthParams::default()
            },
            counts: vec![0, 3],
            reps: 2,
            cap: 3,
            ..SyntheticExperiment::default()
        };
        let a = dummy_reviewer_experiment(&cfg).unwrap();
        let b = dummy_reviewer_experiment(&cfg).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.groups.len(), 2);
        assert!(a.render_table().contains("naive_lp"));
        for g in &a.groups {
            for r in &g.runs {
                for m in &r.methods {
                    assert!(m.adversarial_usw <= m.average_usw + 1e-12);
                }
            }
        }
    }
}
