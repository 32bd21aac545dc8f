use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use rau::adversary::adversary;
use rau::harness::keyword::keyword_model;
use rau::harness::{
    dummy_reviewer_experiment, generate_profile, keyword_experiment, noisy_paper_experiment, ExperimentReport,
    KeywordExperiment, ProfileParams, SyntheticExperiment, TruthParams,
};
use rau::io;
use rau::projection::ProjectionConfig;
use rau::rounding::{round_assignment, round_samples, RoundingConfig};
use rau::rra::{rra_solve_with, RraConfig};
use rau::uncertainty::{
    build_gaussian_ellipsoid, build_inductive_ellipsoid, build_transductive_ellipsoid, ProbabilityRatios,
    SampledErrorEstimate,
};
use rau::{solve_box, solve_known, solve_sphere, usw, Chi2Method, Geometry};

#[derive(Parser)]
#[command(name = "rau", version, about = "Robust reviewer assignment under uncertain affinity scores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a worst-case-optimal assignment for an uncertainty set.
    Solve(SolveArgs),
    /// Sample integral assignments from a fractional one.
    Round(RoundArgs),
    /// Evaluate the worst case of an assignment over a set.
    Adversary(AdversaryArgs),
    /// Build an uncertainty set file from a statistical model.
    ConstructSet {
        #[command(subcommand)]
        kind: ConstructKind,
    },
    /// Run a method comparison experiment.
    Experiment {
        #[command(subcommand)]
        kind: ExperimentCmd,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeometryKind {
    Singleton,
    Box,
    Sphere,
    Ellipsoid,
    BoxedEllipsoid,
    Polytope,
}

impl GeometryKind {
    fn of(g: &Geometry) -> Self {
        match g {
            Geometry::Singleton { .. } => Self::Singleton,
            Geometry::Box { .. } => Self::Box,
            Geometry::Sphere { .. } => Self::Sphere,
            Geometry::Ellipsoid(_) => Self::Ellipsoid,
            Geometry::BoxedEllipsoid { .. } => Self::BoxedEllipsoid,
            Geometry::VertexPolytope { .. } => Self::Polytope,
        }
    }
}

#[derive(Args)]
struct RraArgs {
    #[arg(long, default_value_t = 0.01)]
    epsilon: f64,
    /// Cap on the certified iteration count.
    #[arg(long, default_value_t = 5000)]
    max_iters: usize,
    /// Fixed step size instead of epsilon / lambda^2.
    #[arg(long)]
    step_size: Option<f64>,
    /// Supergradient norm bound; derived from the set when absent.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 1e-7)]
    proj_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    proj_max_iters: usize,
}

impl RraArgs {
    fn config(&self) -> RraConfig {
        RraConfig {
            epsilon: self.epsilon,
            lambda: self.lambda,
            max_iters_cap: Some(self.max_iters),
            step_size_override: self.step_size,
            projection: ProjectionConfig {
                tol: self.proj_tol,
                max_iters: self.proj_max_iters,
            },
            ..RraConfig::default()
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    /// Uncertainty set JSON.
    #[arg(long)]
    set: PathBuf,
    /// Constraints JSON.
    #[arg(long)]
    constraints: PathBuf,
    /// Expected geometry; an error is raised if the set file differs.
    #[arg(long, value_enum)]
    uncertainty: Option<GeometryKind>,
    /// Use the iterative solver even when a closed-form reduction exists.
    #[arg(long)]
    force_rra: bool,
    #[command(flatten)]
    rra: RraArgs,
    /// Per-iteration JSON lines `{"t", "adv_usw", "step_norm"}`.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Seed for rounding the fractional solution.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Integral assignment CSV.
    #[arg(long)]
    out: PathBuf,
    /// Fractional solution CSV (iterative solver only).
    #[arg(long)]
    fractional_out: Option<PathBuf>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RoundArgs {
    /// Fractional assignment CSV.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    constraints: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Output files are `<out-dir>/sample_<i>.csv`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AdversaryArgs {
    /// Assignment CSV (integral or fractional).
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long)]
    set: PathBuf,
    /// Write the minimizing score matrix here.
    #[arg(long)]
    worst_out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Chi2Arg {
    Exact,
    Bound,
}

impl From<Chi2Arg> for Chi2Method {
    fn from(c: Chi2Arg) -> Self {
        match c {
            Chi2Arg::Exact => Chi2Method::Exact,
            Chi2Arg::Bound => Chi2Method::UpperBound,
        }
    }
}

#[derive(Subcommand)]
enum ConstructKind {
    /// Gaussian scores with per-entry variances: a chi-square ellipsoid.
    Gaussian {
        #[arg(long)]
        mu: PathBuf,
        /// Per-entry variances, same shape as `mu`.
        #[arg(long)]
        sigma: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        /// Keep the ellipsoid unbounded instead of intersecting with [0,1].
        #[arg(long)]
        no_truncate: bool,
        #[arg(long, value_enum, default_value = "exact")]
        chi2: Chi2Arg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error ellipsoid from validation errors and probability ratios.
    Inductive {
        #[arg(long)]
        s_hat: PathBuf,
        #[arg(long)]
        ratios: PathBuf,
        /// CSV of squared validation errors (any shape).
        #[arg(long)]
        errors: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error ellipsoid from validation pairs drawn with known probabilities.
    Transductive {
        #[arg(long)]
        s_hat: PathBuf,
        /// Sampling probability of every pair; must sum to 1.
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        errors: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keyword-overlap model from a profile JSON.
    Keyword {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CommonExperimentArgs {
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    demand: u32,
    #[arg(long, default_value_t = 6)]
    cap: u32,
    /// RRA epsilon.
    #[arg(long)]
    epsilon: Option<f64>,
    /// RRA iteration cap.
    #[arg(long)]
    max_iters: Option<usize>,
    /// RRA fixed step size.
    #[arg(long)]
    step_size: Option<f64>,
    /// Include wall-clock times in the report (breaks byte-identical output).
    #[arg(long)]
    timings: bool,
    /// Report JSON path; the summary table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(long, default_value_t = 30)]
    n: usize,
    #[arg(long, default_value_t = 45)]
    m: usize,
    /// Ground-truth CSV for the real reviewers; generated when absent.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExperimentCmd {
    /// Add reviewers with low true and noisy estimated affinity.
    DummyReviewers {
        #[command(flatten)]
        synthetic: SyntheticArgs,
        /// Counts to sweep: `a..b` (inclusive, see --step) or `a,b,c`.
        #[arg(long, default_value = "0..60")]
        dummies: String,
        #[arg(long, default_value_t = 10)]
        step: usize,
        #[command(flatten)]
        common: CommonExperimentArgs,
    },
    /// Make some papers overestimate their mid-ranked reviewers.
    NoisyPapers {
        #[command(flatten)]
        synthetic: SyntheticArgs,
        #[arg(long, default_value = "0..10")]
        noisy: String,
        #[arg(long, default_value_t = 2)]
        step: usize,
        #[command(flatten)]
        common: CommonExperimentArgs,
    },
    /// Keyword-model comparison on repeated subsamples.
    Keyword {
        /// Profile JSON; a synthetic venue is generated when absent.
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Seed for the synthetic venue.
        #[arg(long, default_value_t = 7)]
        profile_seed: u64,
        /// Save the profile used.
        #[arg(long)]
        save_profile: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 0.6)]
        subsample: f64,
        #[command(flatten)]
        common: CommonExperimentArgs,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Solve(args) => solve(args),
        Command::Round(args) => round(args),
        Command::Adversary(args) => run_adversary(args),
        Command::ConstructSet { kind } => construct_set(kind),
        Command::Experiment { kind } => experiment(kind),
    }
}

fn emit_json(value: &serde_json::Value, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn solve(args: SolveArgs) -> Result<()> {
    let set = io::read_set(&args.set).with_context(|| format!("reading {}", args.set.display()))?;
    let c = io::read_constraints(&args.constraints)?;
    let kind = GeometryKind::of(set.geometry());
    if let Some(expected) = args.uncertainty {
        if expected != kind {
            bail!("set file holds a {} set", set.geometry().kind_name());
        }
    }
    let center = set.center();
    let start = Instant::now();
    let closed_form = !args.force_rra && set.l1_expansion() == 0.0;
    let (assignment, worst_usw, extra) = match set.geometry() {
        Geometry::Singleton { center } if closed_form => {
            let a = solve_known(center, &c)?;
            let w = usw(&a, center)?;
            (a, w, json!({"method": "flow"}))
        }
        Geometry::Box { lower, upper } if closed_form => {
            let (a, w) = solve_box(lower, upper, &c)?;
            (a, w, json!({"method": "flow"}))
        }
        Geometry::Sphere { center, radius } if closed_form => {
            let (a, w) = solve_sphere(center, *radius, &c)?;
            (a, w, json!({"method": "flow"}))
        }
        _ => {
            let cfg = args.rra.config();
            let mut trace = match &args.trace {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            let mut trace_err = None;
            let result = rra_solve_with(&set, &c, &cfg, |e| {
                if let Some(w) = trace.as_mut() {
                    let line = json!({"t": e.t, "adv_usw": e.adv_usw, "step_norm": e.step_norm});
                    if let Err(err) = writeln!(w, "{line}") {
                        trace_err = Some(err);
                        return ControlFlow::Break(());
                    }
                }
                ControlFlow::Continue(())
            })?;
            if let Some(err) = trace_err {
                return Err(err).context("writing trace");
            }
            if let Some(mut w) = trace {
                w.flush()?;
            }
            if result.iteration_limit < result.converged_bound as usize && !result.certified {
                eprintln!(
                    "warning: certified schedule needs {} iterations, capped at {}",
                    result.converged_bound, result.iteration_limit
                );
            }
            if let Some(p) = &args.fractional_out {
                io::write_assignment(p, &result.best_fractional)?;
            }
            let a = round_assignment(&result.best_fractional, &c, &RoundingConfig::new(args.seed))?;
            let w = adversary(&a, &set)?.worst_usw;
            let extra = json!({
                "method": "rra",
                "fractional_worst_usw": result.best_adversarial_usw,
                "iterations": result.iterations_run,
                "certified_iterations": result.converged_bound,
                "certified": result.certified,
                "stopped_early": result.stopped_early,
                "step_size": result.step_size,
                "lambda": result.lambda,
                "projection_warnings": result.projection_warnings,
                "seed": args.seed,
            });
            (a, w, extra)
        }
    };
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    io::write_assignment(&args.out, &assignment)?;
    let mut report = json!({
        "usw": usw(&assignment, &center)?,
        "worst_usw": worst_usw,
        "runtime_ms": runtime_ms,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (report.as_object_mut(), extra) {
        obj.extend(more);
    }
    emit_json(&report, args.report.as_deref())
}

fn round(args: RoundArgs) -> Result<()> {
    let a = io::read_assignment(&args.input)?;
    let c = io::read_constraints(&args.constraints)?;
    let samples = round_samples(&a, &c, &RoundingConfig::new(args.seed), args.samples)?;
    std::fs::create_dir_all(&args.out_dir)?;
    for (i, s) in samples.iter().enumerate() {
        let path = args.out_dir.join(format!("sample_{i}.csv"));
        io::write_assignment(&path, s)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run_adversary(args: AdversaryArgs) -> Result<()> {
    let a = io::read_assignment(&args.assignment)?;
    let set = io::read_set(&args.set)?;
    let r = adversary(&a, &set)?;
    if let Some(p) = &args.worst_out {
        io::write_matrix(p, &r.worst_scores)?;
    }
    emit_json(
        &json!({
            "worst_usw": r.worst_usw,
            "center_usw": usw(&a, &set.center())?,
            "dual_multiplier": r.dual_multiplier,
            "iterations": r.iterations,
            "residual": r.residual,
        }),
        None,
    )
}

fn construct_set(kind: ConstructKind) -> Result<()> {
    let (set, out) = match kind {
        ConstructKind::Gaussian {
            mu,
            sigma,
            delta,
            no_truncate,
            chi2,
            out,
        } => {
            let mu = io::read_matrix(&mu)?;
            let sigma = io::read_matrix(&sigma)?;
            (build_gaussian_ellipsoid(&mu, &sigma, delta, !no_truncate, chi2.into())?, out)
        }
        ConstructKind::Inductive {
            s_hat,
            ratios,
            errors,
            delta,
            out,
        } => {
            let s_hat = io::read_matrix(&s_hat)?;
            let ratios = ProbabilityRatios::new(io::read_matrix(&ratios)?)?;
            let est = read_errors(&errors, delta)?;
            (build_inductive_ellipsoid(&s_hat, &ratios, &est)?, out)
        }
        ConstructKind::Transductive {
            s_hat,
            probs,
            errors,
            delta,
            out,
        } => {
            let s_hat = io::read_matrix(&s_hat)?;
            let probs = io::read_matrix(&probs)?;
            let est = read_errors(&errors, delta)?;
            (build_transductive_ellipsoid(&s_hat, &probs, &est)?, out)
        }
        ConstructKind::Keyword { profile, delta, out } => {
            let profile = io::read_profile(&profile)?;
            (keyword_model(&profile, delta)?.set, out)
        }
    };
    for path in io::write_set(&out, &set)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn read_errors(path: &Path, delta: f64) -> Result<SampledErrorEstimate> {
    let (_, _, values) = io::parse_csv_values(File::open(path)?)?;
    Ok(SampledErrorEstimate::new(values, delta)?)
}

/// `a..b` stepping by `step` with `b` included, or a comma list.
fn parse_counts(spec: &str, step: usize) -> Result<Vec<usize>> {
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse()?, b.trim().parse()?);
        if step == 0 || a > b {
            bail!("bad range {spec} with step {step}");
        }
        let mut v: Vec<usize> = (a..=b).step_by(step).collect();
        if *v.last().unwrap() != b {
            v.push(b);
        }
        Ok(v)
    } else {
        spec.split(',')
            .map(|s| s.trim().parse().with_context(|| format!("bad count {s:?}")))
            .collect()
    }
}

fn apply_common(cfg: &mut rau::harness::ComparisonConfig, common: &CommonExperimentArgs) {
    if let Some(e) = common.epsilon {
        cfg.rra.epsilon = e;
    }
    if let Some(t) = common.max_iters {
        cfg.rra.max_iters_cap = Some(t);
    }
    if common.step_size.is_some() {
        cfg.rra.step_size_override = common.step_size;
    }
    cfg.timings = common.timings;
}

fn synthetic_config(synthetic: &SyntheticArgs, counts: Vec<usize>, common: &CommonExperimentArgs) -> Result<SyntheticExperiment> {
    let mut cfg = SyntheticExperiment {
        base: synthetic.truth.as_deref().map(io::read_matrix).transpose()?,
        truth_params: TruthParams {
            n: synthetic.n,
            m: synthetic.m,
            ..TruthParams::default()
        },
        counts,
        reps: common.reps,
        seed: common.seed,
        demand: common.demand,
        cap: common.cap,
        ..SyntheticExperiment::default()
    };
    apply_common(&mut cfg.comparison, common);
    Ok(cfg)
}

fn finish_experiment(report: &ExperimentReport, out: Option<&Path>) -> Result<()> {
    print!("{}", report.render_table());
    if let Some(p) = out {
        std::fs::write(p, report.to_json()?).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn experiment(kind: ExperimentCmd) -> Result<()> {
    match kind {
        ExperimentCmd::DummyReviewers {
            synthetic,
            dummies,
            step,
            common,
        } => {
            let cfg = synthetic_config(&synthetic, parse_counts(&dummies, step)?, &common)?;
            finish_experiment(&dummy_reviewer_experiment(&cfg)?, common.out.as_deref())
        }
        ExperimentCmd::NoisyPapers {
            synthetic,
            noisy,
            step,
            common,
        } => {
            let cfg = synthetic_config(&synthetic, parse_counts(&noisy, step)?, &common)?;
            finish_experiment(&noisy_paper_experiment(&cfg)?, common.out.as_deref())
        }
        ExperimentCmd::Keyword {
            profile,
            profile_seed,
            save_profile,
            delta,
            subsample,
            common,
        } => {
            let profile = match profile {
                Some(p) => io::read_profile(&p)?,
                None => generate_profile(&ProfileParams::default(), profile_seed)?,
            };
            if let Some(p) = &save_profile {
                io::write_profile(p, &profile)?;
            }
            let mut cfg = KeywordExperiment::new(profile);
            cfg.delta = delta;
            cfg.subsample = subsample;
            cfg.reps = common.reps;
            cfg.seed = common.seed;
            cfg.demand = common.demand;
            cfg.cap = common.cap;
            apply_common(&mut cfg.comparison, &common);
            finish_experiment(&keyword_experiment(&cfg)?, common.out.as_deref())
        }
    }
}
