//! Experiment runner for the `rbirg` command-line tool.

pub mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rbirg_core::baselines::{full_irg_with, sweep_iterations, two_loop_sweep, write_sweep_csv, SweepOptions};
use rbirg_core::diagnostics::{feasibility_gap, fit_rate_slope};
use rbirg_core::imaging::{
    apply_blur, make_deblur_instance, read_pgm, write_pgm, BlurKernel, DeblurInstance, GrayImage,
};
use rbirg_core::io::{fmt_f64, write_atomic};
use rbirg_core::problems::{AffineConstraint, Constraint, QuadraticOuter, MIN_NORM_MAX_DIM};
use rbirg_core::solver::run_rbirg_with;
use rbirg_core::{
    min_norm_oracle, BilevelProblem, BlockSetSpec, BlockStructure, FeasibleSet,
    LeastSquaresInstance, PenaltyInstance, RunOptions, RunResult, SolverState, StepSchedule,
    ValidationReport,
};

use crate::config::{
    BlocksConfig, ExperimentConfig, Exponents, ImageSource, KernelSource, Mode, ProblemConfig,
};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;
pub const EXIT_IO: u8 = 1;

/// Environment variable overriding `run.seed`.
pub const SEED_ENV: &str = "RBIRG_SEED";

pub const COMPARISON_CSV_HEADER: &str = "mode,oracle_calls,final_distance";

/// Built-in penalty instances.
pub const PENALTY_INSTANCES: [&str; 1] = ["halfplane"];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error("schedule validation failed: {}\n{report}", failures.join(", "))]
    Validation {
        failures: Vec<String>,
        report: String,
    },

    #[error("runtime failure: {0}")]
    Runtime(rbirg_core::Error),

    #[error("{0}")]
    Io(rbirg_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } | CliError::Validation { .. } => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::Io(_) => EXIT_IO,
        }
    }

    fn config(field: &str, message: impl std::fmt::Display) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.to_string(),
        }
    }
}

fn runtime(e: rbirg_core::Error) -> CliError {
    match e {
        rbirg_core::Error::Io { .. } => CliError::Io(e),
        other => CliError::Runtime(other),
    }
}

/// A loaded configuration with its directory for resolving relative paths.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

impl Experiment {
    /// Loads the config and applies the seed override from [`SEED_ENV`].
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut config = ExperimentConfig::load(path)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            config.run.seed = v
                .trim()
                .parse()
                .map_err(|e| CliError::config(SEED_ENV, format!("{v:?}: {e}")))?;
        }
        let base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn existing(&self, field: &str, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(full)
        } else {
            Err(CliError::config(field, format!("file not found: {}", full.display())))
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }
}

/// Problem instance plus whatever reference solution is available.
pub struct Built {
    pub problem: BilevelProblem,
    pub deblur: Option<DeblurInstance>,
    /// Bilevel solution, when an oracle exists at this size.
    pub reference: Option<Vec<f64>>,
    /// Inner optimal value, when known.
    pub f_star: Option<f64>,
}

fn block_structure(cfg: &BlocksConfig, n: usize) -> Result<BlockStructure, CliError> {
    match cfg {
        BlocksConfig::Count(d) => {
            BlockStructure::split_even(n, *d).map_err(|e| CliError::config("blocks.count", e))
        }
        BlocksConfig::Sizes(s) => {
            let total: usize = s.iter().sum();
            if total != n {
                return Err(CliError::config(
                    "blocks.sizes",
                    format!("sizes sum to {total}, problem dimension is {n}"),
                ));
            }
            BlockStructure::new(s).map_err(|e| CliError::config("blocks.sizes", e))
        }
    }
}

fn min_norm_reference(ls: &LeastSquaresInstance) -> Result<(Option<Vec<f64>>, Option<f64>), CliError> {
    if ls.cols() > MIN_NORM_MAX_DIM {
        return Ok((None, None));
    }
    let x = min_norm_oracle(ls).map_err(runtime)?;
    let f = rbirg_core::Objective::value(ls, &x).map_err(runtime)?;
    Ok((Some(x), Some(f)))
}

/// `h(x) = x₁ − 1`, `X = [−5, 5]²`, `g = ‖x − (2, 0)‖²`; solution `(1, 0)`.
fn halfplane(blocks: &BlocksConfig) -> Result<Built, CliError> {
    let structure = block_structure(blocks, 2)?;
    let sets = structure
        .sizes()
        .iter()
        .map(|&s| BlockSetSpec::uniform_box(s, -5.0, 5.0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(runtime)?;
    let cons: Vec<Box<dyn Constraint>> = vec![Box::new(AffineConstraint::new(vec![1.0, 0.0], -1.0))];
    let problem = BilevelProblem::new(
        Arc::new(PenaltyInstance::new(2, cons).map_err(runtime)?),
        Arc::new(QuadraticOuter::new(vec![2.0, 0.0], 2.0).map_err(runtime)?),
        2.0,
        FeasibleSet::new(structure, sets).map_err(runtime)?,
    )
    .map_err(runtime)?;
    Ok(Built {
        problem,
        deblur: None,
        reference: Some(vec![1.0, 0.0]),
        f_star: Some(0.0),
    })
}

pub fn build_problem(exp: &Experiment) -> Result<Built, CliError> {
    let cfg = &exp.config;
    match &cfg.problem {
        ProblemConfig::Deblur {
            image,
            kernel,
            boundary,
            noise,
        } => {
            let kernel = match kernel {
                KernelSource::File(p) => {
                    let path = exp.existing("problem.kernel", p)?;
                    BlurKernel::from_file(&path).map_err(|e| CliError::config("problem.kernel", e))?
                }
                KernelSource::Gaussian { size, sigma } => BlurKernel::gaussian(*size, *sigma)
                    .map_err(|e| CliError::config("problem.kernel_size", e))?,
            };
            let observed = match image {
                ImageSource::File(p) => {
                    let path = exp.existing("problem.image", p)?;
                    read_pgm(&path).map_err(|e| CliError::config("problem.image", e))?
                }
                ImageSource::Synthetic { width, height } => {
                    let clean = GrayImage::synthetic(*width, *height)
                        .map_err(|e| CliError::config("problem.synthetic", e))?;
                    apply_blur(&kernel, &clean, *boundary)
                }
            };
            let observed = observed
                .with_noise(*noise, cfg.run.seed)
                .map_err(|e| CliError::config("problem.noise", e))?;
            let di = make_deblur_instance(&observed, &kernel, *boundary, 1)
                .map_err(|e| CliError::config("problem.image", e))?;
            let structure = block_structure(&cfg.blocks, di.problem.dim())?;
            let problem = di.problem.with_free_blocks(structure).map_err(runtime)?;
            let (reference, f_star) = min_norm_reference(&di.least_squares)?;
            Ok(Built {
                problem,
                deblur: Some(di),
                reference,
                f_star,
            })
        }
        ProblemConfig::LeastSquares { matrix, rhs } => {
            let a = exp.existing("problem.matrix", matrix)?;
            let b = exp.existing("problem.rhs", rhs)?;
            let rows = rbirg_core::io::read_matrix_text(&a)
                .map_err(|e| CliError::config("problem.matrix", e))?;
            let rhs = rbirg_core::io::read_vector_text(&b)
                .map_err(|e| CliError::config("problem.rhs", e))?;
            let ls = Arc::new(
                LeastSquaresInstance::from_rows(&rows, &rhs)
                    .map_err(|e| CliError::config("problem.rhs", e))?,
            );
            let structure = block_structure(&cfg.blocks, ls.cols())?;
            let (reference, f_star) = min_norm_reference(&ls)?;
            let problem = BilevelProblem::min_norm_least_squares(ls, structure).map_err(runtime)?;
            Ok(Built {
                problem,
                deblur: None,
                reference,
                f_star,
            })
        }
        ProblemConfig::Penalty { instance } => match instance.as_str() {
            "halfplane" => halfplane(&cfg.blocks),
            other => Err(CliError::config(
                "problem.instance",
                format!("unknown instance {other:?}; available: {}", PENALTY_INSTANCES.join(", ")),
            )),
        },
    }
}

/// Block count the schedule is validated against for the configured mode.
fn effective_blocks(cfg: &ExperimentConfig, problem: &BilevelProblem) -> usize {
    match cfg.mode {
        Mode::FullIrg => 1,
        _ => problem.blocks().count(),
    }
}

pub fn build_schedule(cfg: &ExperimentConfig, problem: &BilevelProblem) -> Result<StepSchedule, CliError> {
    let d = effective_blocks(cfg, problem);
    let (g0, e0) = match cfg.schedule.steps {
        Some(s) => s,
        None => {
            let s = StepSchedule::default_for(d, problem.mu()).map_err(runtime)?;
            (s.gamma0, s.eta0)
        }
    };
    match cfg.schedule.exponents {
        Exponents::Delta(delta) => StepSchedule::with_delta(g0, e0, delta, cfg.schedule.r)
            .map_err(|e| CliError::config("schedule.delta", e)),
        Exponents::Explicit { a, b } => StepSchedule::with_exponents(g0, e0, a, b, cfg.schedule.r)
            .map_err(|e| CliError::config("schedule.a", e)),
    }
}

pub fn validation_report(
    cfg: &ExperimentConfig,
    problem: &BilevelProblem,
    schedule: &StepSchedule,
) -> Result<ValidationReport, CliError> {
    Ok(match (&cfg.probabilities, cfg.mode) {
        (Some(p), Mode::Rbirg | Mode::TwoLoop) => {
            if p.len() != problem.blocks().count() {
                return Err(CliError::config(
                    "blocks.probabilities",
                    format!("{} values for {} blocks", p.len(), problem.blocks().count()),
                ));
            }
            schedule.validate_with_probabilities(problem.mu(), p)
        }
        _ => schedule.validate(problem.mu(), effective_blocks(cfg, problem)),
    })
}

fn require_valid(report: &ValidationReport) -> Result<(), CliError> {
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Validation {
            failures: report.failures(),
            report: report.to_string(),
        })
    }
}

/// Builds the problem and schedule and returns the validation report text.
pub fn validate_experiment(exp: &Experiment) -> Result<String, CliError> {
    let built = build_problem(exp)?;
    let schedule = build_schedule(&exp.config, &built.problem)?;
    let report = validation_report(&exp.config, &built.problem, &schedule)?;
    let text = report.to_string();
    require_valid(&report)?;
    Ok(text)
}

/// Files written by a run and a one-line summary.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn fit_footer(result: &RunResult, f_star: Option<f64>, iterations: u64) -> String {
    let Some(f_star) = f_star else {
        return "#fit,unavailable,no inner optimum oracle\n".into();
    };
    let k_min = if iterations >= 10_000 { 1_000 } else { 1 };
    match feasibility_gap(&result.trace, f_star).and_then(|g| fit_rate_slope(&g, k_min)) {
        Ok(fit) => fit.csv_footer(),
        Err(e) => format!("#fit,unavailable,{}\n", e.to_string().replace(',', ";")),
    }
}

fn run_options(cfg: &ExperimentConfig, built: &Built, checkpoints: Vec<u64>) -> RunOptions {
    let mut opts = RunOptions::new(cfg.run.iterations, cfg.run.seed).checkpoints(checkpoints);
    if let Some(p) = &cfg.probabilities {
        opts = opts.probabilities(p.clone());
    }
    if let Some(r) = &built.reference {
        opts = opts.reference(r.clone());
    }
    opts
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::Io(rbirg_core::Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })
    })
}

/// Runs the configured mode and writes its artifacts.
pub fn run_experiment(exp: &Experiment) -> Result<RunSummary, CliError> {
    let cfg = &exp.config;
    let built = build_problem(exp)?;
    let schedule = build_schedule(cfg, &built.problem)?;
    let report = validation_report(cfg, &built.problem, &schedule)?;
    let out = exp.output_dir();
    create_dir(&out)?;
    let validation = out.join("validation.txt");
    write_atomic(&validation, report.to_string().as_bytes()).map_err(runtime)?;
    require_valid(&report)?;
    let mut files = vec![validation];

    if cfg.mode == Mode::TwoLoop {
        let t = cfg.two_loop.as_ref().expect("two_loop mode is checked at parse time");
        let opts = SweepOptions {
            inner_iterations: t.inner_iterations,
            step0: t.step0,
            warm_start: t.warm_start,
            seed: cfg.run.seed,
        };
        let reports = two_loop_sweep(&built.problem, &t.etas, &opts).map_err(runtime)?;
        let path = out.join("sweep.csv");
        write_sweep_csv(&path, &reports, built.reference.as_deref()).map_err(runtime)?;
        files.push(path);
        let summary = format!("two-loop sweep over {} values of eta", reports.len());
        return Ok(RunSummary { files, summary });
    }

    let opts = run_options(cfg, &built, cfg.resolved_checkpoints());
    let mut snapshots = Vec::new();
    let mut on_checkpoint = |s: &SolverState| -> rbirg_core::Result<()> {
        if let (Some(di), true) = (&built.deblur, cfg.run.snapshots.contains(&s.k)) {
            let path = out.join(format!("snapshot_k{}.pgm", s.k));
            write_pgm(&di.to_image(&s.x_bar)?, &path)?;
            snapshots.push(path);
        }
        Ok(())
    };
    let result = match cfg.mode {
        Mode::Rbirg => run_rbirg_with(&built.problem, &schedule, &opts, &mut on_checkpoint),
        Mode::FullIrg => full_irg_with(&built.problem, &schedule, &opts, &mut on_checkpoint),
        Mode::TwoLoop => unreachable!(),
    }
    .map_err(runtime)?;
    files.extend(snapshots);

    let mut csv = result.trace.to_csv();
    csv.push_str(&fit_footer(&result, built.f_star, cfg.run.iterations));
    let trace = out.join("trace.csv");
    write_atomic(&trace, csv.as_bytes()).map_err(runtime)?;
    files.push(trace);

    let last = result.trace.rows.last().expect("the final iteration is always recorded");
    let mut summary = format!(
        "k={} f(x_bar)={} g(x_bar)={}",
        last.k,
        fmt_f64(last.f_xbar),
        fmt_f64(last.g_xbar)
    );
    if let Some(d) = last.dist_ref {
        let _ = write!(summary, " dist_ref={}", fmt_f64(d));
    }
    Ok(RunSummary { files, summary })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub mode: &'static str,
    pub oracle_calls: u64,
    pub final_distance: Option<f64>,
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_CSV_HEADER}\n");
    for r in rows {
        let d = r.final_distance.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(out, "{},{},{}", r.mode, r.oracle_calls, d);
    }
    out
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Runs RB-IRG and the two-loop sweep on the same instance and writes
/// `comparison.csv`.
pub fn compare_modes(exp: &Experiment) -> Result<(Vec<ComparisonRow>, PathBuf), CliError> {
    let mut cfg = exp.config.clone();
    let t = cfg
        .two_loop
        .clone()
        .ok_or_else(|| CliError::config("two_loop.etas", "missing (compare needs a two_loop section)"))?;
    cfg.mode = Mode::Rbirg;
    let exp = Experiment {
        config: cfg,
        base_dir: exp.base_dir.clone(),
    };
    let cfg = &exp.config;
    let built = build_problem(&exp)?;
    let schedule = build_schedule(cfg, &built.problem)?;
    let report = validation_report(cfg, &built.problem, &schedule)?;
    let out = exp.output_dir();
    create_dir(&out)?;
    write_atomic(&out.join("validation.txt"), report.to_string().as_bytes()).map_err(runtime)?;
    require_valid(&report)?;

    let opts = run_options(cfg, &built, vec![cfg.run.iterations]);
    let result = run_rbirg_with(&built.problem, &schedule, &opts, |_| Ok(())).map_err(runtime)?;
    let sweep = two_loop_sweep(
        &built.problem,
        &t.etas,
        &SweepOptions {
            inner_iterations: t.inner_iterations,
            step0: t.step0,
            warm_start: t.warm_start,
            seed: cfg.run.seed,
        },
    )
    .map_err(runtime)?;
    let reference = built.reference.as_deref();
    let rows = vec![
        ComparisonRow {
            mode: "rbirg",
            oracle_calls: result.trace.oracle_calls,
            final_distance: reference.map(|r| distance(&result.state.x_bar, r)),
        },
        ComparisonRow {
            mode: "two_loop",
            oracle_calls: 2 * sweep_iterations(&sweep),
            final_distance: reference.map(|r| distance(&sweep.last().expect("sweep is nonempty").x_eta, r)),
        },
    ];
    let path = out.join("comparison.csv");
    write_atomic(&path, comparison_csv(&rows).as_bytes()).map_err(runtime)?;
    Ok((rows, path))
}
