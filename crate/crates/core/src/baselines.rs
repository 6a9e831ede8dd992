//! Reference schemes: the two-loop regularization sweep over `f + ηg` and
//! full-vector iterative regularization.

use std::path::Path;

use crate::error::{check_dim, Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::problems::BilevelProblem;
use crate::solver::{
    accumulate_average, trace_row, BlockSampler, RunOptions, RunResult, RunTrace, SolverState,
    StepKernel,
};
use crate::schedule::StepSchedule;

/// Decay exponent of the inner projected-subgradient steps.
pub const INNER_STEP_EXPONENT: f64 = 0.525;

/// Approximate minimizer of `f + ηg` over the feasible set.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedSolveReport {
    pub eta: f64,
    pub x_eta: Vec<f64>,
    pub inner_iterations: u64,
    /// `‖x_N − x_{N−1}‖` of the inner solve.
    pub final_step_norm: f64,
}

/// Randomized block projected subgradient on `f + ηg` with steps
/// `step0 / (k+1)^0.525`, starting from `x0` (zero when absent).
pub fn solve_regularized(
    problem: &BilevelProblem,
    eta: f64,
    inner_iterations: u64,
    step0: f64,
    seed: u64,
    x0: Option<&[f64]>,
) -> Result<RegularizedSolveReport> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "regularization parameter must be positive, got {eta}"
        )));
    }
    if !(step0 > 0.0 && step0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial inner step must be positive, got {step0}"
        )));
    }
    if inner_iterations == 0 {
        return Err(Error::InvalidArgument(
            "inner iteration count must be >= 1".into(),
        ));
    }
    let mut x = match x0 {
        Some(x0) => {
            check_dim(problem.dim(), x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; problem.dim()],
    };
    problem.set().project_in_place(&mut x)?;
    let mut sampler = BlockSampler::uniform(problem.blocks().count(), seed)?;
    let mut kernel = StepKernel::new(problem, &x)?;
    let mut prev = x.clone();
    for k in 0..inner_iterations {
        if k + 1 == inner_iterations {
            prev.copy_from_slice(&x);
        }
        let step = step0 * ((k + 1) as f64).powf(-INNER_STEP_EXPONENT);
        let block = sampler.sample();
        kernel.update_block(problem, &mut x, block, step, eta)?;
    }
    let final_step_norm = x
        .iter()
        .zip(&prev)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(RegularizedSolveReport {
        eta,
        x_eta: x,
        inner_iterations,
        final_step_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub inner_iterations: u64,
    /// Base inner step; the solve for `η` uses `step0 / max(1, η)`.
    pub step0: f64,
    pub warm_start: bool,
    pub seed: u64,
}

impl SweepOptions {
    pub fn new(inner_iterations: u64, step0: f64) -> Self {
        Self {
            inner_iterations,
            step0,
            warm_start: true,
            seed: 0,
        }
    }
}

/// Solves `f + ηg` for each `η` of a strictly decreasing positive sequence.
///
/// With `warm_start`, each solve starts from the previous solution.
pub fn two_loop_sweep(
    problem: &BilevelProblem,
    etas: &[f64],
    options: &SweepOptions,
) -> Result<Vec<RegularizedSolveReport>> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument("empty regularization sweep".into()));
    }
    if let Some(e) = etas.iter().find(|e| !(**e > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "sweep values must be positive, got {e}"
        )));
    }
    if etas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "sweep values must be strictly decreasing".into(),
        ));
    }
    let mut reports: Vec<RegularizedSolveReport> = Vec::with_capacity(etas.len());
    for &eta in etas {
        let start = match (options.warm_start, reports.last()) {
            (true, Some(prev)) => Some(prev.x_eta.as_slice()),
            _ => None,
        };
        let step0 = options.step0 / eta.max(1.0);
        let report = solve_regularized(
            problem,
            eta,
            options.inner_iterations,
            step0,
            options.seed,
            start,
        )?;
        reports.push(report);
    }
    Ok(reports)
}

/// Total inner iterations spent across a sweep.
pub fn sweep_iterations(reports: &[RegularizedSolveReport]) -> u64 {
    reports.iter().map(|r| r.inner_iterations).sum()
}

pub const SWEEP_CSV_HEADER: &str = "eta,dist_to_ref,inner_iterations,final_step_norm";

pub fn sweep_to_csv(reports: &[RegularizedSolveReport], reference: Option<&[f64]>) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in reports {
        let dist = reference
            .map(|z| fmt_f64(distance(&r.x_eta, z)))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(r.eta),
            dist,
            r.inner_iterations,
            fmt_f64(r.final_step_norm)
        ));
    }
    out
}

pub fn write_sweep_csv(
    path: &Path,
    reports: &[RegularizedSolveReport],
    reference: Option<&[f64]>,
) -> Result<()> {
    write_atomic(path, sweep_to_csv(reports, reference).as_bytes())
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Bound `(C_g/μ)·|η_prev/η_next − 1|` on the shift of the regularized
/// minimizer between consecutive regularization values.
pub fn path_shift_bound(subgrad_bound: f64, mu: f64, eta_prev: f64, eta_next: f64) -> f64 {
    subgrad_bound / mu * (eta_prev / eta_next - 1.0).abs()
}

/// Iterative regularization updating every block at each iteration.
///
/// Same schedule and averaging as [`run_rbirg`](crate::solver::run_rbirg);
/// with a single block the two produce bitwise-identical traces.
pub fn full_irg(
    problem: &BilevelProblem,
    schedule: &StepSchedule,
    options: &RunOptions,
) -> Result<RunResult> {
    full_irg_with(problem, schedule, options, |_| Ok(()))
}

/// Like [`full_irg`], calling `on_checkpoint` with the state at every
/// checkpoint after its trace row is recorded.
pub fn full_irg_with(
    problem: &BilevelProblem,
    schedule: &StepSchedule,
    options: &RunOptions,
    mut on_checkpoint: impl FnMut(&SolverState) -> Result<()>,
) -> Result<RunResult> {
    if options.iterations == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    schedule.validate(problem.mu(), 1).into_result()?;
    if let Some(r) = &options.reference {
        check_dim(problem.dim(), r.len())?;
    }
    let x0 = options.start_point(problem)?;
    // Record the sampler for the returned state even though no draws occur.
    let sampler = options.sampler(problem.blocks())?;
    let mut state = SolverState::new(problem, schedule, &x0, sampler)?;
    let mut kernel = StepKernel::new(problem, &state.x)?;
    let checkpoints = options.resolved_checkpoints();
    let reference = options.reference.as_deref();
    let mut next_cp = checkpoints.iter().peekable();
    let mut trace = RunTrace::default();
    loop {
        let k = state.k;
        if next_cp.peek() == Some(&&k) {
            next_cp.next();
            trace
                .rows
                .push(trace_row(problem, k, &state.x, &state.x_bar, reference)?);
            on_checkpoint(&state)?;
        }
        if k == options.iterations {
            break;
        }
        let v = schedule.eval(k);
        kernel.update_all(problem, &mut state.x, v.gamma, v.eta)?;
        accumulate_average(
            &mut state.x_bar,
            &mut state.weight_sum,
            &state.x,
            schedule.weight(k + 1),
        );
        state.k = k + 1;
        trace.oracle_calls += 2;
    }
    Ok(RunResult { trace, state })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::blocks::BlockStructure;
    use crate::problems::LeastSquaresInstance;

    fn problem(rows: &[Vec<f64>], b: &[f64]) -> BilevelProblem {
        let inst = Arc::new(LeastSquaresInstance::from_rows(rows, b).unwrap());
        BilevelProblem::min_norm_least_squares(inst, BlockStructure::single(b.len().max(rows[0].len())).unwrap())
            .unwrap()
    }

    #[test]
    fn regularized_closed_form() {
        // f = ‖x − (1,0)‖², g = ‖x‖²: x*_η = (1/(1+η), 0)
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0]);
        let r = solve_regularized(&p, 1.0, 100_000, 0.25, 0, None).unwrap();
        assert!((r.x_eta[0] - 0.5).abs() < 1e-3 && r.x_eta[1].abs() < 1e-3);
        let r = solve_regularized(&p, 1e3, 100_000, 0.5 / 1001.0, 0, None).unwrap();
        let norm = (r.x_eta[0].powi(2) + r.x_eta[1].powi(2)).sqrt();
        assert!(norm <= 2e-3, "norm {norm}");
    }

    #[test]
    fn regularized_rejects_bad_arguments() {
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[1.0, 0.0]);
        assert!(solve_regularized(&p, 0.0, 10, 0.1, 0, None).is_err());
        assert!(solve_regularized(&p, 1.0, 0, 0.1, 0, None).is_err());
        assert!(solve_regularized(&p, 1.0, 10, -0.1, 0, None).is_err());
    }

    #[test]
    fn sweep_distances_decrease() {
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1.0, 0.0]);
        let reps = two_loop_sweep(&p, &[1.0, 0.1, 0.01], &SweepOptions::new(20_000, 0.4)).unwrap();
        let d: Vec<f64> = reps.iter().map(|r| distance(&r.x_eta, &[1.0, 0.0])).collect();
        assert!(d[0] > d[1] && d[1] > d[2], "{d:?}");
        for (di, expected) in d.iter().zip([0.5, 1.0 / 11.0, 1.0 / 101.0]) {
            assert!((di - expected).abs() < 1e-6, "{di} vs {expected}");
        }
        assert_eq!(sweep_iterations(&reps), 60_000);
    }

    #[test]
    fn single_eta_sweep_matches_direct_solve() {
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1.0, 0.0]);
        let opts = SweepOptions::new(500, 0.4);
        let reps = two_loop_sweep(&p, &[0.5], &opts).unwrap();
        let direct = solve_regularized(&p, 0.5, 500, 0.4, 0, None).unwrap();
        assert_eq!(reps, vec![direct]);
    }

    #[test]
    fn sweep_rejects_bad_sequences() {
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1.0, 0.0]);
        let o = SweepOptions::new(10, 0.4);
        assert!(two_loop_sweep(&p, &[], &o).is_err());
        assert!(two_loop_sweep(&p, &[0.1, 1.0], &o).is_err());
        assert!(two_loop_sweep(&p, &[1.0, 1.0], &o).is_err());
        assert!(two_loop_sweep(&p, &[1.0, -1.0], &o).is_err());
    }

    #[test]
    fn full_irg_hand_step_and_zero_iterations() {
        let p = problem(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[0.0, 0.0]);
        let s = StepSchedule::with_delta(0.1, 0.1, 0.25, 0.5).unwrap();
        let res = full_irg(&p, &s, &RunOptions::new(1, 0).x0(vec![1.0, 0.0]).checkpoints(vec![1])).unwrap();
        assert!((res.state.x[0] - 0.78).abs() < 1e-15);
        assert!((res.trace.rows[0].f_x - 0.78f64.powi(2)).abs() < 1e-15);
        assert!(full_irg(&p, &s, &RunOptions::new(0, 0)).is_err());
    }

    #[test]
    fn sweep_csv_rows() {
        let reps = vec![RegularizedSolveReport {
            eta: 1.0,
            x_eta: vec![0.5, 0.0],
            inner_iterations: 10,
            final_step_norm: 0.0,
        }];
        let csv = sweep_to_csv(&reps, Some(&[1.0, 0.0]));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(
            lines[1],
            "1.0000000000000000e0,5.0000000000000000e-1,10,0.0000000000000000e0"
        );
        let csv = sweep_to_csv(&reps, None);
        assert!(csv.lines().nth(1).unwrap().starts_with("1.0000000000000000e0,,10,"));
    }
}
