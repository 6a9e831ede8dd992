//! The randomized block-coordinate iterative regularized subgradient scheme.
//!
//! Each iteration samples one block `i_k`, takes a projected step on that
//! block along `∇̃_i f(x_k) + η_k ∇̃_i g(x_k)` with step `γ_k`, leaves the
//! other blocks untouched, and folds `x_{k+1}` into the weighted average
//!
//! ```text
//! S_{k+1} = S_k + γ_{k+1}^r,   x̄_{k+1} = (S_k x̄_k + γ_{k+1}^r x_{k+1}) / S_{k+1}
//! ```
//!
//! starting from `S_0 = γ_0^r`, `x̄_0 = x_0`. Convergence guarantees are
//! established for uniform block sampling; non-uniform probabilities are
//! accepted but carry no such guarantee.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::BlockStructure;
use crate::error::{check_dim, Error, Result};
use crate::io::{fmt_f64, write_atomic};
use crate::problems::{BilevelProblem, BlockEvaluator};
use crate::schedule::StepSchedule;

/// Categorical block sampler driven by a seeded ChaCha8 stream.
///
/// Draws use inverse-CDF lookup on a uniform `f64` in `[0, 1)`. ChaCha8 is a
/// counter-based generator with a fixed, platform-independent output stream,
/// so equal seeds replay equal block sequences everywhere.
#[derive(Debug, Clone)]
pub struct BlockSampler {
    probabilities: Vec<f64>,
    cdf: Vec<f64>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl BlockSampler {
    pub fn new(probabilities: Vec<f64>, seed: u64) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidArgument(
                "sampler needs at least one block".into(),
            ));
        }
        if let Some(p) = probabilities.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "block probabilities must be positive, got {p}"
            )));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "block probabilities must sum to 1, got {total}"
            )));
        }
        let mut cdf = Vec::with_capacity(probabilities.len());
        let mut acc = 0.0;
        for p in &probabilities {
            acc += p;
            cdf.push(acc);
        }
        *cdf.last_mut().expect("nonempty") = 1.0;
        Ok(Self {
            probabilities,
            cdf,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn uniform(d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument(
                "sampler needs at least one block".into(),
            ));
        }
        Self::new(vec![1.0 / d as f64; d], seed)
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn block_count(&self) -> usize {
        self.probabilities.len()
    }

    /// Draws a zero-based block index.
    pub fn sample(&mut self) -> usize {
        let u: f64 = self.rng.random();
        self.cdf
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cdf.len() - 1)
    }
}

/// Iterate, running average, weight accumulator and sampler.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub x: Vec<f64>,
    pub x_bar: Vec<f64>,
    /// `S_k = Σ_{t ≤ k} γ_t^r`.
    pub weight_sum: f64,
    pub k: u64,
    pub sampler: BlockSampler,
}

impl SolverState {
    /// Starts at `x0` projected onto the feasible set.
    pub fn new(
        problem: &BilevelProblem,
        schedule: &StepSchedule,
        x0: &[f64],
        sampler: BlockSampler,
    ) -> Result<Self> {
        check_dim(problem.dim(), x0.len())?;
        check_dim(problem.blocks().count(), sampler.block_count())?;
        let mut x = x0.to_vec();
        problem.set().project_in_place(&mut x)?;
        Ok(Self {
            x_bar: x.clone(),
            x,
            weight_sum: schedule.weight(0),
            k: 0,
            sampler,
        })
    }
}

/// Per-run scratch buffers and the stateful block evaluators.
pub(crate) struct StepKernel<'p> {
    inner: Box<dyn BlockEvaluator + 'p>,
    outer: Box<dyn BlockEvaluator + 'p>,
    grad_f: Vec<f64>,
    grad_g: Vec<f64>,
    block: Vec<f64>,
    old: Vec<f64>,
}

impl<'p> StepKernel<'p> {
    pub(crate) fn new(problem: &'p BilevelProblem, x: &[f64]) -> Result<Self> {
        let mut inner = problem.inner().block_evaluator();
        let mut outer = problem.outer().block_evaluator();
        inner.reset(x)?;
        outer.reset(x)?;
        let cap = problem.blocks().sizes().iter().copied().max().unwrap_or(0);
        Ok(Self {
            inner,
            outer,
            grad_f: vec![0.0; cap],
            grad_g: vec![0.0; cap],
            block: vec![0.0; cap],
            old: vec![0.0; cap],
        })
    }

    /// Projected regularized step on `block` of `x`, committed in place.
    ///
    /// On error `x` and the evaluators are left untouched.
    pub(crate) fn update_block(
        &mut self,
        problem: &BilevelProblem,
        x: &mut [f64],
        block: usize,
        gamma: f64,
        eta: f64,
    ) -> Result<()> {
        let range = problem.blocks().range(block);
        let len = range.len();
        let (gf, gg) = (&mut self.grad_f[..len], &mut self.grad_g[..len]);
        self.inner.block_subgrad(x, range.clone(), gf)?;
        self.outer.block_subgrad(x, range.clone(), gg)?;
        let next = &mut self.block[..len];
        for (((n, xi), f), g) in next.iter_mut().zip(&x[range.clone()]).zip(gf.iter()).zip(gg.iter()) {
            *n = xi - gamma * (f + eta * g);
        }
        problem.set().sets()[block].project_in_place(next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle(format!(
                "step on block {block} produced non-finite values"
            )));
        }
        let old = &mut self.old[..len];
        old.copy_from_slice(&x[range.clone()]);
        x[range.clone()].copy_from_slice(next);
        self.inner.block_updated(x, range.clone(), old);
        self.outer.block_updated(x, range, old);
        Ok(())
    }
}

impl StepKernel<'_> {
    /// Full-vector step: every block moves along the subgradient taken at
    /// the current `x`, then each block is projected onto its own set.
    pub(crate) fn update_all(
        &mut self,
        problem: &BilevelProblem,
        x: &mut [f64],
        gamma: f64,
        eta: f64,
    ) -> Result<()> {
        let n = x.len();
        for buf in [&mut self.grad_f, &mut self.grad_g, &mut self.block, &mut self.old] {
            buf.resize(n.max(buf.len()), 0.0);
        }
        let (gf, gg) = (&mut self.grad_f[..n], &mut self.grad_g[..n]);
        self.inner.block_subgrad(x, 0..n, gf)?;
        self.outer.block_subgrad(x, 0..n, gg)?;
        let next = &mut self.block[..n];
        for (((v, xi), f), g) in next.iter_mut().zip(x.iter()).zip(gf.iter()).zip(gg.iter()) {
            *v = xi - gamma * (f + eta * g);
        }
        problem.set().project_in_place(next)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Oracle("full step produced non-finite values".into()));
        }
        let old = &mut self.old[..n];
        old.copy_from_slice(x);
        x.copy_from_slice(next);
        self.inner.block_updated(x, 0..n, old);
        self.outer.block_updated(x, 0..n, old);
        Ok(())
    }
}

/// Folds `x_{k+1}` into the running average with weight `γ_{k+1}^r`.
pub(crate) fn accumulate_average(
    x_bar: &mut [f64],
    weight_sum: &mut f64,
    x: &[f64],
    weight: f64,
) {
    let prev = *weight_sum;
    let next = prev + weight;
    for (xb, xi) in x_bar.iter_mut().zip(x) {
        *xb = (prev * *xb + weight * xi) / next;
    }
    *weight_sum = next;
}

/// A solver run: problem, schedule, state and the evaluators that persist
/// across steps.
pub struct Rbirg<'p> {
    problem: &'p BilevelProblem,
    schedule: StepSchedule,
    state: SolverState,
    kernel: StepKernel<'p>,
}

impl<'p> Rbirg<'p> {
    /// Refuses schedules that fail validation against the problem's
    /// modulus and the sampler's probabilities.
    pub fn new(
        problem: &'p BilevelProblem,
        schedule: StepSchedule,
        state: SolverState,
    ) -> Result<Self> {
        schedule
            .validate_with_probabilities(problem.mu(), state.sampler.probabilities())
            .into_result()?;
        check_dim(problem.dim(), state.x.len())?;
        check_dim(problem.dim(), state.x_bar.len())?;
        let kernel = StepKernel::new(problem, &state.x)?;
        Ok(Self {
            problem,
            schedule,
            state,
            kernel,
        })
    }

    pub fn state(&self) -> &SolverState {
        &self.state
    }

    pub fn into_state(self) -> SolverState {
        self.state
    }

    /// Performs iteration `k → k+1` and returns the sampled block.
    pub fn step(&mut self) -> Result<usize> {
        let k = self.state.k;
        let mut sampler = self.state.sampler.clone();
        let block = sampler.sample();
        let v = self.schedule.eval(k);
        self.kernel
            .update_block(self.problem, &mut self.state.x, block, v.gamma, v.eta)?;
        self.state.sampler = sampler;
        accumulate_average(
            &mut self.state.x_bar,
            &mut self.state.weight_sum,
            &self.state.x,
            self.schedule.weight(k + 1),
        );
        self.state.k = k + 1;
        Ok(block)
    }
}

/// One iteration on a standalone state, building fresh evaluators.
///
/// Long runs should use [`Rbirg`] or [`run_rbirg`], which keep evaluator
/// caches (such as a least-squares residual) alive between steps.
pub fn rbirg_step(
    state: &mut SolverState,
    problem: &BilevelProblem,
    schedule: &StepSchedule,
) -> Result<usize> {
    let mut solver = Rbirg::new(problem, *schedule, state.clone())?;
    let block = solver.step()?;
    *state = solver.into_state();
    Ok(block)
}

/// Options for [`run_rbirg`].
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub iterations: u64,
    pub seed: u64,
    /// Iteration counts at which a trace row is recorded; values above
    /// `iterations` are ignored. Empty means [`log_checkpoints`].
    pub checkpoints: Vec<u64>,
    /// Starting point; the projected zero vector when absent.
    pub x0: Option<Vec<f64>>,
    /// Block probabilities; uniform when absent.
    pub probabilities: Option<Vec<f64>>,
    /// Reference solution for the `dist_ref` column.
    pub reference: Option<Vec<f64>>,
}

impl RunOptions {
    pub fn new(iterations: u64, seed: u64) -> Self {
        Self {
            iterations,
            seed,
            ..Self::default()
        }
    }

    pub fn checkpoints(mut self, checkpoints: impl Into<Vec<u64>>) -> Self {
        self.checkpoints = checkpoints.into();
        self
    }

    pub fn x0(mut self, x0: Vec<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn probabilities(mut self, p: Vec<f64>) -> Self {
        self.probabilities = Some(p);
        self
    }

    pub fn reference(mut self, r: Vec<f64>) -> Self {
        self.reference = Some(r);
        self
    }

    pub(crate) fn resolved_checkpoints(&self) -> Vec<u64> {
        let mut cps: Vec<u64> = if self.checkpoints.is_empty() {
            log_checkpoints(self.iterations)
        } else {
            self.checkpoints
                .iter()
                .copied()
                .filter(|&k| k <= self.iterations)
                .collect()
        };
        cps.sort_unstable();
        cps.dedup();
        cps
    }

    pub(crate) fn start_point(&self, problem: &BilevelProblem) -> Result<Vec<f64>> {
        match &self.x0 {
            Some(x0) => {
                check_dim(problem.dim(), x0.len())?;
                Ok(x0.clone())
            }
            None => Ok(vec![0.0; problem.dim()]),
        }
    }

    pub(crate) fn sampler(&self, blocks: &BlockStructure) -> Result<BlockSampler> {
        match &self.probabilities {
            Some(p) => {
                check_dim(blocks.count(), p.len())?;
                BlockSampler::new(p.clone(), self.seed)
            }
            None => BlockSampler::uniform(blocks.count(), self.seed),
        }
    }
}

/// `{1, 2, 5} × 10^j` up to `n`, plus `n` itself.
pub fn log_checkpoints(n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut scale = 1u64;
    'outer: loop {
        for m in [1, 2, 5] {
            let k = m * scale;
            if k > n {
                break 'outer;
            }
            out.push(k);
        }
        scale = match scale.checked_mul(10) {
            Some(s) => s,
            None => break,
        };
    }
    if n > 0 && out.last() != Some(&n) {
        out.push(n);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: u64,
    pub f_xbar: f64,
    pub g_xbar: f64,
    pub f_x: f64,
    pub g_x: f64,
    pub dist_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    /// Block subgradient evaluations performed by the iteration itself.
    pub oracle_calls: u64,
}

pub const TRACE_CSV_HEADER: &str = "k,f_xbar,g_xbar,f_x,g_x,dist_ref";

impl RunTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let dist = r.dist_ref.map(fmt_f64).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.k,
                fmt_f64(r.f_xbar),
                fmt_f64(r.g_xbar),
                fmt_f64(r.f_x),
                fmt_f64(r.g_x),
                dist
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_csv().as_bytes())
    }

    /// Bitwise comparison of every recorded value.
    pub fn bitwise_eq(&self, other: &RunTrace) -> bool {
        fn bits(v: f64) -> u64 {
            v.to_bits()
        }
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| {
                a.k == b.k
                    && bits(a.f_xbar) == bits(b.f_xbar)
                    && bits(a.g_xbar) == bits(b.g_xbar)
                    && bits(a.f_x) == bits(b.f_x)
                    && bits(a.g_x) == bits(b.g_x)
                    && a.dist_ref.map(bits) == b.dist_ref.map(bits)
            })
    }
}

/// Trace plus the final solver state.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub trace: RunTrace,
    pub state: SolverState,
}

pub(crate) fn trace_row(
    problem: &BilevelProblem,
    k: u64,
    x: &[f64],
    x_bar: &[f64],
    reference: Option<&[f64]>,
) -> Result<TraceRow> {
    let dist_ref = reference.map(|r| {
        x_bar
            .iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    });
    Ok(TraceRow {
        k,
        f_xbar: problem.inner().value(x_bar)?,
        g_xbar: problem.outer().value(x_bar)?,
        f_x: problem.inner().value(x)?,
        g_x: problem.outer().value(x)?,
        dist_ref,
    })
}

/// Runs `iterations` steps from the options' start point.
pub fn run_rbirg(
    problem: &BilevelProblem,
    schedule: &StepSchedule,
    options: &RunOptions,
) -> Result<RunResult> {
    run_rbirg_with(problem, schedule, options, |_| Ok(()))
}

/// Like [`run_rbirg`], calling `on_checkpoint` with the state at every
/// checkpoint after its trace row is recorded.
pub fn run_rbirg_with(
    problem: &BilevelProblem,
    schedule: &StepSchedule,
    options: &RunOptions,
    mut on_checkpoint: impl FnMut(&SolverState) -> Result<()>,
) -> Result<RunResult> {
    if options.iterations == 0 {
        return Err(Error::InvalidArgument("iteration count must be >= 1".into()));
    }
    if let Some(r) = &options.reference {
        check_dim(problem.dim(), r.len())?;
    }
    let sampler = options.sampler(problem.blocks())?;
    let x0 = options.start_point(problem)?;
    let state = SolverState::new(problem, schedule, &x0, sampler)?;
    let mut solver = Rbirg::new(problem, *schedule, state)?;
    let checkpoints = options.resolved_checkpoints();
    let reference = options.reference.as_deref();

    let mut trace = RunTrace::default();
    let mut next_cp = checkpoints.iter().peekable();
    loop {
        let k = solver.state().k;
        if next_cp.peek() == Some(&&k) {
            next_cp.next();
            let s = solver.state();
            trace
                .rows
                .push(trace_row(problem, k, &s.x, &s.x_bar, reference)?);
            on_checkpoint(s)?;
        }
        if k == options.iterations {
            break;
        }
        solver.step()?;
        trace.oracle_calls += 2;
    }
    Ok(RunResult {
        trace,
        state: solver.into_state(),
    })
}

/// Explicit weighted mean `Σ_t λ_{t,k} x_t` with `λ_{t,k} = w_t / Σ_j w_j`.
///
/// Each history entry is `(w_t, x_t)` with `w_t = γ_t^r`.
pub fn recompute_average(history: &[(f64, Vec<f64>)]) -> Result<Vec<f64>> {
    let (_, first) = history
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty iterate history".into()))?;
    let n = first.len();
    let total: f64 = history.iter().map(|(w, _)| w).sum();
    let mut out = vec![0.0; n];
    for (w, x) in history {
        check_dim(n, x.len())?;
        for (o, xi) in out.iter_mut().zip(x) {
            *o += w * xi;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    Ok(out)
}
