//! Bilevel optimization by randomized block-coordinate iterative regularization.
//!
//! Solves problems of the form
//!
//! ```text
//! minimize g(x)  subject to  x ∈ argmin_{y ∈ X} f(y)
//! ```
//!
//! where `f` is convex (possibly nondifferentiable), `g` is `μ`-strongly
//! convex and `X = X_1 × … × X_d` is a product of closed convex blocks. The
//! solver runs a single loop: each iteration takes a projected subgradient
//! step on one randomly chosen block of `f + η_k g` with `η_k → 0`, and
//! reports a weighted average of the iterates.
//!
//! Modules:
//! - [`blocks`]: block partitions, per-block sets and projections
//! - [`schedule`]: step/regularization schedules and their validity conditions
//! - [`problems`]: subgradient oracles (least squares, penalty, quadratics)
//!   and the dense minimum-norm oracle
//! - [`solver`]: block sampler, iteration and run traces
//! - [`baselines`]: two-loop regularization sweep and full-vector iteration
//! - [`imaging`]: blur operators, PGM I/O and deblurring instances
//! - [`diagnostics`]: weighted block distance, feasibility gaps, rate fits

pub mod baselines;
pub mod blocks;
pub mod diagnostics;
pub mod error;
pub mod imaging;
pub mod io;
pub mod problems;
pub mod schedule;
pub mod solver;

pub use blocks::{project_block, BlockSetSpec, BlockStructure, FeasibleSet};
pub use error::{Error, Result};
pub use problems::{
    least_squares_value_subgrad, min_norm_oracle, penalty_value_subgrad, sq_norm_value_subgrad,
    strongly_convex_quadratic_outer, BilevelProblem, LeastSquaresInstance, Objective,
    PenaltyInstance,
};
pub use schedule::{StepSchedule, ValidationReport};
pub use solver::{
    rbirg_step, recompute_average, run_rbirg, BlockSampler, RunOptions, RunResult, RunTrace,
    SolverState,
};
