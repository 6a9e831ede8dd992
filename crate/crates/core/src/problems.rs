//! Subgradient oracles and concrete bilevel problem instances.
//!
//! A [`BilevelProblem`] pairs an inner objective `f` (whose minimizers form the
//! constraint set) with a strongly convex outer objective `g`, over a block
//! product set. Oracles return a value and one element of the subdifferential.

use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::blocks::{BlockStructure, FeasibleSet};
use crate::error::{check_dim, Error, Result};

/// Largest column count accepted by [`min_norm_oracle`].
pub const MIN_NORM_MAX_DIM: usize = 2000;

/// Updates between full residual recomputations in the least-squares evaluator.
pub const RESIDUAL_REFRESH_INTERVAL: u64 = 10_000;

/// A convex function with a subgradient oracle.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Value and one subgradient at `x`.
    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.value_subgrad(x)?.0)
    }

    /// A stateful evaluator for block-restricted subgradients.
    ///
    /// The default evaluates the full subgradient and slices out the block.
    fn block_evaluator(&self) -> Box<dyn BlockEvaluator + '_> {
        Box::new(SliceEvaluator { objective: self })
    }
}

/// Block-restricted subgradient evaluation owned by a single solver run.
///
/// The solver calls [`reset`](Self::reset) with the starting point, then for
/// each step asks for one block of the subgradient and, once the step has been
/// committed, reports the change through [`block_updated`](Self::block_updated).
pub trait BlockEvaluator {
    fn reset(&mut self, x: &[f64]) -> Result<()>;

    /// Writes the `block` slice of a subgradient at `x` into `out`.
    fn block_subgrad(&mut self, x: &[f64], block: Range<usize>, out: &mut [f64]) -> Result<()>;

    /// `x_new` is the full iterate after the update; `old_block` holds the
    /// previous values of `x_new[block]`.
    fn block_updated(&mut self, x_new: &[f64], block: Range<usize>, old_block: &[f64]);
}

struct SliceEvaluator<'a, O: ?Sized> {
    objective: &'a O,
}

impl<O: Objective + ?Sized> BlockEvaluator for SliceEvaluator<'_, O> {
    fn reset(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.objective.dim(), x.len())
    }

    fn block_subgrad(&mut self, x: &[f64], block: Range<usize>, out: &mut [f64]) -> Result<()> {
        let (_, s) = self.objective.value_subgrad(x)?;
        check_dim(x.len(), s.len())?;
        out.copy_from_slice(&s[block]);
        ensure_finite(out)
    }

    fn block_updated(&mut self, _x_new: &[f64], _block: Range<usize>, _old_block: &[f64]) {}
}

fn ensure_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Oracle("subgradient has non-finite entries".into()))
    }
}

fn ensure_finite_value(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Oracle(format!("objective value is not finite ({v})")))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Least squares
// ---------------------------------------------------------------------------

/// `f(x) = ‖Ax − b‖²` with a dense, possibly rank-deficient `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresInstance {
    a: DMatrix<f64>,
    b: DVector<f64>,
    sparse: Option<SparseColumns>,
}

/// Compressed nonzero pattern of `A`'s columns, kept when `A` is sparse
/// enough (blur operators) for column work to skip the zeros.
#[derive(Debug, Clone, PartialEq)]
struct SparseColumns {
    starts: Vec<usize>,
    rows: Vec<usize>,
    values: Vec<f64>,
}

impl SparseColumns {
    const MAX_DENSITY: f64 = 0.25;

    fn build(a: &DMatrix<f64>) -> Option<Self> {
        let nnz = a.iter().filter(|v| **v != 0.0).count();
        if nnz as f64 > Self::MAX_DENSITY * a.len() as f64 {
            return None;
        }
        let mut starts = Vec::with_capacity(a.ncols() + 1);
        let mut rows = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for j in 0..a.ncols() {
            starts.push(rows.len());
            for (i, &v) in a.column(j).iter().enumerate() {
                if v != 0.0 {
                    rows.push(i);
                    values.push(v);
                }
            }
        }
        starts.push(rows.len());
        Some(Self {
            starts,
            rows,
            values,
        })
    }

    fn column(&self, j: usize) -> (&[usize], &[f64]) {
        let r = self.starts[j]..self.starts[j + 1];
        (&self.rows[r.clone()], &self.values[r])
    }
}

impl LeastSquaresInstance {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim(a.nrows(), b.len())?;
        if a.ncols() == 0 || a.nrows() == 0 {
            return Err(Error::InvalidArgument("matrix must be nonempty".into()));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "matrix and right-hand side must be finite".into(),
            ));
        }
        let sparse = SparseColumns::build(&a);
        Ok(Self { a, b, sparse })
    }

    /// Builds from row-major nested rows.
    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        for r in rows {
            check_dim(n, r.len())?;
        }
        let a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
        Self::new(a, DVector::from_column_slice(b))
    }

    /// Loads `A` from rows of whitespace-separated decimals and `b` from a
    /// whitespace-separated list.
    pub fn from_text_files(matrix: &Path, rhs: &Path) -> Result<Self> {
        let rows = crate::io::read_matrix_text(matrix)?;
        let b = crate::io::read_vector_text(rhs)?;
        Self::from_rows(&rows, &b)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    pub fn residual(&self, x: &[f64]) -> Result<DVector<f64>> {
        check_dim(self.cols(), x.len())?;
        let x = DVector::from_column_slice(x);
        Ok(&self.a * x - &self.b)
    }
}

/// Value `‖Ax − b‖²` and gradient `2Aᵀ(Ax − b)`.
pub fn least_squares_value_subgrad(
    inst: &LeastSquaresInstance,
    x: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let r = inst.residual(x)?;
    let grad = inst.a.tr_mul(&r) * 2.0;
    Ok((r.norm_squared(), grad.as_slice().to_vec()))
}

impl Objective for LeastSquaresInstance {
    fn dim(&self) -> usize {
        self.cols()
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        least_squares_value_subgrad(self, x)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.residual(x)?.norm_squared())
    }

    fn block_evaluator(&self) -> Box<dyn BlockEvaluator + '_> {
        Box::new(ResidualEvaluator {
            inst: self,
            residual: vec![0.0; self.rows()],
            updates: 0,
        })
    }
}

/// Maintains `r = Ax − b` so one block of `2Aᵀr` costs `O(m·n_i)`.
struct ResidualEvaluator<'a> {
    inst: &'a LeastSquaresInstance,
    residual: Vec<f64>,
    updates: u64,
}

impl ResidualEvaluator<'_> {
    /// `a_jᵀ r`.
    fn column_dot(&self, j: usize) -> f64 {
        match &self.inst.sparse {
            Some(sp) => {
                let (rows, vals) = sp.column(j);
                rows.iter().zip(vals).map(|(&i, v)| v * self.residual[i]).sum()
            }
            None => {
                let m = self.inst.rows();
                dot(&self.inst.a.as_slice()[j * m..(j + 1) * m], &self.residual)
            }
        }
    }

    /// `r += t·a_j`.
    fn add_column(&mut self, j: usize, t: f64) {
        match &self.inst.sparse {
            Some(sp) => {
                let (rows, vals) = sp.column(j);
                for (&i, v) in rows.iter().zip(vals) {
                    self.residual[i] += v * t;
                }
            }
            None => {
                let m = self.inst.rows();
                let col = &self.inst.a.as_slice()[j * m..(j + 1) * m];
                for (r, a) in self.residual.iter_mut().zip(col) {
                    *r += a * t;
                }
            }
        }
    }

    fn recompute(&mut self, x: &[f64]) {
        self.residual.copy_from_slice(self.inst.b.as_slice());
        for v in self.residual.iter_mut() {
            *v = -*v;
        }
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                self.add_column(j, xj);
            }
        }
    }
}

impl BlockEvaluator for ResidualEvaluator<'_> {
    fn reset(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.inst.cols(), x.len())?;
        self.recompute(x);
        self.updates = 0;
        Ok(())
    }

    fn block_subgrad(&mut self, x: &[f64], block: Range<usize>, out: &mut [f64]) -> Result<()> {
        check_dim(self.inst.cols(), x.len())?;
        check_dim(block.len(), out.len())?;
        for (o, j) in out.iter_mut().zip(block) {
            *o = 2.0 * self.column_dot(j);
        }
        ensure_finite(out)
    }

    fn block_updated(&mut self, x_new: &[f64], block: Range<usize>, old_block: &[f64]) {
        self.updates += 1;
        if self.updates.is_multiple_of(RESIDUAL_REFRESH_INTERVAL) {
            self.recompute(x_new);
            return;
        }
        for (j, old) in block.zip(old_block) {
            let delta = x_new[j] - old;
            if delta != 0.0 {
                self.add_column(j, delta);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Outer objectives
// ---------------------------------------------------------------------------

/// Separable objectives whose block gradient only reads the block itself.
struct SeparableEvaluator<'a, F> {
    dim: usize,
    grad: &'a F,
}

impl<F> BlockEvaluator for SeparableEvaluator<'_, F>
where
    F: Fn(usize, f64) -> f64,
{
    fn reset(&mut self, x: &[f64]) -> Result<()> {
        check_dim(self.dim, x.len())
    }

    fn block_subgrad(&mut self, x: &[f64], block: Range<usize>, out: &mut [f64]) -> Result<()> {
        for (o, j) in out.iter_mut().zip(block) {
            *o = (self.grad)(j, x[j]);
        }
        ensure_finite(out)
    }

    fn block_updated(&mut self, _x_new: &[f64], _block: Range<usize>, _old_block: &[f64]) {}
}

/// `g(x) = ‖x‖²`, strongly convex with modulus 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquaredNorm {
    dim: usize,
}

impl SquaredNorm {
    pub const MU: f64 = 2.0;

    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    fn grad_entry(_j: usize, x: f64) -> f64 {
        2.0 * x
    }
}

/// Value `‖x‖²` and gradient `2x`.
pub fn sq_norm_value_subgrad(x: &[f64]) -> (f64, Vec<f64>) {
    (dot(x, x), x.iter().map(|v| 2.0 * v).collect())
}

impl Objective for SquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim, x.len())?;
        let (v, g) = sq_norm_value_subgrad(x);
        Ok((ensure_finite_value(v)?, g))
    }

    fn block_evaluator(&self) -> Box<dyn BlockEvaluator + '_> {
        const GRAD: fn(usize, f64) -> f64 = SquaredNorm::grad_entry;
        Box::new(SeparableEvaluator {
            dim: self.dim,
            grad: &GRAD,
        })
    }
}

/// `g(x) = (μ/2)‖x − c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticOuter {
    center: Vec<f64>,
    mu: f64,
}

impl QuadraticOuter {
    pub fn new(center: Vec<f64>, mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "strong convexity modulus must be positive, got {mu}"
            )));
        }
        Ok(Self { center, mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }
}

/// Outer oracle for `g(x) = (μ/2)‖x − c‖²`.
pub fn strongly_convex_quadratic_outer(c: Vec<f64>, mu: f64) -> Result<QuadraticOuter> {
    QuadraticOuter::new(c, mu)
}

impl Objective for QuadraticOuter {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.center.len(), x.len())?;
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let value = 0.5 * self.mu * dot(&diff, &diff);
        Ok((
            ensure_finite_value(value)?,
            diff.iter().map(|d| self.mu * d).collect(),
        ))
    }

    fn block_evaluator(&self) -> Box<dyn BlockEvaluator + '_> {
        struct Eval<'a>(&'a QuadraticOuter);
        impl BlockEvaluator for Eval<'_> {
            fn reset(&mut self, x: &[f64]) -> Result<()> {
                check_dim(self.0.center.len(), x.len())
            }
            fn block_subgrad(
                &mut self,
                x: &[f64],
                block: Range<usize>,
                out: &mut [f64],
            ) -> Result<()> {
                for (o, j) in out.iter_mut().zip(block) {
                    *o = self.0.mu * (x[j] - self.0.center[j]);
                }
                ensure_finite(out)
            }
            fn block_updated(&mut self, _: &[f64], _: Range<usize>, _: &[f64]) {}
        }
        Box::new(Eval(self))
    }
}

// ---------------------------------------------------------------------------
// Penalty reformulation of constrained problems
// ---------------------------------------------------------------------------

/// A convex scalar constraint `h(x) ≤ 0` with a subgradient oracle.
pub trait Constraint: Send + Sync {
    fn dim(&self) -> usize;
    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// `h(x) = aᵀx + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineConstraint {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

impl AffineConstraint {
    pub fn new(coeffs: Vec<f64>, offset: f64) -> Self {
        Self { coeffs, offset }
    }
}

impl Constraint for AffineConstraint {
    fn dim(&self) -> usize {
        self.coeffs.len()
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.coeffs.len(), x.len())?;
        Ok((dot(&self.coeffs, x) + self.offset, self.coeffs.clone()))
    }
}

/// `h(x) = ‖x − c‖ − radius`; nondifferentiable at the center.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Constraint for BallConstraint {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.center.len(), x.len())?;
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let norm = dot(&diff, &diff).sqrt();
        let sub = if norm > 0.0 {
            diff.iter().map(|d| d / norm).collect()
        } else {
            vec![0.0; diff.len()]
        };
        Ok((norm - self.radius, sub))
    }
}

type ConstraintFn = dyn Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync;

/// Wraps a closure returning `(h(x), subgradient)`.
pub struct FnConstraint {
    dim: usize,
    f: Box<ConstraintFn>,
}

impl FnConstraint {
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> Result<(f64, Vec<f64>)> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            f: Box::new(f),
        }
    }
}

impl Constraint for FnConstraint {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dim(self.dim, x.len())?;
        (self.f)(x)
    }
}

/// `f(x) = Σ_i max{0, h_i(x)}`.
///
/// The reformulation is exact only when `{x : h_i(x) ≤ 0 ∀i}` is nonempty;
/// that is not checked here.
pub struct PenaltyInstance {
    dim: usize,
    constraints: Vec<Box<dyn Constraint>>,
}

impl fmt::Debug for PenaltyInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PenaltyInstance")
            .field("dim", &self.dim)
            .field("constraints", &self.constraints.len())
            .finish()
    }
}

impl PenaltyInstance {
    pub fn new(dim: usize, constraints: Vec<Box<dyn Constraint>>) -> Result<Self> {
        if constraints.is_empty() {
            return Err(Error::InvalidArgument(
                "penalty instance needs at least one constraint".into(),
            ));
        }
        for c in &constraints {
            check_dim(dim, c.dim())?;
        }
        Ok(Self { dim, constraints })
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

/// Value `Σ max{0, h_i(x)}` and subgradient `Σ_{h_i(x) > 0} ∂h_i(x)`.
///
/// At `h_i(x) = 0` the term contributes the zero vector.
pub fn penalty_value_subgrad(inst: &PenaltyInstance, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim(inst.dim, x.len())?;
    let mut value = 0.0;
    let mut sub = vec![0.0; inst.dim];
    for c in &inst.constraints {
        let (h, s) = c.value_subgrad(x)?;
        if !h.is_finite() {
            return Err(Error::Oracle(format!("constraint value is not finite ({h})")));
        }
        if h > 0.0 {
            check_dim(inst.dim, s.len())?;
            value += h;
            for (acc, v) in sub.iter_mut().zip(&s) {
                *acc += v;
            }
        }
    }
    ensure_finite(&sub)?;
    Ok((value, sub))
}

impl Objective for PenaltyInstance {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_subgrad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        penalty_value_subgrad(self, x)
    }
}

// ---------------------------------------------------------------------------
// Bilevel problem
// ---------------------------------------------------------------------------

/// Known analysis constants, kept for reporting only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProblemBounds {
    pub subgrad_f: Option<f64>,
    pub subgrad_g: Option<f64>,
    pub set_radius: Option<f64>,
}

/// Minimize `g` over the minimizers of `f` on the block product set.
#[derive(Clone)]
pub struct BilevelProblem {
    inner: Arc<dyn Objective>,
    outer: Arc<dyn Objective>,
    mu: f64,
    set: FeasibleSet,
    pub bounds: ProblemBounds,
}

impl fmt::Debug for BilevelProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BilevelProblem")
            .field("dim", &self.dim())
            .field("mu", &self.mu)
            .field("set", &self.set)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl BilevelProblem {
    pub fn new(
        inner: Arc<dyn Objective>,
        outer: Arc<dyn Objective>,
        mu: f64,
        set: FeasibleSet,
    ) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "strong convexity modulus must be positive, got {mu}"
            )));
        }
        let n = set.blocks().dim();
        check_dim(n, inner.dim())?;
        check_dim(n, outer.dim())?;
        Ok(Self {
            inner,
            outer,
            mu,
            set,
            bounds: ProblemBounds::default(),
        })
    }

    /// Minimum-norm least squares: `f = ‖Ax − b‖²`, `g = ‖x‖²`, unconstrained blocks.
    pub fn min_norm_least_squares(
        inst: Arc<LeastSquaresInstance>,
        blocks: BlockStructure,
    ) -> Result<Self> {
        let n = inst.cols();
        Self::new(
            inst,
            Arc::new(SquaredNorm::new(n)),
            SquaredNorm::MU,
            FeasibleSet::free(blocks),
        )
    }

    pub fn with_bounds(mut self, bounds: ProblemBounds) -> Self {
        self.bounds = bounds;
        self
    }

    /// Same objectives and sets, re-partitioned into different blocks.
    ///
    /// Only valid when every block set is free; otherwise the per-block set
    /// descriptors would not line up with the new partition.
    pub fn with_free_blocks(&self, blocks: BlockStructure) -> Result<Self> {
        if self
            .set
            .sets()
            .iter()
            .any(|s| !matches!(s, crate::blocks::BlockSetSpec::Free { .. }))
        {
            return Err(Error::InvalidArgument(
                "re-partitioning requires unconstrained blocks".into(),
            ));
        }
        check_dim(self.dim(), blocks.dim())?;
        let mut p = self.clone();
        p.set = FeasibleSet::free(blocks);
        Ok(p)
    }

    pub fn inner(&self) -> &dyn Objective {
        self.inner.as_ref()
    }

    pub fn outer(&self) -> &dyn Objective {
        self.outer.as_ref()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn set(&self) -> &FeasibleSet {
        &self.set
    }

    pub fn blocks(&self) -> &BlockStructure {
        self.set.blocks()
    }

    pub fn dim(&self) -> usize {
        self.set.blocks().dim()
    }
}

// ---------------------------------------------------------------------------
// Dense minimum-norm oracle
// ---------------------------------------------------------------------------

/// SVD-based pseudo-inverse of a dense matrix, with its null-space basis.
///
/// `A` is zero-padded to at least `n` rows so the right singular vectors
/// always form a full basis of `ℝⁿ`.
#[derive(Debug, Clone)]
pub struct MinNormFactorization {
    rows: usize,
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    rank: usize,
}

impl MinNormFactorization {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if n > MIN_NORM_MAX_DIM {
            return Err(Error::SizeLimit {
                what: "columns",
                actual: n,
                limit: MIN_NORM_MAX_DIM,
            });
        }
        let p = m.max(n);
        let mut padded = DMatrix::zeros(p, n);
        padded.view_mut((0, 0), (m, n)).copy_from(a);
        let svd = padded.svd(true, true);
        let u = svd
            .u
            .ok_or_else(|| Error::Oracle("SVD did not produce U".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Oracle("SVD did not produce Vᵀ".into()))?;
        let singular = svd.singular_values;
        let smax = singular.iter().copied().fold(0.0, f64::max);
        let tol = p as f64 * f64::EPSILON * smax;
        let rank = singular.iter().filter(|&&s| s > tol).count();
        Ok(Self {
            rows: m,
            u,
            singular,
            v_t,
            rank,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn tolerance(&self) -> f64 {
        let smax = self.singular.iter().copied().fold(0.0, f64::max);
        self.u.nrows() as f64 * f64::EPSILON * smax
    }

    /// `A⁺b`.
    pub fn solve(&self, b: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim(self.rows, b.len())?;
        let tol = self.tolerance();
        let n = self.v_t.ncols();
        let mut x = vec![0.0; n];
        for (j, &s) in self.singular.iter().enumerate() {
            if s <= tol {
                continue;
            }
            let coef: f64 = (0..self.rows).map(|i| self.u[(i, j)] * b[i]).sum::<f64>() / s;
            for (xi, vji) in x.iter_mut().zip(self.v_t.row(j).iter()) {
                *xi += coef * vji;
            }
        }
        Ok(x)
    }

    /// Orthonormal basis of `null(A)`, one vector per entry.
    pub fn null_space_basis(&self) -> Vec<Vec<f64>> {
        let tol = self.tolerance();
        self.singular
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= tol)
            .map(|(j, _)| self.v_t.row(j).iter().copied().collect())
            .collect()
    }
}

/// Minimum-Euclidean-norm least-squares solution of `Ax ≈ b`.
pub fn min_norm_oracle(inst: &LeastSquaresInstance) -> Result<Vec<f64>> {
    MinNormFactorization::new(inst.matrix())?.solve(inst.rhs())
}
