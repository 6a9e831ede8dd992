//! Block partitions of the decision vector and the per-block feasible sets.
//!
//! The feasible region is a Cartesian product `X = X_1 × … × X_d`, where each
//! factor acts on a contiguous run of coordinates. Every factor supported here
//! has a closed-form Euclidean projection, so a projected block step is exact
//! up to rounding.

use std::ops::Range;

use crate::error::{check_dim, Error, Result};

/// Absolute tolerance used by membership checks after projection.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// A partition of `n` coordinates into `d` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockStructure {
    pub fn new(block_sizes: &[usize]) -> Result<Self> {
        if block_sizes.is_empty() {
            return Err(Error::InvalidArgument(
                "block structure needs at least one block".into(),
            ));
        }
        if let Some(i) = block_sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!(
                "block {i} has size 0; every block needs at least one coordinate"
            )));
        }
        let mut offsets = Vec::with_capacity(block_sizes.len());
        let mut acc = 0;
        for &s in block_sizes {
            offsets.push(acc);
            acc += s;
        }
        Ok(Self {
            sizes: block_sizes.to_vec(),
            offsets,
            dim: acc,
        })
    }

    /// A single block covering all `n` coordinates.
    pub fn single(n: usize) -> Result<Self> {
        Self::new(&[n])
    }

    /// Splits `n` coordinates into `d` blocks of `ceil(n / d)` with a shorter tail block.
    pub fn split_even(n: usize, d: usize) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot split {n} coordinates into {d} blocks"
            )));
        }
        let chunk = n.div_ceil(d);
        let full = d - 1;
        if chunk * full >= n {
            return Err(Error::InvalidArgument(format!(
                "{n} coordinates cannot be split into {d} blocks of size {chunk} with a nonempty tail"
            )));
        }
        let mut sizes = vec![chunk; full];
        sizes.push(n - chunk * full);
        Self::new(&sizes)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Number of blocks `d`.
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Total dimension `n`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        let start = self.offsets[block];
        start..start + self.sizes[block]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.count()).map(|i| self.range(i))
    }
}

/// A closed convex set acting on one block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockSetSpec {
    Free { dim: usize },
    Nonnegative { dim: usize },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl BlockSetSpec {
    pub fn free(dim: usize) -> Self {
        BlockSetSpec::Free { dim }
    }

    pub fn nonnegative(dim: usize) -> Self {
        BlockSetSpec::Nonnegative { dim }
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) {
                return Err(Error::InvalidArgument(format!(
                    "box bounds violate lower <= upper at coordinate {i}: {l} > {u}"
                )));
            }
        }
        Ok(BlockSetSpec::Box { lower, upper })
    }

    /// Box with the same scalar bounds on every coordinate.
    pub fn uniform_box(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(vec![lower; dim], vec![upper; dim])
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ball radius must be positive and finite, got {radius}"
            )));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("ball center must be finite".into()));
        }
        Ok(BlockSetSpec::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            BlockSetSpec::Free { dim } | BlockSetSpec::Nonnegative { dim } => *dim,
            BlockSetSpec::Box { lower, .. } => lower.len(),
            BlockSetSpec::Ball { center, .. } => center.len(),
        }
    }

    /// Whether the set is bounded (box with finite bounds or ball).
    pub fn is_bounded(&self) -> bool {
        match self {
            BlockSetSpec::Free { .. } | BlockSetSpec::Nonnegative { .. } => false,
            BlockSetSpec::Box { lower, upper } => lower
                .iter()
                .chain(upper.iter())
                .all(|v| v.is_finite()),
            BlockSetSpec::Ball { .. } => true,
        }
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = v.to_vec();
        self.project_in_place(&mut out)?;
        Ok(out)
    }

    /// Euclidean projection, overwriting `v`.
    pub fn project_in_place(&self, v: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), v.len())?;
        match self {
            BlockSetSpec::Free { .. } => {}
            BlockSetSpec::Nonnegative { .. } => {
                for x in v.iter_mut() {
                    *x = x.max(0.0);
                }
            }
            BlockSetSpec::Box { lower, upper } => {
                for ((x, l), u) in v.iter_mut().zip(lower).zip(upper) {
                    *x = x.clamp(*l, *u);
                }
            }
            BlockSetSpec::Ball { center, radius } => {
                let dist = v
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    .sqrt();
                if dist > *radius {
                    let scale = radius / dist;
                    for (x, c) in v.iter_mut().zip(center) {
                        *x = c + (*x - c) * scale;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            BlockSetSpec::Free { .. } => v.iter().all(|x| x.is_finite()),
            BlockSetSpec::Nonnegative { .. } => v.iter().all(|&x| x >= -tol),
            BlockSetSpec::Box { lower, upper } => v
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((x, l), u)| *x >= l - tol && *x <= u + tol),
            BlockSetSpec::Ball { center, radius } => {
                let dist = v
                    .iter()
                    .zip(center)
                    .map(|(x, c)| (x - c) * (x - c))
                    .sum::<f64>()
                    .sqrt();
                dist <= radius + tol
            }
        }
    }
}

/// Projects a block vector onto its feasible set.
pub fn project_block(spec: &BlockSetSpec, v: &[f64]) -> Result<Vec<f64>> {
    spec.project(v)
}

/// The product set `X_1 × … × X_d` together with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleSet {
    blocks: BlockStructure,
    sets: Vec<BlockSetSpec>,
}

impl FeasibleSet {
    pub fn new(blocks: BlockStructure, sets: Vec<BlockSetSpec>) -> Result<Self> {
        check_dim(blocks.count(), sets.len())?;
        for (i, set) in sets.iter().enumerate() {
            if set.dim() != blocks.sizes()[i] {
                return Err(Error::InvalidArgument(format!(
                    "set for block {i} has dimension {} but the block has {} coordinates",
                    set.dim(),
                    blocks.sizes()[i]
                )));
            }
        }
        Ok(Self { blocks, sets })
    }

    /// Every block unconstrained.
    pub fn free(blocks: BlockStructure) -> Self {
        let sets = blocks.sizes().iter().map(|&s| BlockSetSpec::free(s)).collect();
        Self { blocks, sets }
    }

    pub fn blocks(&self) -> &BlockStructure {
        &self.blocks
    }

    pub fn sets(&self) -> &[BlockSetSpec] {
        &self.sets
    }

    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_dim(self.blocks.dim(), x.len())?;
        for (range, set) in self.blocks.ranges().zip(&self.sets) {
            set.project_in_place(&mut x[range])?;
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.blocks.dim()
            && self
                .blocks
                .ranges()
                .zip(&self.sets)
                .all(|(range, set)| set.contains(&x[range], tol))
    }

    pub fn is_bounded(&self) -> bool {
        self.sets.iter().all(BlockSetSpec::is_bounded)
    }
}
