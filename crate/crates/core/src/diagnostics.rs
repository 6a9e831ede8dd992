//! Analysis-side quantities as executable checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BlockSetSpec, BlockStructure};
use crate::error::{check_dim, Error, Result};
use crate::problems::BilevelProblem;
use crate::solver::RunTrace;

/// Slack allowed on both sides of the norm sandwich.
pub const SANDWICH_TOL: f64 = 1e-12;

/// Lowest feasibility gap accepted before `f*` is considered inconsistent.
pub const GAP_FLOOR: f64 = -1e-9;

fn check_probabilities(p: &[f64], blocks: &BlockStructure) -> Result<()> {
    check_dim(blocks.count(), p.len())?;
    if p.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidArgument(
            "block probabilities must be positive".into(),
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "block probabilities must sum to 1, got {total}"
        )));
    }
    Ok(())
}

fn block_sq_dist(x: &[f64], y: &[f64], blocks: &BlockStructure) -> Vec<f64> {
    blocks
        .ranges()
        .map(|r| {
            x[r.clone()]
                .iter()
                .zip(&y[r])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect()
}

/// `𝓛(x, y) = Σ_i p_i⁻¹ ‖x⁽ⁱ⁾ − y⁽ⁱ⁾‖²`.
pub fn weighted_distance(
    probabilities: &[f64],
    x: &[f64],
    y: &[f64],
    blocks: &BlockStructure,
) -> Result<f64> {
    check_probabilities(probabilities, blocks)?;
    check_dim(blocks.dim(), x.len())?;
    check_dim(blocks.dim(), y.len())?;
    Ok(block_sq_dist(x, y, blocks)
        .iter()
        .zip(probabilities)
        .map(|(d, p)| d / p)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichReport {
    pub weighted: f64,
    pub sq_dist: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// `‖x − y‖² − p_min·𝓛`; nonnegative when the lower bound holds.
    pub lower_residual: f64,
    /// `p_max·𝓛 − ‖x − y‖²`; nonnegative when the upper bound holds.
    pub upper_residual: f64,
}

impl SandwichReport {
    pub fn passed(&self) -> bool {
        self.lower_residual >= -SANDWICH_TOL && self.upper_residual >= -SANDWICH_TOL
    }
}

/// Checks `p_min·𝓛(x,y) ≤ ‖x − y‖² ≤ p_max·𝓛(x,y)`.
pub fn check_sandwich(
    probabilities: &[f64],
    x: &[f64],
    y: &[f64],
    blocks: &BlockStructure,
) -> Result<SandwichReport> {
    let weighted = weighted_distance(probabilities, x, y, blocks)?;
    let sq_dist: f64 = block_sq_dist(x, y, blocks).iter().sum();
    let p_min = probabilities.iter().copied().fold(f64::INFINITY, f64::min);
    let p_max = probabilities.iter().copied().fold(0.0, f64::max);
    Ok(SandwichReport {
        weighted,
        sq_dist,
        p_min,
        p_max,
        lower_residual: sq_dist - p_min * weighted,
        upper_residual: p_max * weighted - sq_dist,
    })
}

/// Per-checkpoint `f(x̄_k) − f*`.
///
/// Fails if any gap falls below [`GAP_FLOOR`], which means `f*` is not the
/// inner optimum.
pub fn feasibility_gap(trace: &RunTrace, f_star: f64) -> Result<Vec<(u64, f64)>> {
    if trace.rows.is_empty() {
        return Err(Error::InvalidArgument("trace has no checkpoints".into()));
    }
    trace
        .rows
        .iter()
        .map(|r| {
            if !r.f_xbar.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "missing f(x̄) at checkpoint {}",
                    r.k
                )));
            }
            let gap = r.f_xbar - f_star;
            if gap < GAP_FLOOR {
                return Err(Error::InvalidArgument(format!(
                    "f(x̄) at k = {} is {} below the supplied optimum",
                    r.k, -gap
                )));
            }
            Ok((r.k, gap))
        })
        .collect()
}

/// Least-squares fit of `log(gap)` against `log(k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub k_range: (u64, u64),
    pub points_used: usize,
    /// Points with `k ≥ k_min` dropped because their gap was not positive.
    pub excluded_nonpositive: usize,
}

/// Margin on the theoretical exponent accepted as rate confirmation.
pub const RATE_SLOPE_MARGIN: f64 = 0.15;

impl RateFit {
    /// `slope ≤ −(0.5 − δ) + 0.15`.
    pub fn confirms_rate(&self, delta: f64) -> bool {
        self.slope <= -(0.5 - delta) + RATE_SLOPE_MARGIN
    }

    /// Footer lines for an experiment CSV.
    pub fn csv_footer(&self) -> String {
        format!(
            "#fit,slope,intercept,k_min,k_max,points_used,excluded_nonpositive\n#fit,{},{},{},{},{},{}\n",
            crate::io::fmt_f64(self.slope),
            crate::io::fmt_f64(self.intercept),
            self.k_range.0,
            self.k_range.1,
            self.points_used,
            self.excluded_nonpositive
        )
    }
}

pub fn fit_rate_slope(gaps: &[(u64, f64)], k_min: u64) -> Result<RateFit> {
    let window: Vec<&(u64, f64)> = gaps.iter().filter(|(k, _)| *k >= k_min && *k > 0).collect();
    let usable: Vec<(f64, f64)> = window
        .iter()
        .filter(|(_, g)| *g > 0.0 && g.is_finite())
        .map(|(k, g)| ((*k as f64).ln(), g.ln()))
        .collect();
    let excluded = window.len() - usable.len();
    if usable.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 3 positive gaps with k >= {k_min}, have {} ({excluded} nonpositive excluded)",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "rate fit needs at least two distinct k values".into(),
        ));
    }
    let slope = sxy / sxx;
    let ks = window
        .iter()
        .filter(|(_, g)| *g > 0.0 && g.is_finite())
        .map(|(k, _)| *k);
    let k_lo = ks.clone().min().unwrap_or(0);
    let k_hi = ks.max().unwrap_or(0);
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        k_range: (k_lo, k_hi),
        points_used: usable.len(),
        excluded_nonpositive: excluded,
    })
}

/// Largest sampled value of `g` over a bounded feasible set.
///
/// A lower estimate of `sup_X g` from random points of each box or ball block.
pub fn sampled_outer_bound(problem: &BilevelProblem, samples: usize, seed: u64) -> Result<f64> {
    if !problem.set().is_bounded() {
        return Err(Error::InvalidArgument(
            "outer bound sampling needs a bounded feasible set".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; problem.dim()];
    let mut best = f64::NEG_INFINITY;
    for _ in 0..samples.max(1) {
        for (range, set) in problem.blocks().ranges().zip(problem.set().sets()) {
            let block = &mut x[range];
            match set {
                BlockSetSpec::Box { lower, upper } => {
                    for ((v, l), u) in block.iter_mut().zip(lower).zip(upper) {
                        *v = l + (u - l) * rng.random::<f64>();
                    }
                }
                BlockSetSpec::Ball { center, radius } => {
                    // cube sample pulled back onto the ball
                    for (v, c) in block.iter_mut().zip(center) {
                        *v = c + radius * (2.0 * rng.random::<f64>() - 1.0);
                    }
                    set.project_in_place(block)?;
                }
                BlockSetSpec::Free { .. } | BlockSetSpec::Nonnegative { .. } => unreachable!(),
            }
        }
        best = best.max(problem.outer().value(&x)?);
    }
    Ok(best)
}
