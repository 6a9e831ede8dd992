#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rbirg_core::problems::{AffineConstraint, BallConstraint, Constraint};
use rbirg_core::solver::Rbirg;
use rbirg_core::{
    BilevelProblem, BlockSampler, BlockSetSpec, BlockStructure, FeasibleSet, LeastSquaresInstance,
    Objective, PenaltyInstance, SolverState, StepSchedule,
};

pub type Check = Result<(), String>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub const SET_KINDS: [&str; 4] = ["free", "nonnegative", "box", "ball"];

pub fn random_set(rng: &mut impl Rng, kind: &str, dim: usize) -> BlockSetSpec {
    match kind {
        "free" => BlockSetSpec::free(dim),
        "nonnegative" => BlockSetSpec::nonnegative(dim),
        "box" => {
            let lower = gaussian_vec(rng, dim, 1.0);
            let upper = lower
                .iter()
                .map(|l| l + rng.random_range(0.0..2.0))
                .collect();
            BlockSetSpec::boxed(lower, upper).unwrap()
        }
        "ball" => {
            let center = gaussian_vec(rng, dim, 1.0);
            BlockSetSpec::ball(center, rng.random_range(0.1..2.0)).unwrap()
        }
        other => panic!("unknown set kind {other}"),
    }
}

/// Idempotence to 1e-12, non-expansiveness and membership.
pub fn check_projection(spec: &BlockSetSpec, u: &[f64], v: &[f64]) -> Check {
    let pu = spec.project(u).map_err(|e| e.to_string())?;
    let pv = spec.project(v).map_err(|e| e.to_string())?;
    let ppu = spec.project(&pu).map_err(|e| e.to_string())?;
    if dist(&pu, &ppu) > 1e-12 {
        return Err(format!("not idempotent: {pu:?} vs {ppu:?}"));
    }
    if !spec.contains(&pu, 1e-12) {
        return Err(format!("projection {pu:?} outside the set"));
    }
    let lhs = dist(&pu, &pv);
    let rhs = dist(u, v);
    if lhs > rhs * (1.0 + 1e-12) + 1e-12 {
        return Err(format!("expansive: {lhs} > {rhs}"));
    }
    Ok(())
}

/// `f(y) ≥ f(x) + ⟨s, y − x⟩ + (μ/2)‖y − x‖²` up to rounding.
pub fn check_subgrad_inequality(obj: &dyn Objective, mu: f64, x: &[f64], y: &[f64]) -> Check {
    let (fx, s) = obj.value_subgrad(x).map_err(|e| e.to_string())?;
    let fy = obj.value(y).map_err(|e| e.to_string())?;
    let d = dist(x, y);
    let lin: f64 = s.iter().zip(y.iter().zip(x)).map(|(g, (a, b))| g * (a - b)).sum();
    let rhs = fx + lin + 0.5 * mu * d * d;
    let tol = 1e-9 * (1.0 + fx.abs() + fy.abs() + lin.abs());
    if fy < rhs - tol {
        return Err(format!("f(y)={fy} < {rhs} (f(x)={fx})"));
    }
    Ok(())
}

pub struct Oracles {
    pub least_squares: LeastSquaresInstance,
    pub penalty: PenaltyInstance,
}

pub fn oracles(seed: u64, n: usize) -> Oracles {
    let mut r = rng(seed);
    let a = DMatrix::from_fn(n + 2, n, |_, _| StandardNormal.sample(&mut r));
    let b = DVector::from_vec(gaussian_vec(&mut r, n + 2, 1.0));
    let cons: Vec<Box<dyn Constraint>> = vec![
        Box::new(AffineConstraint::new(gaussian_vec(&mut r, n, 1.0), 0.3)),
        Box::new(BallConstraint {
            center: gaussian_vec(&mut r, n, 1.0),
            radius: 1.0,
        }),
    ];
    Oracles {
        least_squares: LeastSquaresInstance::new(a, b).unwrap(),
        penalty: PenaltyInstance::new(n, cons).unwrap(),
    }
}

/// Random least-squares problem on `d` blocks of mixed set kinds, scaled so
/// `‖A‖` is about 0.6.
pub fn mixed_problem(seed: u64, d: usize, block_dim: usize) -> BilevelProblem {
    let mut r = rng(seed);
    let n = d * block_dim;
    let scale = 0.3 / (n as f64).sqrt();
    let a = DMatrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(&mut r);
        scale * z
    });
    let b = DVector::from_vec(gaussian_vec(&mut r, n, 1.0));
    let blocks = BlockStructure::new(&vec![block_dim; d]).unwrap();
    let sets = (0..d)
        .map(|i| random_set(&mut r, SET_KINDS[i % SET_KINDS.len()], block_dim))
        .collect();
    let ls = Arc::new(LeastSquaresInstance::new(a, b).unwrap());
    BilevelProblem::new(
        ls,
        Arc::new(rbirg_core::problems::SquaredNorm::new(n)),
        2.0,
        FeasibleSet::new(blocks, sets).unwrap(),
    )
    .unwrap()
}

/// Over `steps` iterations only the sampled block changes and every iterate
/// stays in the set to 1e-10.
pub fn check_one_block_updates(problem: &BilevelProblem, steps: u64, seed: u64) -> Check {
    let d = problem.blocks().count();
    let schedule = StepSchedule::default_for(d, problem.mu()).unwrap();
    let sampler = BlockSampler::uniform(d, seed).unwrap();
    let state =
        SolverState::new(problem, &schedule, &vec![0.0; problem.dim()], sampler).unwrap();
    let mut solver = Rbirg::new(problem, schedule, state).map_err(|e| e.to_string())?;
    for _ in 0..steps {
        let before = solver.state().x.clone();
        let block = solver.step().map_err(|e| e.to_string())?;
        let after = &solver.state().x;
        for (i, range) in problem.blocks().ranges().enumerate() {
            if i != block && before[range.clone()] != after[range.clone()] {
                return Err(format!(
                    "block {i} changed at k={} while block {block} was sampled",
                    solver.state().k
                ));
            }
        }
        if !problem.set().contains(after, 1e-10) {
            return Err(format!("iterate left the set at k={}", solver.state().k));
        }
    }
    Ok(())
}

/// The running average against the explicit weighted mean over `steps` iterates.
pub fn check_averaging(problem: &BilevelProblem, schedule: StepSchedule, steps: u64, seed: u64) -> Check {
    let d = problem.blocks().count();
    let sampler = BlockSampler::uniform(d, seed).unwrap();
    let state =
        SolverState::new(problem, &schedule, &vec![0.0; problem.dim()], sampler).unwrap();
    let mut history = vec![(schedule.weight(0), state.x.clone())];
    let mut solver = Rbirg::new(problem, schedule, state).map_err(|e| e.to_string())?;
    for _ in 0..steps {
        solver.step().map_err(|e| e.to_string())?;
        let s = solver.state();
        history.push((schedule.weight(s.k), s.x.clone()));
        if s.k % 100 == 0 || s.k == steps {
            let explicit = rbirg_core::recompute_average(&history).map_err(|e| e.to_string())?;
            let err = dist(&explicit, &s.x_bar);
            if err > 1e-9 {
                return Err(format!("average differs by {err} at k={}", s.k));
            }
        }
    }
    Ok(())
}

/// Random `(p, x, y)` with `d` blocks; checks the 𝓛 sandwich.
pub fn check_random_sandwich(rng: &mut impl Rng) -> Check {
    let d = rng.random_range(1..=6);
    let sizes: Vec<usize> = (0..d).map(|_| rng.random_range(1..=4)).collect();
    let blocks = BlockStructure::new(&sizes).unwrap();
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let x = gaussian_vec(rng, blocks.dim(), 1.0);
    let y = gaussian_vec(rng, blocks.dim(), 1.0);
    let rep = rbirg_core::diagnostics::check_sandwich(&p, &x, &y, &blocks).map_err(|e| e.to_string())?;
    if rep.passed() {
        Ok(())
    } else {
        Err(format!("{rep:?}"))
    }
}
