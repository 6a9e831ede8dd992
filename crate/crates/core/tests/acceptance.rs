//! One line per acceptance criterion; exits nonzero if any fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rbirg_core::baselines::{full_irg, path_shift_bound, two_loop_sweep, SweepOptions};
use rbirg_core::diagnostics::{feasibility_gap, fit_rate_slope};
use rbirg_core::imaging::{
    apply_blur, make_deblur_instance, parse_pgm, write_pgm, BlurKernel, Boundary, GrayImage,
};
use rbirg_core::problems::{AffineConstraint, Constraint, QuadraticOuter, SquaredNorm};
use rbirg_core::schedule::CheckStatus;
use rbirg_core::solver::run_rbirg_with;
use rbirg_core::{
    min_norm_oracle, run_rbirg, BilevelProblem, BlockSampler, BlockSetSpec, BlockStructure,
    FeasibleSet, LeastSquaresInstance, Objective, PenaltyInstance, RunOptions, StepSchedule,
};

type Outcome = Result<String, String>;

fn within(limit_secs: u64, start: Instant) -> Result<Duration, String> {
    let t = start.elapsed();
    if t > Duration::from_secs(limit_secs) {
        Err(format!("took {t:.2?}, limit {limit_secs} s"))
    } else {
        Ok(t)
    }
}

fn closed_form_problem(sizes: &[usize]) -> BilevelProblem {
    let ls = Arc::new(
        LeastSquaresInstance::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1.0, 0.0]).unwrap(),
    );
    BilevelProblem::min_norm_least_squares(ls, BlockStructure::new(sizes).unwrap()).unwrap()
}

fn min_norm_recovery() -> Outcome {
    let start = Instant::now();
    let p = closed_form_problem(&[1, 1]);
    let ls = LeastSquaresInstance::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[1.0, 0.0]).unwrap();
    let oracle = min_norm_oracle(&ls).map_err(|e| e.to_string())?;
    // δ = 0.25, r = 0.5 with γ0·η0 = 0.5·d/μ.
    let s = StepSchedule::with_delta(1.0, 0.5, 0.25, 0.5).unwrap();
    let mut total = 0.0;
    for seed in 0..5 {
        let opts = RunOptions::new(100_000, seed)
            .checkpoints(vec![100_000])
            .reference(oracle.clone());
        let r = run_rbirg(&p, &s, &opts).map_err(|e| e.to_string())?;
        total += r.trace.rows.last().unwrap().dist_ref.unwrap();
    }
    let mean = total / 5.0;
    let t = within(5, start)?;
    let msg = format!("mean ‖x̄_N − x*‖ = {mean:.4e} (≤ 5e-2), {t:.2?}");
    if mean <= 5e-2 { Ok(msg) } else { Err(msg) }
}

/// Rank-10, 20×20, singular values evenly spaced in [0.5, 1].
fn rank_ten_instance(seed: u64) -> LeastSquaresInstance {
    let mut r = rng(seed);
    let mut gauss = |rows, cols| DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut r));
    let u = gauss(20, 10).qr().q();
    let v = gauss(20, 10).qr().q();
    let b = DVector::from_iterator(20, gauss(20, 1).iter().copied());
    let sv = DVector::from_fn(10, |i, _| 0.5 + 0.5 * i as f64 / 9.0);
    let a = &u * DMatrix::from_diagonal(&sv) * v.transpose();
    LeastSquaresInstance::new(a, b).unwrap()
}

fn rate_slope() -> Outcome {
    let start = Instant::now();
    let ls = Arc::new(rank_ten_instance(0));
    let x_star = min_norm_oracle(&ls).map_err(|e| e.to_string())?;
    let f_star = ls.value(&x_star).map_err(|e| e.to_string())?;
    let p = BilevelProblem::min_norm_least_squares(ls, BlockStructure::split_even(20, 4).unwrap())
        .unwrap();
    let s = StepSchedule::default_for(4, 2.0).unwrap();
    let cps: Vec<u64> = (0..=20)
        .map(|i| (1000.0 * 10f64.powf(i as f64 / 10.0)).round() as u64)
        .collect();
    let r = run_rbirg(&p, &s, &RunOptions::new(100_000, 1).checkpoints(cps))
        .map_err(|e| e.to_string())?;
    let gaps = feasibility_gap(&r.trace, f_star).map_err(|e| e.to_string())?;
    let fit = fit_rate_slope(&gaps, 1000).map_err(|e| e.to_string())?;
    let t = within(30, start)?;
    let msg = format!("slope {:.4} (≤ -0.10) over {} checkpoints, {t:.2?}", fit.slope, fit.points_used);
    if fit.confirms_rate(0.25) { Ok(msg) } else { Err(msg) }
}

const SWEEP_ETAS: [f64; 4] = [1.0, 0.1, 0.01, 0.001];

fn sweep() -> Result<Vec<Vec<f64>>, String> {
    let p = closed_form_problem(&[1, 1]);
    let reps = two_loop_sweep(&p, &SWEEP_ETAS, &SweepOptions::new(20_000, 0.4))
        .map_err(|e| e.to_string())?;
    Ok(reps.into_iter().map(|r| r.x_eta).collect())
}

fn two_loop_consistency() -> Outcome {
    let start = Instant::now();
    let xs = sweep()?;
    let d: Vec<f64> = xs.iter().map(|x| dist(x, &[1.0, 0.0])).collect();
    let t = within(10, start)?;
    let decreasing = d.windows(2).all(|w| w[1] < w[0]);
    let last = *d.last().unwrap();
    let shown: Vec<String> = d.iter().map(|v| format!("{v:.4e}")).collect();
    let msg = format!("distances [{}], final {last:.4e} (≤ 1.5e-3), {t:.2?}", shown.join(", "));
    if decreasing && last <= 1.5e-3 { Ok(msg) } else { Err(msg) }
}

fn path_shift() -> Outcome {
    let xs = sweep()?;
    let cg = 2.0 * xs.iter().map(|x| norm(x)).fold(0.0, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for (i, w) in xs.windows(2).enumerate() {
        let lhs = dist(&w[0], &w[1]);
        let rhs = path_shift_bound(cg, 2.0, SWEEP_ETAS[i], SWEEP_ETAS[i + 1]);
        worst = worst.max(lhs - rhs);
    }
    let msg = format!("max(shift − bound) = {worst:.4e} (≤ 1e-6), C_g = {cg:.4}");
    if worst <= 1e-6 { Ok(msg) } else { Err(msg) }
}

fn single_block_equivalence() -> Outcome {
    let ls = |rows: &[Vec<f64>], b: &[f64]| Arc::new(LeastSquaresInstance::from_rows(rows, b).unwrap());
    let penalty = {
        let cons: Vec<Box<dyn Constraint>> =
            vec![Box::new(AffineConstraint::new(vec![1.0, 1.0, -1.0], -0.5))];
        let set = FeasibleSet::new(
            BlockStructure::single(3).unwrap(),
            vec![BlockSetSpec::uniform_box(3, -2.0, 2.0).unwrap()],
        )
        .unwrap();
        BilevelProblem::new(
            Arc::new(PenaltyInstance::new(3, cons).unwrap()),
            Arc::new(QuadraticOuter::new(vec![1.0, -1.0, 0.5], 2.0).unwrap()),
            2.0,
            set,
        )
        .unwrap()
    };
    let problems = [
        closed_form_problem(&[2]),
        BilevelProblem::min_norm_least_squares(
            ls(&[vec![1.0, 2.0, 0.0, -1.0], vec![0.5, 0.0, 1.0, 1.0]], &[1.0, 2.0]),
            BlockStructure::single(4).unwrap(),
        )
        .unwrap(),
        penalty,
    ];
    let s = StepSchedule::default_for(1, 2.0).unwrap();
    for (i, p) in problems.iter().enumerate() {
        let opts = RunOptions::new(10_000, 42);
        let a = run_rbirg(p, &s, &opts).map_err(|e| e.to_string())?;
        let b = full_irg(p, &s, &opts).map_err(|e| e.to_string())?;
        if !a.trace.bitwise_eq(&b.trace) || a.state.x_bar != b.state.x_bar {
            return Err(format!("instance {i}: traces differ"));
        }
    }
    Ok("3 instances bitwise identical over 10^4 iterations".into())
}

fn invariant_suites() -> Outcome {
    let mut r = rng(606);
    for kind in SET_KINDS {
        for _ in 0..1000 {
            let n = r.random_range(1..=6);
            let spec = random_set(&mut r, kind, n);
            let u = gaussian_vec(&mut r, n, 5.0);
            let v = gaussian_vec(&mut r, n, 5.0);
            check_projection(&spec, &u, &v).map_err(|e| format!("{kind} projection: {e}"))?;
        }
    }
    let o = oracles(7, 4);
    let outer = QuadraticOuter::new(vec![1.0, -2.0, 0.5, 3.0], 3.0).unwrap();
    let oracles: [(&str, &dyn Objective, f64); 4] = [
        ("least squares", &o.least_squares, 0.0),
        ("penalty", &o.penalty, 0.0),
        ("squared norm", &SquaredNorm::new(4), SquaredNorm::MU),
        ("quadratic", &outer, 3.0),
    ];
    for (name, obj, mu) in oracles {
        for _ in 0..1000 {
            let x = gaussian_vec(&mut r, 4, 3.0);
            let y = gaussian_vec(&mut r, 4, 3.0);
            check_subgrad_inequality(obj, mu, &x, &y).map_err(|e| format!("{name}: {e}"))?;
        }
    }
    for _ in 0..1000 {
        check_random_sandwich(&mut r).map_err(|e| format!("sandwich: {e}"))?;
    }
    check_one_block_updates(&mixed_problem(1, 8, 3), 10_000, 3)?;
    let s = StepSchedule::default_for(4, 2.0).unwrap();
    check_averaging(&mixed_problem(2, 4, 2), s, 1_000, 5)?;
    Ok("projection, subgradient, sandwich, block-update, feasibility, averaging".into())
}

fn sampler_statistics() -> Outcome {
    let n = 1_000_000;
    let mut worst: f64 = 0.0;
    for probs in [vec![0.25; 4], vec![0.9, 0.1]] {
        let mut s = BlockSampler::new(probs.clone(), 77).map_err(|e| e.to_string())?;
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..n {
            counts[s.sample()] += 1;
        }
        for (c, p) in counts.iter().zip(&probs) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            worst = worst.max((*c as f64 - n as f64 * p).abs() / sd);
        }
    }
    let msg = format!("largest deviation {worst:.2} σ (≤ 3)");
    if worst <= 3.0 { Ok(msg) } else { Err(msg) }
}

fn deblurring() -> Outcome {
    let start = Instant::now();
    let img = GrayImage::synthetic(32, 32).map_err(|e| e.to_string())?;
    let k = BlurKernel::gaussian(5, 1.0).map_err(|e| e.to_string())?;
    let blurred = apply_blur(&k, &img, Boundary::Replicate);
    let di = make_deblur_instance(&blurred, &k, Boundary::Replicate, 1).map_err(|e| e.to_string())?;
    let s = StepSchedule::with_delta(0.9, 1e-3, 0.25, 0.5).unwrap();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let snaps = [100u64, 1_000, 10_000, 100_000];
    let opts = RunOptions::new(100_000, 1).checkpoints(snaps.to_vec());
    let r = run_rbirg_with(&di.problem, &s, &opts, |st| {
        let path = dir.path().join(format!("snapshot_k{}.pgm", st.k));
        write_pgm(&di.to_image(&st.x_bar)?, &path)
    })
    .map_err(|e| e.to_string())?;
    for k in snaps {
        let bytes = std::fs::read(dir.path().join(format!("snapshot_k{k}.pgm")))
            .map_err(|e| format!("snapshot {k}: {e}"))?;
        let back = parse_pgm(&bytes).map_err(|e| format!("snapshot {k}: {e}"))?;
        if (back.width(), back.height()) != (32, 32) {
            return Err(format!("snapshot {k} has the wrong shape"));
        }
    }
    let resid = di
        .least_squares
        .residual(&r.state.x_bar)
        .map_err(|e| e.to_string())?
        .norm();
    let t = start.elapsed();
    let msg = format!("‖Ax̄_N − b‖ = {resid:.4e} (≤ 1e-2), 4 snapshots valid, {t:.2?}");
    if resid <= 1e-2 { Ok(msg) } else { Err(msg) }
}

fn penalty_exactness() -> Outcome {
    let cons: Vec<Box<dyn Constraint>> = vec![Box::new(AffineConstraint::new(vec![1.0, 0.0], -1.0))];
    let set = FeasibleSet::new(
        BlockStructure::new(&[1, 1]).unwrap(),
        vec![BlockSetSpec::uniform_box(1, -5.0, 5.0).unwrap(); 2],
    )
    .unwrap();
    let p = BilevelProblem::new(
        Arc::new(PenaltyInstance::new(2, cons).unwrap()),
        Arc::new(QuadraticOuter::new(vec![2.0, 0.0], 2.0).unwrap()),
        2.0,
        set,
    )
    .unwrap();
    let s = StepSchedule::default_for(2, 2.0).unwrap();
    let r = run_rbirg(&p, &s, &RunOptions::new(100_000, 0).reference(vec![1.0, 0.0]))
        .map_err(|e| e.to_string())?;
    let d = r.trace.rows.last().unwrap().dist_ref.unwrap();
    let msg = format!("‖x̄_N − (1,0)‖ = {d:.4e} (≤ 5e-2)");
    if d <= 5e-2 { Ok(msg) } else { Err(msg) }
}

fn schedule_validator() -> Outcome {
    let cases = [
        (StepSchedule::with_exponents(1.0, 1.0, 0.525, 0.25, 0.5).unwrap(), vec![]),
        (StepSchedule::with_exponents(1.0, 1.0, 0.4, 0.3, 0.5).unwrap(), vec!["a>0.5"]),
        (StepSchedule::with_exponents(1.0, 1.0, 0.6, 0.6, 0.5).unwrap(), vec!["a+b<1", "b<a"]),
    ];
    for (s, expected) in cases {
        let rep = s.validate(2.0, 4);
        if rep.checks.len() != 9 {
            return Err(format!("{} checks reported", rep.checks.len()));
        }
        if rep.failures() != expected {
            return Err(format!("expected failures {expected:?}, got {:?}", rep.failures()));
        }
        if rep.status_of("delta in (0,0.5)") != Some(CheckStatus::NotApplicable) {
            return Err("δ check should be N/A when δ is unset".into());
        }
    }
    Ok("3 examples match".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("min-norm recovery", min_norm_recovery),
        ("rate slope", rate_slope),
        ("two-loop consistency", two_loop_consistency),
        ("path shift bound", path_shift),
        ("single-block equivalence", single_block_equivalence),
        ("invariant suites", invariant_suites),
        ("sampler statistics", sampler_statistics),
        ("deblurring pipeline", deblurring),
        ("penalty exactness", penalty_exactness),
        ("schedule validator", schedule_validator),
    ];
    let mut out = std::io::stdout().lock();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (tag, detail) = match run() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        writeln!(out, "{tag} criterion {:>2} {name}: {detail}", i + 1).unwrap();
    }
    writeln!(out, "{} of {} criteria passed", criteria.len() - failed, criteria.len()).unwrap();
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
