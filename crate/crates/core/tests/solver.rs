mod common;

use std::sync::Arc;

use common::*;
use rbirg_core::baselines::full_irg;
use rbirg_core::imaging::{make_deblur_instance, BlurKernel, Boundary, GrayImage};
use rbirg_core::{
    run_rbirg, BilevelProblem, BlockSampler, BlockStructure, LeastSquaresInstance,
    RunOptions, StepSchedule,
};

fn frequencies(probs: &[f64], draws: usize, seed: u64) -> Vec<usize> {
    let mut s = BlockSampler::new(probs.to_vec(), seed).unwrap();
    let mut counts = vec![0; probs.len()];
    for _ in 0..draws {
        counts[s.sample()] += 1;
    }
    counts
}

#[test]
fn sampler_frequencies_within_three_sigma() {
    let n = 1_000_000;
    for probs in [vec![0.25; 4], vec![0.9, 0.1]] {
        let counts = frequencies(&probs, n, 2024);
        for (c, p) in counts.iter().zip(&probs) {
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            let dev = (*c as f64 - n as f64 * p).abs();
            assert!(dev <= 3.0 * sd, "p={p}: count {c}, deviation {dev} > 3·{sd}");
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let p = mixed_problem(5, 4, 3);
    let s = StepSchedule::default_for(4, 2.0).unwrap();
    let a = run_rbirg(&p, &s, &RunOptions::new(5_000, 17)).unwrap();
    let b = run_rbirg(&p, &s, &RunOptions::new(5_000, 17)).unwrap();
    let c = run_rbirg(&p, &s, &RunOptions::new(5_000, 18)).unwrap();
    assert!(a.trace.bitwise_eq(&b.trace));
    assert_eq!(a.state.x, b.state.x);
    assert!(!a.trace.bitwise_eq(&c.trace));
}

#[test]
fn single_block_matches_full_irg() {
    let ls = Arc::new(
        LeastSquaresInstance::from_rows(&[vec![1.0, 2.0, 0.0], vec![0.0, 1.0, 1.0]], &[1.0, -1.0])
            .unwrap(),
    );
    let p = BilevelProblem::min_norm_least_squares(ls, BlockStructure::single(3).unwrap()).unwrap();
    let s = StepSchedule::default_for(1, 2.0).unwrap();
    let opts = RunOptions::new(2_000, 3);
    let a = run_rbirg(&p, &s, &opts).unwrap();
    let b = full_irg(&p, &s, &opts).unwrap();
    assert!(a.trace.bitwise_eq(&b.trace));
    assert_eq!(a.state.x_bar, b.state.x_bar);
}

#[test]
fn incremental_residual_tracks_direct_evaluation() {
    // Blur matrices take the sparse column path; random matrices the dense one.
    let img = GrayImage::synthetic(8, 8).unwrap();
    let di = make_deblur_instance(&img, &BlurKernel::gaussian(3, 1.0).unwrap(), Boundary::Replicate, 4)
        .unwrap();
    let dense = mixed_problem(6, 4, 4);
    for p in [&di.problem, &dense] {
        let s = StepSchedule::default_for(4, 2.0).unwrap();
        let r = run_rbirg(p, &s, &RunOptions::new(25_000, 1).checkpoints(vec![25_000])).unwrap();
        let direct = p.inner().value(&r.state.x).unwrap();
        let traced = r.trace.rows.last().unwrap().f_x;
        assert_eq!(direct, traced);
        let mut e = p.inner().block_evaluator();
        e.reset(&r.state.x).unwrap();
        let mut out = vec![0.0; p.dim()];
        e.block_subgrad(&r.state.x, 0..p.dim(), &mut out).unwrap();
        let (_, full) = p.inner().value_subgrad(&r.state.x).unwrap();
        assert!(dist(&out, &full) <= 1e-10 * (1.0 + norm(&full)));
    }
}

#[test]
fn invalid_schedule_is_refused() {
    let p = mixed_problem(7, 2, 2);
    let s = StepSchedule::with_exponents(1.0, 1.0, 0.4, 0.3, 0.5).unwrap();
    let err = run_rbirg(&p, &s, &RunOptions::new(10, 0)).unwrap_err();
    assert!(err.to_string().contains("a>0.5"), "{err}");
}
