mod common;

use std::ops::ControlFlow;

use cctsne::affinities::{data_affinities, PairwiseAffinityMatrix};
use cctsne::baseline::{class_space_affinities, run_baseline, sweep_baseline};
use cctsne::optimizer::{cost, penalty_stable_learning_rate, run, run_observed, step, sweep_alpha};
use cctsne::tsne::run_vanilla;
use cctsne::{ClassProbabilityMatrix, EmbeddingState, FeatureMatrix, Hyperparams};
use common::rng;
use ndarray::Array2;
use rand::Rng;

struct Toy {
    pd: PairwiseAffinityMatrix,
    probs: ClassProbabilityMatrix,
}

/// Three noisy 4D blobs with soft class probabilities.
fn toy(n: usize, seed: u64) -> Toy {
    let mut r = rng(seed);
    let x = Array2::from_shape_fn((n, 4), |(i, k)| r.random_range(-1.0..1.0) + if i % 3 == k { 6.0 } else { 0.0 });
    let pc = Array2::from_shape_fn((n, 3), |(i, u)| if i % 3 == u { 0.7 } else { 0.15 });
    Toy {
        pd: data_affinities(&FeatureMatrix::new(x).unwrap(), 10.0).unwrap(),
        probs: ClassProbabilityMatrix::new(pc, None).unwrap(),
    }
}

fn hp(alpha: f64, iterations: usize) -> Hyperparams {
    Hyperparams { alpha, iterations, perplexity: 10.0, seed: 5, ..Hyperparams::default() }
}

#[test]
fn alpha_zero_follows_vanilla_path() {
    let t = toy(45, 1);
    let pc = t.probs.values();
    for k in [1, 57, 150] {
        let ours = run(&t.pd, pc, &hp(0.0, k), None).unwrap();
        let plain = run_vanilla(&t.pd, &hp(0.0, k), None).unwrap();
        assert_eq!(ours.state.points, plain.points, "after {k} iterations");
        let fc1: Vec<f64> = ours.trace.iter().map(|c| c.fc1).collect();
        assert_eq!(fc1, plain.trace);
    }
}

#[test]
fn baseline_endpoints_reduce_to_vanilla() {
    let t = toy(45, 2);
    let pprob = class_space_affinities(&t.probs, 10.0).unwrap_or_else(|_| {
        // Rows of the toy probabilities repeat, so build class-space affinities from jittered copies.
        let mut r = rng(9);
        let pc = t.probs.values().mapv(|v| v + r.random_range(0.0..0.01));
        let pc = &pc / &pc.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
        class_space_affinities(&ClassProbabilityMatrix::new(pc, None).unwrap(), 10.0).unwrap()
    });
    let b0 = run_baseline(&t.pd, &pprob, &hp(0.0, 120), None).unwrap();
    assert_eq!(b0.points, run_vanilla(&t.pd, &hp(0.0, 120), None).unwrap().points);
    let b1 = run_baseline(&t.pd, &pprob, &hp(1.0, 120), None).unwrap();
    assert_eq!(b1.points, run_vanilla(&pprob, &hp(1.0, 120), None).unwrap().points);
}

#[test]
fn cost_settles_after_exaggeration() {
    let c = cctsne::synthetic::generate_classified(0, &cctsne::classifier::MlpConfig::default()).unwrap();
    let pd = data_affinities(&c.data.features, 30.0).unwrap();
    for alpha in [0.0, 0.5, 1.0] {
        let h = Hyperparams { alpha, iterations: 600, ..Hyperparams::default() };
        let out = run(&pd, c.probabilities.values(), &h, None).unwrap();
        let tail: Vec<f64> = out.trace[out.trace.len() - 50..].iter().map(|c| c.c_d).collect();
        for w in tail.windows(2) {
            assert!(w[1] <= w[0] + 1e-3, "alpha {alpha}: {} -> {}", w[0], w[1]);
        }
        for c in &out.trace {
            assert!(c.fc1 >= -1e-12 && c.fc2_kl >= -1e-12);
        }
    }
}

#[test]
fn trace_starts_at_initial_cost() {
    let t = toy(30, 4);
    let pc = t.probs.values();
    let init = EmbeddingState::random(30, 3, 77).unwrap();
    let h = hp(0.4, 20);
    let out = run(&t.pd, pc, &h, Some(&init)).unwrap();
    let direct = cost(&t.pd, pc, init.points.view(), init.landmarks.view(), 0.4, h.lambda);
    assert!((out.trace[0].c_d - direct.c_d).abs() < 1e-10);
    assert!((out.trace[0].c_c - direct.c_c).abs() < 1e-10);
}

#[test]
fn warm_start_never_exaggerates() {
    let t = toy(30, 5);
    let pc = t.probs.values();
    let cold = run(&t.pd, pc, &hp(0.3, 150), None).unwrap().state;
    let h = hp(0.6, 120);
    let warm = run(&t.pd, pc, &h, Some(&cold)).unwrap();

    let mut manual = cold.restarted();
    for _ in 0..120 {
        step(&mut manual, &t.pd, pc, &h, 1.0).unwrap();
    }
    assert_eq!(warm.state, manual);
}

#[test]
fn observer_sees_initial_positions_and_can_stop() {
    let t = toy(30, 6);
    let pc = t.probs.values();
    let init = run(&t.pd, pc, &hp(0.0, 50), None).unwrap().state;
    let mut frames = Vec::new();
    let out = run_observed(&t.pd, pc, &hp(0.5, 100), Some(&init), 10, |s| {
        frames.push((s.iteration, s.points.clone()));
        if s.iteration >= 40 {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    assert_eq!(frames[0].1, init.points);
    let its: Vec<usize> = frames.iter().map(|f| f.0).collect();
    assert_eq!(its, vec![0, 10, 20, 30, 40]);
    assert_eq!(out.state.iteration, 40);
}

#[test]
fn sweep_chains_warm_starts() {
    let t = toy(36, 7);
    let pc = t.probs.values();
    let alphas = [0.0, 0.25, 0.5, 0.75, 1.0];
    let cells = sweep_alpha(&t.pd, pc, &hp(0.0, 120), &alphas, None).unwrap();
    assert_eq!(cells.len(), 5);
    for k in 1..cells.len() {
        assert_eq!(cells[k].initial.points, cells[k - 1].output.state.points);
        assert_eq!(cells[k].initial.landmarks, cells[k - 1].output.state.landmarks);
        assert_eq!(cells[k].alpha, alphas[k]);
    }

    let single = sweep_alpha(&t.pd, pc, &hp(0.0, 120), &[0.5], None).unwrap();
    assert_eq!(single[0].output.state, run(&t.pd, pc, &hp(0.5, 120), None).unwrap().state);

    let baseline = sweep_baseline(&t.pd, &t.pd, &hp(0.0, 60), &alphas, None).unwrap();
    assert_eq!(baseline.len(), 5);
}

#[test]
fn repeated_alpha_keeps_descending() {
    let t = toy(36, 8);
    let pc = t.probs.values();
    let h = hp(0.0, 300);
    let cells = sweep_alpha(&t.pd, pc, &h, &[0.5, 0.5], None).unwrap();
    let final_cost = |s: &EmbeddingState| cost(&t.pd, pc, s.points.view(), s.landmarks.view(), 0.5, h.lambda).c_d;
    let first = final_cost(&cells[0].output.state);
    let second = final_cost(&cells[1].output.state);
    assert!(second <= first + 1e-6, "{second} > {first}");
}

#[test]
fn runs_are_deterministic() {
    let t = toy(30, 9);
    let pc = t.probs.values();
    let a = run(&t.pd, pc, &hp(0.5, 80), None).unwrap();
    let b = run(&t.pd, pc, &hp(0.5, 80), None).unwrap();
    assert_eq!(a.state, b.state);
}

#[test]
fn single_landmark_collapses_to_weighted_mean() {
    let t = toy(30, 10);
    let pc = Array2::from_elem((30, 1), 1.0);
    let mut h = Hyperparams { lambda: 0.5, ..hp(0.5, 400) };
    // With n = 30 the landmark step eta * m / n is large enough to oscillate at the default rate.
    h.learning_rate = h.learning_rate.min(penalty_stable_learning_rate(pc.view(), h.lambda, h.momentum_early));
    let out = run(&t.pd, pc.view(), &h, None).unwrap();
    let mean = out.state.points.mean_axis(ndarray::Axis(0)).unwrap();
    let d = (&out.state.landmarks.row(0) - &mean).mapv(|v| v * v).sum().sqrt();
    assert!(d < 1e-3, "landmark {d} from the mean");
}
