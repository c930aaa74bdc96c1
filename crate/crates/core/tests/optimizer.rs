use cxrnet::optimizer::{AdamHyper, AdamState};
use cxrnet::tensor::Tensor;
use proptest::prelude::*;

fn run(grads: &[Vec<f64>], start: &[f64]) -> Vec<Vec<f64>> {
    let mut x = Tensor::new(vec![start.len()], start.to_vec()).unwrap();
    let mut s = AdamState::init([&x], AdamHyper::default());
    let mut out = Vec::new();
    for g in grads {
        let g = Tensor::new(vec![g.len()], g.clone()).unwrap();
        s.step(&mut [("x".into(), &mut x)], &[g]).unwrap();
        out.push(x.data().to_vec());
    }
    out
}

// Cauchy-Schwarz on the moment sums: at step t
// |m̂/√v̂| ≤ (1−β1)/√(1−β2) · √(Σ_{k<t} (β1²/β2)^k) · √(1−β2^t) / (1−β1^t)
fn step_bound(t: i32) -> f64 {
    let h = AdamHyper::default();
    let gamma = h.beta1 * h.beta1 / h.beta2;
    let series: f64 = (0..t).map(|k| gamma.powi(k)).sum();
    h.learning_rate * (1.0 - h.beta1) / (1.0 - h.beta2).sqrt() * series.sqrt() * (1.0 - h.beta2.powi(t)).sqrt()
        / (1.0 - h.beta1.powi(t))
}

fn gradients() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..5).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-100.0..100.0f64, n), 1..60))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_respect_the_moment_bound(grads in gradients()) {
        let n = grads[0].len();
        let traj = run(&grads, &vec![0.0; n]);
        let mut prev = vec![0.0; n];
        for (t, x) in traj.iter().enumerate() {
            let bound = step_bound(t as i32 + 1) * (1.0 + 1e-9);
            for (a, b) in x.iter().zip(&prev) {
                prop_assert!((a - b).abs() <= bound, "step {}: {} > {}", t + 1, (a - b).abs(), bound);
            }
            prev = x.clone();
        }
    }

    #[test]
    fn constant_gradient_moves_at_most_lr(g in -50.0..50.0f64, steps in 1usize..200) {
        let traj = run(&vec![vec![g]; steps], &[1.0]);
        let mut prev = 1.0;
        for x in traj {
            prop_assert!((x[0] - prev).abs() <= 0.001 * (1.0 + 1e-9));
            prev = x[0];
        }
    }

    #[test]
    fn updates_ignore_gradient_scale(grads in gradients(), c in 0.1..10.0f64) {
        let n = grads[0].len();
        let start = vec![0.5; n];
        let scaled: Vec<Vec<f64>> = grads.iter().map(|g| g.iter().map(|v| v * c).collect()).collect();
        let a = run(&grads, &start);
        let b = run(&scaled, &start);
        for (xa, xb) in a.iter().zip(&b) {
            for ((p, q), s) in xa.iter().zip(xb).zip(&start) {
                let moved = (p - s).abs().max(1e-6);
                prop_assert!((p - q).abs() <= 1e-3 * moved + 1e-9, "{} vs {}", p, q);
            }
        }
    }

    #[test]
    fn coordinates_are_independent(grads in gradients()) {
        let n = grads[0].len();
        let together = run(&grads, &vec![0.0; n]);
        for i in 0..n {
            let alone: Vec<Vec<f64>> = grads.iter().map(|g| vec![g[i]]).collect();
            let single = run(&alone, &[0.0]);
            for (t, s) in together.iter().zip(&single) {
                prop_assert_eq!(t[i], s[0]);
            }
        }
    }
}

#[test]
fn repeated_runs_are_bit_identical() {
    let grads: Vec<Vec<f64>> = (0..500).map(|t| vec![(t as f64 * 0.37).sin(), (t as f64).cos() * 3.0]).collect();
    assert_eq!(run(&grads, &[1.0, -1.0]), run(&grads, &[1.0, -1.0]));
}

#[test]
fn f32_tracks_f64() {
    let grads: Vec<f64> = (0..300).map(|t| (t as f64 * 0.11).sin()).collect();
    let mut x32 = Tensor::<f32>::full(&[1], 0.0);
    let mut x64 = Tensor::<f64>::full(&[1], 0.0);
    let mut s32 = AdamState::init([&x32], AdamHyper::default());
    let mut s64 = AdamState::init([&x64], AdamHyper::default());
    for g in grads {
        s32.step(&mut [("x".into(), &mut x32)], &[Tensor::full(&[1], g as f32)]).unwrap();
        s64.step(&mut [("x".into(), &mut x64)], &[Tensor::full(&[1], g)]).unwrap();
    }
    assert!((x32.data()[0] as f64 - x64.data()[0]).abs() < 1e-5);
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let bad = [
        AdamHyper {
            learning_rate: 0.0,
            ..Default::default()
        },
        AdamHyper {
            beta1: 1.0,
            ..Default::default()
        },
        AdamHyper {
            beta2: -0.1,
            ..Default::default()
        },
        AdamHyper {
            epsilon: 0.0,
            ..Default::default()
        },
    ];
    for h in bad {
        assert!(h.validate().is_err(), "{h:?}");
    }
    assert!(AdamHyper::default().validate().is_ok());
}

#[test]
fn mismatched_gradients_are_rejected() {
    let mut x = Tensor::<f64>::zeros(&[3]);
    let mut s = AdamState::init([&x], AdamHyper::default());
    assert!(s.step(&mut [("x".into(), &mut x)], &[Tensor::zeros(&[2])]).is_err());
    assert!(s.step(&mut [("x".into(), &mut x)], &[]).is_err());
    assert_eq!(s.step, 0);
}
