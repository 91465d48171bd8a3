mod common;

use common::*;
use embex::neural::*;
use embex::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_test_vectors() {
    let text = include_str!("data/forward_2layer.txt");
    let mut cases = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let v: Vec<f64> = line.split_whitespace().map(|t| t.parse().unwrap()).collect();
        let (d, m, seed) = (v[0] as usize, v[1] as usize, v[2] as usize);
        let x = DVector::from_column_slice(&v[3..3 + d]);
        let expected = v[3 + d];
        let w1 = DMatrix::from_fn(m, d, |i, j| if j == (i + seed) % d { 1.0 } else { 0.0 });
        let w2 = DMatrix::from_element(1, m, 1.0 / m as f64);
        let theta = NetworkParams {
            layers: vec![w1, w2],
            width: m,
            depth: 2,
            input_dim: d,
        };
        assert!((forward(&theta, &x) - expected).abs() < 1e-12, "line `{line}`");
        cases += 1;
    }
    assert_eq!(cases, 12);
}

#[test]
fn parameter_count() {
    assert_eq!(param_count(8, 16, 3), 400);
    let theta = init_params(8, 16, 3, 0).unwrap();
    assert_eq!(theta.param_count(), 400);
    assert_eq!(grad_param(&theta, &DVector::from_element(8, 0.1)).len(), 400);
}

#[test]
fn init_rejects_bad_shapes() {
    assert_eq!(init_params(4, 7, 2, 0), Err(NeuralError::OddWidth(7)));
    assert_eq!(init_params(5, 8, 2, 0), Err(NeuralError::OddDim(5)));
    assert_eq!(init_params(4, 8, 1, 0), Err(NeuralError::InvalidDepth(1)));
}

#[test]
fn init_block_structure_across_seeds() {
    let a = init_params(6, 10, 3, 1).unwrap();
    let b = init_params(6, 10, 3, 2).unwrap();
    assert_ne!(a.layers[0], b.layers[0]);
    for theta in [&a, &b] {
        let w1 = &theta.layers[0];
        for i in 0..5 {
            for j in 0..3 {
                assert_eq!(w1[(i, j)], w1[(i + 5, j + 3)]);
                assert_eq!(w1[(i, j + 3)], 0.0);
                assert_eq!(w1[(i + 5, j)], 0.0);
            }
        }
        let w2 = &theta.layers[1];
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(w2[(i, j)], w2[(i + 5, j + 5)]);
                assert_eq!(w2[(i, j + 5)], 0.0);
            }
        }
        let out = &theta.layers[2];
        for j in 0..5 {
            assert_eq!(out[(0, j)], -out[(0, j + 5)]);
        }
    }
}

#[test]
fn zero_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let theta = init_params(10, 64, 3, 4).unwrap();
    for _ in 0..100 {
        let x = mirrored_unit(5, &mut rng);
        assert!(forward(&theta, &x).abs() <= 1e-6);
    }
}

#[test]
fn forward_matches_reference_and_is_homogeneous() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let theta = random_params(6, 12, 4, &mut rng);
    for _ in 0..20 {
        let x = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let f = forward(&theta, &x);
        assert!((f - reference_forward(&theta, &x).0).abs() < 1e-12);
        for c in [0.5, 3.0] {
            assert!((forward(&theta, &(&x * c)) - c * f).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut probes = 0;
    while probes < 20 {
        let depth = 2 + probes % 3;
        let theta = random_params(4, 8, depth, &mut rng);
        let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        if reference_forward(&theta, &x).1 < 1e-3 {
            continue;
        }
        let g = grad_param(&theta, &x);
        let fd = finite_difference_grad(&theta, &x, 1e-5);
        assert!(rel_err(&g, &fd) <= 1e-4, "probe {probes}: {}", rel_err(&g, &fd));
        probes += 1;
    }
}

#[test]
fn gradient_nonzero_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = init_params(8, 32, 3, 0).unwrap();
    let x = mirrored_unit(4, &mut rng);
    let g = grad_param(&theta, &x);
    assert!(g.norm_squared() / 32.0 > 0.0);
}

#[test]
fn gradient_gram_matches_explicit_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let theta = init_params(6, 16, 3, 3).unwrap();
    let x = DMatrix::from_fn(5, 6, |_, _| rng.random_range(-1.0..1.0));
    let gram = gradient_gram(&theta, &x);
    let rows: Vec<DVector<f64>> = (0..5).map(|i| grad_param(&theta, &x.row(i).transpose())).collect();
    for i in 0..5 {
        for j in 0..5 {
            assert!((gram[(i, j)] - rows[i].dot(&rows[j])).abs() < 1e-9 * gram[(i, i)].max(1.0));
        }
    }
}

#[test]
fn ntk_orthogonal_pair() {
    let e = ntk_entry(1.0, 0.0, 1.0, 2);
    assert!((e.sigma - ORTHOGONAL_SIGMA).abs() < 1e-15);
    let (sigma, _, _) = monte_carlo_ntk(0.0, 2, 1_000_000, 3);
    assert!((sigma - e.sigma).abs() <= 0.01 * e.sigma);
}

#[test]
fn ntk_matches_monte_carlo() {
    for depth in [2, 3] {
        for (n, c) in [-0.7, -0.2, 0.0, 0.4, 0.9].into_iter().enumerate() {
            let e = ntk_entry(1.0, c, 1.0, depth);
            let (s, ht, h) = monte_carlo_ntk(c, depth, 1_000_000, 100 + n as u64);
            assert!((s - e.sigma).abs() <= 0.01 * e.sigma.abs(), "L={depth} c={c}");
            assert!((ht - e.h_tilde).abs() <= 0.01 * e.h_tilde.abs(), "L={depth} c={c}");
            assert!((h - e.h).abs() <= 0.01 * e.h.abs(), "L={depth} c={c}");
        }
    }
}

#[test]
fn ntk_gram_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = DMatrix::from_fn(8, 4, |_, _| rng.random_range(-1.0..1.0));
    let x = DMatrix::from_fn(8, 4, |i, j| x[(i, j)] / x.row(i).norm());
    for depth in 2..5 {
        let g = ntk_gram(&x, depth).unwrap();
        assert!((&g.h - g.h.transpose()).amax() < 1e-10);
        for i in 0..8 {
            assert!((g.h[(i, i)] - (depth as f64 + 1.0) / 2.0).abs() < 1e-12);
        }
        assert!(g.lambda_0 >= -1e-8 * g.eigenvalues[0]);
        assert!(g.eigenvalues.iter().all(|&v| v >= 0.0));
        let trace: f64 = g.eigenvalues.iter().sum();
        assert!((trace - g.h.trace()).abs() < 1e-9 * trace);
    }
    assert!(matches!(ntk_gram(&x, 1), Err(NeuralError::InvalidDepth(1))));
}

#[test]
fn neural_effective_dimension_cases() {
    // Identical arms give a rank-one gram.
    let x = DMatrix::from_fn(5, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
    let g = ntk_gram(&x, 3).unwrap();
    assert_eq!(neural_effective_dimension(&g, 1e-9), 1);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(6, 3, |i, j| y[(i, j)] / y.row(i).norm());
    let g = ntk_gram(&y, 2).unwrap();
    assert_eq!(neural_effective_dimension(&g, g.h.trace()), 1);
    assert_eq!(neural_effective_dimension(&g, 0.0), 6);
}

#[test]
fn clustered_arms_have_small_dimension() {
    let (arms, _) = make_synthetic_nonlinear(40, 6, 2).unwrap();
    let x = prepare_inputs(&arms).unwrap();
    let g = ntk_gram(&x, 3).unwrap();
    let d = neural_effective_dimension(&g, 0.01 * g.h.trace());
    assert!(d <= 4, "d = {d}");
}

#[test]
fn gradient_truncation_within_ntk_dimension() {
    let (arms, _) = make_synthetic_nonlinear(20, 8, 1).unwrap();
    let x = prepare_inputs(&arms).unwrap();
    let k = x.nrows() as f64;
    for depth in [2, 3] {
        let theta = init_params(x.ncols(), 4096, depth, 1).unwrap();
        let h = ntk_gram(&x, depth).unwrap();
        for eps_bar in [0.1, 0.01] {
            let gf = gradient_features(&theta, &x, eps_bar);
            let bound = neural_effective_dimension(&h, eps_bar * eps_bar / k);
            assert!(gf.d <= bound, "L={depth} eps_bar={eps_bar}: {} > {bound}", gf.d);
        }
    }
}

#[test]
fn zero_step_descent_returns_start() {
    let theta0 = init_params(4, 8, 3, 1).unwrap();
    let data = TrainingSet::from_pairs(&[(DVector::from_vec(vec![0.5, 0.1, 0.5, 0.1]), 0.3)]);
    let run = train_gradient_descent(&theta0, &data, 1e-3, 0.0, 1).unwrap();
    assert_eq!(run.params, theta0);
    assert!(train_gradient_descent(&theta0, &data, 1e-3, 0.1, 0).is_err());
}

#[test]
fn descent_is_monotone_for_small_steps() {
    let (arms, rewards) = make_synthetic_nonlinear(10, 4, 5).unwrap();
    let x = prepare_inputs(&arms).unwrap();
    let pairs: Vec<_> = (0..10).map(|i| (x.row(i).transpose(), rewards.means()[i])).collect();
    let data = TrainingSet::from_pairs(&pairs);
    let theta0 = init_params(8, 32, 3, 2).unwrap();
    // Probe a stable step by halving from 1e-2.
    let mut eta = 1e-2;
    let run = loop {
        if let Ok(run) = train_gradient_descent(&theta0, &data, 1e-3, eta, 300) {
            if run.losses.windows(2).all(|w| w[1] <= w[0]) {
                break run;
            }
        }
        eta /= 2.0;
        assert!(eta > 1e-8);
    };
    assert!(run.losses.last().unwrap() < &run.losses[0]);
    let direct = regularized_loss(&run.params, &theta0, &data, 1e-3);
    assert!((direct - run.losses.last().unwrap()).abs() < 1e-9 * direct.max(1.0));
}

#[test]
fn single_point_residual_shrinks() {
    let x = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
    let data = TrainingSet::from_pairs(&[(x.clone(), 0.6)]);
    let mut theta = init_params(4, 256, 2, 3).unwrap();
    let mut last = (forward(&theta, &x) - 0.6).abs();
    for _ in 0..20 {
        theta = train_gradient_descent(&theta, &data, 0.0, 1e-3, 1).unwrap().params;
        let r = (forward(&theta, &x) - 0.6).abs();
        assert!(r <= last + 1e-12);
        last = r;
    }
    assert!(last < 1e-3, "residual {last}");
}

#[test]
fn divergence_is_reported() {
    let theta0 = init_params(4, 8, 3, 1).unwrap();
    let x = DVector::from_vec(vec![0.5, 0.5, 0.5, 0.5]);
    let data = TrainingSet::from_pairs(&[(x, 1.0)]);
    let err = train_gradient_descent(&theta0, &data, 1e-3, 1e3, 100).unwrap_err();
    assert!(matches!(err, NeuralError::Diverged { .. }));
}

#[test]
fn small_neural_run_is_sound() {
    let (arms, rewards) = make_synthetic_nonlinear(12, 4, 1).unwrap();
    let cfg = NeuralConfig {
        gd_steps: 200,
        ..NeuralConfig::default()
    };
    let mut oracle = Oracle::new(rewards, 4, 50_000_000);
    let out = neural_eliminate(&arms, &mut oracle, &cfg, 16, 2, 4).unwrap();
    let rounds = (1.0f64 / cfg.eps).ln().ceil() as usize;
    assert!(out.rounds() <= rounds);
    let mut prev: Vec<usize> = (0..12).collect();
    for r in &out.trace {
        assert!(r.survivors.iter().all(|s| prev.contains(s)));
        assert!(!r.survivors.is_empty());
        prev = r.survivors.clone();
    }
    assert_eq!(out.total_pulls, oracle.ledger().total());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn halving_eps_bar_never_shrinks_dimension(seed in 0u64..1000, eps_bar in 1e-4f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(10, 6, |_, _| rng.random_range(-1.0..1.0));
        let theta = init_params(6, 16, 3, seed).unwrap();
        let a = gradient_features(&theta, &x, eps_bar);
        let b = gradient_features(&theta, &x, eps_bar / 2.0);
        prop_assert!(b.d >= a.d);
        let e = a.singular_values.as_slice();
        prop_assert!(e[a.d..].iter().sum::<f64>() <= eps_bar);
        if a.d > 1 {
            prop_assert!(e[a.d - 1..].iter().sum::<f64>() > eps_bar);
        }
    }

    #[test]
    fn zero_at_init_any_seed(seed in 0u64..10_000, half in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let theta = init_params(2 * half, 32, 3, seed).unwrap();
        let x = mirrored_unit(half, &mut rng);
        prop_assert!(forward(&theta, &x).abs() <= 1e-6);
    }
}
