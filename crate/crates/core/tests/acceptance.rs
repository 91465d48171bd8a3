//! Acceptance checks, run by a custom main: each criterion prints one
//! `criterion N: PASS|FAIL ...` line and the process fails if any does.

mod common;

use std::panic;
use std::time::Instant;

use common::*;
use embex::elimination::UnknownMisspecRun;
use embex::arms::DEFAULT_PULL_CAP;
use embex::harness::{build_instance, derive_seed, Algorithm, Dataset, ORACLE_STREAM};
use embex::neural::{gradient_gram, init_params, ntk_entry, prepare_inputs};
use embex::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: &str, ok: bool, detail: String) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

fn random_arms(rng: &mut ChaCha8Rng, k: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(k, d, |_, _| rng.random_range(-1.0..1.0))
}

/// `max_y yᵀ A(λ)⁻¹ y` by explicit inversion.
fn explicit_tau(arms: &DMatrix<f64>, w: &[f64], dirs: &DirectionSet) -> f64 {
    let d = arms.ncols();
    let mut a = DMatrix::zeros(d, d);
    for i in 0..arms.nrows() {
        let x = arms.row(i).transpose();
        a += &x * x.transpose() * w[i];
    }
    let inv = a.try_inverse().expect("design spans");
    (0..dirs.len())
        .map(|i| {
            let y = dirs.direction(i);
            y.dot(&(&inv * &y))
        })
        .fold(0.0, f64::max)
}

fn criterion_01_design_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(1..=3);
        let k = rng.random_range(d.max(2)..=5);
        let arms = random_arms(&mut rng, k, d);
        let dirs = difference_set(&arms);
        let fw = solve_design(&arms, &dirs, &DesignOptions::default()).unwrap();
        let oracle = brute_force_design_oracle(&arms, &dirs, 0.02).unwrap();
        let rel = (fw.tau - oracle.solution.tau).abs() / oracle.solution.tau;
        worst = worst.max(rel);
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "1",
        worst <= 0.03 && secs < 60.0,
        format!("worst relative gap {worst:.2e} (limit 3e-2), {secs:.1}s"),
    );
}

fn criterion_02_kiefer_wolfowitz() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (mut g_ratio, mut t_ratio): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let d = rng.random_range(1..=8);
        let k = rng.random_range(d..=2 * d + 4);
        let arms = random_arms(&mut rng, k, d);
        let g = solve_design(&arms, &DirectionSet::from_rows(arms.clone()), &DesignOptions::default()).unwrap();
        let t = solve_design(&arms, &difference_set(&arms), &DesignOptions::default()).unwrap();
        g_ratio = g_ratio.max(g.tau / d as f64);
        t_ratio = t_ratio.max(t.tau / (4.0 * d as f64));
    }
    report(
        "2",
        g_ratio <= 1.01 && t_ratio <= 1.01,
        format!("max tau/d = {g_ratio:.4}, max tau/4d = {t_ratio:.4} (limit 1.01)"),
    );
}

fn criterion_03_rounding_guarantee() {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let zeta = 0.25;
    let mut violations = 0;
    for _ in 0..200 {
        let d = rng.random_range(1..=6);
        let k = rng.random_range(d..=12);
        let arms = random_arms(&mut rng, k, d);
        let dirs = difference_set(&arms);
        let w = solve_design(&arms, &dirs, &DesignOptions::default()).unwrap().weights;
        let n = min_rounding_support(d, zeta);
        let plan = round_allocation(&w, n, d, zeta, &arms, &dirs).unwrap();
        let tau = explicit_tau(&arms, w.as_slice(), &dirs);
        let counts: Vec<f64> = plan.counts.iter().map(|&c| c as f64).collect();
        let real = explicit_tau(&arms, &counts, &dirs);
        if plan.counts.iter().sum::<u64>() != n || real > (1.0 + zeta) * tau / n as f64 * (1.0 + 1e-9) {
            violations += 1;
        }
    }
    report("3", violations == 0, format!("{violations} violations in 200 instances"));
}

fn criterion_04_pac_success() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        algorithm: Algorithm::Adaptive,
        dataset: Dataset::SyntheticLinear,
        k: 20,
        d: 20,
        eps: 0.1,
        delta: 0.05,
        trials: 50,
        timing: false,
        ..ExperimentConfig::default()
    };
    let s = summarize(&run_experiment(&cfg).unwrap());
    let secs = start.elapsed().as_secs_f64();
    report(
        "4",
        s.success_rate >= 0.96 && secs < 600.0,
        format!("{}/{} successes ({:.0}%), {secs:.1}s", s.successes, s.trials, 100.0 * s.success_rate),
    );
}

fn criterion_05_high_dimensional_separation() {
    let mean_pulls = |algorithm, d, plan_dim| {
        let cfg = ExperimentConfig {
            algorithm,
            dataset: Dataset::HardInstance,
            d,
            eps: 0.1,
            trials: 10,
            plan_dim,
            timing: false,
            ..ExperimentConfig::default()
        };
        let s = summarize(&run_experiment(&cfg).unwrap());
        assert_eq!(s.successes, s.trials, "{algorithm:?} at D={d}");
        s.pulls.unwrap().mean
    };
    let rage = mean_pulls(Algorithm::Rage, 40, None) / mean_pulls(Algorithm::Rage, 10, None);
    let fixed = mean_pulls(Algorithm::Fixed, 40, Some(2)) / mean_pulls(Algorithm::Fixed, 10, Some(2));
    report(
        "5",
        rage >= 2.0 && fixed <= 1.3,
        format!("rage D40/D10 = {rage:.2} (need >= 2), fixed d=2 D40/D10 = {fixed:.2} (need <= 1.3)"),
    );
}

fn criterion_06_effective_dimension_rates() {
    let start = Instant::now();
    let line = ArmSet::new(DMatrix::from_fn(11, 1, |i, _| i as f64 / 10.0)).unwrap();
    let grid = [0.1, 0.01, 0.001];
    let d_eff = |spectrum| {
        let emb = MercerEmbedder::new(&line, SpectrumModel::sine(spectrum)).unwrap();
        grid.map(|eps| emb.effective_dimension(eps, 0.1))
    };

    let exp = d_eff(Spectrum::Exp { c_k: 1.0, beta: 1.0 });
    let exp_ok = exp.iter().all(|r| r.is_ok());
    let mut exp_resid: f64 = f64::INFINITY;
    let mut exp_text = format!("{exp:?}");
    if exp_ok {
        // Least-squares line in log(1/ε).
        let xs: Vec<f64> = grid.iter().map(|e| (1.0 / e).ln()).collect();
        let ys: Vec<f64> = exp.iter().map(|r| *r.as_ref().unwrap() as f64).collect();
        let (mx, my) = (xs.iter().sum::<f64>() / 3.0, ys.iter().sum::<f64>() / 3.0);
        let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
        exp_resid = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - my - slope * (x - mx)).abs())
            .fold(0.0, f64::max);
        exp_text = format!("{ys:?}, max residual {exp_resid:.2}");
    }

    let poly = d_eff(Spectrum::Poly { c_k: 1.0, beta: 3.0 });
    let scaled: Vec<Option<f64>> = poly
        .iter()
        .zip(grid)
        .map(|(r, eps)| r.as_ref().ok().map(|&d| d as f64 * eps.powf(2.0 / 3.0)))
        .collect();
    let poly_ok = scaled.iter().all(|v| v.is_some()) && {
        let v: Vec<f64> = scaled.iter().map(|v| v.unwrap()).collect();
        let hi = v.iter().copied().fold(0.0, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi <= 4.0 * lo
    };
    let poly_text: Vec<String> = poly
        .iter()
        .zip(&scaled)
        .map(|(r, s)| match (r, s) {
            (Ok(d), Some(s)) => format!("{d} (x eps^(2/3) = {s:.2})"),
            (Err(e), _) => format!("error: {e}"),
            _ => unreachable!(),
        })
        .collect();
    let secs = start.elapsed().as_secs_f64();
    report(
        "6",
        exp_ok && exp_resid <= 2.0 && poly_ok && secs < 1.0,
        format!("exp d_eff {exp_text}; poly beta=3 d_eff [{}]; {secs:.2}s", poly_text.join(", ")),
    );
}

fn criterion_07_complexity_inequality() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    let opts = DesignOptions::default();
    for _ in 0..30 {
        let big_d = rng.random_range(3..=5);
        let k = rng.random_range(big_d + 1..=8);
        let d = rng.random_range(1..big_d);
        let theta = DVector::from_fn(big_d, |_, _| rng.random_range(-1.0..1.0)) / big_d as f64;
        let arms = ArmSet::new(random_arms(&mut rng, k, big_d)).unwrap();
        let means: Vec<f64> = (0..k).map(|i| arms.features().row(i).dot(&theta.transpose())).collect();
        let emb = SvdEmbedder::new(&arms, theta.norm());
        let plan = svd_embed(&arms, d, theta.norm(), 0.1).unwrap();
        let theta_d = emb.theta_d(&theta, d);
        let pred = &plan.psi * &theta_d;
        let gamma_tilde = (0..k).map(|i| (means[i] - pred[i]).abs()).fold(0.0, f64::max);
        let eps = gamma_tilde.max(0.02) * rng.random_range(1.0..3.0);
        let rho = complexity_rho(&plan, &means, eps, None, &opts).unwrap();
        let rho_tilde = complexity_rho(&plan, &means, eps, Some(&theta_d), &opts).unwrap();
        worst = worst.max(rho / rho_tilde);
        if rho > 9.0 * rho_tilde + 1e-6 {
            violations += 1;
        }
    }
    report(
        "7",
        violations == 0,
        format!("{violations} violations in 30 instances, max rho/rho_tilde {worst:.3}"),
    );
}

fn criterion_08_gradient_and_ntk() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);

    // Finite differences.
    let mut fd_worst: f64 = 0.0;
    let mut probes = 0;
    while probes < 20 {
        let depth = 2 + probes % 3;
        let theta = random_params(4, 8, depth, &mut rng);
        let x = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        if reference_forward(&theta, &x).1 < 1e-3 {
            continue;
        }
        let fd = finite_difference_grad(&theta, &x, 1e-5);
        fd_worst = fd_worst.max(rel_err(&embex::neural::grad_param(&theta, &x), &fd));
        probes += 1;
    }
    let fd_ok = fd_worst <= 1e-4;

    // Closed-form NTK against Monte-Carlo.
    let mut mc_worst: f64 = 0.0;
    for depth in [2, 3] {
        for (n, c) in [-0.7, -0.2, 0.0, 0.4, 0.9].into_iter().enumerate() {
            let e = ntk_entry(1.0, c, 1.0, depth);
            let (s, ht, h) = monte_carlo_ntk(c, depth, 1_000_000, 900 + n as u64);
            for (est, exact) in [(s, e.sigma), (ht, e.h_tilde), (h, e.h)] {
                mc_worst = mc_worst.max((est - exact).abs() / exact.abs());
            }
        }
    }
    let mc_ok = mc_worst <= 0.01;

    // Gradient kernel at width 4096.
    let (arms, _) = make_synthetic_nonlinear(6, 4, 8).unwrap();
    let x = prepare_inputs(&arms).unwrap();
    let mut conc = Vec::new();
    for depth in [2, 3] {
        let theta = init_params(x.ncols(), 4096, depth, 8).unwrap();
        let g = gradient_gram(&theta, &x) / 4096.0;
        let h = ntk_gram(&x, depth).unwrap().h;
        conc.push((depth, (&g - &h).amax()));
    }
    let conc_ok = conc.iter().all(|&(_, v)| v <= 0.1);
    let secs = start.elapsed().as_secs_f64();
    let conc_text: Vec<String> = conc.iter().map(|(l, v)| format!("L={l}: {v:.3}")).collect();
    report(
        "8",
        fd_ok && mc_ok && conc_ok && secs < 300.0,
        format!(
            "fd rel err {fd_worst:.1e} (<= 1e-4 {}); MC rel err {mc_worst:.2e} (<= 1e-2 {}); \
             max |g'g/m - H| {} (<= 0.1 {}); {secs:.1}s",
            pass(fd_ok),
            pass(mc_ok),
            conc_text.join(", "),
            pass(conc_ok)
        ),
    );
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "violated"
    }
}

fn criterion_09_zero_at_init() {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let theta = init_params(20, 128, 3, 9).unwrap();
    let worst = (0..100)
        .map(|_| embex::neural::forward(&theta, &mirrored_unit(10, &mut rng)).abs())
        .fold(0.0, f64::max);
    report("9", worst <= 1e-6, format!("max |f(x; theta0)| = {worst:.1e} over 100 arms"));
}

fn criterion_10_neural_end_to_end() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        dataset: Dataset::SyntheticNonlinear,
        k: 200,
        d: 30,
        eps: 0.1,
        neural_width: 128,
        neural_depth: 3,
        ..ExperimentConfig::default()
    };
    let (mut good, mut neural_pulls, mut action_pulls) = (0, 0.0, 0.0);
    for seed in 0..20 {
        let (arms, rewards) = build_instance(&cfg, seed).unwrap();
        let oracle_seed = derive_seed(seed, ORACLE_STREAM);
        let mut oracle = Oracle::new(rewards.clone(), oracle_seed, cfg.max_pulls);
        let out = neural_eliminate(&arms, &mut oracle, &cfg.neural, 128, 3, seed).unwrap();
        if rewards.gap(out.recommended) <= cfg.eps {
            good += 1;
        }
        neural_pulls += out.total_pulls as f64 / 20.0;
        let mut oracle = Oracle::new(rewards, oracle_seed, cfg.max_pulls);
        action_pulls += action_eliminate(&mut oracle, cfg.eps, cfg.delta).unwrap().total_pulls as f64 / 20.0;
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "10",
        good >= 18 && neural_pulls <= action_pulls,
        format!("{good}/20 eps-optimal, mean pulls neural {neural_pulls:.0} vs action {action_pulls:.0}; {secs:.0}s"),
    );
}

/// Unit arms with exactly linear means and a best-arm gap of at least 0.15.
fn separated_linear_instance(rng: &mut ChaCha8Rng, k: usize, d: usize) -> (ArmSet, RewardModel) {
    loop {
        let x = random_arms(rng, k, d);
        let x = DMatrix::from_fn(k, d, |i, j| x[(i, j)] / x.row(i).norm());
        let theta = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)).normalize() * 0.9;
        let means: Vec<f64> = (0..k).map(|i| x.row(i).transpose().dot(&theta)).collect();
        let rewards = RewardModel::new(means, Noise::Gaussian).unwrap();
        let second = (0..k).map(|i| rewards.gap(i)).filter(|&g| g > 0.0).fold(f64::INFINITY, f64::min);
        if second >= 0.15 {
            return (ArmSet::new(x).unwrap(), rewards);
        }
    }
}

fn criterion_11_unknown_misspecification_stream() {
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let budget = 6;
    let mut stable = 0;
    let mut notes = Vec::new();
    for seed in 0..20 {
        let (arms, rewards) = separated_linear_instance(&mut rng, 8, 4);
        let plan = EmbeddingPlan::identity(&arms);
        let best = (0..arms.len()).find(|&i| rewards.gap(i) == 0.0).unwrap();
        let mut oracle = Oracle::new(rewards, seed, DEFAULT_PULL_CAP);
        let cfg = EliminationConfig::default();
        let stream: Result<Vec<usize>, _> = UnknownMisspecRun::new(&plan.psi, &mut oracle, &cfg, budget)
            .unwrap()
            .map(|r| r.map(|(_, arm)| arm))
            .collect();
        match stream {
            Ok(stream) => {
                let first = stream.iter().position(|&a| a == best);
                if stream.len() == budget && first.is_some_and(|f| stream[f..].iter().all(|&a| a == best)) {
                    stable += 1;
                } else {
                    notes.push(format!("seed {seed}: {stream:?} (best {best})"));
                }
            }
            Err(e) => notes.push(format!("seed {seed}: {e}")),
        }
    }
    report(
        "11",
        stable == 20,
        format!("{stable}/20 streams settle on the best arm within {budget} rounds{}", notes.iter().map(|n| format!("; {n}")).collect::<String>()),
    );
}

fn criterion_12_determinism() {
    let cfg = ExperimentConfig {
        k: 16,
        d: 8,
        trials: 8,
        timing: false,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let bytes = |name: &str| {
        let path = dir.path().join(name);
        let recs = run_experiment(&cfg).unwrap();
        write_records(std::fs::File::create(&path).unwrap(), &recs).unwrap();
        std::fs::read(&path).unwrap()
    };
    let (a, b) = (bytes("a.csv"), bytes("b.csv"));
    report("12", a == b && !a.is_empty(), format!("{} vs {} bytes, identical: {}", a.len(), b.len(), a == b));
}

fn main() {
    let criteria: [(&str, fn()); 12] = [
        ("1", criterion_01_design_oracle_equivalence),
        ("2", criterion_02_kiefer_wolfowitz),
        ("3", criterion_03_rounding_guarantee),
        ("4", criterion_04_pac_success),
        ("5", criterion_05_high_dimensional_separation),
        ("6", criterion_06_effective_dimension_rates),
        ("7", criterion_07_complexity_inequality),
        ("8", criterion_08_gradient_and_ntk),
        ("9", criterion_09_zero_at_init),
        ("10", criterion_10_neural_end_to_end),
        ("11", criterion_11_unknown_misspecification_stream),
        ("12", criterion_12_determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (n, check) in criteria {
        if let Err(payload) = panic::catch_unwind(check) {
            failed += 1;
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            if !msg.starts_with("criterion ") {
                println!("criterion {n}: FAIL panicked: {msg}");
            }
        }
    }
    println!("acceptance: {}/12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
