//! Neural arm elimination: gradient features, design, retraining.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::network::{forward_batch, gradient_gram, init_params, train_gradient_descent, NetworkParams, TrainingSet};
use super::ntk::{neural_effective_dimension, ntk_gram, tail_dimension};
use super::NeuralError;
use crate::arms::{ArmSet, Oracle};
use crate::design::{difference_set_of, solve_design, DesignOptions};
use crate::elimination::{
    elapsed_ms, finish, pull_counts, pull_failure, EliminationError, RoundRecord, RunOutcome,
};
use crate::embedding::g_approx;
use crate::linalg::SortedEigen;
use crate::rounding::{min_rounding_support, round_allocation};

/// Constants of the asymptotic parameter schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheorySchedule {
    /// Bound on the RKHS norm proxy `√(hᵀH⁻¹h)`.
    pub s: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeuralSchedule {
    /// Fixed learning rate on the per-sample loss and a fixed step count.
    Desk,
    /// `α`, `ε̄`, `A`, `η_k`, `J_k` from the asymptotic analysis. Step counts
    /// are capped at `gd_steps`.
    Theory(TheorySchedule),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuralConfig {
    pub eps: f64,
    pub delta: f64,
    pub zeta: f64,
    pub alpha: f64,
    /// Tail budget `ε̄` on the singular values of the gradient matrix.
    pub eps_bar: f64,
    /// Allocation scale `A`; `None` uses twice the round-1 dimension.
    pub allocation_scale: Option<f64>,
    /// Step size applied to the loss divided by the number of samples.
    pub learning_rate: f64,
    pub gd_steps: usize,
    pub schedule: NeuralSchedule,
    pub design: DesignOptions,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            delta: 0.05,
            zeta: 0.1,
            alpha: 1e-3,
            eps_bar: 0.1,
            allocation_scale: None,
            learning_rate: 1e-4,
            gd_steps: 6000,
            schedule: NeuralSchedule::Desk,
            design: DesignOptions::default(),
        }
    }
}

/// `ε̄` values scanned when tuning.
pub const EPS_BAR_GRID: [f64; 5] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1];

impl NeuralConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        let bad = |what: &str, v: f64| Err(NeuralError::InvalidConfig(format!("{what} = {v}")));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("eps", self.eps);
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", self.delta);
        }
        if !(self.zeta > 0.0) {
            return bad("zeta", self.zeta);
        }
        if !(self.alpha > 0.0) {
            return bad("alpha", self.alpha);
        }
        if !(self.eps_bar > 0.0) {
            return bad("eps_bar", self.eps_bar);
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate", self.learning_rate);
        }
        if let Some(a) = self.allocation_scale {
            if !(a > 0.0) {
                return bad("allocation_scale", a);
            }
        }
        if self.gd_steps == 0 {
            return bad("gd_steps", 0.0);
        }
        Ok(())
    }
}

/// Network inputs: each arm `x` becomes `[x; x] / (√2 ‖x‖)`, so inputs
/// have unit norm and mirrored halves.
pub fn prepare_inputs(arms: &ArmSet) -> Result<DMatrix<f64>, NeuralError> {
    let x = arms.features();
    let (k, d) = x.shape();
    let mut out = DMatrix::zeros(k, 2 * d);
    for i in 0..k {
        let n = x.row(i).norm();
        if n == 0.0 {
            return Err(NeuralError::ZeroArm(i));
        }
        let s = 1.0 / (std::f64::consts::SQRT_2 * n);
        for j in 0..d {
            out[(i, j)] = x[(i, j)] * s;
            out[(i, j + d)] = x[(i, j)] * s;
        }
    }
    Ok(out)
}

/// Truncated features from the SVD of `G` (rows `g(x; θ)/√m`).
#[derive(Debug, Clone, PartialEq)]
pub struct GradientFeatures {
    /// `ψ(xᵢ) = (e₁u_{i1}, …, e_d u_{id})`.
    pub psi: DMatrix<f64>,
    /// All singular values `e₁ ≥ e₂ ≥ …` of `G`.
    pub singular_values: DVector<f64>,
    pub d: usize,
}

/// `d = min{d ≥ 1 : Σ_{i>d} eᵢ ≤ eps_bar}` and the matching features.
pub fn gradient_features(theta: &NetworkParams, x: &DMatrix<f64>, eps_bar: f64) -> GradientFeatures {
    let gram = gradient_gram(theta, x) / theta.width as f64;
    let eig = SortedEigen::new(&gram);
    let e = eig.values.map(|v| v.max(0.0).sqrt());
    let d = tail_dimension(e.as_slice(), eps_bar);
    let psi = DMatrix::from_fn(x.nrows(), d, |i, j| e[j] * eig.vectors[(i, j)]);
    GradientFeatures {
        psi,
        singular_values: e,
        d,
    }
}

struct Resolved {
    alpha: f64,
    eps_bar: f64,
    scale: Option<f64>,
}

fn resolve_theory(
    t: &TheorySchedule,
    cfg: &NeuralConfig,
    x: &DMatrix<f64>,
    depth: usize,
    rounds: usize,
) -> Result<Resolved, NeuralError> {
    let k = x.nrows() as f64;
    let l = depth as f64;
    let zeta = cfg.zeta;
    let alpha = (1.0f64).min((k * k).ln() / t.s);
    let r = min_rounding_support(x.nrows(), zeta) as f64;
    let delta_n = cfg.delta / (8.0 * (rounds * rounds) as f64);
    let log_n = (k * k / delta_n).ln();
    let eps = cfg.eps;
    let eb2 = (alpha * alpha / (r * r * l))
        .min(eps * eps / ((1.0 + zeta) * k * t.s))
        .min(eps.powi(7) * alpha.powi(3) / ((1.0 + zeta).powi(3) * k.powi(3) * log_n.powi(3) * l * l));
    let gram = ntk_gram(x, depth)?;
    let a = neural_effective_dimension(&gram, eb2 / k) as f64;
    log::info!("theory schedule: alpha={alpha:e} eps_bar^2={eb2:e} A={a} lambda_0={:e}", gram.lambda_0);
    Ok(Resolved {
        alpha,
        eps_bar: eb2.sqrt(),
        scale: Some(a),
    })
}

/// Step size and step count for round `k` with `n` samples.
fn gd_plan(cfg: &NeuralConfig, alpha: f64, m: usize, depth: usize, n: f64) -> (f64, usize) {
    match cfg.schedule {
        NeuralSchedule::Desk => (cfg.learning_rate / n, cfg.gd_steps),
        NeuralSchedule::Theory(t) => {
            let (m, l) = (m as f64, depth as f64);
            let eta = t.c1 / (m * alpha + n * m * l);
            // The logarithm is taken of the inverse ratio so the count is
            // positive.
            let j = ((n * l) / (t.c2 * cfg.eps * cfg.eps * alpha)).ln() / (eta * m * l);
            let j = j.ceil().max(1.0);
            if j > cfg.gd_steps as f64 {
                log::warn!("theory schedule asks for {j} descent steps; capped at {}", cfg.gd_steps);
            }
            (eta, (j as usize).min(cfg.gd_steps))
        }
    }
}

/// Neural arm elimination with `⌈ln(1/ε)⌉` rounds.
///
/// Round `k` embeds the arms with the truncated SVD of the gradient matrix
/// at `θ_{k−1}`, allocates
/// `N_k = max{⌈4^k A (1+ζ) ln(K²/δ_k)⌉, r_{d_k}(ζ)}` pulls with
/// `δ_k = δ/(8k²)`, retrains from `θ₀` on the round's samples and drops
/// every survivor whose network value trails the best by at least
/// `2^{−k}/8 + 3ε/8`.
pub fn neural_eliminate(
    arms: &ArmSet,
    oracle: &mut Oracle,
    cfg: &NeuralConfig,
    m: usize,
    depth: usize,
    seed: u64,
) -> Result<RunOutcome, EliminationError> {
    cfg.validate()?;
    let x = prepare_inputs(arms)?;
    let k_arms = x.nrows();
    let theta0 = init_params(x.ncols(), m, depth, seed)?;
    let rounds = ((1.0 / cfg.eps).ln().ceil() as usize).max(1);
    let resolved = match &cfg.schedule {
        NeuralSchedule::Desk => Resolved {
            alpha: cfg.alpha,
            eps_bar: cfg.eps_bar,
            scale: cfg.allocation_scale,
        },
        NeuralSchedule::Theory(t) => resolve_theory(t, cfg, &x, depth, rounds)?,
    };
    let zeta = cfg.zeta;
    let mut scale = resolved.scale;
    let mut theta = theta0.clone();
    let mut survivors: Vec<usize> = (0..k_arms).collect();
    let mut recommended = 0;
    let mut trace: Vec<RoundRecord> = Vec::new();

    for k in 1..=rounds {
        let start = Instant::now();
        let before = survivors.len();
        if before == 1 {
            trace.push(RoundRecord {
                k,
                d_k: trace.last().map_or(1, |r| r.d_k),
                tau_k: 0.0,
                g_approx: 0.0,
                eps_k: 0.0,
                n_k: 0,
                survivors_before: 1,
                survivors: survivors.clone(),
                pulls: oracle.ledger().total(),
                recommended,
                wall_ms: elapsed_ms(start),
            });
            continue;
        }
        let feats = gradient_features(&theta, &x, resolved.eps_bar);
        let d_k = feats.d;
        let a = *scale.get_or_insert(2.0 * d_k as f64);
        let delta_k = cfg.delta / (8.0 * (k * k) as f64);
        let log_term = ((k_arms * k_arms) as f64 / delta_k).ln();
        let n_raw = 4f64.powi(k as i32) * a * (1.0 + zeta) * log_term;
        let n_k = (n_raw.ceil() as u64).max(min_rounding_support(d_k, zeta));

        let dirs = difference_set_of(&feats.psi, &survivors);
        let sol = solve_design(&feats.psi, &dirs, &cfg.design)?;
        let plan = round_allocation(&sol.weights, n_k, d_k, zeta, &feats.psi, &dirs)?;
        let data = match pull_counts(oracle, &plan.counts) {
            Ok(d) => d,
            Err(e) => return Err(pull_failure(e, oracle, &survivors, recommended, &trace, cfg.eps)),
        };

        let pulled: Vec<usize> = (0..k_arms).filter(|&i| data.counts[i] > 0).collect();
        let training = TrainingSet {
            inputs: x.select_rows(&pulled),
            counts: DVector::from_iterator(pulled.len(), pulled.iter().map(|&i| data.counts[i] as f64)),
            means: DVector::from_iterator(
                pulled.len(),
                pulled.iter().map(|&i| data.sums[i] / data.counts[i] as f64),
            ),
            sse: 0.0,
        };
        let (eta, steps) = gd_plan(cfg, resolved.alpha, m, depth, n_k as f64);
        let run = train_gradient_descent(&theta0, &training, resolved.alpha, eta, steps)?;
        theta = run.params;

        let f = forward_batch(&theta, &x);
        let mut best = survivors[0];
        for &i in &survivors {
            if f[i] > f[best] {
                best = i;
            }
        }
        let threshold = 0.5f64.powi(k as i32) / 8.0 + 3.0 * cfg.eps / 8.0;
        survivors.retain(|&i| f[best] - f[i] < threshold);
        recommended = best;
        trace.push(RoundRecord {
            k,
            d_k,
            tau_k: sol.tau,
            g_approx: g_approx(d_k, zeta),
            eps_k: 0.0,
            n_k,
            survivors_before: before,
            survivors: survivors.clone(),
            pulls: oracle.ledger().total(),
            recommended,
            wall_ms: elapsed_ms(start),
        });
        log::debug!(
            "neural round {k}: d={d_k} N={n_k} loss {:.4e} -> {:.4e}, survivors {before} -> {}",
            run.losses[0],
            run.losses[run.losses.len() - 1],
            survivors.len()
        );
    }
    Ok(finish(oracle, survivors, recommended, trace, false, cfg.eps))
}
