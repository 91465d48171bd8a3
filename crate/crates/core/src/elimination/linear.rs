//! Design-driven elimination on embedded features.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::{
    elapsed_ms, finish, pull_counts, pull_failure, EliminationConfig, EliminationError,
    RoundData, RoundRecord, RunOutcome,
};
use crate::arms::{ArmSet, Oracle};
use crate::design::{difference_set_of, solve_design, DesignOptions, DirectionSet};
use crate::embedding::{g_approx, Embedder, EmbeddingError, EmbeddingPlan};
use crate::linalg;
use crate::rounding::{min_rounding_support, round_allocation};

/// Number of halving rounds needed to reach accuracy `target`.
pub(crate) fn rounds_for(target: f64) -> usize {
    (2.0 / target).log2().ceil().max(1.0) as usize
}

/// Result of the design → round → pull → estimate part of a round.
struct Sampled {
    tau: f64,
    n: u64,
    dirs: DirectionSet,
    data: RoundData,
}

enum SampleError {
    Pull(crate::arms::ArmError),
    Other(EliminationError),
}

impl<E: Into<EliminationError>> From<E> for SampleError {
    fn from(e: E) -> Self {
        SampleError::Other(e.into())
    }
}

/// Solves the design over the survivors' difference set, chooses `N` from
/// `tau` via `budget`, rounds and pulls.
fn design_and_sample(
    psi: &DMatrix<f64>,
    survivors: &[usize],
    zeta: f64,
    design: &DesignOptions,
    oracle: &mut Oracle,
    budget: impl Fn(f64) -> Result<u64, EliminationError>,
) -> Result<Sampled, SampleError> {
    let d = psi.ncols();
    let dirs = difference_set_of(psi, survivors);
    let sol = solve_design(psi, &dirs, design)?;
    let tau = sol.tau;
    let n = budget(tau)?;
    let plan = round_allocation(&sol.weights, n, d, zeta, psi, &dirs)?;
    let data = pull_counts(oracle, &plan.counts).map_err(SampleError::Pull)?;
    Ok(Sampled { tau, n, dirs, data })
}

/// Drops every `x` for which some survivor `x′` has
/// `(ψ(x′) − ψ(x))ᵀθ̂ ≥ eps_k + ‖ψ(x′) − ψ(x)‖_{A⁺} √(2 log_term)`.
fn confidence_eliminate(
    psi: &DMatrix<f64>,
    survivors: &[usize],
    norm: &linalg::MahalanobisNorm,
    theta: &DVector<f64>,
    eps_k: f64,
    log_term: f64,
) -> Vec<usize> {
    let root = (2.0 * log_term).sqrt();
    let est: Vec<f64> = survivors
        .iter()
        .map(|&i| psi.row(i).transpose().dot(theta))
        .collect();
    let mut keep = Vec::with_capacity(survivors.len());
    'outer: for (a, &x) in survivors.iter().enumerate() {
        for (b, &xp) in survivors.iter().enumerate() {
            if a == b {
                continue;
            }
            let y = (psi.row(xp) - psi.row(x)).transpose();
            if y.iter().all(|&v| v == 0.0) {
                continue;
            }
            let width = norm.squared(&y);
            if !width.is_finite() {
                continue;
            }
            if est[b] - est[a] >= eps_k + width.sqrt() * root {
                continue 'outer;
            }
        }
        keep.push(x);
    }
    keep
}

fn best_estimate(psi: &DMatrix<f64>, survivors: &[usize], theta: &DVector<f64>) -> usize {
    let mut best = survivors[0];
    let mut best_v = f64::NEG_INFINITY;
    for &i in survivors {
        let v = psi.row(i).transpose().dot(theta);
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// How a run picks its embedding each round.
enum PlanSource<'a> {
    Adaptive(&'a dyn Embedder),
    Fixed(&'a EmbeddingPlan),
}

fn run_rounds(
    source: PlanSource<'_>,
    rounds: usize,
    oracle: &mut Oracle,
    cfg: &EliminationConfig,
) -> Result<RunOutcome, EliminationError> {
    let k_arms = oracle.arms();
    let zeta = cfg.zeta;

    // Resolve every round's dimension before the first pull.
    let dims: Vec<usize> = match &source {
        PlanSource::Adaptive(emb) => (1..=rounds)
            .map(|k| {
                emb.effective_dimension(4.0 * 0.5f64.powi(k as i32), zeta)
                    .map_err(|e| match e {
                        EmbeddingError::NotReachable { .. } => EliminationError::NotReachable(e),
                        other => EliminationError::Embedding(other),
                    })
            })
            .collect::<Result<_, _>>()?,
        PlanSource::Fixed(plan) => vec![plan.d; rounds],
    };

    let mut survivors: Vec<usize> = (0..k_arms).collect();
    let mut recommended = 0;
    let mut trace: Vec<RoundRecord> = Vec::new();
    let mut cached: Option<EmbeddingPlan> = None;

    for (idx, &d_k) in dims.iter().enumerate() {
        let k = idx + 1;
        let start = Instant::now();
        let threshold = 0.5f64.powi(k as i32);
        let delta_k = cfg.delta / (k * k) as f64;
        let plan: &EmbeddingPlan = match &source {
            PlanSource::Fixed(p) => p,
            PlanSource::Adaptive(emb) => {
                if cached.as_ref().map(|p| p.d) != Some(d_k) {
                    cached = Some(emb.plan(d_k, zeta)?);
                }
                cached.as_ref().unwrap()
            }
        };
        let before = survivors.len();
        if before == 1 {
            trace.push(RoundRecord {
                k,
                d_k,
                tau_k: 0.0,
                g_approx: g_approx(d_k, zeta),
                eps_k: 2.0 * plan.gamma_tilde,
                n_k: 0,
                survivors_before: 1,
                survivors: survivors.clone(),
                pulls: oracle.ledger().total(),
                recommended,
                wall_ms: elapsed_ms(start),
            });
            continue;
        }

        let log_term = ((before * before) as f64 / delta_k).ln();
        let gt = plan.gamma_tilde;
        let r = min_rounding_support(d_k, zeta);
        let eps_of = |tau: f64| 2.0 * gt + gt * ((1.0 + zeta) * tau).sqrt();
        let budget = |tau: f64| -> Result<u64, EliminationError> {
            let eps_k = eps_of(tau);
            if eps_k > threshold / 2.0 {
                return Err(EliminationError::AdmissionViolated {
                    round: k,
                    eps_k,
                    limit: threshold / 2.0,
                });
            }
            let n = 2.0 * (1.0 + zeta) * tau * log_term / (threshold - eps_k).powi(2);
            Ok((n.ceil() as u64).max(r))
        };
        let sampled = match design_and_sample(&plan.psi, &survivors, zeta, &cfg.design, oracle, budget)
        {
            Ok(s) => s,
            Err(SampleError::Pull(e)) => {
                return Err(pull_failure(e, oracle, &survivors, recommended, &trace, cfg.eps))
            }
            Err(SampleError::Other(e)) => return Err(e),
        };
        let eps_k = eps_of(sampled.tau);
        let (norm, theta) = sampled.data.estimate(&plan.psi);
        if !sampled.dirs.is_empty() {
            survivors = confidence_eliminate(&plan.psi, &survivors, &norm, &theta, eps_k, log_term);
        }
        recommended = best_estimate(&plan.psi, &survivors, &theta);
        trace.push(RoundRecord {
            k,
            d_k,
            tau_k: sampled.tau,
            g_approx: g_approx(d_k, zeta),
            eps_k,
            n_k: sampled.n,
            survivors_before: before,
            survivors: survivors.clone(),
            pulls: oracle.ledger().total(),
            recommended,
            wall_ms: elapsed_ms(start),
        });
        log::debug!(
            "round {k}: d={d_k} tau={:.4} N={} survivors {before} -> {}",
            sampled.tau,
            sampled.n,
            survivors.len()
        );
    }
    Ok(finish(oracle, survivors, recommended, trace, false, cfg.eps))
}

/// Adaptive embedding elimination: round `k` uses `d_k = d_eff(4·2^{−k})`
/// and runs `⌈log₂(2/ε)⌉` rounds.
pub fn adaptive_eliminate(
    embedder: &dyn Embedder,
    oracle: &mut Oracle,
    cfg: &EliminationConfig,
) -> Result<RunOutcome, EliminationError> {
    cfg.validate()?;
    run_rounds(PlanSource::Adaptive(embedder), rounds_for(cfg.eps), oracle, cfg)
}

/// Elimination with one fixed embedding for `⌈log₂(2/γ(d))⌉` rounds.
///
/// A plan without misspecification (`γ̃ = 0`) has no natural round count,
/// so it runs `⌈log₂(2/ε)⌉` rounds like [`rage_eliminate`].
pub fn fixed_eliminate(
    plan: &EmbeddingPlan,
    oracle: &mut Oracle,
    cfg: &EliminationConfig,
) -> Result<RunOutcome, EliminationError> {
    cfg.validate()?;
    let rounds = if plan.gamma_tilde > 0.0 {
        rounds_for(plan.gamma)
    } else {
        rounds_for(cfg.eps)
    };
    run_rounds(PlanSource::Fixed(plan), rounds, oracle, cfg)
}

/// Full-dimension elimination on the raw features (`γ̃ = 0`, `ε_k = 0`).
pub fn rage_eliminate(
    arms: &ArmSet,
    oracle: &mut Oracle,
    cfg: &EliminationConfig,
) -> Result<RunOutcome, EliminationError> {
    cfg.validate()?;
    let rank = arms.rank();
    if rank < arms.dim() {
        return Err(EliminationError::RankDeficient {
            rank,
            dim: arms.dim(),
        });
    }
    let plan = EmbeddingPlan::identity(arms);
    run_rounds(PlanSource::Fixed(&plan), rounds_for(cfg.eps), oracle, cfg)
}

/// Elimination without a misspecification bound.
///
/// Each call to [`Iterator::next`] runs one round and yields
/// `(round, recommended arm)`. The stream has no verifiable stopping time;
/// it ends at the round budget, on a pull-cap hit, or on an error.
pub struct UnknownMisspecRun<'a> {
    psi: &'a DMatrix<f64>,
    oracle: &'a mut Oracle,
    cfg: EliminationConfig,
    round_budget: usize,
    k: usize,
    survivors: Vec<usize>,
    recommended: usize,
    trace: Vec<RoundRecord>,
    capped: bool,
    failed: bool,
}

impl<'a> UnknownMisspecRun<'a> {
    pub fn new(
        psi: &'a DMatrix<f64>,
        oracle: &'a mut Oracle,
        cfg: &EliminationConfig,
        round_budget: usize,
    ) -> Result<Self, EliminationError> {
        cfg.validate()?;
        if round_budget == 0 {
            return Err(EliminationError::InvalidParameter("round_budget must be >= 1".into()));
        }
        let k_arms = oracle.arms();
        Ok(Self {
            psi,
            oracle,
            cfg: *cfg,
            round_budget,
            k: 0,
            survivors: (0..k_arms).collect(),
            recommended: 0,
            trace: Vec::new(),
            capped: false,
            failed: false,
        })
    }

    pub fn survivors(&self) -> &[usize] {
        &self.survivors
    }

    pub fn trace(&self) -> &[RoundRecord] {
        &self.trace
    }

    /// Judges the run at the current round boundary.
    pub fn outcome(&self) -> RunOutcome {
        finish(
            self.oracle,
            self.survivors.clone(),
            self.recommended,
            self.trace.clone(),
            self.capped,
            self.cfg.eps,
        )
    }

    fn step(&mut self) -> Result<usize, EliminationError> {
        let k = self.k;
        let start = Instant::now();
        let zeta = self.cfg.zeta;
        let d = self.psi.ncols();
        let threshold = 0.5f64.powi(k as i32);
        let before = self.survivors.len();
        if before == 1 {
            self.recommended = self.survivors[0];
            self.trace.push(RoundRecord {
                k,
                d_k: d,
                tau_k: 0.0,
                g_approx: g_approx(d, zeta),
                eps_k: 0.0,
                n_k: 0,
                survivors_before: 1,
                survivors: self.survivors.clone(),
                pulls: self.oracle.ledger().total(),
                recommended: self.recommended,
                wall_ms: elapsed_ms(start),
            });
            return Ok(self.recommended);
        }
        let delta_k = self.cfg.delta / (k * k) as f64;
        let log_term = ((before * before) as f64 / delta_k).ln();
        let r = min_rounding_support(d, zeta);
        let budget = |tau: f64| -> Result<u64, EliminationError> {
            let n = 4f64.powi(k as i32) * 8.0 * (1.0 + zeta) * tau * log_term;
            Ok((n.ceil() as u64).max(r))
        };
        let sampled = match design_and_sample(
            self.psi,
            &self.survivors,
            zeta,
            &self.cfg.design,
            self.oracle,
            budget,
        ) {
            Ok(s) => s,
            Err(SampleError::Pull(e)) => {
                let err = pull_failure(
                    e,
                    self.oracle,
                    &self.survivors,
                    self.recommended,
                    &self.trace,
                    self.cfg.eps,
                );
                self.capped = matches!(err, EliminationError::CapExceeded(_));
                return Err(err);
            }
            Err(SampleError::Other(e)) => return Err(e),
        };
        let (_, theta) = sampled.data.estimate(self.psi);
        let top = best_estimate(self.psi, &self.survivors, &theta);
        let top_v = self.psi.row(top).transpose().dot(&theta);
        self.survivors.retain(|&i| {
            let v = self.psi.row(i).transpose().dot(&theta);
            i == top || top_v - v < threshold
        });
        self.recommended = top;
        self.trace.push(RoundRecord {
            k,
            d_k: d,
            tau_k: sampled.tau,
            g_approx: g_approx(d, zeta),
            eps_k: 0.0,
            n_k: sampled.n,
            survivors_before: before,
            survivors: self.survivors.clone(),
            pulls: self.oracle.ledger().total(),
            recommended: top,
            wall_ms: elapsed_ms(start),
        });
        Ok(top)
    }
}

impl Iterator for UnknownMisspecRun<'_> {
    type Item = Result<(usize, usize), EliminationError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.k >= self.round_budget {
            return None;
        }
        self.k += 1;
        match self.step() {
            Ok(arm) => Some(Ok((self.k, arm))),
            Err(e) => {
                self.failed = true;
                Some(Err(e))
            }
        }
    }
}

/// Runs the unknown-misspecification stream to its round budget and returns
/// the per-round recommendations together with the judged outcome.
pub fn unknown_misspec_eliminate(
    plan: &EmbeddingPlan,
    oracle: &mut Oracle,
    cfg: &EliminationConfig,
    round_budget: usize,
) -> Result<(Vec<(usize, usize)>, RunOutcome), EliminationError> {
    let mut run = UnknownMisspecRun::new(&plan.psi, oracle, cfg, round_budget)?;
    let mut stream = Vec::new();
    while let Some(item) = run.next() {
        match item {
            Ok(rec) => stream.push(rec),
            Err(e) => return Err(e),
        }
    }
    Ok((stream, run.outcome()))
}
