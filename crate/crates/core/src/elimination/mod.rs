//! Elimination algorithms for `(ε, δ)`-PAC best-arm identification.
//!
//! * [`adaptive_eliminate`]: re-embeds every round at `d_k = d_eff(4·2^{−k})`.
//! * [`fixed_eliminate`]: one embedding for the whole run.
//! * [`unknown_misspec_eliminate`]: no misspecification bound, emits a
//!   recommendation stream.
//! * [`rage_eliminate`]: raw features, no misspecification.
//! * [`action_eliminate`]: successive elimination ignoring features.
//!
//! The algorithms only ever see features and pull results. Success is judged
//! afterwards against the true means held by the oracle.

mod action;
mod complexity;
mod linear;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::arms::{ArmError, Oracle, RewardModel};
use crate::design::{DesignError, DesignOptions};
use crate::embedding::EmbeddingError;
use crate::linalg;
use crate::rounding::RoundingError;

pub use action::{action_eliminate, action_radius};
pub use complexity::{complexity_directions, complexity_rho, complexity_rho_at};
pub use linear::{
    adaptive_eliminate, fixed_eliminate, rage_eliminate, unknown_misspec_eliminate,
    UnknownMisspecRun,
};

/// Condition number above which an unregularised information matrix is
/// declared singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Tolerance on the `gap ≤ ε` comparison used to judge success.
pub const SUCCESS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EliminationError {
    #[error("pull cap reached after {} pulls", .0.total_pulls)]
    CapExceeded(Box<RunOutcome>),
    #[error(transparent)]
    NotReachable(EmbeddingError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Rounding(#[from] RoundingError),
    #[error(transparent)]
    Arm(ArmError),
    #[error("information matrix is singular (condition number {condition:e})")]
    SingularInformation { condition: f64 },
    #[error("round {round}: eps_k = {eps_k} exceeds 2^-k/2 = {limit}")]
    AdmissionViolated { round: usize, eps_k: f64, limit: f64 },
    #[error("feature matrix has rank {rank} < {dim}")]
    RankDeficient { rank: usize, dim: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Neural(#[from] crate::neural::NeuralError),
}

/// Parameters shared by the linear elimination algorithms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EliminationConfig {
    pub eps: f64,
    pub delta: f64,
    pub zeta: f64,
    pub design: DesignOptions,
}

impl Default for EliminationConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            delta: 0.05,
            zeta: 0.1,
            design: DesignOptions::default(),
        }
    }
}

impl EliminationConfig {
    pub fn validate(&self) -> Result<(), EliminationError> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(EliminationError::InvalidParameter(format!("eps = {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(EliminationError::InvalidParameter(format!("delta = {}", self.delta)));
        }
        if !(self.zeta > 0.0) {
            return Err(EliminationError::InvalidParameter(format!("zeta = {}", self.zeta)));
        }
        Ok(())
    }
}

/// One elimination round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub k: usize,
    pub d_k: usize,
    pub tau_k: f64,
    /// `4(1 + ζ)d_k`, the value the effective dimension was computed with.
    pub g_approx: f64,
    pub eps_k: f64,
    pub n_k: u64,
    pub survivors_before: usize,
    /// Survivor indices after this round's elimination step.
    pub survivors: Vec<usize>,
    /// Ledger total at the end of the round.
    pub pulls: u64,
    /// Arm recommended at the end of the round.
    pub recommended: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub recommended: usize,
    pub total_pulls: u64,
    /// Every final survivor is `ε`-optimal (judged against true means).
    pub succeeded: bool,
    /// Pulls at the end of the first round whose survivors were all
    /// `ε`-optimal.
    pub sample_complexity: Option<u64>,
    pub survivors: Vec<usize>,
    pub capped: bool,
    pub trace: Vec<RoundRecord>,
}

impl RunOutcome {
    pub fn rounds(&self) -> usize {
        self.trace.len()
    }

    pub fn d_sequence(&self) -> Vec<usize> {
        self.trace.iter().map(|r| r.d_k).collect()
    }
}

fn all_eps_optimal(set: &[usize], rewards: &RewardModel, eps: f64) -> bool {
    set.iter().all(|&i| rewards.gap(i) <= eps + SUCCESS_TOL)
}

/// Fills in the success fields from the true means.
pub fn judge(outcome: &mut RunOutcome, rewards: &RewardModel, eps: f64) {
    if outcome.capped {
        outcome.succeeded = false;
        outcome.sample_complexity = None;
        return;
    }
    outcome.succeeded = all_eps_optimal(&outcome.survivors, rewards, eps);
    let all: Vec<usize> = (0..rewards.means().len()).collect();
    outcome.sample_complexity = if !outcome.succeeded {
        None
    } else if all_eps_optimal(&all, rewards, eps) {
        Some(0)
    } else {
        outcome
            .trace
            .iter()
            .find(|r| all_eps_optimal(&r.survivors, rewards, eps))
            .map(|r| r.pulls)
            .or(Some(outcome.total_pulls))
    };
}

/// Builds the final outcome and judges it.
pub(crate) fn finish(
    oracle: &Oracle,
    survivors: Vec<usize>,
    recommended: usize,
    trace: Vec<RoundRecord>,
    capped: bool,
    eps: f64,
) -> RunOutcome {
    let mut out = RunOutcome {
        recommended,
        total_pulls: oracle.ledger().total(),
        succeeded: false,
        sample_complexity: None,
        survivors,
        capped,
        trace,
    };
    judge(&mut out, oracle.rewards(), eps);
    out
}

/// Converts a pull failure into the matching elimination error.
pub(crate) fn pull_failure(
    err: ArmError,
    oracle: &Oracle,
    survivors: &[usize],
    recommended: usize,
    trace: &[RoundRecord],
    eps: f64,
) -> EliminationError {
    match err {
        ArmError::CapExceeded { .. } => EliminationError::CapExceeded(Box::new(finish(
            oracle,
            survivors.to_vec(),
            recommended,
            trace.to_vec(),
            true,
            eps,
        ))),
        other => EliminationError::Arm(other),
    }
}

/// `(Σψψᵀ + ridge·I)⁻¹ Σψy` from individual observations.
pub fn least_squares_estimate(
    pulled: &[(DVector<f64>, f64)],
    ridge: f64,
) -> Result<DVector<f64>, EliminationError> {
    let d = pulled.first().map(|p| p.0.len()).unwrap_or(0);
    let mut a = DMatrix::<f64>::identity(d, d) * ridge;
    let mut b = DVector::zeros(d);
    for (psi, y) in pulled {
        a.ger(1.0, psi, psi, 1.0);
        b.axpy(*y, psi, 1.0);
    }
    solve_normal_equations(&a, &b)
}

fn solve_normal_equations(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, EliminationError> {
    let eig = linalg::SortedEigen::new(a);
    let n = eig.values.len();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    let lmax = eig.values[0];
    let lmin = eig.values[n - 1];
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(EliminationError::SingularInformation { condition });
    }
    let vt_b = eig.vectors.transpose() * b;
    let scaled = DVector::from_fn(n, |i, _| vt_b[i] / eig.values[i]);
    Ok(&eig.vectors * scaled)
}

/// Per-arm pull counts and reward sums collected in one round.
pub(crate) struct RoundData {
    pub(crate) counts: Vec<u64>,
    pub(crate) sums: Vec<f64>,
}

impl RoundData {
    /// `A = Σ nᵢ ψᵢψᵢᵀ` and the pseudo-inverse estimate `A⁺ b`.
    ///
    /// Directions outside the range of `A` get infinite width in the
    /// confidence test, so only in-range components of the estimate are used.
    fn estimate(&self, psi: &DMatrix<f64>) -> (linalg::MahalanobisNorm, DVector<f64>) {
        let d = psi.ncols();
        let w: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        let (pinv, proj) = linalg::weighted_pinv(psi, &w);
        let mut b = DVector::zeros(d);
        for (i, &s) in self.sums.iter().enumerate() {
            if self.counts[i] > 0 {
                b.axpy(s, &psi.row(i).transpose(), 1.0);
            }
        }
        let theta = &pinv * b;
        (linalg::MahalanobisNorm::from_parts(pinv, proj), theta)
    }
}

pub(crate) fn pull_counts(oracle: &mut Oracle, counts: &[u64]) -> Result<RoundData, ArmError> {
    let mut sums = vec![0.0; counts.len()];
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums[i] = oracle.pull_many(i, c)?;
        }
    }
    Ok(RoundData {
        counts: counts.to_vec(),
        sums,
    })
}

pub(crate) fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}
