//! Successive elimination on empirical means, ignoring features.

use std::time::Instant;

use super::{elapsed_ms, finish, pull_failure, EliminationConfig, EliminationError, RoundRecord, RunOutcome};
use crate::arms::Oracle;

/// Confidence radius after `n` pulls per arm in round `k`.
///
/// `σ·√(2 ln(4Kk²/δ)/n)`; with `σ = 1/2` (bounded rewards) this is the
/// Hoeffding radius `√(ln(4Kk²/δ)/(2n))`.
pub fn action_radius(sigma: f64, k_arms: usize, k: usize, n: u64, delta: f64) -> f64 {
    let log = (4.0 * k_arms as f64 * (k * k) as f64 / delta).ln();
    sigma * (2.0 * log / n as f64).sqrt()
}

/// Pulls every survivor once per round and drops arms whose empirical mean
/// trails the leader by at least twice the radius.
pub fn action_eliminate(oracle: &mut Oracle, eps: f64, delta: f64) -> Result<RunOutcome, EliminationError> {
    let cfg = EliminationConfig {
        eps,
        delta,
        ..EliminationConfig::default()
    };
    cfg.validate()?;
    let k_arms = oracle.arms();
    if k_arms < 2 {
        return Err(EliminationError::InvalidParameter(format!("{k_arms} arms; need at least 2")));
    }
    let sigma = oracle.noise().sub_gaussian_sigma();
    let mut survivors: Vec<usize> = (0..k_arms).collect();
    let mut sums = vec![0.0; k_arms];
    let mut recommended = 0;
    let mut trace = Vec::new();
    let mut k = 0usize;
    loop {
        k += 1;
        let start = Instant::now();
        let before = survivors.len();
        for &i in &survivors {
            match oracle.pull(i) {
                Ok(y) => sums[i] += y,
                Err(e) => return Err(pull_failure(e, oracle, &survivors, recommended, &trace, eps)),
            }
        }
        let n = k as u64;
        let u = action_radius(sigma, k_arms, k, n, delta);
        let mean = |i: usize| sums[i] / n as f64;
        let leader = survivors
            .iter()
            .copied()
            .max_by(|&a, &b| mean(a).total_cmp(&mean(b)).then(b.cmp(&a)))
            .unwrap();
        let top = mean(leader);
        survivors.retain(|&i| top - mean(i) < 2.0 * u);
        recommended = leader;
        trace.push(RoundRecord {
            k,
            d_k: 0,
            tau_k: 0.0,
            g_approx: 0.0,
            eps_k: 0.0,
            n_k: before as u64,
            survivors_before: before,
            survivors: survivors.clone(),
            pulls: oracle.ledger().total(),
            recommended,
            wall_ms: elapsed_ms(start),
        });
        if survivors.len() == 1 || 2.0 * u <= eps {
            break;
        }
    }
    Ok(finish(oracle, survivors, recommended, trace, false, eps))
}
