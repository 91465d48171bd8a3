//! Rounding a continuous design into an integer allocation of `N` pulls.
//!
//! The allocation must satisfy
//! `max_y yᵀ M⁺ y ≤ (1 + ζ) · max_y yᵀ A(λ)⁺ y / N` with
//! `M = Σ nᵢ ψᵢψᵢᵀ`. The design is first reduced to a support of at most
//! `d(d+1)/2 + 1` points without changing `A(λ)`, then apportioned with
//! Pukelsheim's efficient rounding.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::design::{design_objective, DesignWeights, DirectionSet};
use crate::linalg::{self, MahalanobisNorm};

/// Relative tolerance on the post-rounding guarantee check.
pub const GUARANTEE_RTOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RoundingError {
    #[error("budget {budget} below the minimum rounding support {required}")]
    BudgetTooSmall { budget: u64, required: u64 },
    #[error("rounded design misses the guarantee: {realized} > {bound}")]
    GuaranteeViolated { realized: f64, bound: f64 },
    #[error("{weights} weights for {arms} arms")]
    LengthMismatch { weights: usize, arms: usize },
}

/// Integer pull counts per arm.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    pub counts: Vec<u64>,
    pub total: u64,
    /// `max_y yᵀ M⁺ y` for the realised counts.
    pub realized: f64,
    /// `(1 + ζ) τ_λ / N`.
    pub bound: f64,
}

impl AllocationPlan {
    pub fn slack(&self) -> f64 {
        self.bound - self.realized
    }
}

/// `r_d(ζ) = ⌈(d² + d + 2) / ζ⌉`.
pub fn min_rounding_support(d: usize, zeta: f64) -> u64 {
    if !(0.1..=0.25).contains(&zeta) {
        log::warn!("rounding parameter zeta = {zeta} outside [0.1, 0.25]");
    }
    let d = d as f64;
    // Guard against 422 / 0.1 landing a hair above 4220.
    ((d * d + d + 2.0) / zeta - 1e-9).ceil().max(1.0) as u64
}

/// Removes support points while keeping `A(λ)` and `Σλ` fixed, until at
/// most `d(d+1)/2 + 1` points remain.
pub fn reduce_support(weights: &[f64], embedded: &DMatrix<f64>) -> Vec<f64> {
    let d = embedded.ncols();
    let p = d * (d + 1) / 2;
    let mut w = weights.to_vec();
    loop {
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
        if support.len() <= p + 1 {
            return w;
        }
        // Columns are (vech(ψψᵀ), 1) for p + 2 support points; a null
        // vector moves λ without changing A(λ) or the total mass.
        let support = &support[..p + 2];
        let cols = support.len();
        let mut m = DMatrix::zeros(p + 1, cols);
        for (c, &i) in support.iter().enumerate() {
            let x = embedded.row(i);
            let mut r = 0;
            for a in 0..d {
                for b in a..d {
                    m[(r, c)] = x[a] * x[b];
                    r += 1;
                }
            }
            m[(p, c)] = 1.0;
        }
        let gram = m.transpose() * &m;
        let eig = linalg::SortedEigen::new(&gram);
        let z: DVector<f64> = eig.vectors.column(cols - 1).into_owned();
        let mut t = f64::INFINITY;
        let mut hit = usize::MAX;
        let zz = if z.iter().any(|&v| v > 0.0) { z } else { -z };
        for (c, &i) in support.iter().enumerate() {
            if zz[c] > 1e-14 {
                let ratio = w[i] / zz[c];
                if ratio < t {
                    t = ratio;
                    hit = c;
                }
            }
        }
        if hit == usize::MAX {
            return w;
        }
        for (c, &i) in support.iter().enumerate() {
            w[i] -= t * zz[c];
            if w[i] < 0.0 {
                w[i] = 0.0;
            }
        }
        w[support[hit]] = 0.0;
    }
}

/// Pukelsheim's efficient apportionment of `n` units to weights `w`.
pub fn efficient_apportionment(w: &[f64], n: u64) -> Vec<u64> {
    let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
    let s = support.len() as f64;
    let nu = n as f64 - s / 2.0;
    let mut counts = vec![0u64; w.len()];
    for &i in &support {
        counts[i] = (nu * w[i] - 1e-12).ceil().max(0.0) as u64;
    }
    let mut total: u64 = counts.iter().sum();
    while total < n {
        let mut best = support[0];
        for &i in &support[1..] {
            if (counts[i] as f64) / w[i] < (counts[best] as f64) / w[best] {
                best = i;
            }
        }
        counts[best] += 1;
        total += 1;
    }
    while total > n {
        let mut best = usize::MAX;
        for &i in &support {
            if counts[i] == 0 {
                continue;
            }
            if best == usize::MAX
                || (counts[i] as f64 - 1.0) / w[i] > (counts[best] as f64 - 1.0) / w[best]
            {
                best = i;
            }
        }
        counts[best] -= 1;
        total -= 1;
    }
    counts
}

fn realized_value(counts: &[u64], embedded: &DMatrix<f64>, dirs: &DirectionSet) -> f64 {
    if dirs.is_empty() {
        return 0.0;
    }
    let c: Vec<f64> = counts.iter().map(|&v| v as f64).collect();
    let norm = MahalanobisNorm::from_design(embedded, &c);
    let mut worst = 0.0f64;
    for i in 0..dirs.len() {
        worst = worst.max(norm.squared(&dirs.direction(i)));
    }
    worst
}

fn apportion(
    weights: &[f64],
    n: u64,
    zeta: f64,
    truncate: bool,
    embedded: &DMatrix<f64>,
) -> Vec<u64> {
    let k = weights.len();
    let mut w = reduce_support(weights, embedded);
    if truncate {
        let cut = zeta / (4.0 * k as f64 * n as f64);
        let kept: f64 = w.iter().filter(|&&v| v >= cut).sum();
        if kept > 0.0 {
            for v in w.iter_mut() {
                *v = if *v >= cut { *v / kept } else { 0.0 };
            }
        }
    }
    efficient_apportionment(&w, n)
}

/// Rounds `λ` into `n` pulls and checks the `(1 + ζ)` guarantee over `dirs`.
pub fn round_allocation(
    weights: &DesignWeights,
    n: u64,
    d: usize,
    zeta: f64,
    embedded: &DMatrix<f64>,
    dirs: &DirectionSet,
) -> Result<AllocationPlan, RoundingError> {
    let required = min_rounding_support(d, zeta);
    if n < required {
        return Err(RoundingError::BudgetTooSmall {
            budget: n,
            required,
        });
    }
    if weights.len() != embedded.nrows() {
        return Err(RoundingError::LengthMismatch {
            weights: weights.len(),
            arms: embedded.nrows(),
        });
    }
    let tau = design_objective(weights, dirs, embedded);
    let bound = (1.0 + zeta) * tau / n as f64;
    let mut last = f64::INFINITY;
    for truncate in [true, false] {
        let counts = apportion(weights.as_slice(), n, zeta, truncate, embedded);
        let realized = realized_value(&counts, embedded, dirs);
        if realized <= bound * (1.0 + GUARANTEE_RTOL) || !bound.is_finite() {
            return Ok(AllocationPlan {
                counts,
                total: n,
                realized,
                bound,
            });
        }
        if truncate {
            log::debug!("dust truncation broke the rounding guarantee; retrying without it");
        }
        last = realized;
    }
    Err(RoundingError::GuaranteeViolated {
        realized: last,
        bound,
    })
}
