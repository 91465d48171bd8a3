//! Instance complexity `ρ*_d(ε)` and its linear-gap variant `ρ̃*_d(ε)`.

use nalgebra::{DMatrix, DVector};

use crate::design::{solve_design, DesignError, DesignOptions, DesignWeights, DirectionSet};
use crate::embedding::EmbeddingPlan;
use crate::linalg::MahalanobisNorm;

/// Directions `(ψ(x⋆) − ψ(x)) / max{gap(x), ε}` for every `x ≠ x⋆`.
///
/// With `theta_d` the gap is the linear one, `⟨ψ(x⋆) − ψ(x), θ_d⟩`;
/// otherwise it is the true mean gap.
pub fn complexity_directions(
    psi: &DMatrix<f64>,
    means: &[f64],
    eps: f64,
    theta_d: Option<&DVector<f64>>,
) -> DirectionSet {
    let best = best_index(means);
    let top = psi.row(best).transpose();
    let mut dirs = Vec::new();
    for x in 0..psi.nrows() {
        if x == best {
            continue;
        }
        let y = &top - psi.row(x).transpose();
        let gap = match theta_d {
            Some(t) => y.dot(t),
            None => means[best] - means[x],
        };
        dirs.push(y / gap.max(eps));
    }
    DirectionSet::from_vectors(psi.ncols(), &dirs)
}

fn best_index(means: &[f64]) -> usize {
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    best
}

/// `ρ*_d(ε)`, or `ρ̃*_d(ε)` when `theta_d` is given, via [`solve_design`].
pub fn complexity_rho(
    plan: &EmbeddingPlan,
    means: &[f64],
    eps: f64,
    theta_d: Option<&DVector<f64>>,
    options: &DesignOptions,
) -> Result<f64, DesignError> {
    let dirs = complexity_directions(&plan.psi, means, eps, theta_d);
    if dirs.is_empty() {
        return Ok(0.0);
    }
    Ok(solve_design(&plan.psi, &dirs, options)?.tau)
}

/// The supremum inside `ρ*` (or `ρ̃*`) for a fixed design `λ`.
pub fn complexity_rho_at(
    plan: &EmbeddingPlan,
    means: &[f64],
    eps: f64,
    theta_d: Option<&DVector<f64>>,
    weights: &DesignWeights,
) -> f64 {
    let dirs = complexity_directions(&plan.psi, means, eps, theta_d);
    let norm = MahalanobisNorm::from_design(&plan.psi, weights.as_slice());
    (0..dirs.len())
        .map(|i| norm.squared(&dirs.direction(i)))
        .fold(0.0, f64::max)
}
