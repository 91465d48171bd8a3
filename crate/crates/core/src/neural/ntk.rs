//! Neural tangent kernel gram matrix via the arc-cosine recursion.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::NeuralError;
use crate::linalg::SortedEigen;

/// Tolerance on `‖x‖ = 1` for NTK inputs.
pub const UNIT_NORM_TOL: f64 = 1e-8;

/// Relative size of negative eigenvalues that are clipped to zero.
pub const EIGEN_CLIP_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NtkGram {
    pub h: DMatrix<f64>,
    /// Descending, clipped at 0.
    pub eigenvalues: DVector<f64>,
    /// Smallest eigenvalue of `H` as measured.
    pub lambda_0: f64,
}

/// Entries of the recursion at depth `L` for one pair of inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtkEntry {
    /// `Σ^{(L)}(x, x′)`.
    pub sigma: f64,
    /// `H̃^{(L)}(x, x′)`.
    pub h_tilde: f64,
    /// `(H̃^{(L)} + Σ^{(L)}) / 2`.
    pub h: f64,
}

/// Runs the recursion from `Σ^{(1)} = ⟨x, x′⟩` with self-covariances
/// `sxx = ‖x‖²`, `syy = ‖x′‖²`.
pub fn ntk_entry(sxx: f64, sxy: f64, syy: f64, depth: usize) -> NtkEntry {
    let mut sxy = sxy;
    let mut h_tilde = sxy;
    for _ in 1..depth {
        let norm = (sxx * syy).sqrt();
        let c = if norm > 0.0 { (sxy / norm).clamp(-1.0, 1.0) } else { 0.0 };
        let theta = c.acos();
        let next = norm * (theta.sin() + (PI - theta) * c) / PI;
        let dot = (PI - theta) / PI;
        h_tilde = h_tilde * dot + next;
        // Diagonal entries have θ = 0 and are preserved.
        sxy = next;
    }
    NtkEntry {
        sigma: sxy,
        h_tilde,
        h: 0.5 * (h_tilde + sxy),
    }
}

/// `H = (H̃^{(L)} + Σ^{(L)}) / 2` over the rows of `x`, which must have
/// unit norm.
pub fn ntk_gram(x: &DMatrix<f64>, depth: usize) -> Result<NtkGram, NeuralError> {
    if depth < 2 {
        return Err(NeuralError::InvalidDepth(depth));
    }
    let k = x.nrows();
    for i in 0..k {
        let n = x.row(i).norm();
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(NeuralError::NotUnitNorm { arm: i, norm: n });
        }
    }
    let inner = x * x.transpose();
    let mut h = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            let e = ntk_entry(inner[(i, i)], inner[(i, j)], inner[(j, j)], depth);
            h[(i, j)] = e.h;
            h[(j, i)] = e.h;
        }
    }
    let eig = SortedEigen::new(&h);
    let top = eig.values.iter().copied().fold(0.0, f64::max);
    let lambda_0 = eig.values.iter().copied().fold(f64::INFINITY, f64::min);
    if lambda_0 < -EIGEN_CLIP_RTOL * top {
        return Err(NeuralError::NotPsd { min: lambda_0, max: top });
    }
    Ok(NtkGram {
        h,
        eigenvalues: eig.values.map(|v| v.max(0.0)),
        lambda_0,
    })
}

/// Smallest `d ≥ 1` with `Σ_{i>d} λᵢ(H) ≤ eps`.
pub fn neural_effective_dimension(gram: &NtkGram, eps: f64) -> usize {
    tail_dimension(gram.eigenvalues.as_slice(), eps)
}

/// Smallest `d ≥ 1` with `Σ_{i>d} values[i] ≤ budget` for descending
/// `values`; `values.len()` when only the empty tail qualifies.
pub fn tail_dimension(values: &[f64], budget: f64) -> usize {
    let n = values.len();
    let mut tail: f64 = values.iter().skip(1).sum();
    for d in 1..n {
        if tail <= budget {
            return d;
        }
        tail -= values[d];
    }
    n.max(1)
}
