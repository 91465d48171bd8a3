//! Low-dimensional feature maps `ψ_d` with misspecification bounds.
//!
//! An [`Embedder`] produces, for each target dimension `d`, a `K × d`
//! feature matrix together with `γ̃(d)`, a uniform bound on
//! `|h(x) − ⟨ψ_d(x), θ_d⟩|`, and the induced worst-case gap
//! `γ(d) = (16 + 8√g(d, ζ)) γ̃(d)` with `g(d, ζ) ≈ 4(1 + ζ)d`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::arms::ArmSet;
use crate::linalg::{SortedEigen, SortedSvd};

/// Default scan limit for analytic spectra.
pub const ANALYTIC_D_MAX: usize = 10_000;
/// Default scan limit for data-driven embeddings.
pub const DATA_D_MAX: usize = 512;

/// Eigenvalues below `-PSD_TOL · λ_max` make a gram matrix non-PSD.
pub const PSD_TOL: f64 = 1e-8;

const POLY_EXACT_TERMS: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("dimension {d} exceeds the rank {rank} of the feature matrix")]
    RankDeficit { d: usize, rank: usize },
    #[error("dimension {d} outside 1..={max}")]
    InvalidDimension { d: usize, max: usize },
    #[error("no d <= {d_max} reaches gamma(d) <= {eps}")]
    NotReachable { eps: f64, d_max: usize },
    #[error("gram matrix is not PSD (min eigenvalue {min}, max {max})")]
    NotPSD { min: f64, max: f64 },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
}

/// `g(d, ζ) ≈ 4(1 + ζ)d`.
pub fn g_approx(d: usize, zeta: f64) -> f64 {
    4.0 * (1.0 + zeta) * d as f64
}

/// `γ(d) = (16 + 8√(4(1 + ζ)d)) γ̃`.
pub fn gamma_of_d(gamma_tilde: f64, d: usize, zeta: f64) -> f64 {
    (16.0 + 8.0 * g_approx(d, zeta).sqrt()) * gamma_tilde
}

/// A `d`-dimensional feature map evaluated on every arm.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPlan {
    /// Row `i` is `ψ_d(x_i)`.
    pub psi: DMatrix<f64>,
    pub d: usize,
    pub gamma_tilde: f64,
    pub gamma: f64,
}

impl EmbeddingPlan {
    pub fn new(psi: DMatrix<f64>, gamma_tilde: f64, zeta: f64) -> Self {
        let d = psi.ncols();
        Self {
            gamma: gamma_of_d(gamma_tilde, d, zeta),
            psi,
            d,
            gamma_tilde,
        }
    }

    /// The identity embedding: raw features, no misspecification.
    pub fn identity(arms: &ArmSet) -> Self {
        Self::new(arms.features().clone(), 0.0, 0.0)
    }
}

/// A family of embeddings indexed by dimension.
pub trait Embedder: Send + Sync {
    /// Largest dimension the scan will consider.
    fn max_dim(&self) -> usize;

    fn gamma_tilde(&self, d: usize) -> f64;

    fn plan(&self, d: usize, zeta: f64) -> Result<EmbeddingPlan, EmbeddingError>;

    fn gamma(&self, d: usize, zeta: f64) -> f64 {
        gamma_of_d(self.gamma_tilde(d), d, zeta)
    }

    /// Smallest `d ≤ max_dim` with `γ(d) ≤ eps`.
    fn effective_dimension(&self, eps: f64, zeta: f64) -> Result<usize, EmbeddingError> {
        effective_dimension(|d| self.gamma(d, zeta), eps, self.max_dim())
    }
}

/// Smallest `d ∈ [1, d_max]` with `gamma(d) ≤ eps`, by exhaustive scan.
pub fn effective_dimension(
    gamma: impl Fn(usize) -> f64,
    eps: f64,
    d_max: usize,
) -> Result<usize, EmbeddingError> {
    (1..=d_max)
        .find(|&d| gamma(d) <= eps)
        .ok_or(EmbeddingError::NotReachable { eps, d_max })
}

/// Truncated-SVD embedding `ψ_d(x_i) = (σ₁u_{i1}, …, σ_d u_{id})` with
/// `γ̃(d) = C Σ_{j>d} σ_j`.
#[derive(Debug, Clone)]
pub struct SvdEmbedder {
    svd: SortedSvd,
    rank: usize,
    norm_bound: f64,
}

impl SvdEmbedder {
    pub fn new(arms: &ArmSet, norm_bound: f64) -> Self {
        let svd = SortedSvd::new(arms.features());
        let rank = svd.rank();
        Self {
            svd,
            rank,
            norm_bound,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.svd.singular_values
    }

    /// `θ_d = [Vᵀθ⋆]_{1:d}`, the parameter matching `θ⋆` in the embedded space.
    pub fn theta_d(&self, theta_star: &DVector<f64>, d: usize) -> DVector<f64> {
        let v = self.svd.v.columns(0, d);
        v.transpose() * theta_star
    }

    fn tail(&self, d: usize) -> f64 {
        self.svd.singular_values.iter().skip(d).sum()
    }
}

impl Embedder for SvdEmbedder {
    fn max_dim(&self) -> usize {
        self.rank.min(DATA_D_MAX)
    }

    fn gamma_tilde(&self, d: usize) -> f64 {
        if d >= self.rank {
            return 0.0;
        }
        self.norm_bound * self.tail(d)
    }

    fn plan(&self, d: usize, zeta: f64) -> Result<EmbeddingPlan, EmbeddingError> {
        if d == 0 {
            return Err(EmbeddingError::InvalidDimension {
                d,
                max: self.rank,
            });
        }
        if d > self.rank {
            return Err(EmbeddingError::RankDeficit {
                d,
                rank: self.rank,
            });
        }
        let k = self.svd.u.nrows();
        let mut psi = DMatrix::zeros(k, d);
        for j in 0..d {
            let s = self.svd.singular_values[j];
            for i in 0..k {
                psi[(i, j)] = s * self.svd.u[(i, j)];
            }
        }
        Ok(EmbeddingPlan::new(psi, self.gamma_tilde(d), zeta))
    }
}

pub fn svd_embed(arms: &ArmSet, d: usize, norm_bound: f64, zeta: f64) -> Result<EmbeddingPlan, EmbeddingError> {
    SvdEmbedder::new(arms, norm_bound).plan(d, zeta)
}

/// Eigenvalue sequence of a Mercer kernel, indexed from `j = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Spectrum {
    /// `μ_j = C_k j^{−β}`, `β > 3/2`.
    Poly { c_k: f64, beta: f64 },
    /// `μ_j = C_k e^{−βj}`, `β > 0`.
    Exp { c_k: f64, beta: f64 },
    /// Finite nonincreasing list; `μ_j = 0` past its end.
    Explicit(Vec<f64>),
}

impl Spectrum {
    pub fn validate(&self) -> Result<(), EmbeddingError> {
        match self {
            Spectrum::Poly { c_k, beta } if *c_k >= 0.0 && *beta > 1.5 => Ok(()),
            Spectrum::Exp { c_k, beta } if *c_k >= 0.0 && *beta > 0.0 => Ok(()),
            Spectrum::Explicit(mu) => {
                if mu.iter().any(|&m| !(m >= 0.0)) {
                    return Err(EmbeddingError::InvalidSpectrum("negative eigenvalue".into()));
                }
                if mu.windows(2).any(|w| w[1] > w[0]) {
                    return Err(EmbeddingError::InvalidSpectrum("eigenvalues must be nonincreasing".into()));
                }
                Ok(())
            }
            other => Err(EmbeddingError::InvalidSpectrum(format!("{other:?}"))),
        }
    }

    pub fn mu(&self, j: usize) -> f64 {
        match self {
            Spectrum::Poly { c_k, beta } => c_k * (j as f64).powf(-beta),
            Spectrum::Exp { c_k, beta } => c_k * (-beta * j as f64).exp(),
            Spectrum::Explicit(mu) => mu.get(j - 1).copied().unwrap_or(0.0),
        }
    }

    /// `Σ_{j>d} μ_j`.
    pub fn tail(&self, d: usize) -> f64 {
        match self {
            Spectrum::Exp { c_k, beta } => {
                c_k * (-beta * (d as f64 + 1.0)).exp() / (1.0 - (-beta).exp())
            }
            Spectrum::Poly { c_k, beta } => {
                // A few exact terms, then Euler–Maclaurin for the remainder.
                let mut s = 0.0;
                for j in d + 1..=d + POLY_EXACT_TERMS {
                    s += (j as f64).powf(-beta);
                }
                let a = (d + POLY_EXACT_TERMS + 1) as f64;
                let f = a.powf(-beta);
                let f1 = -beta * a.powf(-beta - 1.0);
                let f3 = -beta * (beta + 1.0) * (beta + 2.0) * a.powf(-beta - 3.0);
                let rest = a.powf(1.0 - beta) / (beta - 1.0) + f / 2.0 - f1 / 12.0 + f3 / 720.0;
                c_k * (s + rest)
            }
            Spectrum::Explicit(mu) => mu.iter().skip(d).sum(),
        }
    }
}

/// Eigenfunction family `φ_j(x)`, `j ≥ 1`.
#[derive(Clone)]
pub enum Eigenfunctions {
    /// `φ_j(x) = sin((2j − 1)π x₀ / 2)`.
    Sine,
    Custom(Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Eigenfunctions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Eigenfunctions::Sine => write!(f, "Sine"),
            Eigenfunctions::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Eigenfunctions {
    pub fn eval(&self, j: usize, x: &[f64]) -> f64 {
        match self {
            Eigenfunctions::Sine => ((2 * j - 1) as f64 * PI * x[0] / 2.0).sin(),
            Eigenfunctions::Custom(f) => f(j, x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpectrumModel {
    pub spectrum: Spectrum,
    pub eigenfunctions: Eigenfunctions,
    /// `C_φ ≥ sup_j |φ_j|`.
    pub c_phi: f64,
}

impl SpectrumModel {
    pub fn sine(spectrum: Spectrum) -> Self {
        Self {
            spectrum,
            eigenfunctions: Eigenfunctions::Sine,
            c_phi: 1.0,
        }
    }

    pub fn gamma_tilde(&self, d: usize) -> f64 {
        self.c_phi * self.spectrum.tail(d).max(0.0).sqrt()
    }
}

/// `ψ_d(x) = (√μ₁ φ₁(x), …, √μ_d φ_d(x))`, `γ̃(d) = C_φ √(Σ_{j>d} μ_j)`.
#[derive(Debug, Clone)]
pub struct MercerEmbedder {
    features: DMatrix<f64>,
    model: SpectrumModel,
    d_max: usize,
}

impl MercerEmbedder {
    pub fn new(arms: &ArmSet, model: SpectrumModel) -> Result<Self, EmbeddingError> {
        model.spectrum.validate()?;
        Ok(Self {
            features: arms.features().clone(),
            model,
            d_max: ANALYTIC_D_MAX,
        })
    }

    pub fn with_max_dim(mut self, d_max: usize) -> Self {
        self.d_max = d_max;
        self
    }
}

impl Embedder for MercerEmbedder {
    fn max_dim(&self) -> usize {
        self.d_max
    }

    fn gamma_tilde(&self, d: usize) -> f64 {
        self.model.gamma_tilde(d)
    }

    fn plan(&self, d: usize, zeta: f64) -> Result<EmbeddingPlan, EmbeddingError> {
        if d == 0 {
            return Err(EmbeddingError::InvalidDimension { d, max: self.d_max });
        }
        let k = self.features.nrows();
        let mut psi = DMatrix::zeros(k, d);
        for i in 0..k {
            let x: Vec<f64> = self.features.row(i).iter().cloned().collect();
            for j in 0..d {
                let mu = self.model.spectrum.mu(j + 1);
                psi[(i, j)] = mu.sqrt() * self.model.eigenfunctions.eval(j + 1, &x);
            }
        }
        Ok(EmbeddingPlan::new(psi, self.gamma_tilde(d), zeta))
    }
}

pub fn kernel_mercer_embed(
    arms: &ArmSet,
    model: SpectrumModel,
    d: usize,
    zeta: f64,
) -> Result<EmbeddingPlan, EmbeddingError> {
    MercerEmbedder::new(arms, model)?.plan(d, zeta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    /// `exp(−γ_k ‖x − x′‖²)`.
    Gaussian { gamma_k: f64 },
    /// `⟨x, x′⟩`.
    Linear,
}

impl Kernel {
    pub fn gram(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let k = x.nrows();
        match *self {
            Kernel::Linear => x * x.transpose(),
            Kernel::Gaussian { gamma_k } => DMatrix::from_fn(k, k, |i, j| {
                let d2 = (x.row(i) - x.row(j)).norm_squared();
                (-gamma_k * d2).exp()
            }),
        }
    }
}

/// Eigen-features of the empirical gram matrix `G = UΛUᵀ`:
/// `ψ_d(x_i) = (U Λ^{1/2})_{i, 1..d}`, `γ̃(d) = c √(Σ_{j>d} Λ_j)`.
#[derive(Debug, Clone)]
pub struct EmpiricalKernelEmbedder {
    values: DVector<f64>,
    vectors: DMatrix<f64>,
    scale: f64,
}

impl EmpiricalKernelEmbedder {
    pub fn new(arms: &ArmSet, kernel: Kernel, scale: f64) -> Result<Self, EmbeddingError> {
        Self::from_gram(&kernel.gram(arms.features()), scale)
    }

    pub fn from_gram(gram: &DMatrix<f64>, scale: f64) -> Result<Self, EmbeddingError> {
        let eig = SortedEigen::new(gram);
        let max = eig.values.iter().cloned().fold(0.0, f64::max);
        let min = eig.values.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -PSD_TOL * max {
            return Err(EmbeddingError::NotPSD { min, max });
        }
        let values = eig.values.map(|v| v.max(0.0));
        Ok(Self {
            values,
            vectors: eig.vectors,
            scale,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }
}

impl Embedder for EmpiricalKernelEmbedder {
    fn max_dim(&self) -> usize {
        self.values.len().min(DATA_D_MAX)
    }

    fn gamma_tilde(&self, d: usize) -> f64 {
        let tail: f64 = self.values.iter().skip(d).sum();
        self.scale * tail.sqrt()
    }

    fn plan(&self, d: usize, zeta: f64) -> Result<EmbeddingPlan, EmbeddingError> {
        let k = self.values.len();
        if d == 0 || d > k {
            return Err(EmbeddingError::InvalidDimension { d, max: k });
        }
        let mut psi = DMatrix::zeros(k, d);
        for j in 0..d {
            let s = self.values[j].sqrt();
            for i in 0..k {
                psi[(i, j)] = s * self.vectors[(i, j)];
            }
        }
        Ok(EmbeddingPlan::new(psi, self.gamma_tilde(d), zeta))
    }
}

pub fn empirical_kernel_embed(
    arms: &ArmSet,
    kernel: Kernel,
    d: usize,
    zeta: f64,
) -> Result<EmbeddingPlan, EmbeddingError> {
    EmpiricalKernelEmbedder::new(arms, kernel, 1.0)?.plan(d, zeta)
}
