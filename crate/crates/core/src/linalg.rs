//! Small dense linear-algebra helpers shared by the design, embedding and
//! elimination code. Everything here works on `nalgebra` dynamic matrices.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative cutoff below which singular values / eigenvalues count as zero.
pub const PINV_RCOND: f64 = 1e-10;

/// Tolerance for the range test `‖(I − A A⁺) y‖ ≤ RANGE_TOL·‖y‖`.
pub const RANGE_TOL: f64 = 1e-8;

/// Thin SVD with singular values sorted in decreasing order.
///
/// Columns of `u` are sign-fixed so that their largest-magnitude entry is
/// positive; the matching columns of `v` are flipped with them so that
/// `x = u · diag(s) · vᵀ` still holds.
#[derive(Debug, Clone)]
pub struct SortedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SortedSvd {
    pub fn new(x: &DMatrix<f64>) -> Self {
        let svd = x.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));

        let r = order.len();
        let mut u_sorted = DMatrix::zeros(x.nrows(), r);
        let mut v_sorted = DMatrix::zeros(x.ncols(), r);
        let mut s_sorted = DVector::zeros(r);
        for (dst, &src) in order.iter().enumerate() {
            s_sorted[dst] = s[src];
            let mut ucol = u.column(src).into_owned();
            let mut vcol = v_t.row(src).transpose();
            if needs_flip(ucol.as_slice()) {
                ucol.neg_mut();
                vcol.neg_mut();
            }
            u_sorted.set_column(dst, &ucol);
            v_sorted.set_column(dst, &vcol);
        }
        Self {
            u: u_sorted,
            singular_values: s_sorted,
            v: v_sorted,
        }
    }

    /// Numerical rank with the usual `max(K, D)·ε·σ₁` threshold.
    pub fn rank(&self) -> usize {
        let n = self.u.nrows().max(self.v.nrows()) as f64;
        let smax = self.singular_values.iter().cloned().fold(0.0, f64::max);
        let tol = n * f64::EPSILON * smax;
        self.singular_values.iter().filter(|&&s| s > tol).count()
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in decreasing order
/// and eigenvectors sign-fixed like [`SortedSvd`].
#[derive(Debug, Clone)]
pub struct SortedEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SortedEigen {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let sym = symmetrize(a);
        let eig = SymmetricEigen::new(sym);
        let n = eig.eigenvalues.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .total_cmp(&eig.eigenvalues[a])
                .then(a.cmp(&b))
        });
        let mut values = DVector::zeros(n);
        let mut vectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            values[dst] = eig.eigenvalues[src];
            let mut col = eig.eigenvectors.column(src).into_owned();
            if needs_flip(col.as_slice()) {
                col.neg_mut();
            }
            vectors.set_column(dst, &col);
        }
        Self { values, vectors }
    }
}

fn needs_flip(col: &[f64]) -> bool {
    let mut best = 0.0f64;
    let mut sign = 1.0;
    for &v in col {
        if v.abs() > best {
            best = v.abs();
            sign = v.signum();
        }
    }
    sign < 0.0
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix.
///
/// Returns the pseudo-inverse and the orthogonal projector onto its range.
pub fn psd_pinv(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let eig = SortedEigen::new(a);
    let n = a.nrows();
    let lmax = eig.values.iter().cloned().fold(0.0, f64::max);
    let cutoff = PINV_RCOND * lmax;
    let mut pinv = DMatrix::zeros(n, n);
    let mut proj = DMatrix::zeros(n, n);
    for (j, &lam) in eig.values.iter().enumerate() {
        if lam > cutoff && lam > 0.0 {
            let v = eig.vectors.column(j);
            let outer = &v * v.transpose();
            pinv += &outer / lam;
            proj += outer;
        }
    }
    (pinv, proj)
}

/// `A(λ) = Σ λᵢ ψᵢ ψᵢᵀ` for the rows `ψᵢ` of `arms`.
pub fn information_matrix(arms: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let d = arms.ncols();
    let mut a = DMatrix::zeros(d, d);
    for (i, &w) in weights.iter().enumerate() {
        if w != 0.0 {
            let row = arms.row(i);
            a.ger(w, &row.transpose(), &row.transpose(), 1.0);
        }
    }
    a
}

/// Pseudo-inverse of `A(λ)` and the projector onto its range, computed from
/// the SVD of `diag(√λ) X` so the cutoff acts on singular values of the
/// weighted arm matrix rather than on eigenvalues of `A`.
pub fn weighted_pinv(arms: &DMatrix<f64>, weights: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = arms.ncols();
    let mut scaled = arms.clone();
    for (i, &w) in weights.iter().enumerate() {
        scaled.row_mut(i).scale_mut(w.max(0.0).sqrt());
    }
    let svd = SortedSvd::new(&scaled);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut pinv = DMatrix::zeros(d, d);
    let mut proj = DMatrix::zeros(d, d);
    for (j, &s) in svd.singular_values.iter().enumerate() {
        if s > PINV_RCOND * smax && s > 0.0 {
            let v = svd.v.column(j);
            let outer = &v * v.transpose();
            pinv += &outer / (s * s);
            proj += outer;
        }
    }
    (pinv, proj)
}

/// `y ↦ yᵀ A⁺ y`, with `+∞` for directions outside the range of `A`.
pub struct MahalanobisNorm {
    pinv: DMatrix<f64>,
    proj: DMatrix<f64>,
}

impl MahalanobisNorm {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (pinv, proj) = psd_pinv(a);
        Self { pinv, proj }
    }

    pub fn from_parts(pinv: DMatrix<f64>, proj: DMatrix<f64>) -> Self {
        Self { pinv, proj }
    }

    /// Norm induced by `A(λ) = Σ λᵢ xᵢ xᵢᵀ`, see [`weighted_pinv`].
    pub fn from_design(arms: &DMatrix<f64>, weights: &[f64]) -> Self {
        let (pinv, proj) = weighted_pinv(arms, weights);
        Self { pinv, proj }
    }

    pub fn squared(&self, y: &DVector<f64>) -> f64 {
        let norm = y.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let residual = y - &self.proj * y;
        if residual.norm() > RANGE_TOL * norm {
            return f64::INFINITY;
        }
        y.dot(&(&self.pinv * y))
    }
}

/// Orthonormal basis (as columns) of the row space of `x`, using the
/// pseudo-inverse cutoff.
pub fn row_space_basis(x: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = SortedSvd::new(x);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let keep = svd
        .singular_values
        .iter()
        .filter(|&&s| s > PINV_RCOND * smax && s > 0.0)
        .count();
    svd.v.columns(0, keep).into_owned()
}

/// Rank of a matrix with the default SVD threshold.
pub fn rank(x: &DMatrix<f64>) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    SortedSvd::new(x).rank()
}
