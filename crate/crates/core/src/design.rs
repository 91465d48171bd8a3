//! Transductive optimal experimental design.
//!
//! Given embedded arms `ψ(x)` (rows of a `K × d` matrix) and a set of
//! directions `𝒴`, find `λ` on the simplex minimising
//! `max_{y ∈ 𝒴} yᵀ A(λ)⁺ y` with `A(λ) = Σ λₓ ψ(x)ψ(x)ᵀ`.
//!
//! [`solve_design`] runs pairwise Frank–Wolfe with exact line search on a
//! log-sum-exp smoothing of the max, tightening the smoothing as it goes.
//! A damped Newton step on the support face precedes every iteration.
//! Every iterate also yields a certified lower bound on the optimum, which
//! drives the stopping rule. [`brute_force_design_oracle`] grids the simplex
//! for small instances.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{self, MahalanobisNorm, RANGE_TOL};

pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const DEFAULT_TOL: f64 = 1e-3;

/// Largest grid the brute-force oracle will enumerate.
pub const ORACLE_MAX_POINTS: u64 = 10_000_000;

const REFRESH_EVERY: usize = 25;
const GOLDEN_STEPS: usize = 32;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("design needs at least one arm")]
    NoArms,
    #[error("direction dimension {dirs} does not match arm dimension {arms}")]
    DimensionMismatch { arms: usize, dirs: usize },
    #[error("direction {index} lies outside the span of the arms")]
    InfeasibleDirection { index: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {sum})")]
    InvalidWeights { sum: f64 },
    #[error("grid with {points} points exceeds the oracle limit")]
    TooLarge { points: u64 },
    #[error("grid step {0} outside (0, 1]")]
    InvalidStep(f64),
}

/// A point on the probability simplex over arms.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignWeights(Vec<f64>);

impl DesignWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, DesignError> {
        let sum: f64 = weights.iter().sum();
        if weights.is_empty()
            || weights.iter().any(|&w| !(w >= 0.0) || !w.is_finite())
            || (sum - 1.0).abs() > 1e-10
        {
            return Err(DesignError::InvalidWeights { sum });
        }
        Ok(Self(weights))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as f64; k])
    }

    pub fn point_mass(k: usize, i: usize) -> Self {
        let mut w = vec![0.0; k];
        w[i] = 1.0;
        Self(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.0.len()).filter(|&i| self.0[i] > 0.0).collect()
    }

    /// Renormalises weights that drifted off the simplex by rounding error.
    fn from_iterate(mut w: Vec<f64>) -> Self {
        for v in w.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let s: f64 = w.iter().sum();
        for v in w.iter_mut() {
            *v /= s;
        }
        Self(w)
    }
}

/// Directions `y` (stored as rows) with optional source-pair provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    rows: DMatrix<f64>,
    provenance: Option<Vec<(usize, usize)>>,
}

impl DirectionSet {
    /// Directions given explicitly, one per row.
    pub fn from_rows(rows: DMatrix<f64>) -> Self {
        Self {
            rows,
            provenance: None,
        }
    }

    pub fn from_vectors(dim: usize, dirs: &[DVector<f64>]) -> Self {
        let mut rows = DMatrix::zeros(dirs.len(), dim);
        for (i, y) in dirs.iter().enumerate() {
            rows.set_row(i, &y.transpose());
        }
        Self::from_rows(rows)
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn direction(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    /// `(i, j)` such that direction `t` is `v_i − v_j`, when known.
    pub fn provenance(&self) -> Option<&[(usize, usize)]> {
        self.provenance.as_deref()
    }
}

/// `{v − v′}` over unordered pairs of rows of `embedded`.
///
/// Zero differences are dropped and so are exact repeats of a direction up
/// to sign.
pub fn difference_set(embedded: &DMatrix<f64>) -> DirectionSet {
    let rows: Vec<usize> = (0..embedded.nrows()).collect();
    difference_set_of(embedded, &rows)
}

/// Difference set restricted to the listed rows.
pub fn difference_set_of(embedded: &DMatrix<f64>, rows: &[usize]) -> DirectionSet {
    let d = embedded.ncols();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut data = Vec::new();
    let mut prov = Vec::new();
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let y: Vec<f64> = (0..d)
                .map(|c| embedded[(i, c)] - embedded[(j, c)])
                .collect();
            let Some(first) = y.iter().position(|&v| v != 0.0) else {
                continue;
            };
            let sign = if y[first] < 0.0 { -1.0 } else { 1.0 };
            let key: Vec<u64> = y.iter().map(|&v| (sign * v + 0.0).to_bits()).collect();
            if seen.insert(key) {
                data.extend_from_slice(&y);
                prov.push((i, j));
            }
        }
    }
    DirectionSet {
        rows: DMatrix::from_row_slice(prov.len(), d, &data),
        provenance: Some(prov),
    }
}

/// `max_y yᵀ A(λ)⁺ y`, `+∞` if some direction is outside the range of `A(λ)`.
pub fn design_objective(
    weights: &DesignWeights,
    dirs: &DirectionSet,
    embedded: &DMatrix<f64>,
) -> f64 {
    if dirs.is_empty() {
        return 0.0;
    }
    let norm = MahalanobisNorm::from_design(embedded, weights.as_slice());
    let mut worst = 0.0f64;
    for i in 0..dirs.len() {
        let v = norm.squared(&dirs.direction(i));
        if v.is_infinite() {
            return f64::INFINITY;
        }
        worst = worst.max(v);
    }
    worst
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignOptions {
    pub max_iters: usize,
    /// Target relative gap between the value and its certified lower bound.
    pub tol: f64,
}

impl Default for DesignOptions {
    fn default() -> Self {
        Self {
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSolution {
    pub weights: DesignWeights,
    /// Objective at `weights`.
    pub tau: f64,
    pub iterations: usize,
    /// Relative gap `(tau − lower_bound) / tau`.
    pub gap: f64,
    /// Certified lower bound on the optimal value.
    pub lower_bound: f64,
    pub converged: bool,
    /// Smoothed objective after each iteration (non-increasing).
    pub trace: Vec<f64>,
}

impl DesignSolution {
    fn trivial(k: usize) -> Self {
        Self {
            weights: DesignWeights::uniform(k),
            tau: 0.0,
            iterations: 0,
            gap: 0.0,
            lower_bound: 0.0,
            converged: true,
            trace: Vec::new(),
        }
    }
}

/// Arms and directions expressed in an orthonormal basis of the arms' span.
struct Reduced {
    arms: DMatrix<f64>,
    dirs: DMatrix<f64>,
}

fn reduce(embedded: &DMatrix<f64>, dirs: &DirectionSet) -> Result<Reduced, DesignError> {
    if embedded.nrows() == 0 {
        return Err(DesignError::NoArms);
    }
    if dirs.dim() != embedded.ncols() {
        return Err(DesignError::DimensionMismatch {
            arms: embedded.ncols(),
            dirs: dirs.dim(),
        });
    }
    // Unit scale and 30-bit mantissas: rescaled copies of a problem reduce
    // to bit-identical inputs, so the solve is exactly scale invariant.
    let scale = embedded.amax();
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let embedded = embedded.map(|v| coarse(v / scale));
    let basis = linalg::row_space_basis(&embedded);
    let mut keep = Vec::new();
    for i in 0..dirs.len() {
        let y = dirs.direction(i).map(|v| coarse(v / scale));
        let n = y.norm();
        if n == 0.0 {
            continue;
        }
        let coef = basis.transpose() * &y;
        let residual = &y - &basis * &coef;
        if residual.norm() > RANGE_TOL * n {
            return Err(DesignError::InfeasibleDirection { index: i });
        }
        keep.push(coef);
    }
    let r = basis.ncols();
    let mut rd = DMatrix::zeros(keep.len(), r);
    for (i, c) in keep.iter().enumerate() {
        rd.set_row(i, &c.transpose());
    }
    Ok(Reduced {
        arms: embedded * &basis,
        dirs: rd,
    })
}

/// Rounds to 30 mantissa bits.
fn coarse(v: f64) -> f64 {
    const DROP: u32 = 22;
    if !v.is_finite() {
        return v;
    }
    let bits = v.to_bits();
    f64::from_bits(((bits >> DROP) + ((bits >> (DROP - 1)) & 1)) << DROP)
}

fn inverse_pd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    let inv = chol.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Some(linalg::symmetrize(&inv))
    } else {
        None
    }
}

fn quad_forms(dirs: &DMatrix<f64>, ainv: &DMatrix<f64>) -> DVector<f64> {
    let z = dirs * ainv;
    z.component_mul(dirs).column_sum()
}

/// `(1/β) log Σ exp(β qᵧ)` evaluated stably, with `β = ∞` meaning the max.
fn smooth_max(q: impl Iterator<Item = f64> + Clone, beta: f64) -> f64 {
    let qmax = q.clone().fold(f64::NEG_INFINITY, f64::max);
    if !qmax.is_finite() || beta.is_infinite() {
        return qmax;
    }
    let s: f64 = q.map(|v| (beta * (v - qmax)).exp()).sum();
    qmax + s.ln() / beta
}

struct Pair {
    hjj: f64,
    haa: f64,
    hja: f64,
    pj: DVector<f64>,
    pa: DVector<f64>,
}

struct FrankWolfe<'a> {
    x: &'a DMatrix<f64>,
    y: &'a DMatrix<f64>,
    lambda: Vec<f64>,
    ainv: DMatrix<f64>,
    q: DVector<f64>,
}

impl<'a> FrankWolfe<'a> {
    fn refresh(&mut self) -> bool {
        let a = linalg::information_matrix(self.x, &self.lambda);
        match inverse_pd(&a) {
            Some(inv) => {
                self.q = quad_forms(self.y, &inv);
                self.ainv = inv;
                true
            }
            None => false,
        }
    }

    /// `q(γ)` after moving to `s·A + t·xxᵀ`.
    fn moved_q(&self, p: &DVector<f64>, h: f64, s: f64, t: f64, out: &mut DVector<f64>) -> bool {
        let c = t / s;
        let denom = 1.0 + c * h;
        if !(denom > 1e-12) || s <= 0.0 {
            return false;
        }
        for i in 0..self.q.len() {
            out[i] = (self.q[i] - c * p[i] * p[i] / denom) / s;
        }
        true
    }

    /// Damped Newton step on the smoothed objective, restricted to the
    /// current support.
    fn newton_face(&mut self, beta: f64) -> bool {
        let support: Vec<usize> = (0..self.lambda.len()).filter(|&i| self.lambda[i] > 0.0).collect();
        let s = support.len();
        let m = self.q.len();
        if s < 2 || (beta.is_infinite() && m > 1) {
            return false;
        }
        let xs = self.x.select_rows(&support);
        let ax = &self.ainv * xs.transpose();
        let p = self.y * &ax;
        let gx = &xs * &ax;
        let qmax = self.q.max();
        let mu: DVector<f64> = if m == 1 {
            DVector::from_element(1, 1.0)
        } else {
            let w = self.q.map(|v| (beta * (v - qmax)).exp());
            let total = w.sum();
            w / total
        };
        let sq = p.component_mul(&p);
        let grad = -(sq.transpose() * &mu);
        let mut dp = p.clone();
        let mut dq = sq.clone();
        for (y, &u) in mu.iter().enumerate() {
            dp.row_mut(y).scale_mut(u);
            dq.row_mut(y).scale_mut(u);
        }
        let mut hess = (p.transpose() * &dp).component_mul(&gx) * 2.0;
        if m > 1 {
            hess += (sq.transpose() * &dq - &grad * grad.transpose()) * beta;
        }
        let mut kkt = DMatrix::zeros(s + 1, s + 1);
        kkt.view_mut((0, 0), (s, s)).copy_from(&hess);
        let mut rhs = DVector::zeros(s + 1);
        for i in 0..s {
            kkt[(i, s)] = 1.0;
            kkt[(s, i)] = 1.0;
            rhs[i] = -grad[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return false;
        };
        let dir = sol.rows(0, s).into_owned();
        let slope = grad.dot(&dir);
        if !dir.iter().all(|v| v.is_finite()) || !(slope < 0.0) || !(dir.dot(&(&hess * &dir)) > 0.0) {
            return false;
        }
        let mut tmax = 1.0f64;
        for (i, &j) in support.iter().enumerate() {
            if dir[i] < 0.0 {
                tmax = tmax.min(self.lambda[j] / -dir[i]);
            }
        }
        let f0 = smooth_max(self.q.iter().cloned(), beta);
        let mut t = tmax;
        for _ in 0..30 {
            let mut lam = self.lambda.clone();
            for (i, &j) in support.iter().enumerate() {
                lam[j] += t * dir[i];
                if lam[j] < 1e-15 || (t == tmax && dir[i] < 0.0 && (self.lambda[j] + tmax * dir[i]).abs() <= 1e-12) {
                    lam[j] = 0.0;
                }
            }
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|v| *v /= total);
            let a = linalg::information_matrix(self.x, &lam);
            if let Some(inv) = inverse_pd(&a) {
                let q = quad_forms(self.y, &inv);
                let f = smooth_max(q.iter().cloned(), beta);
                if f < f0 + 1e-4 * t * slope {
                    self.lambda = lam;
                    self.ainv = inv;
                    self.q = q;
                    return true;
                }
            }
            t *= 0.5;
        }
        false
    }

    /// `q(γ)` after moving to `A + γ(x_j x_jᵀ - x_a x_aᵀ)`.
    fn pair_q(&self, pr: &Pair, gamma: f64, out: &mut DVector<f64>) -> bool {
        if gamma <= 0.0 {
            out.copy_from(&self.q);
            return true;
        }
        let bj = 1.0 + gamma * pr.hjj;
        let rest = 1.0 - gamma * (pr.haa - gamma * pr.hja * pr.hja / bj);
        if !(rest > 1e-12) {
            return false;
        }
        let m00 = 1.0 / gamma + pr.hjj;
        let m11 = -1.0 / gamma + pr.haa;
        let m01 = pr.hja;
        let det = m00 * m11 - m01 * m01;
        for i in 0..self.q.len() {
            let (u, v) = (pr.pj[i], pr.pa[i]);
            out[i] = self.q[i] - (m11 * u * u - 2.0 * m01 * u * v + m00 * v * v) / det;
        }
        true
    }
}

/// Minimises `max_y yᵀ A(λ)⁺ y` over the simplex.
pub fn solve_design(
    embedded: &DMatrix<f64>,
    dirs: &DirectionSet,
    opts: &DesignOptions,
) -> Result<DesignSolution, DesignError> {
    let k = embedded.nrows();
    let red = reduce(embedded, dirs)?;
    if red.dirs.nrows() == 0 {
        return Ok(DesignSolution::trivial(k));
    }
    let m = red.dirs.nrows();
    let log_m = (m as f64).ln();

    let mut fw = FrankWolfe {
        x: &red.arms,
        y: &red.dirs,
        lambda: vec![1.0 / k as f64; k],
        ainv: DMatrix::zeros(0, 0),
        q: DVector::zeros(m),
    };
    let ok = fw.refresh();
    debug_assert!(ok, "uniform design must be nonsingular on the arm span");

    let f0 = fw.q.max();
    let mut best_f = f0;
    let mut best_lambda = fw.lambda.clone();
    let mut best_lb = 0.0f64;
    let beta_for = |f: f64, rel: f64| {
        if log_m == 0.0 {
            f64::INFINITY
        } else {
            log_m / (rel * f)
        }
    };
    let mut beta = beta_for(f0, 0.5);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut scratch = DVector::zeros(m);
    let mut converged = false;

    while iterations < opts.max_iters {
        if k == 1 {
            best_lb = best_f;
            converged = true;
            break;
        }
        if iterations > 0 {
            fw.newton_face(beta);
        }
        let f = fw.q.max();
        if f < best_f {
            best_f = f;
            best_lambda = fw.lambda.clone();
        }
        let beta_max = beta_for(best_f, 0.25 * opts.tol);

        // Softmax weights over directions and the induced gradient.
        let mu: Vec<f64> = if beta.is_infinite() {
            let mut v = vec![0.0; m];
            v[fw.q.imax()] = 1.0;
            v
        } else {
            let w: Vec<f64> = fw.q.iter().map(|&v| (beta * (v - f)).exp()).collect();
            let s: f64 = w.iter().sum();
            w.into_iter().map(|v| v / s).collect()
        };
        let r = red.arms.ncols();
        let mut b = DMatrix::zeros(r, r);
        let mut phi = 0.0;
        for (i, &u) in mu.iter().enumerate() {
            if u > 1e-14 {
                let row = red.dirs.row(i).transpose();
                b.ger(u, &row, &row, 1.0);
                phi += u * fw.q[i];
            }
        }
        let mmat = &fw.ainv * b * &fw.ainv;
        let g = (&red.arms * &mmat).component_mul(&red.arms).column_sum();
        let jmax = g.imax();
        let lb = 2.0 * phi - g[jmax];
        if lb > best_lb {
            best_lb = lb;
        }
        if (best_f - best_lb) <= opts.tol * best_f {
            converged = true;
            break;
        }

        let mut amin = usize::MAX;
        for i in 0..k {
            if fw.lambda[i] > 0.0 && (amin == usize::MAX || g[i] < g[amin]) {
                amin = i;
            }
        }
        let gap_fw = g[jmax] - phi;
        let gap_away = phi - g[amin];
        let smoothing = if beta.is_infinite() { 0.0 } else { log_m / beta };

        if amin != jmax && fw.lambda[amin] < 1.0 - 1e-9 {
            // Pairwise step: shift weight from `amin` to `jmax`.
            let la = fw.lambda[amin];
            let xj = red.arms.row(jmax).transpose();
            let xa = red.arms.row(amin).transpose();
            let aj = &fw.ainv * &xj;
            let aa = &fw.ainv * &xa;
            let pair = Pair {
                hjj: xj.dot(&aj),
                haa: xa.dot(&aa),
                hja: xj.dot(&aa),
                pj: &red.dirs * &aj,
                pa: &red.dirs * &aa,
            };
            let obj = |gamma: f64, out: &mut DVector<f64>| -> f64 {
                if !fw.pair_q(&pair, gamma, out) {
                    return f64::INFINITY;
                }
                smooth_max(out.iter().cloned(), beta)
            };
            let f_now = smooth_max(fw.q.iter().cloned(), beta);
            let gamma = golden_section(0.0, la, |gm| obj(gm, &mut scratch));
            let f_new = obj(gamma, &mut scratch);
            iterations += 1;
            if gamma > 0.0 && f_new < f_now {
                fw.lambda[jmax] += gamma;
                fw.lambda[amin] -= gamma;
                if (gamma - la).abs() <= 1e-12 * la.max(1.0) || fw.lambda[amin] < 0.0 {
                    fw.lambda[amin] = 0.0;
                }
                let total: f64 = fw.lambda.iter().sum();
                for v in fw.lambda.iter_mut() {
                    *v /= total;
                }
                let mut inv = fw.ainv.clone();
                inv.ger(-gamma / (1.0 + gamma * pair.hjj), &aj, &aj, 1.0);
                let bb = &inv * &xa;
                let denom = 1.0 - gamma * xa.dot(&bb);
                inv.ger(gamma / denom, &bb, &bb, 1.0);
                fw.ainv = inv;
                fw.q.copy_from(&scratch);
                let shaky = denom < 1e-6 || !fw.q.iter().all(|v| v.is_finite());
                if (shaky || iterations % REFRESH_EVERY == 0) && !fw.refresh() {
                    fw.lambda = best_lambda.clone();
                    fw.refresh();
                }
                trace.push(f_new);
            } else {
                trace.push(f_now);
                if beta >= beta_max {
                    break;
                }
            }
            if gap_fw.max(gap_away) <= smoothing && beta < beta_max {
                beta = (2.0 * beta).min(beta_max);
            }
            continue;
        }
        let vertex = jmax;
        let gmax_step = 1.0;
        let xv = red.arms.row(vertex).transpose();
        let ax = &fw.ainv * &xv;
        let h = xv.dot(&ax);
        let p = &red.dirs * &ax;
        let obj = |gamma: f64, out: &mut DVector<f64>| -> f64 {
            if !fw.moved_q(&p, h, 1.0 - gamma, gamma, out) {
                return f64::INFINITY;
            }
            smooth_max(out.iter().cloned(), beta)
        };
        let f_now = smooth_max(fw.q.iter().cloned(), beta);
        let gamma = golden_section(0.0, gmax_step, |gm| obj(gm, &mut scratch));
        let f_new = obj(gamma, &mut scratch);
        iterations += 1;

        if gamma > 0.0 && f_new < f_now {
            let (s, t) = (1.0 - gamma, gamma);
            for v in fw.lambda.iter_mut() {
                *v *= s;
            }
            fw.lambda[vertex] += t;
            let total: f64 = fw.lambda.iter().sum();
            for v in fw.lambda.iter_mut() {
                *v /= total;
            }
            let c = t / s;
            let denom = 1.0 + c * h;
            let mut inv = fw.ainv.clone();
            inv.ger(-c / denom, &ax, &ax, 1.0);
            fw.ainv = inv / s;
            fw.q.copy_from(&scratch);
            // Near-vertex steps make the rank-one update ill-conditioned.
            let shaky = s < 1e-6 || !fw.q.iter().all(|v| v.is_finite());
            if (shaky || iterations % REFRESH_EVERY == 0) && !fw.refresh() {
                // Rank-one updates drifted into a singular matrix; fall back
                // to the best iterate seen so far.
                fw.lambda = best_lambda.clone();
                fw.refresh();
            }
            trace.push(f_new);
        } else {
            trace.push(f_now);
            if beta >= beta_max {
                break;
            }
        }

        // Tighten the smoothing once the smoothed problem is solved to its
        // own accuracy.
        if gap_fw.max(gap_away) <= smoothing && beta < beta_max {
            beta = (2.0 * beta).min(beta_max);
        }
    }

    let f = fw.q.max();
    if f < best_f {
        best_lambda = fw.lambda.clone();
    }
    let weights = DesignWeights::from_iterate(best_lambda);
    let tau = design_objective(&weights, dirs, embedded);
    let lower_bound = best_lb.min(tau);
    let gap = if tau > 0.0 {
        (tau - lower_bound) / tau
    } else {
        0.0
    };
    Ok(DesignSolution {
        weights,
        tau,
        iterations,
        gap,
        lower_bound,
        converged,
        trace,
    })
}

/// Minimiser of a convex function on `[lo, hi]`; returns `lo` unless the
/// search finds a strictly better point.
fn golden_section(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_STEPS {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let candidates = [(lo, f(lo)), (mid, f(mid)), (hi, f(hi))];
    let mut best = candidates[0];
    for cand in &candidates[1..] {
        if cand.1 < best.1 {
            best = *cand;
        }
    }
    best.0
}

/// Result of the grid oracle: the best grid design plus the distance by
/// which the true optimum may lie below it.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub solution: DesignSolution,
    /// The optimum lies in `[tau − slack, tau]`.
    pub slack: f64,
    pub grid_points: u64,
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn grid_value(red: &Reduced, lambda: &[f64], dirs: &DirectionSet, embedded: &DMatrix<f64>) -> f64 {
    let a = linalg::information_matrix(&red.arms, lambda);
    match inverse_pd(&a) {
        Some(inv) => quad_forms(&red.dirs, &inv).max(),
        None => design_objective(&DesignWeights(lambda.to_vec()), dirs, embedded),
    }
}

/// Exhaustive search over `{λ : λᵢ ∈ step·ℕ}`.
///
/// The reported slack comes from mixing the optimum with the uniform design
/// and rounding onto the grid: with `a = K·step` the grid value is at most
/// `τ⋆ / (1 − √a)²`.
pub fn brute_force_design_oracle(
    embedded: &DMatrix<f64>,
    dirs: &DirectionSet,
    grid_step: f64,
) -> Result<OracleSolution, DesignError> {
    if !(grid_step > 0.0 && grid_step <= 1.0) {
        return Err(DesignError::InvalidStep(grid_step));
    }
    let k = embedded.nrows();
    let red = reduce(embedded, dirs)?;
    let n = (1.0 / grid_step).round().max(1.0) as u64;
    let points = binomial(n + k as u64 - 1, k as u64 - 1);
    if points > ORACLE_MAX_POINTS {
        return Err(DesignError::TooLarge { points });
    }
    if red.dirs.nrows() == 0 {
        return Ok(OracleSolution {
            solution: DesignSolution::trivial(k),
            slack: 0.0,
            grid_points: points,
        });
    }

    let best = (0..=n)
        .into_par_iter()
        .map(|first| {
            let mut counts = vec![0u64; k];
            counts[0] = first;
            let mut best = (f64::INFINITY, Vec::new());
            enumerate(&mut counts, 1, n - first, &mut |c| {
                let lambda: Vec<f64> = c.iter().map(|&v| v as f64 / n as f64).collect();
                let v = grid_value(&red, &lambda, dirs, embedded);
                if v < best.0 {
                    best = (v, lambda);
                }
            });
            best
        })
        .reduce(
            || (f64::INFINITY, Vec::new()),
            |a, b| if b.0 < a.0 { b } else { a },
        );

    let weights = DesignWeights::from_iterate(best.1);
    let tau = design_objective(&weights, dirs, embedded);
    let a = k as f64 / n as f64;
    let slack = if a < 1.0 {
        tau * (1.0 - (1.0 - a.sqrt()).powi(2))
    } else {
        tau
    };
    Ok(OracleSolution {
        solution: DesignSolution {
            weights,
            tau,
            iterations: points as usize,
            gap: if tau > 0.0 { slack / tau } else { 0.0 },
            lower_bound: tau - slack,
            converged: true,
            trace: Vec::new(),
        },
        slack,
        grid_points: points,
    })
}

fn enumerate(counts: &mut Vec<u64>, idx: usize, left: u64, visit: &mut impl FnMut(&[u64])) {
    if idx + 1 == counts.len() {
        counts[idx] = left;
        visit(counts);
        return;
    }
    if idx == counts.len() {
        if left == 0 {
            visit(counts);
        }
        return;
    }
    for v in 0..=left {
        counts[idx] = v;
        enumerate(counts, idx + 1, left - v, visit);
    }
    counts[idx] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn eye(d: usize) -> DMatrix<f64> {
        DMatrix::identity(d, d)
    }

    #[test]
    fn difference_set_counts() {
        let two = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(difference_set(&two).len(), 1);
        let same = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(difference_set(&same).is_empty());
        let four = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 2.0]);
        let ds = difference_set(&four);
        assert_eq!(ds.len(), 6);
        let prov = ds.provenance().unwrap();
        for (t, &(i, j)) in prov.iter().enumerate() {
            let y = four.row(i) - four.row(j);
            assert_eq!(ds.rows().row(t), y);
        }
    }

    #[test]
    fn difference_set_drops_sign_repeats() {
        // a − b = d − c, so (c, d) repeats (a, b) with the sign flipped.
        let x = DMatrix::from_row_slice(4, 1, &[1.0, 0.0, 5.0, 6.0]);
        let ds = difference_set(&x);
        assert!(ds.len() < 6);
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if i != j {
                    assert_ne!(ds.rows().row(i), -ds.rows().row(j));
                }
            }
        }
    }

    #[test]
    fn objective_examples() {
        let one = DMatrix::from_row_slice(1, 1, &[1.0]);
        let dirs = DirectionSet::from_rows(one.clone());
        assert_relative_eq!(
            design_objective(&DesignWeights::uniform(1), &dirs, &one),
            1.0,
            epsilon = 1e-12
        );

        let dirs = DirectionSet::from_vectors(2, &[DVector::from_vec(vec![1.0, -1.0])]);
        assert_relative_eq!(
            design_objective(&DesignWeights::uniform(2), &dirs, &eye(2)),
            4.0,
            epsilon = 1e-12
        );

        let dirs = DirectionSet::from_vectors(2, &[DVector::from_vec(vec![0.0, 1.0])]);
        let w = DesignWeights::point_mass(2, 0);
        assert!(design_objective(&w, &dirs, &eye(2)).is_infinite());
    }

    #[test]
    fn solve_symmetric_pair() {
        let dirs = difference_set(&eye(2));
        let sol = solve_design(&eye(2), &dirs, &DesignOptions::default()).unwrap();
        assert_relative_eq!(sol.tau, 4.0, max_relative = 1e-3);
        assert_relative_eq!(sol.weights.as_slice()[0], 0.5, epsilon = 1e-3);
        let oracle = brute_force_design_oracle(&eye(2), &dirs, 0.05).unwrap();
        assert_relative_eq!(oracle.solution.tau, 4.0, epsilon = 1e-12);
        assert_relative_eq!(oracle.solution.weights.as_slice()[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn solve_single_atom() {
        let x = DMatrix::from_row_slice(1, 1, &[1.0]);
        let dirs = DirectionSet::from_rows(x.clone());
        let sol = solve_design(&x, &dirs, &DesignOptions::default()).unwrap();
        assert_eq!(sol.weights.as_slice(), &[1.0]);
        assert_relative_eq!(sol.tau, 1.0, epsilon = 1e-12);
        let oracle = brute_force_design_oracle(&x, &dirs, 0.05).unwrap();
        assert_relative_eq!(oracle.solution.tau, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn infeasible_direction_rejected() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let dirs = DirectionSet::from_vectors(3, &[DVector::from_vec(vec![0.0, 0.0, 1.0])]);
        assert_eq!(
            solve_design(&x, &dirs, &DesignOptions::default()).unwrap_err(),
            DesignError::InfeasibleDirection { index: 0 }
        );
    }

    #[test]
    fn rank_deficient_arms_use_their_span() {
        // Three arms in a plane inside R^3.
        let x = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let dirs = difference_set(&x);
        let sol = solve_design(&x, &dirs, &DesignOptions::default()).unwrap();
        assert!(sol.tau.is_finite());
        assert!(sol.gap <= 1e-3);
    }

    #[test]
    fn empty_directions() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sol = solve_design(&x, &difference_set(&x), &DesignOptions::default()).unwrap();
        assert_eq!(sol.tau, 0.0);
        assert_eq!(sol.weights, DesignWeights::uniform(2));
    }

    #[test]
    fn g_optimal_standard_basis() {
        let d = 5;
        let dirs = DirectionSet::from_rows(eye(d));
        let sol = solve_design(&eye(d), &dirs, &DesignOptions::default()).unwrap();
        assert_relative_eq!(sol.tau, d as f64, max_relative = 1e-3);
    }

    #[test]
    fn trace_is_monotone() {
        let x = DMatrix::from_row_slice(
            5,
            3,
            &[1.0, 0.2, 0.0, 0.1, 1.0, 0.3, -0.4, 0.2, 1.0, 0.7, 0.7, 0.1, 0.3, -0.8, 0.5],
        );
        let sol = solve_design(&x, &difference_set(&x), &DesignOptions::default()).unwrap();
        for w in sol.trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} > {}", w[1], w[0]);
        }
        assert!(sol.converged);
    }

    #[test]
    fn oracle_rejects_huge_grid() {
        let x = DMatrix::identity(12, 12);
        let dirs = DirectionSet::from_rows(x.clone());
        assert!(matches!(
            brute_force_design_oracle(&x, &dirs, 0.02),
            Err(DesignError::TooLarge { .. })
        ));
    }

    #[test]
    fn weights_validation() {
        assert!(DesignWeights::new(vec![0.5, 0.5]).is_ok());
        assert!(DesignWeights::new(vec![0.5, 0.6]).is_err());
        assert!(DesignWeights::new(vec![1.5, -0.5]).is_err());
    }
}
