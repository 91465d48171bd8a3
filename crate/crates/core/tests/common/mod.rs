//! Test-side oracles shared by the integration targets.
#![allow(dead_code)]

use std::f64::consts::PI;

use embex::neural::{forward, NetworkParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Plain forward pass returning the output and the smallest |pre-activation|.
pub fn reference_forward(theta: &NetworkParams, x: &DVector<f64>) -> (f64, f64) {
    let mut a = x.clone();
    let mut closest = f64::INFINITY;
    let last = theta.layers.len() - 1;
    for w in &theta.layers[..last] {
        let z = w * &a;
        closest = z.iter().fold(closest, |c, v| c.min(v.abs()));
        a = z.map(|v| v.max(0.0));
    }
    let out = (&theta.layers[last] * &a)[(0, 0)] * (theta.width as f64).sqrt();
    (out, closest)
}

/// Central differences of `f` over every parameter.
pub fn finite_difference_grad(theta: &NetworkParams, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let flat = theta.to_vec();
    DVector::from_fn(flat.len(), |i, _| {
        let mut up = flat.clone();
        up[i] += h;
        let mut down = flat.clone();
        down[i] -= h;
        (forward(&theta.with_vec(&up), x) - forward(&theta.with_vec(&down), x)) / (2.0 * h)
    })
}

/// Dense random parameters with N(0, 1/fan_in) entries (no symmetry).
pub fn random_params(d: usize, m: usize, depth: usize, rng: &mut ChaCha8Rng) -> NetworkParams {
    let mut layers = Vec::new();
    let mut fan_in = d;
    for l in 0..depth {
        let rows = if l + 1 == depth { 1 } else { m };
        let s = (1.0 / fan_in as f64).sqrt();
        layers.push(DMatrix::from_fn(rows, fan_in, |_, _| s * rng.sample::<f64, _>(StandardNormal)));
        fan_in = m;
    }
    NetworkParams {
        layers,
        width: m,
        depth,
        input_dim: d,
    }
}

/// Monte-Carlo estimates of `(Σ^{(L)}, H̃^{(L)}, H)` for unit `x`, `y` with
/// inner product `c`, estimating both expectations at every level by sampling.
pub fn monte_carlo_ntk(c: f64, depth: usize, samples: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sxx, mut sxy, mut syy) = (1.0f64, c, 1.0f64);
    let mut h_tilde = c;
    for _ in 1..depth {
        // (u, v) ~ N(0, [[sxx, sxy], [sxy, syy]]) via Cholesky.
        let l11 = sxx.sqrt();
        let l21 = sxy / l11;
        let l22 = (syy - l21 * l21).max(0.0).sqrt();
        let (mut e_uv, mut e_uu, mut e_vv, mut e_dot) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..samples {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let u = l11 * z1;
            let v = l21 * z1 + l22 * z2;
            let (ru, rv) = (u.max(0.0), v.max(0.0));
            e_uv += ru * rv;
            e_uu += ru * ru;
            e_vv += rv * rv;
            if u > 0.0 && v > 0.0 {
                e_dot += 1.0;
            }
        }
        let n = samples as f64;
        let next = 2.0 * e_uv / n;
        let dot = 2.0 * e_dot / n;
        h_tilde = h_tilde * dot + next;
        sxy = next;
        sxx = 2.0 * e_uu / n;
        syy = 2.0 * e_vv / n;
    }
    (sxy, h_tilde, 0.5 * (h_tilde + sxy))
}

/// Pair of unit vectors in the plane with inner product `c`.
pub fn unit_pair(dim: usize, c: f64) -> (DVector<f64>, DVector<f64>) {
    let mut x = DVector::zeros(dim);
    x[0] = 1.0;
    let mut y = DVector::zeros(dim);
    y[0] = c;
    y[1] = (1.0 - c * c).sqrt();
    (x, y)
}

/// Random unit vector with mirrored halves.
pub fn mirrored_unit(half: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let v = DVector::from_fn(half, |_, _| rng.random_range(-1.0..1.0));
    let mut x = DVector::zeros(2 * half);
    for i in 0..half {
        x[i] = v[i];
        x[i + half] = v[i];
    }
    x.normalize()
}

/// One-step arc-cosine value for orthogonal unit inputs.
pub const ORTHOGONAL_SIGMA: f64 = 1.0 / PI;

/// Relative error `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
