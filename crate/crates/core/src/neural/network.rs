//! Bias-free ReLU network `f(x; θ) = √m W_L σ(W_{L−1} σ(⋯ σ(W₁x)))`.
//!
//! Parameters are flattened layer by layer, each layer in column-major
//! order, so `p = md + m²(L−2) + m`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::NeuralError;

/// ChaCha stream used for network initialisation.
pub const INIT_STREAM: u64 = 2;

/// Regularised loss above this multiple of the starting loss counts as
/// divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    /// `W₁ (m×d), W₂..W_{L−1} (m×m), W_L (1×m)`.
    pub layers: Vec<DMatrix<f64>>,
    pub width: usize,
    pub depth: usize,
    pub input_dim: usize,
}

impl NetworkParams {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|w| w.len()).sum()
    }

    pub fn to_vec(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for w in &self.layers {
            out.extend_from_slice(w.as_slice());
        }
        DVector::from_vec(out)
    }

    /// Same architecture with the parameters taken from `flat`.
    pub fn with_vec(&self, flat: &DVector<f64>) -> Self {
        assert_eq!(flat.len(), self.param_count());
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for w in &self.layers {
            let n = w.len();
            layers.push(DMatrix::from_column_slice(
                w.nrows(),
                w.ncols(),
                &flat.as_slice()[off..off + n],
            ));
            off += n;
        }
        Self {
            layers,
            ..self.clone()
        }
    }

    fn sq_distance(&self, other: &Self) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|(a, b)| (a - b).norm_squared())
            .sum()
    }
}

/// `p = m + md + m²(L−2)`.
pub fn param_count(d: usize, m: usize, depth: usize) -> usize {
    m + m * d + m * m * depth.saturating_sub(2)
}

fn block_diagonal(block: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    out.view_mut((0, 0), (r, c)).copy_from(block);
    out.view_mut((r, c), (r, c)).copy_from(block);
    out
}

/// Symmetric initialisation: hidden layers are `[[W, 0], [0, W]]` with
/// `W ~ N(0, 4/m)` entries and the output layer is `(wᵀ, −wᵀ)` with
/// `w ~ N(0, 2/m)`, so `f(x; θ₀) = 0` whenever the two input halves agree.
pub fn init_params(d: usize, m: usize, depth: usize, seed: u64) -> Result<NetworkParams, NeuralError> {
    if m == 0 || m % 2 == 1 {
        return Err(NeuralError::OddWidth(m));
    }
    if d == 0 || d % 2 == 1 {
        return Err(NeuralError::OddDim(d));
    }
    if depth < 2 {
        return Err(NeuralError::InvalidDepth(depth));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let hidden = Normal::new(0.0, (4.0 / m as f64).sqrt()).unwrap();
    let out = Normal::new(0.0, (2.0 / m as f64).sqrt()).unwrap();
    let h = m / 2;
    let mut layers = Vec::with_capacity(depth);
    let first = DMatrix::from_fn(h, d / 2, |_, _| hidden.sample(&mut rng));
    layers.push(block_diagonal(&first));
    for _ in 2..depth {
        let w = DMatrix::from_fn(h, h, |_, _| hidden.sample(&mut rng));
        layers.push(block_diagonal(&w));
    }
    let w: Vec<f64> = (0..h).map(|_| out.sample(&mut rng)).collect();
    let last = DMatrix::from_fn(1, m, |_, j| if j < h { w[j] } else { -w[j - h] });
    layers.push(last);
    Ok(NetworkParams {
        layers,
        width: m,
        depth,
        input_dim: d,
    })
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Forward pass over a batch (rows of `x`), keeping every layer's
/// pre-activations and activations.
struct BatchPass {
    /// `a_0 = x, a_1, …, a_{L−1}` (n × width).
    acts: Vec<DMatrix<f64>>,
    /// `z_1, …, z_{L−1}`.
    pre: Vec<DMatrix<f64>>,
    out: DVector<f64>,
}

fn batch_forward(theta: &NetworkParams, x: &DMatrix<f64>) -> BatchPass {
    let depth = theta.depth;
    let mut acts = vec![x.clone()];
    let mut pre = Vec::with_capacity(depth - 1);
    for l in 0..depth - 1 {
        let z = &acts[l] * theta.layers[l].transpose();
        acts.push(z.map(relu));
        pre.push(z);
    }
    let scale = (theta.width as f64).sqrt();
    let out = (&acts[depth - 1] * theta.layers[depth - 1].transpose()).column(0) * scale;
    BatchPass { acts, pre, out }
}

/// `δ_l = ∂f/∂z_l` for every point and hidden layer, rows scaled by `r`.
fn batch_backward(theta: &NetworkParams, pass: &BatchPass, r: Option<&DVector<f64>>) -> Vec<DMatrix<f64>> {
    let depth = theta.depth;
    let n = pass.out.len();
    let scale = (theta.width as f64).sqrt();
    let mut deltas = vec![DMatrix::zeros(0, 0); depth - 1];
    let top = &theta.layers[depth - 1];
    let mut delta = DMatrix::from_fn(n, theta.width, |i, j| {
        let gate = if pass.pre[depth - 2][(i, j)] > 0.0 { 1.0 } else { 0.0 };
        scale * top[(0, j)] * gate * r.map_or(1.0, |r| r[i])
    });
    for l in (1..depth - 1).rev() {
        let mut next = &delta * &theta.layers[l];
        next.zip_apply(&pass.pre[l - 1], |v, z| {
            if z <= 0.0 {
                *v = 0.0
            }
        });
        deltas[l] = std::mem::replace(&mut delta, next);
    }
    deltas[0] = delta;
    deltas
}

pub fn forward(theta: &NetworkParams, x: &DVector<f64>) -> f64 {
    let batch = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    batch_forward(theta, &batch).out[0]
}

/// `f` at every row of `x`.
pub fn forward_batch(theta: &NetworkParams, x: &DMatrix<f64>) -> DVector<f64> {
    batch_forward(theta, x).out
}

/// `∇_θ f(x; θ)` in the flattening order of [`NetworkParams::to_vec`].
/// ReLU kinks get subgradient 0.
pub fn grad_param(theta: &NetworkParams, x: &DVector<f64>) -> DVector<f64> {
    let batch = DMatrix::from_row_slice(1, x.len(), x.as_slice());
    let pass = batch_forward(theta, &batch);
    let deltas = batch_backward(theta, &pass, None);
    let grads = layer_grads(theta, &pass, &deltas, &DVector::from_element(1, 1.0));
    let mut out = Vec::with_capacity(theta.param_count());
    for g in &grads {
        out.extend_from_slice(g.as_slice());
    }
    DVector::from_vec(out)
}

/// Per-layer gradient of `Σ_i rᵢ f(xᵢ)` given deltas already scaled by `r`.
fn layer_grads(
    theta: &NetworkParams,
    pass: &BatchPass,
    deltas: &[DMatrix<f64>],
    r: &DVector<f64>,
) -> Vec<DMatrix<f64>> {
    let depth = theta.depth;
    let mut grads = Vec::with_capacity(depth);
    for l in 0..depth - 1 {
        grads.push(deltas[l].transpose() * &pass.acts[l]);
    }
    let scale = (theta.width as f64).sqrt();
    let top = pass.acts[depth - 1].transpose() * r * scale;
    grads.push(DMatrix::from_row_slice(1, theta.width, top.as_slice()));
    grads
}

/// `G Gᵀ` where row `i` of `G` is `g(xᵢ; θ)`, computed layer-wise as
/// `Σ_l (Δ_l Δ_lᵀ) ∘ (A_{l−1} A_{l−1}ᵀ)` without materialising `G`.
pub fn gradient_gram(theta: &NetworkParams, x: &DMatrix<f64>) -> DMatrix<f64> {
    let depth = theta.depth;
    let pass = batch_forward(theta, x);
    let deltas = batch_backward(theta, &pass, None);
    let last = &pass.acts[depth - 1];
    let mut gram = (last * last.transpose()) * theta.width as f64;
    for l in 0..depth - 1 {
        let dd = &deltas[l] * deltas[l].transpose();
        let aa = &pass.acts[l] * pass.acts[l].transpose();
        gram += dd.component_mul(&aa);
    }
    crate::linalg::symmetrize(&gram)
}

/// Regression data grouped by distinct input: `count` observations with
/// mean `mean` and within-group sum of squared deviations folded into `sse`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: DMatrix<f64>,
    pub counts: DVector<f64>,
    pub means: DVector<f64>,
    pub sse: f64,
}

impl TrainingSet {
    pub fn from_pairs(data: &[(DVector<f64>, f64)]) -> Self {
        let d = data.first().map_or(0, |p| p.0.len());
        let inputs = DMatrix::from_fn(data.len(), d, |i, j| data[i].0[j]);
        Self {
            inputs,
            counts: DVector::from_element(data.len(), 1.0),
            means: DVector::from_iterator(data.len(), data.iter().map(|p| p.1)),
            sse: 0.0,
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.sum()
    }
}

/// Final iterate and the loss before each step plus after the last one.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub params: NetworkParams,
    pub losses: Vec<f64>,
}

/// `Σ_j (f(x_j; θ) − y_j)²/2 + mα‖θ − θ₀‖²/2`.
pub fn regularized_loss(theta: &NetworkParams, theta0: &NetworkParams, data: &TrainingSet, alpha: f64) -> f64 {
    let f = forward_batch(theta, &data.inputs);
    loss_from_outputs(&f, theta, theta0, data, alpha)
}

fn loss_from_outputs(
    f: &DVector<f64>,
    theta: &NetworkParams,
    theta0: &NetworkParams,
    data: &TrainingSet,
    alpha: f64,
) -> f64 {
    let fit: f64 = (0..f.len())
        .map(|i| data.counts[i] * (f[i] - data.means[i]).powi(2))
        .sum();
    0.5 * (fit + data.sse) + 0.5 * theta.width as f64 * alpha * theta.sq_distance(theta0)
}

/// `J` steps of full-batch gradient descent with step `eta` on
/// [`regularized_loss`], starting from `theta0`.
pub fn train_gradient_descent(
    theta0: &NetworkParams,
    data: &TrainingSet,
    alpha: f64,
    eta: f64,
    steps: usize,
) -> Result<TrainingRun, NeuralError> {
    if steps == 0 {
        return Err(NeuralError::InvalidConfig("gradient descent needs J >= 1".into()));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(NeuralError::InvalidConfig(format!("step size {eta}")));
    }
    let m = theta0.width as f64;
    let mut theta = theta0.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    let mut initial = f64::NAN;
    for _ in 0..=steps {
        let pass = batch_forward(&theta, &data.inputs);
        let loss = loss_from_outputs(&pass.out, &theta, theta0, data, alpha);
        if initial.is_nan() {
            initial = loss;
        }
        if !loss.is_finite() || (initial > 0.0 && loss > DIVERGENCE_FACTOR * initial) {
            return Err(NeuralError::Diverged {
                step: losses.len(),
                loss,
                initial,
            });
        }
        losses.push(loss);
        if losses.len() == steps + 1 {
            break;
        }
        let r = DVector::from_fn(pass.out.len(), |i, _| data.counts[i] * (pass.out[i] - data.means[i]));
        let deltas = batch_backward(&theta, &pass, Some(&r));
        let grads = layer_grads(&theta, &pass, &deltas, &r);
        for (l, g) in grads.iter().enumerate() {
            let reg = (&theta.layers[l] - &theta0.layers[l]) * (m * alpha);
            theta.layers[l] -= (g + reg) * eta;
        }
    }
    Ok(TrainingRun { params: theta, losses })
}
