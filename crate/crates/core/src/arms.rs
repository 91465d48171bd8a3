//! Arm sets, reward oracles, synthetic instance generators and CSV ingestion.
//!
//! Every generator is a pure function of its parameters and seed. The pull
//! oracle owns a ChaCha stream and consumes exactly four 32-bit words per
//! pull, so observation `t` depends only on `(seed, t)`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg;

/// Pull cap used by the experiments when nothing else is configured.
pub const DEFAULT_PULL_CAP: u64 = 10_000_000;

/// Standard deviation of the perturbation applied to cloned principal arms.
pub const PERTURBATION_SD: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ArmError {
    #[error("arm set needs at least 2 arms and 1 feature column, got {arms}x{dims}")]
    TooSmall { arms: usize, dims: usize },
    #[error("non-finite feature at arm {arm}, column {column}")]
    NonFinite { arm: usize, column: usize },
    #[error("duplicate arm id {0}")]
    DuplicateId(usize),
    #[error("mean {value} of arm {arm} outside the admissible range")]
    MeanOutOfRange { arm: usize, value: f64 },
    #[error("{means} means supplied for {arms} arms")]
    LengthMismatch { means: usize, arms: usize },
    #[error("pull cap of {cap} reached")]
    CapExceeded { cap: u64 },
    #[error("arm index {arm} out of range for {arms} arms")]
    BadArm { arm: usize, arms: usize },
    #[error("cannot span R^{dims} with {arms} arms")]
    DimensionTooSmall { arms: usize, dims: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidParameter(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("declared mean {value} at line {line} is outside [-1, 1]")]
    CsvMeanOutOfRange { line: u64, value: f64 },
    #[error("missing feature column {0}")]
    MissingColumn(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Index-stable arm identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ArmId(pub usize);

/// `K` arms with `D` real features each (one row per arm).
#[derive(Debug, Clone, PartialEq)]
pub struct ArmSet {
    features: DMatrix<f64>,
    ids: Vec<ArmId>,
}

impl ArmSet {
    pub fn new(features: DMatrix<f64>) -> Result<Self, ArmError> {
        let ids = (0..features.nrows()).map(ArmId).collect();
        Self::with_ids(features, ids)
    }

    pub fn with_ids(features: DMatrix<f64>, ids: Vec<ArmId>) -> Result<Self, ArmError> {
        let (k, d) = features.shape();
        if k < 2 || d < 1 {
            return Err(ArmError::TooSmall { arms: k, dims: d });
        }
        if ids.len() != k {
            return Err(ArmError::LengthMismatch {
                means: ids.len(),
                arms: k,
            });
        }
        for i in 0..k {
            for j in 0..d {
                if !features[(i, j)].is_finite() {
                    return Err(ArmError::NonFinite { arm: i, column: j });
                }
            }
        }
        let mut seen = std::collections::HashSet::new();
        for id in &ids {
            if !seen.insert(*id) {
                return Err(ArmError::DuplicateId(id.0));
            }
        }
        Ok(Self { features, ids })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn ids(&self) -> &[ArmId] {
        &self.ids
    }

    pub fn arm(&self, i: usize) -> DVector<f64> {
        self.features.row(i).transpose()
    }

    pub fn rank(&self) -> usize {
        linalg::rank(&self.features)
    }
}

/// Observation noise attached to a reward model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Noise {
    /// `mean + ξ` with `ξ ~ N(0, 1)`.
    Gaussian,
    /// A `{0, 1}` draw with success probability `mean`.
    Bernoulli,
}

impl Noise {
    /// Sub-Gaussian scale of the centred observation.
    pub fn sub_gaussian_sigma(self) -> f64 {
        match self {
            Noise::Gaussian => 1.0,
            Noise::Bernoulli => 0.5,
        }
    }
}

/// True arm means plus the noise model used by the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    means: Vec<f64>,
    noise: Noise,
}

impl RewardModel {
    pub fn new(means: Vec<f64>, noise: Noise) -> Result<Self, ArmError> {
        let (lo, hi) = match noise {
            Noise::Gaussian => (-1.0, 1.0),
            Noise::Bernoulli => (0.0, 1.0),
        };
        for (arm, &value) in means.iter().enumerate() {
            if !(value.is_finite() && value >= lo && value <= hi) {
                return Err(ArmError::MeanOutOfRange { arm, value });
            }
        }
        if means.is_empty() {
            return Err(ArmError::TooSmall { arms: 0, dims: 0 });
        }
        Ok(Self { means, noise })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn noise(&self) -> Noise {
        self.noise
    }

    pub fn with_noise(&self, noise: Noise) -> Result<Self, ArmError> {
        Self::new(self.means.clone(), noise)
    }

    /// Index of the best arm; ties go to the lowest index.
    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (i, &m) in self.means.iter().enumerate() {
            if m > self.means[best] {
                best = i;
            }
        }
        best
    }

    pub fn gaps(&self) -> Vec<f64> {
        let top = self.means[self.best_arm()];
        self.means.iter().map(|&m| top - m).collect()
    }

    pub fn gap(&self, arm: usize) -> f64 {
        self.means[self.best_arm()] - self.means[arm]
    }
}

/// Per-arm pull counts and the global cap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullLedger {
    counts: Vec<u64>,
    total: u64,
    cap: u64,
}

impl PullLedger {
    pub fn new(arms: usize, cap: u64) -> Self {
        Self {
            counts: vec![0; arms],
            total: 0,
            cap: cap.max(1),
        }
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn cap(&self) -> u64 {
        self.cap
    }

    pub fn remaining(&self) -> u64 {
        self.cap - self.total
    }
}

/// Seeded sampling oracle. One instance belongs to exactly one trial.
#[derive(Debug, Clone)]
pub struct Oracle {
    rewards: RewardModel,
    ledger: PullLedger,
    rng: ChaCha8Rng,
}

impl Oracle {
    pub fn new(rewards: RewardModel, seed: u64, cap: u64) -> Self {
        let k = rewards.means.len();
        Self {
            rewards,
            ledger: PullLedger::new(k, cap),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn arms(&self) -> usize {
        self.rewards.means.len()
    }

    pub fn ledger(&self) -> &PullLedger {
        &self.ledger
    }

    pub fn noise(&self) -> Noise {
        self.rewards.noise
    }

    /// Harness-side access to the true means (never used by algorithms).
    pub(crate) fn rewards(&self) -> &RewardModel {
        &self.rewards
    }

    pub fn pull(&mut self, arm: usize) -> Result<f64, ArmError> {
        if arm >= self.arms() {
            return Err(ArmError::BadArm {
                arm,
                arms: self.arms(),
            });
        }
        if self.ledger.total >= self.ledger.cap {
            return Err(ArmError::CapExceeded {
                cap: self.ledger.cap,
            });
        }
        let y = observe(
            &mut self.rng,
            self.rewards.noise,
            self.rewards.means[arm],
        );
        self.ledger.counts[arm] += 1;
        self.ledger.total += 1;
        Ok(y)
    }

    /// Pulls `arm` `n` times and returns the sum of the observations.
    ///
    /// If the cap fires part-way the pulls made so far stay on the ledger.
    pub fn pull_many(&mut self, arm: usize, n: u64) -> Result<f64, ArmError> {
        let mut sum = 0.0;
        for _ in 0..n {
            sum += self.pull(arm)?;
        }
        Ok(sum)
    }
}

fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    // (0, 1]
    1.0 - (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn observe(rng: &mut ChaCha8Rng, noise: Noise, mean: f64) -> f64 {
    let u1 = unit_open(rng);
    let u2 = unit_open(rng);
    match noise {
        Noise::Gaussian => {
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            mean + z
        }
        Noise::Bernoulli => {
            if 1.0 - u1 < mean {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// The observation an oracle seeded with `seed` returns on its `t`-th pull
/// (0-based) of an arm with the given mean.
pub fn observation_at(seed: u64, t: u64, noise: Noise, mean: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(4 * t as u128);
    observe(&mut rng, noise, mean)
}

fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-8 {
            return v / n;
        }
    }
}

fn random_orthogonal_unit(rng: &mut ChaCha8Rng, u: &DVector<f64>) -> DVector<f64> {
    loop {
        let mut w = random_unit(rng, u.len());
        w -= u * u.dot(&w);
        let n = w.norm();
        if n > 1e-6 {
            return w / n;
        }
    }
}

/// Builds `{x1, x2, x1 ⊕ η e_i, x2 ⊕ η e_i}` with `K/2 − 1` clones per cluster.
///
/// Clone coordinates walk through fresh random permutations of `[D]` so the
/// perturbations cover as many axes as possible; the sign of each η is
/// chosen by `keeps_order` so that no clone beats its principal arm.
fn two_cluster_features(
    rng: &mut ChaCha8Rng,
    k: usize,
    x1: &DVector<f64>,
    x2: &DVector<f64>,
    keeps_order: impl Fn(&DVector<f64>, usize, f64) -> bool,
) -> Result<DMatrix<f64>, ArmError> {
    let d = x1.len();
    let clones = k / 2 - 1;
    let max_attempts = 100 * d;
    for _ in 0..max_attempts {
        let mut coords = Vec::with_capacity(2 * clones);
        while coords.len() < 2 * clones {
            let mut perm: Vec<usize> = (0..d).collect();
            for i in (1..d).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            coords.extend(perm);
        }
        coords.truncate(2 * clones);

        let mut x = DMatrix::zeros(k, d);
        x.set_row(0, &x1.transpose());
        x.set_row(1, &x2.transpose());
        for c in 0..clones {
            for (cluster, base) in [(0usize, x1), (1usize, x2)] {
                let axis = coords[2 * c + cluster];
                let mut eta: f64 = PERTURBATION_SD * rng.sample::<f64, _>(StandardNormal);
                if !keeps_order(base, axis, eta) {
                    eta = -eta;
                }
                let mut row = base.clone();
                row[axis] += eta;
                x.set_row(2 + 2 * c + cluster, &row.transpose());
            }
        }
        if linalg::rank(&x) == d {
            return Ok(x);
        }
    }
    Err(ArmError::DimensionTooSmall { arms: k, dims: d })
}

fn check_two_cluster_params(k: usize, d: usize) -> Result<(), ArmError> {
    if k < 4 || k % 2 != 0 {
        return Err(ArmError::InvalidParameter(format!(
            "arm count must be even and at least 4, got {k}"
        )));
    }
    if d < 2 {
        return Err(ArmError::InvalidParameter(format!(
            "dimension must be at least 2, got {d}"
        )));
    }
    if k < d {
        return Err(ArmError::DimensionTooSmall { arms: k, dims: d });
    }
    Ok(())
}

/// Two-cluster linear instance: `θ⋆ = x₁`, `⟨θ⋆, x₁⟩ = 0.8`,
/// `⟨θ⋆, x₂⟩ = 0.4`, Bernoulli rewards `⟨x, θ⋆⟩`.
///
/// Arm order is `x₁, x₂`, then clones alternating between the clusters.
pub fn make_synthetic_linear(
    k: usize,
    d: usize,
    seed: u64,
) -> Result<(ArmSet, RewardModel), ArmError> {
    check_two_cluster_params(k, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unit(&mut rng, d);
    let w = random_orthogonal_unit(&mut rng, &u);
    let r = 0.8f64.sqrt();
    let theta = &u * r;
    let a = 0.4 / r;
    let b = (0.8 - a * a).sqrt();
    let x2 = &u * a + &w * b;

    let th = theta.clone();
    let features = two_cluster_features(&mut rng, k, &theta, &x2, move |_, axis, eta| {
        eta * th[axis] <= 0.0
    })?;
    let means: Vec<f64> = (0..k)
        .map(|i| features.row(i).transpose().dot(&theta))
        .collect();
    Ok((ArmSet::new(features)?, RewardModel::new(means, Noise::Bernoulli)?))
}

/// Two-cluster instance with `h(x) = ‖x‖₂`, `h(x₁) = 0.8`, `h(x₂) = 0.4`,
/// Bernoulli rewards.
pub fn make_synthetic_nonlinear(
    k: usize,
    d: usize,
    seed: u64,
) -> Result<(ArmSet, RewardModel), ArmError> {
    check_two_cluster_params(k, d)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x1 = random_unit(&mut rng, d) * 0.8;
    let x2 = random_unit(&mut rng, d) * 0.4;
    // ‖x + η e_i‖² − ‖x‖² = 2η x_i + η² must not be positive.
    let features = two_cluster_features(&mut rng, k, &x1, &x2, |base, axis, eta| {
        2.0 * eta * base[axis] + eta * eta <= 0.0
    })?;
    let means: Vec<f64> = (0..k).map(|i| features.row(i).norm()).collect();
    Ok((ArmSet::new(features)?, RewardModel::new(means, Noise::Bernoulli)?))
}

/// The four construction conditions of the high-dimensional hard instance,
/// evaluated on the generated arms.
#[derive(Debug, Clone, PartialEq)]
pub struct HardInstanceCertificate {
    /// `‖x₁‖₂` (should be 1).
    pub x1_norm: f64,
    /// `⟨x₁, x₂⟩` (should be `1 − 2ε`).
    pub x1_dot_x2: f64,
    /// Every coordinate of `x₁` is negative.
    pub x1_coordinates_negative: bool,
    /// `8√2 (2 + √(5D)) D η` (should be `≤ ε`).
    pub eta_budget: f64,
    pub eta: f64,
}

impl HardInstanceCertificate {
    pub fn holds(&self, eps: f64) -> bool {
        (self.x1_norm - 1.0).abs() < 1e-12
            && (self.x1_dot_x2 - (1.0 - 2.0 * eps)).abs() < 1e-12
            && self.x1_coordinates_negative
            && self.eta_budget <= eps * (1.0 + 1e-12)
    }
}

#[derive(Debug, Clone)]
pub struct HardInstance {
    pub arms: ArmSet,
    pub rewards: RewardModel,
    pub theta_star: DVector<f64>,
    pub certificate: HardInstanceCertificate,
}

/// The `2D + 1`-arm linear instance on which full-dimension elimination pays
/// `Ω(D/ε²)` while a rank-2 embedding stays dimension-free.
///
/// Rows: `x₁`, then `x₁ + η eᵢ` for `i = 1..D`, then `x₂ + η eᵢ`.
pub fn make_hard_instance(d: usize, eps: f64) -> Result<HardInstance, ArmError> {
    if d < 2 {
        return Err(ArmError::InvalidParameter(format!(
            "dimension must be at least 2, got {d}"
        )));
    }
    if !(eps > 0.0 && eps < 0.25) {
        return Err(ArmError::InvalidParameter(format!(
            "eps must lie in (0, 1/4), got {eps}"
        )));
    }
    let df = d as f64;
    let x1 = DVector::from_element(d, -1.0 / df.sqrt());
    let x2 = &x1 * (1.0 - 2.0 * eps);
    let eta = eps / (8.0 * 2f64.sqrt() * (2.0 + (5.0 * df).sqrt()) * df);

    let k = 2 * d + 1;
    let mut features = DMatrix::zeros(k, d);
    features.set_row(0, &x1.transpose());
    for i in 0..d {
        let mut a = x1.clone();
        a[i] += eta;
        features.set_row(1 + i, &a.transpose());
        let mut b = x2.clone();
        b[i] += eta;
        features.set_row(1 + d + i, &b.transpose());
    }
    let means: Vec<f64> = (0..k)
        // ‖x₁‖² can round to just above 1.
        .map(|i| features.row(i).transpose().dot(&x1).clamp(-1.0, 1.0))
        .collect();
    let certificate = HardInstanceCertificate {
        x1_norm: x1.norm(),
        x1_dot_x2: x1.dot(&x2),
        x1_coordinates_negative: x1.iter().all(|&v| v < 0.0),
        eta_budget: 8.0 * 2f64.sqrt() * (2.0 + (5.0 * df).sqrt()) * df * eta,
        eta,
    };
    Ok(HardInstance {
        arms: ArmSet::new(features)?,
        rewards: RewardModel::new(means, Noise::Gaussian)?,
        theta_star: x1,
        certificate,
    })
}

/// Reads arms from CSV: a header row, feature columns `f0..f{D−1}` and an
/// optional reward column (named by `reward_column`, usually `"mean"`).
/// Other columns are ignored. Rewards use Gaussian noise.
pub fn load_arms_csv(
    path: impl AsRef<Path>,
    reward_column: Option<&str>,
) -> Result<(ArmSet, Option<RewardModel>), ArmError> {
    let file = std::fs::File::open(path)?;
    read_arms_csv(file, reward_column)
}

pub fn read_arms_csv<R: Read>(
    reader: R,
    reward_column: Option<&str>,
) -> Result<(ArmSet, Option<RewardModel>), ArmError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(e, 1))?
        .clone();
    let mut feature_cols: HashMap<usize, usize> = HashMap::new();
    let mut reward_idx = None;
    for (col, name) in headers.iter().enumerate() {
        if Some(name) == reward_column {
            reward_idx = Some(col);
        } else if let Some(rest) = name.strip_prefix('f') {
            if let Ok(j) = rest.parse::<usize>() {
                feature_cols.insert(j, col);
            }
        }
    }
    let d = feature_cols.len();
    let mut order = Vec::with_capacity(d);
    for j in 0..d {
        match feature_cols.get(&j) {
            Some(&c) => order.push(c),
            None => return Err(ArmError::MissingColumn(format!("f{j}"))),
        }
    }
    if let (Some(name), None) = (reward_column, reward_idx) {
        return Err(ArmError::MissingColumn(name.to_string()));
    }

    let mut rows: Vec<f64> = Vec::new();
    let mut means = Vec::new();
    let mut k = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        for &c in &order {
            rows.push(parse_cell(&record, c, line)?);
        }
        if let Some(c) = reward_idx {
            let value = parse_cell(&record, c, line)?;
            if !(-1.0..=1.0).contains(&value) {
                return Err(ArmError::CsvMeanOutOfRange { line, value });
            }
            means.push(value);
        }
        k += 1;
    }
    let features = DMatrix::from_row_slice(k, d, &rows);
    let arms = ArmSet::new(features)?;
    let rewards = match reward_idx {
        Some(_) => Some(RewardModel::new(means, Noise::Gaussian)?),
        None => None,
    };
    Ok((arms, rewards))
}

fn parse_cell(record: &csv::StringRecord, col: usize, line: u64) -> Result<f64, ArmError> {
    let raw = record.get(col).ok_or_else(|| ArmError::ParseError {
        line,
        column: col,
        message: "missing field".into(),
    })?;
    let value: f64 = raw.parse().map_err(|_| ArmError::ParseError {
        line,
        column: col,
        message: format!("not a number: {raw:?}"),
    })?;
    if !value.is_finite() {
        return Err(ArmError::ParseError {
            line,
            column: col,
            message: format!("non-finite value {raw:?}"),
        });
    }
    Ok(value)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> ArmError {
    let line = e.position().map(|p| p.line()).unwrap_or(fallback_line);
    ArmError::ParseError {
        line,
        column: 0,
        message: e.to_string(),
    }
}

/// Writes arms (and optional means) in the format read by [`read_arms_csv`].
pub fn write_arms_csv<W: Write>(
    writer: W,
    arms: &ArmSet,
    rewards: Option<&RewardModel>,
) -> Result<(), ArmError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..arms.dim()).map(|j| format!("f{j}")).collect();
    if rewards.is_some() {
        header.push("mean".into());
    }
    w.write_record(&header).map_err(|e| csv_error(e, 0))?;
    for i in 0..arms.len() {
        let mut row: Vec<String> = arms
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        if let Some(r) = rewards {
            row.push(format!("{:e}", r.means()[i]));
        }
        w.write_record(&row).map_err(|e| csv_error(e, 0))?;
    }
    w.flush()?;
    Ok(())
}
