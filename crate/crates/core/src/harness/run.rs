//! Seeded trial orchestration.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use super::config::{Algorithm, ConfigError, Dataset, EmbeddingChoice, ExperimentConfig};
use super::records::TrialRecord;
use crate::arms::{
    load_arms_csv, make_hard_instance, make_synthetic_linear, make_synthetic_nonlinear, ArmError,
    ArmSet, Oracle, RewardModel,
};
use crate::elimination::{
    action_eliminate, adaptive_eliminate, fixed_eliminate, rage_eliminate,
    unknown_misspec_eliminate, EliminationConfig, EliminationError, RunOutcome,
};
use crate::embedding::{
    Embedder, EmbeddingError, EmpiricalKernelEmbedder, Kernel, MercerEmbedder, SpectrumModel,
    SvdEmbedder,
};
use crate::neural::neural_eliminate;

/// Sub-seed streams derived from a trial seed.
pub const INSTANCE_STREAM: u64 = 0;
pub const ORACLE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] ArmError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("trial with seed {seed}: {source}")]
    Trial {
        seed: u64,
        #[source]
        source: EliminationError,
    },
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed record at line {line}: {message}")]
    Record { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Independent 64-bit seed for `stream` of trial `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Arms and true means for one trial.
pub fn build_instance(cfg: &ExperimentConfig, seed: u64) -> Result<(ArmSet, RewardModel), HarnessError> {
    let instance_seed = derive_seed(seed, INSTANCE_STREAM);
    Ok(match &cfg.dataset {
        Dataset::SyntheticLinear => make_synthetic_linear(cfg.k, cfg.d, instance_seed)?,
        Dataset::SyntheticNonlinear => make_synthetic_nonlinear(cfg.k, cfg.d, instance_seed)?,
        Dataset::HardInstance => {
            let inst = make_hard_instance(cfg.d, cfg.eps)?;
            (inst.arms, inst.rewards)
        }
        Dataset::Csv(path) => {
            let (arms, rewards) = load_arms_csv(path, Some(&cfg.csv_mean_column))?;
            let rewards = rewards.ok_or_else(|| {
                HarnessError::Config(ConfigError {
                    field: "dataset".into(),
                    line: None,
                    message: format!("{} has no `{}` column", path.display(), cfg.csv_mean_column),
                })
            })?;
            (arms, rewards)
        }
    })
}

pub fn build_embedder(cfg: &ExperimentConfig, arms: &ArmSet) -> Result<Box<dyn Embedder>, HarnessError> {
    Ok(match &cfg.embedding {
        EmbeddingChoice::Svd { c } => Box::new(SvdEmbedder::new(arms, *c)),
        EmbeddingChoice::KernelGaussian { gamma_k, c } => Box::new(EmpiricalKernelEmbedder::new(
            arms,
            Kernel::Gaussian { gamma_k: *gamma_k },
            *c,
        )?),
        EmbeddingChoice::Empirical { c } => {
            Box::new(EmpiricalKernelEmbedder::new(arms, Kernel::Linear, *c)?)
        }
        EmbeddingChoice::KernelMercer { spectrum, c_phi } => {
            let mut model = SpectrumModel::sine(spectrum.clone());
            model.c_phi = *c_phi;
            Box::new(MercerEmbedder::new(arms, model)?)
        }
    })
}

fn elimination_config(cfg: &ExperimentConfig) -> EliminationConfig {
    EliminationConfig {
        eps: cfg.eps,
        delta: cfg.delta,
        zeta: cfg.zeta,
        ..EliminationConfig::default()
    }
}

fn run_algorithm(
    cfg: &ExperimentConfig,
    arms: &ArmSet,
    oracle: &mut Oracle,
    seed: u64,
) -> Result<RunOutcome, EliminationError> {
    let ecfg = elimination_config(cfg);
    let plan_for = |emb: &dyn Embedder| -> Result<_, EliminationError> {
        let d = match cfg.plan_dim {
            Some(d) => d,
            None => emb.effective_dimension(cfg.eps, cfg.zeta).map_err(EliminationError::NotReachable)?,
        };
        Ok(emb.plan(d, cfg.zeta)?)
    };
    let embedder = || build_embedder(cfg, arms).map_err(|e| match e {
        HarnessError::Embedding(e) => EliminationError::Embedding(e),
        other => EliminationError::InvalidParameter(other.to_string()),
    });
    match cfg.algorithm {
        Algorithm::Adaptive => adaptive_eliminate(embedder()?.as_ref(), oracle, &ecfg),
        Algorithm::Fixed => fixed_eliminate(&plan_for(embedder()?.as_ref())?, oracle, &ecfg),
        Algorithm::Unknown => {
            let plan = plan_for(embedder()?.as_ref())?;
            unknown_misspec_eliminate(&plan, oracle, &ecfg, cfg.round_budget).map(|(_, out)| out)
        }
        Algorithm::Rage => rage_eliminate(arms, oracle, &ecfg),
        Algorithm::Action => action_eliminate(oracle, cfg.eps, cfg.delta),
        Algorithm::Neural => neural_eliminate(arms, oracle, &cfg.neural, cfg.neural_width, cfg.neural_depth, seed),
    }
}

fn record(cfg: &ExperimentConfig, seed: u64, out: &RunOutcome, wall_ms: f64) -> TrialRecord {
    let pulls = match (out.succeeded, out.sample_complexity) {
        (true, Some(sc)) => sc,
        _ => out.total_pulls,
    };
    let d_k = match cfg.algorithm {
        Algorithm::Action => Vec::new(),
        _ => out.d_sequence(),
    };
    TrialRecord {
        algorithm: cfg.algorithm.name().to_string(),
        seed,
        pulls,
        succeeded: out.succeeded,
        rounds: out.rounds(),
        wall_ms: if cfg.timing { wall_ms } else { 0.0 },
        d_k,
    }
}

/// One trial: the instance, oracle stream and network initialisation are all
/// derived from `seed`.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<TrialRecord, HarnessError> {
    let (arms, rewards) = build_instance(cfg, seed)?;
    run_trial_on(cfg, seed, &arms, &rewards)
}

fn run_trial_on(
    cfg: &ExperimentConfig,
    seed: u64,
    arms: &ArmSet,
    rewards: &RewardModel,
) -> Result<TrialRecord, HarnessError> {
    let start = Instant::now();
    let mut oracle = Oracle::new(rewards.clone(), derive_seed(seed, ORACLE_STREAM), cfg.max_pulls);
    let outcome = match run_algorithm(cfg, arms, &mut oracle, seed) {
        Ok(out) => out,
        Err(EliminationError::CapExceeded(out)) => *out,
        Err(source) => return Err(HarnessError::Trial { seed, source }),
    };
    let wall = start.elapsed().as_secs_f64() * 1e3;
    Ok(record(cfg, seed, &outcome, wall))
}

/// Runs seeds `seed0 .. seed0 + trials` and returns the records in seed
/// order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.trials as u64).map(|i| cfg.seed0 + i).collect();
    // CSV data is shared; generated instances are per trial.
    let shared = match cfg.dataset {
        Dataset::Csv(_) => Some(build_instance(cfg, cfg.seed0)?),
        _ => None,
    };
    let job = |&seed: &u64| match &shared {
        Some((arms, rewards)) => run_trial_on(cfg, seed, arms, rewards),
        None => run_trial(cfg, seed),
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build().map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| seeds.par_iter().map(job).collect())
}
