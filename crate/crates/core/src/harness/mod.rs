//! Experiment configuration, seeded trial orchestration and reporting.

mod config;
mod records;
mod run;

pub use config::{Algorithm, ConfigError, Dataset, EmbeddingChoice, ExperimentConfig};
pub use records::{read_records, summarize, write_records, PullStats, Summary, TrialRecord, CSV_HEADER};
pub use run::{
    build_embedder, build_instance, derive_seed, run_experiment, run_trial, HarnessError,
    INSTANCE_STREAM, ORACLE_STREAM,
};
