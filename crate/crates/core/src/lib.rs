//! Pure-exploration bandits with adaptive low-dimensional embeddings.
//!
//! The crate is organised bottom-up: [`arms`] holds arm sets and the pull
//! oracle, [`design`] and [`rounding`] compute and discretise allocations,
//! [`embedding`] builds feature maps with misspecification bounds,
//! [`elimination`] and [`neural`] run the identification algorithms and
//! [`harness`] orchestrates seeded trials.

pub mod arms;
pub mod design;
pub mod elimination;
pub mod embedding;
pub mod harness;
pub mod linalg;
pub mod neural;
pub mod rounding;

pub use arms::{
    load_arms_csv, make_hard_instance, make_synthetic_linear, make_synthetic_nonlinear,
    read_arms_csv, write_arms_csv, ArmError, ArmId, ArmSet, HardInstance,
    HardInstanceCertificate, Noise, Oracle, PullLedger, RewardModel,
};
pub use design::{
    brute_force_design_oracle, design_objective, difference_set, solve_design, DesignError,
    DesignOptions, DesignSolution, DesignWeights, DirectionSet,
};
pub use rounding::{min_rounding_support, round_allocation, AllocationPlan, RoundingError};
pub use embedding::{
    effective_dimension, empirical_kernel_embed, gamma_of_d, kernel_mercer_embed, svd_embed,
    Embedder, EmbeddingError, EmbeddingPlan, EmpiricalKernelEmbedder, Kernel, MercerEmbedder,
    Spectrum, SpectrumModel, SvdEmbedder,
};
pub use elimination::{
    action_eliminate, adaptive_eliminate, complexity_rho, fixed_eliminate, judge,
    least_squares_estimate, rage_eliminate, unknown_misspec_eliminate, EliminationConfig,
    EliminationError, RoundRecord, RunOutcome, UnknownMisspecRun,
};
pub use neural::{
    forward, grad_param, init_params, neural_effective_dimension, neural_eliminate, ntk_gram,
    train_gradient_descent, NetworkParams, NeuralConfig, NeuralError, NtkGram,
};
pub use harness::{
    read_records, run_experiment, summarize, write_records, ConfigError, ExperimentConfig,
    HarnessError, Summary, TrialRecord,
};
