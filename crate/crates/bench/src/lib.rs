//! Shared fixtures for the criterion benchmarks.

use embex::{make_synthetic_linear, make_synthetic_nonlinear, ArmSet};

/// Arm set of a seeded synthetic-linear instance.
pub fn linear_arms(k: usize, d: usize) -> ArmSet {
    make_synthetic_linear(k, d, 7).expect("valid sizes").0
}

/// Arm set of a seeded synthetic-nonlinear instance.
pub fn nonlinear_arms(k: usize, d: usize) -> ArmSet {
    make_synthetic_nonlinear(k, d, 7).expect("valid sizes").0
}
