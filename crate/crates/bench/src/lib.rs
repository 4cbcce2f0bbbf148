//! Shared fixtures for the benchmarks.

use hiermc_core::model::{generate_instance, GroundTruthMode};
use hiermc_core::{Instance, ModelParams};

/// Two clusters of three groups, binary ratings, light noise.
pub fn params(n: usize, p: f64) -> ModelParams {
    ModelParams {
        n,
        m: n / 3,
        c: 2,
        g: 3,
        r: 2,
        q: 2,
        theta: 0.1,
        p,
        alpha: 40.0,
        beta: 10.0,
        gamma: 0.5,
    }
}

pub fn instance(n: usize, p: f64, seed: u64) -> Instance {
    generate_instance(&params(n, p), &GroundTruthMode::Random, seed).expect("valid fixture")
}
