//! Fixed benchmark instances shared by the criterion benches.

use dynmech_core::env::DynamicEnvironment;
use dynmech_core::instances::{gen_random, GeneratorParams};

pub fn random_env(horizon: usize, size: usize, eta: f64, seed: u64) -> DynamicEnvironment {
    gen_random(&GeneratorParams {
        horizon,
        num_states: size,
        num_actions: size,
        eta,
        seed,
    })
    .expect("benchmark parameters are valid")
}
