//! Generators and reference implementations for property and acceptance
//! tests. Nothing here is used by the runtime crates.

pub mod graphs;
pub mod messages;
pub mod packing;
pub mod quant;

use rand::SeedableRng;

pub type TestRng = rand::rngs::StdRng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}
