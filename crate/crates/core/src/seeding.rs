//! Deterministic seed derivation.
//!
//! Every random draw in a run is made from a stream keyed by
//! `(run_seed, domain, a, b)`. Keying streams by purpose rather than
//! consuming one global RNG keeps runs reproducible and makes algorithm
//! variants that skip a phase (e.g. pure on-policy runs never sample the
//! replay buffer) draw identical streams everywhere else.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domain tags. Each purpose gets its own constant so streams never
/// collide across phases of a step.
pub mod domain {
    pub const PROBLEM: u64 = 0x01;
    pub const ROLLOUT: u64 = 0x02;
    pub const REPLAY: u64 = 0x03;
    pub const WARMUP: u64 = 0x04;
    pub const WARMUP_POOL: u64 = 0x05;
}

/// Problem ids at or above this value are reserved for evaluation problems;
/// training problem ids are hashed into the complement range.
pub const EVAL_ID_BASE: u64 = 1 << 62;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed from a run seed, a domain tag, and two indices.
pub fn derive_seed(run_seed: u64, domain: u64, a: u64, b: u64) -> u64 {
    splitmix(run_seed ^ splitmix(domain ^ splitmix(a ^ splitmix(b))))
}

/// Deterministic id for the training problem at `(step, slot)`.
/// Always below [`EVAL_ID_BASE`] so it cannot collide with eval ids.
pub fn train_problem_id(run_seed: u64, step: u64, slot: u64) -> u64 {
    derive_seed(run_seed, domain::PROBLEM, step, slot) & (EVAL_ID_BASE - 1)
}

/// Deterministic id for the `index`-th evaluation problem. The eval stream is
/// shared by every run and disjoint from all training ids.
pub fn eval_problem_id(index: u64) -> u64 {
    EVAL_ID_BASE | index
}

/// Seeded RNG for one purpose-keyed stream.
pub fn stream_rng(run_seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(run_seed, domain, a, b))
}
