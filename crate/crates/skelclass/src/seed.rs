//! Deterministic derivation of per-task RNG streams.
//!
//! All randomness in the crate flows from explicit u64 seeds. Independent
//! tasks (files, folds, epochs, dropout sites) derive their own stream as
//! `mix(seed, stable task index)` so parallel and serial schedules agree.

/// One round of splitmix64 over the seed xored with a task index.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a stream from two task coordinates (e.g. epoch and batch).
pub fn mix2(seed: u64, a: u64, b: u64) -> u64 {
    mix(mix(seed, a), b)
}
