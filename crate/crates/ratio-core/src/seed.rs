//! Deterministic seed derivation.
//!
//! Reproducibility rests on giving every randomized sub-task (an epoch
//! shuffle, the attack on one example, one restart of one attack) its own
//! seed derived from the run's root seed plus a tag path. Derivation is a
//! pure function, so adding or removing *sibling* random consumers never
//! perturbs each other's streams; this is what makes reduction identities
//! (e.g. the combined objective with λ=0 versus plain adversarial training)
//! bit-identical.
//!
//! The mixing function is the splitmix64 finalizer, applied once per tag.
//! The constants are part of the on-disk reproducibility contract and must
//! not change.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags used by the training loop and attacks. Kept distinct so two
/// consumers with the same positional indices still draw independent streams.
pub mod stream {
    pub const IN_ATTACK: u64 = 0x01;
    pub const OUT_ATTACK: u64 = 0x02;
    pub const SHUFFLE_IN: u64 = 0x03;
    pub const SHUFFLE_OUT: u64 = 0x04;
    pub const INIT: u64 = 0x05;
    pub const DATA: u64 = 0x06;
    pub const SPLIT: u64 = 0x07;
    pub const EVAL: u64 = 0x08;
    pub const RESTART: u64 = 0x09;
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` and a tag path.
///
/// Each tag is folded in with one splitmix64 round; the result depends on the
/// order and values of all tags. `split_seed(s, &[])` returns `s` unchanged.
pub fn split_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &tag in tags {
        state = mix(
            state
                .wrapping_add(GOLDEN)
                .wrapping_add(tag.wrapping_mul(0xD605_1F2C_9E1B_B4A9)),
        );
    }
    state
}

/// The crate's standard RNG, seeded from a derived seed.
///
/// ChaCha8 is deterministic across platforms and word sizes, which the
/// byte-identical reproducibility contract requires (`StdRng` makes no such
/// promise across releases).
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
