//! deterministic seed derivation
//!
//! Every stochastic stage of the pipeline draws from its own ChaCha stream,
//! keyed by (master seed, stream tag, index). Streams are independent of
//! iteration order, which is what lets parallel loops hand each work item its
//! own RNG and still match the sequential fallback bit for bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Arbitrary distinct constants; stable across releases because
/// serialized artifacts (checkpoints, phantom cohorts) depend on them.
pub const STREAM_PHANTOM: u64 = 0x5048_414e_544f_4d00; // "PHANTOM"
pub const STREAM_CLINICAL: u64 = 0x434c_494e_4943_0000; // "CLINIC"
pub const STREAM_SPLIT: u64 = 0x5350_4c49_5400_0000; // "SPLIT"
pub const STREAM_REBALANCE: u64 = 0x5245_4241_4c00_0000; // "REBAL"
pub const STREAM_SHUFFLE: u64 = 0x5348_5546_464c_4500; // "SHUFFLE"
pub const STREAM_AUGMENT: u64 = 0x4155_474d_454e_5400; // "AUGMENT"
pub const STREAM_RF_BOOT: u64 = 0x5246_424f_4f54_0000; // "RFBOOT"
pub const STREAM_RF_TREE: u64 = 0x5246_5452_4545_0000; // "RFTREE"
pub const STREAM_GBT: u64 = 0x4742_5400_0000_0000; // "GBT"
pub const STREAM_CART: u64 = 0x4341_5254_0000_0000; // "CART"
pub const STREAM_CV_FOLDS: u64 = 0x4356_464f_4c44_0000; // "CVFOLD"
pub const STREAM_CV_FIT: u64 = 0x4356_4649_5400_0000; // "CVFIT"

/// splitmix64-style finalizer over (seed, stream, index).
pub fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.rotate_left(17)
        ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 generator for one derived stream.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream, index))
}
