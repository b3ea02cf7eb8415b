//! Seed derivation.
//!
//! Every random quantity in a realization is drawn from a ChaCha stream keyed
//! by `(seed, purpose)`, so the order in which strategies or estimators run
//! never shifts another consumer's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Independent stream identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Covariates = 1,
    AVariant = 2,
    TreatmentCoefficients = 3,
    Treatment = 4,
    OutcomeSurface = 5,
    Outcomes = 6,
    TestSplit = 7,
    Mask = 8,
    Estimator = 9,
    AttributeModel = 10,
    Selection = 11,
    TieBreak = 12,
}

pub fn stream(seed: u64, purpose: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose as u64);
    rng
}

/// A stream for `purpose` at step `index` (e.g. one per acquisition round).
pub fn indexed_stream(seed: u64, purpose: Stream, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(index.wrapping_add(0x5851_f42d))));
    rng.set_stream(purpose as u64);
    rng
}

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Tie-break key for a candidate; depends on the id, never on its position.
pub fn tiebreak_key(seed: u64, id: u64) -> u64 {
    mix(mix(seed ^ (Stream::TieBreak as u64).rotate_left(32)) ^ id)
}
