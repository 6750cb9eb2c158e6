//! Derivation of independent seeds from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes that each get their own seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Split = 1,
    TrainNoise = 2,
    ValidationNoise = 3,
    Init = 4,
    Shuffle = 5,
    Data = 6,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: Stream) -> u64 {
    mix(mix(seed) ^ stream as u64)
}

/// Generator for `stream`, further split by `index` (e.g. the epoch).
pub fn rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive(seed, stream));
    rng.set_stream(index);
    rng
}
