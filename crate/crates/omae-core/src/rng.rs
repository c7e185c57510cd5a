//! Seed derivation. All randomness in a run flows from one root seed,
//! split per purpose with a counter-based mix so adding a consumer does
//! not shift any other consumer's stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Purpose tags for seed splitting. Each consumer gets its own lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scene,
    Mask,
    Init,
    Shuffle,
    Eval,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Scene => 0x5ce7e,
            Stream::Mask => 0x3a5c,
            Stream::Init => 0x1417,
            Stream::Shuffle => 0x5bf1e,
            Stream::Eval => 0xe7a1,
        }
    }
}

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derive a sub-seed from a root seed, a purpose lane, and a counter
/// (scene index, step index, ...).
pub fn derive_seed(root: u64, stream: Stream, counter: u64) -> u64 {
    splitmix64(splitmix64(root ^ stream.tag()).wrapping_add(counter))
}

/// Seeded generator for a given lane and counter.
pub fn rng_for(root: u64, stream: Stream, counter: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(root, stream, counter))
}
