//! Deterministic random streams.
//!
//! Every stochastic stage draws from a ChaCha stream keyed by the master seed
//! and a `(purpose, index)` pair, so stages can be re-run independently and
//! results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags for per-stage streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u16)]
pub enum Purpose {
    Estimation = 1,
    Mismatch = 2,
    Simulation = 3,
    Conditioning = 4,
    Scoring = 5,
    Prior = 6,
    Fitting = 7,
}

/// Stream for `purpose`, sub-indexed by `index` (iteration, site, chain...).
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // 16 bits of purpose, 48 bits of index.
    rng.set_stream(((purpose as u64) << 48) ^ (index & 0x0000_ffff_ffff_ffff));
    rng
}
