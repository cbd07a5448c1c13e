//! Counter-based random streams.
//!
//! Every replication draws from its own ChaCha stream keyed by
//! `(seed, lane, replication index)`, so results never depend on how
//! replications are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used by every simulation routine.
pub type StreamRng = ChaCha8Rng;

/// Independent consumers inside one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lane {
    /// Volatility chain jumps.
    Chain = 1,
    /// Brownian driver of the asset in changed time.
    Asset = 2,
    /// Brownian driver of the volatility diffusion.
    Volatility = 3,
    /// Regression paths of the Longstaff–Schwartz lower bound.
    Regression = 4,
    /// Anything else (tests, exports).
    Auxiliary = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for replication `index` of the given lane.
pub fn stream(seed: u64, lane: Lane, index: u64) -> StreamRng {
    let key = splitmix64(seed ^ splitmix64(lane as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
