//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a [`RngStream`] keyed by a user
//! seed and a stream id. Sub-streams are derived by mixing, never by sharing a
//! generator, so results do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A reproducible random stream identified by `(seed, stream_id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derives an independent child stream, e.g. one per term or per replicate.
    pub fn substream(&self, id: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.stream_id.wrapping_add(0xA5A5))),
            stream_id: id,
        }
    }

    /// Generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(self.seed));
        rng.set_stream(self.stream_id);
        rng
    }

    /// Generator for the `index`-th draw of this stream. Used for per-sample
    /// streams so that sample `i` is the same whichever worker produces it.
    pub fn indexed(&self, index: u64) -> ChaCha8Rng {
        let key = splitmix64(self.seed ^ splitmix64(self.stream_id ^ 0x5DEE_CE66_D1CE_4E5B));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        rng.set_stream(index);
        rng
    }
}
