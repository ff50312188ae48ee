//! Counter-based random streams.
//!
//! Every random draw in the engine is keyed by an explicit `(seed, stream)` pair
//! so results never depend on call order or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// A generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Sub-stream `index` of this stream; distinct `(stream, index)` pairs never collide
    /// as long as `index < 2^32` and `stream < 2^32`.
    pub fn child(&self, index: u64) -> Self {
        Self {
            seed: self.seed,
            stream: (self.stream << 32) | (index & 0xffff_ffff),
        }
    }
}
