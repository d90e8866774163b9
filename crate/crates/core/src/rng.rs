//! Named deterministic random streams.
//!
//! Each purpose draws from its own ChaCha stream keyed by the run seed, so
//! extra draws for one purpose never shift another purpose's sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Population,
    Perception,
    Demand,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Population => 1,
            Stream::Perception => 2,
            Stream::Demand => 3,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    pub population: ChaCha8Rng,
    pub perception: ChaCha8Rng,
    pub demand: ChaCha8Rng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            population: stream_rng(seed, Stream::Population),
            perception: stream_rng(seed, Stream::Perception),
            demand: stream_rng(seed, Stream::Demand),
        }
    }
}
