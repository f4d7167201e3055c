//! Seed streams.
//!
//! One root seed feeds every random draw in an experiment. Each consumer asks
//! for a named stream (and optionally an index, e.g. a user id), so rerunning
//! a single stage reproduces exactly the draws it saw inside a full run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams of the root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Noise,
    Placement,
    KMeans,
    Corruption,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Noise => 0x6e6f_6973_6500_0001,
            Stream::Placement => 0x706c_6163_6500_0002,
            Stream::KMeans => 0x6b6d_6561_6e00_0003,
            Stream::Corruption => 0x636f_7272_7500_0004,
        }
    }
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for `stream` / `index` derived from `root`.
pub fn derive(root: u64, stream: Stream, index: u64) -> u64 {
    mix(mix(root ^ stream.tag()) ^ index)
}

pub fn stream_rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}
