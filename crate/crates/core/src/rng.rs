//! Labeled random streams derived from one master seed.
//!
//! Every source of randomness (split, augmentation, initialization, shuffling)
//! gets its own stream keyed by a label and a list of indices, so results do not
//! depend on the order in which samples are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Augment,
    Init,
    Shuffle,
    Synth,
    Gradcheck,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Split => 0x5350_4c49_5400_0001,
            Stream::Augment => 0x4155_474d_0000_0002,
            Stream::Init => 0x494e_4954_0000_0003,
            Stream::Shuffle => 0x5348_5546_0000_0004,
            Stream::Synth => 0x5359_4e54_0000_0005,
            Stream::Gradcheck => 0x4752_4144_0000_0006,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `stream` from the master seed and index path.
pub fn derive_seed(master: u64, stream: Stream, indices: &[u64]) -> u64 {
    let mut h = splitmix64(master ^ stream.tag());
    for &i in indices {
        h = splitmix64(h ^ i.wrapping_mul(0xd6e8_feb8_6659_fd93));
    }
    h
}

pub fn stream_rng(master: u64, stream: Stream, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, indices))
}
