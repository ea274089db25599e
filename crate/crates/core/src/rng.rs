//! Keyed random substreams.
//!
//! A [`StreamKey`] is a 64-bit key that can be refined with tags. The key for
//! "junction 17 of the input window of trial 250" is obtained by chaining
//! `child` calls, so the stream a junction sees never depends on how many
//! draws other junctions made or on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

/// Purpose tags used when deriving substreams.
pub mod purpose {
    pub const BUILD: u64 = 0x0062_7569_6c64;
    pub const STATE: u64 = 0x0073_7461_7465;
    pub const WEIGHTS: u64 = 0x0077_6569_6768;
    pub const TRAIN: u64 = 0x0074_7261_696e;
    pub const EVAL: u64 = 0x6576_616c;
    pub const STIMULUS: u64 = 0x7374_696d;
    pub const INPUT: u64 = 0x0069_6e70_7574;
    pub const OUTPUT: u64 = 0x006f_7574_7075;
    pub const FAULT: u64 = 0x0066_6175_6c74;
    pub const BASIS: u64 = 0x0062_6173_6973;
    pub const NOISE: u64 = 0x006e_6f69_7365;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub const fn new(seed: u64) -> Self {
        StreamKey(seed)
    }

    /// Derive the substream for `tag`.
    pub fn child(self, tag: u64) -> Self {
        StreamKey(splitmix(self.0 ^ splitmix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }

    pub const fn raw(self) -> u64 {
        self.0
    }

    pub fn rng(self) -> SimRng {
        SimRng::seed_from_u64(self.0)
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
