//! Counter-based random streams keyed by `(seed, stream, index)`.
//!
//! Every random draw in the pipeline comes from a ChaCha stream selected by a
//! purpose tag and an item index (point, ray, scene, epoch...), so results do
//! not depend on iteration order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag of a random stream. Distinct tags never share a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    Augment,
    Downsample,
    Scene,
    Ray,
    Query,
    QuerySubsample,
    Init,
    Shuffle,
    ProbeSplit,
    ProbeShuffle,
    Export,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Augment => 0x01,
            Stream::Downsample => 0x02,
            Stream::Scene => 0x03,
            Stream::Ray => 0x04,
            Stream::Query => 0x05,
            Stream::QuerySubsample => 0x06,
            Stream::Init => 0x07,
            Stream::Shuffle => 0x08,
            Stream::ProbeSplit => 0x09,
            Stream::ProbeShuffle => 0x0a,
            Stream::Export => 0x0b,
        }
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit seed for item `index` of `stream`.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    mix64(mix64(seed ^ stream.tag().rotate_left(56)) ^ index)
}

/// Generator for item `index` of `stream` under the global `seed`.
///
/// The key selects the ChaCha key and `index` selects the ChaCha stream, so
/// two different indices never overlap.
pub fn keyed_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ stream.tag().rotate_left(56)));
    rng.set_stream(index);
    rng
}
