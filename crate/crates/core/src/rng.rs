//! Counter-based random substreams.
//!
//! Every parallel work item draws from a ChaCha8 stream keyed by
//! `(seed, purpose tag)` and selected by its chunk index, so results do not
//! depend on how rayon schedules the chunks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Number of consecutive indices served by one substream.
pub const CHUNK: usize = 4096;

pub const TAG_POOL: u64 = 0x706f_6f6c;
pub const TAG_SWEEP: u64 = 0x7377_6565;
pub const TAG_PATH: u64 = 0x7061_7468;
pub const TAG_TREE: u64 = 0x7472_6565;
pub const TAG_INIT: u64 = 0x696e_6974;
pub const TAG_GRID: u64 = 0x6772_6964;
pub const TAG_PERMUTE: u64 = 0x7065_726d;
pub const TAG_PAIR: u64 = 0x7061_6972;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Key for a purpose tag that itself carries a counter (e.g. a generation).
pub fn tag_with(tag: u64, counter: u64) -> u64 {
    splitmix64(tag ^ splitmix64(counter.wrapping_add(1)))
}

pub fn substream(seed: u64, tag: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(stream);
    rng
}

/// Number of chunks needed to cover `n` indices.
pub fn chunk_count(n: usize) -> usize {
    n.div_ceil(CHUNK)
}
