//! Every random decision in a run flows from one root seed. Components ask
//! for a named substream so that adding or reordering consumers never shifts
//! the draws seen by another component.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the stream name; stable across platforms and releases.
fn stream_id(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Generator for the substream `name` of `root`.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(stream_id(name));
    rng
}

/// A derived 64-bit seed, for handing to components that take a plain seed.
pub fn derive(root: u64, name: &str) -> u64 {
    stream(root, name).next_u64()
}
