//! Named random sub-streams derived from one root seed.
//!
//! Every randomized step asks for its own stream keyed by a label (the
//! subcommand or stage) and an item key, so results never depend on the
//! order in which items are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed for `(root, label, key)`.
pub fn derive_seed(root: u64, label: &str, key: &[u8]) -> u64 {
    let h = fnv1a(label.as_bytes(), FNV_OFFSET);
    let h = fnv1a(&[0xff], h);
    let h = fnv1a(key, h);
    mix64(root ^ mix64(h))
}

/// Stream for item number `index` of stage `label`.
pub fn substream(root: u64, label: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, label, &index.to_le_bytes()))
}

/// Stream for the item identified by `id` (e.g. an image file stem) of stage `label`.
pub fn substream_for(root: u64, label: &str, id: &str) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, label, id.as_bytes()))
}
