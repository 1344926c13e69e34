//! Reproducible, shardable random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by `(seed, shard, substream)`.
//! ChaCha is counter based, so stream `k` is produced without touching
//! streams `0..k`, and distinct keys give independent sequences.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, shard: u64, sub: u64) -> [u8; 32] {
    let mut state = seed;
    let a = splitmix64(&mut state);
    state ^= shard.wrapping_mul(0xD1B5_4A32_D192_ED03);
    let b = splitmix64(&mut state);
    state ^= sub.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    let c = splitmix64(&mut state);
    let d = splitmix64(&mut state);
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip([a, b, c, d]) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    key
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    shard: u64,
    sub: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, shard: u64) -> Self {
        Self::keyed(seed, shard, 0)
    }

    fn keyed(seed: u64, shard: u64, sub: u64) -> Self {
        Self { seed, shard, sub, inner: ChaCha8Rng::from_seed(derive_key(seed, shard, sub)) }
    }

    /// Independent child stream, e.g. one per replica within a shard.
    pub fn substream(&self, index: u64) -> Self {
        // sub 0 is the parent itself
        let sub = self.sub.wrapping_mul(0x1_0000_0001).wrapping_add(index).wrapping_add(1);
        Self::keyed(self.seed, self.shard, sub)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shard(&self) -> u64 {
        self.shard
    }

    /// Uniform on the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        loop {
            let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
            if u > 0.0 {
                return u;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}
