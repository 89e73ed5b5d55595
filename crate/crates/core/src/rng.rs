//! Per-vertex random streams.
//!
//! Every vertex of the tree owns a stream whose seed is an avalanche hash of
//! `(master_seed, depth, path bits)`. The draws made at a vertex therefore do
//! not depend on traversal order or on how work is split across threads, so a
//! full-tree fill and a sparse spanning-subtree walk see the same numbers.

use rand::RngCore;

use crate::tree::Vertex;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const DEPTH_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a component seed from a master seed, a fixed label and an index.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label keeps labels stable across builds.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    let a = mix64(master.wrapping_add(GOLDEN));
    let b = mix64(a ^ h);
    mix64(b ^ index.wrapping_mul(GOLDEN).wrapping_add(DEPTH_SALT))
}

/// Counter-based stream: output `i` is `mix64(seed + (i + 1) * GOLDEN)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamRng {
    state: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }
}

impl RngCore for StreamRng {
    #[inline(always)]
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    #[inline(always)]
    fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }
}

/// Seeding discipline shared by every simulation driver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VertexRngPolicy {
    pub master_seed: u64,
}

impl VertexRngPolicy {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Policy for replicate `index` of the experiment component `label`.
    pub fn replicate(&self, label: &str, index: u64) -> Self {
        Self::new(derive_seed(self.master_seed, label, index))
    }

    /// Auxiliary (non-vertex) stream, e.g. for leaf selection or walk directions.
    pub fn aux_stream(&self, label: &str) -> StreamRng {
        StreamRng::new(derive_seed(self.master_seed, label, 0))
    }

    #[inline(always)]
    fn start(&self) -> u64 {
        mix64(self.master_seed.wrapping_add(GOLDEN))
    }

    #[inline(always)]
    fn finish(h: u64, depth: u32) -> u64 {
        mix64(h ^ u64::from(depth).wrapping_mul(DEPTH_SALT))
    }

    /// Seed of the vertex with the given depth (< 64) and path integer.
    #[inline(always)]
    pub fn indexed_seed(&self, depth: u32, index: u64) -> u64 {
        debug_assert!(depth < 64);
        let mut h = self.start();
        if depth > 0 {
            h = mix64(h ^ index);
        }
        Self::finish(h, depth)
    }

    /// Seed of the length-`depth` prefix of `v`, without materializing it.
    pub fn prefix_seed(&self, v: &Vertex, depth: u32) -> u64 {
        debug_assert!(depth <= v.depth());
        let mut h = self.start();
        let chunks = depth.div_ceil(64) as usize;
        for c in 0..chunks {
            h = mix64(h ^ v.prefix_chunk(c, depth));
        }
        Self::finish(h, depth)
    }

    pub fn vertex_seed(&self, v: &Vertex) -> u64 {
        self.prefix_seed(v, v.depth())
    }

    pub fn vertex_rng(&self, v: &Vertex) -> StreamRng {
        StreamRng::new(self.vertex_seed(v))
    }

    #[inline(always)]
    pub fn indexed_rng(&self, depth: u32, index: u64) -> StreamRng {
        StreamRng::new(self.indexed_seed(depth, index))
    }
}
