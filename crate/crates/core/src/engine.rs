//! Simulation drivers: generation-by-generation full-tree fills, random-walk
//! paths and exact joint sampling of sparse leaf sets.
//!
//! All drivers draw the child pair of a vertex from that vertex's own stream
//! (see [`VertexRngPolicy`]), so a leaf set simulated through its spanning
//! subtree reproduces the full-tree values bit for bit, and results do not
//! depend on the number of worker threads.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, StateKind};
use crate::rng::{StreamRng, VertexRngPolicy};
use crate::tree::{normalize_leaves, Vertex, MAX_INDEXED_DEPTH};

pub const DEFAULT_MAX_FULL_GENERATION: u32 = 26;
const STATE_WIDTH: u64 = 8;
const PAR_MIN_PARENTS: usize = 1024;

/// States `(X_σ)` of one generation; index `i` is the vertex whose path bits
/// are the binary digits of `i`, so the children of `i` sit at `2i`, `2i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationBuffer {
    generation: u32,
    states: Vec<f64>,
}

impl GenerationBuffer {
    pub fn new(generation: u32, states: Vec<f64>) -> Result<Self> {
        if generation > MAX_INDEXED_DEPTH || states.len() as u64 != 1u64 << generation {
            return Err(Error::InvalidParameter(format!(
                "generation {generation} needs 2^{generation} states, got {}",
                states.len()
            )));
        }
        Ok(Self { generation, states })
    }

    pub fn generation(&self) -> u32 {
        self.generation
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn into_states(self) -> Vec<f64> {
        self.states
    }

    pub fn state_at(&self, v: &Vertex) -> Option<f64> {
        if v.depth() != self.generation {
            return None;
        }
        v.index().map(|i| self.states[i as usize])
    }
}

/// Limits on full-tree materialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FullTreeLimits {
    pub max_generation: u32,
}

impl Default for FullTreeLimits {
    fn default() -> Self {
        Self {
            max_generation: DEFAULT_MAX_FULL_GENERATION,
        }
    }
}

impl FullTreeLimits {
    pub fn check(&self, k_max: u32) -> Result<()> {
        if k_max > MAX_INDEXED_DEPTH || k_max > self.max_generation {
            return Err(Error::MemoryBudget {
                requested: k_max,
                cap: self.max_generation.min(MAX_INDEXED_DEPTH),
                bytes: estimate_memory(k_max, STATE_WIDTH),
            });
        }
        Ok(())
    }
}

/// Bytes held by the two ping-pong buffers at generation `k_max`; saturates.
pub fn estimate_memory(k_max: u32, state_width: u64) -> u64 {
    1u64.checked_shl(k_max)
        .unwrap_or(u64::MAX)
        .saturating_mul(state_width)
        .saturating_mul(2)
}

/// Fill generations `0..=k_max`, handing each to `visitor` in order.
pub fn simulate_full_tree<V>(
    kernel: &KernelFamily,
    x0: f64,
    k_max: u32,
    policy: &VertexRngPolicy,
    limits: &FullTreeLimits,
    mut visitor: V,
) -> Result<GenerationBuffer>
where
    V: FnMut(&GenerationBuffer),
{
    limits.check(k_max)?;
    kernel.check_state(x0)?;
    let cap = 1usize << k_max;
    let mut cur = GenerationBuffer {
        generation: 0,
        states: Vec::with_capacity(cap),
    };
    cur.states.push(x0);
    let mut next: Vec<f64> = Vec::with_capacity(cap);
    visitor(&cur);
    for k in 0..k_max {
        next.clear();
        next.resize(cur.states.len() * 2, 0.0);
        next.par_chunks_mut(2)
            .zip(cur.states.par_iter())
            .enumerate()
            .with_min_len(PAR_MIN_PARENTS)
            .for_each(|(i, (pair, &x))| {
                let mut rng = policy.indexed_rng(k, i as u64);
                let (a, b) = kernel.draw_children(x, &mut rng);
                pair[0] = a;
                pair[1] = b;
            });
        std::mem::swap(&mut cur.states, &mut next);
        cur.generation = k + 1;
        visitor(&cur);
    }
    Ok(cur)
}

/// `R_0, …, R_steps` observed along a uniform random root-to-leaf walk.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkPath {
    /// Scale used to rescale step `j` to time `j / n`.
    pub scale: u64,
    pub states: Vec<f64>,
}

impl WalkPath {
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.scale as f64;
        (0..self.states.len()).map(move |j| j as f64 / n)
    }

    /// `R̃_t = R_{[nt]}`.
    pub fn at_time(&self, t: f64) -> Option<f64> {
        let j = generation_at(self.scale, t)?;
        self.states.get(j as usize).copied()
    }
}

/// `[n t]`, tolerant to rounding just below an integer.
pub fn generation_at(n: u64, t: f64) -> Option<u32> {
    if !(t.is_finite() && t >= 0.0) {
        return None;
    }
    let x = n as f64 * t;
    let r = x.round();
    let g = if (x - r).abs() < 1e-9 * r.max(1.0) { r } else { x.floor() };
    if g > f64::from(u32::MAX) {
        None
    } else {
        Some(g as u32)
    }
}

/// Walk down the tree along directions drawn from an auxiliary stream, drawing
/// each visited vertex's child pair from its own stream and keeping one child.
pub fn simulate_walk(
    kernel: &KernelFamily,
    x0: f64,
    steps: u32,
    policy: &VertexRngPolicy,
) -> Result<WalkPath> {
    kernel.check_state(x0)?;
    let mut directions = policy.aux_stream("walk-direction");
    let mut v = Vertex::root();
    let mut x = x0;
    let mut states = Vec::with_capacity(steps as usize + 1);
    states.push(x);
    for _ in 0..steps {
        let mut rng = policy.vertex_rng(&v);
        let (a, b) = kernel.draw_children(x, &mut rng);
        let right = directions.random::<bool>();
        x = if right { b } else { a };
        v = v.child(right);
        states.push(x);
    }
    Ok(WalkPath {
        scale: kernel.scale(),
        states,
    })
}

/// Joint sample of `(X_σ)` for a leaf set of common depth, restricted from the
/// full tree: every vertex on the spanning subtree draws its child pair from
/// its own stream and only the needed children are followed.
pub fn simulate_leaves_joint<'a, I>(
    kernel: &KernelFamily,
    x0: f64,
    leaves: I,
    policy: &VertexRngPolicy,
) -> Result<BTreeMap<Vertex, f64>>
where
    I: IntoIterator<Item = &'a Vertex>,
{
    kernel.check_state(x0)?;
    let leaves = normalize_leaves(leaves)?;
    let states = joint_states(kernel, x0, &leaves, policy);
    Ok(leaves.into_iter().zip(states).collect())
}

/// `leaves` sorted, deduplicated, of common depth.
pub(crate) fn joint_states(
    kernel: &KernelFamily,
    x0: f64,
    leaves: &[Vertex],
    policy: &VertexRngPolicy,
) -> Vec<f64> {
    let depth = leaves[0].depth();
    let mut out = vec![0.0; leaves.len()];
    let mut stack: Vec<(u32, usize, usize, f64)> = vec![(0, 0, leaves.len(), x0)];
    while let Some((j, lo, hi, x)) = stack.pop() {
        if j == depth {
            debug_assert_eq!(hi - lo, 1);
            out[lo] = x;
            continue;
        }
        let mut rng = StreamRng::new(policy.prefix_seed(&leaves[lo], j));
        let (a, b) = kernel.draw_children(x, &mut rng);
        let split = lo + leaves[lo..hi].partition_point(|v| !v.bit(j));
        if split < hi {
            stack.push((j + 1, split, hi, b));
        }
        if lo < split {
            stack.push((j + 1, lo, split, a));
        }
    }
    out
}

const DUMP_MAGIC: &[u8; 4] = b"TCGB";
const DUMP_VERSION: u32 = 1;

fn kind_code(kind: StateKind) -> u32 {
    match kind {
        StateKind::Real => 0,
        StateKind::Integer => 1,
    }
}

/// Binary generation dump: `"TCGB"`, version, generation, state kind (all
/// little-endian `u32`), then `2^k` little-endian values (`f64` for real
/// states, `u64` for integer states).
pub fn write_generation_dump<W: Write>(
    mut w: W,
    g: &GenerationBuffer,
    kind: StateKind,
) -> Result<()> {
    w.write_all(DUMP_MAGIC)?;
    w.write_all(&DUMP_VERSION.to_le_bytes())?;
    w.write_all(&g.generation.to_le_bytes())?;
    w.write_all(&kind_code(kind).to_le_bytes())?;
    for &x in &g.states {
        match kind {
            StateKind::Real => w.write_all(&x.to_le_bytes())?,
            StateKind::Integer => w.write_all(&(x as u64).to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_generation_dump<R: Read>(mut r: R) -> Result<(GenerationBuffer, StateKind)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::Dump("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != DUMP_VERSION {
        return Err(Error::Dump(format!("unsupported version {version}")));
    }
    r.read_exact(&mut word)?;
    let generation = u32::from_le_bytes(word);
    if generation > MAX_INDEXED_DEPTH {
        return Err(Error::Dump(format!("generation {generation} out of range")));
    }
    r.read_exact(&mut word)?;
    let kind = match u32::from_le_bytes(word) {
        0 => StateKind::Real,
        1 => StateKind::Integer,
        other => return Err(Error::Dump(format!("unknown state kind {other}"))),
    };
    let len = 1usize << generation;
    let mut states = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for _ in 0..len {
        r.read_exact(&mut buf)?;
        states.push(match kind {
            StateKind::Real => f64::from_le_bytes(buf),
            StateKind::Integer => u64::from_le_bytes(buf) as f64,
        });
    }
    Ok((GenerationBuffer { generation, states }, kind))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::IncrementLaw;
    use crate::stats;

    fn rademacher(n: u64) -> KernelFamily {
        KernelFamily::donsker(IncrementLaw::Rademacher, n).unwrap()
    }

    #[test]
    fn memory_estimates() {
        assert_eq!(estimate_memory(20, 8), 16_777_216);
        assert_eq!(estimate_memory(0, 8), 16);
        assert_eq!(estimate_memory(63, 8), u64::MAX);
        assert_eq!(estimate_memory(64, 8), u64::MAX);
    }

    #[test]
    fn buffer_lengths_and_root() {
        let mut lens = Vec::new();
        let mut first = None;
        simulate_full_tree(
            &rademacher(1),
            0.75,
            6,
            &VertexRngPolicy::new(1),
            &FullTreeLimits::default(),
            |g| {
                if g.generation() == 0 {
                    first = Some(g.states().to_vec());
                }
                lens.push(g.states().len());
            },
        )
        .unwrap();
        assert_eq!(first.unwrap(), vec![0.75]);
        assert_eq!(lens, vec![1, 2, 4, 8, 16, 32, 64]);
    }

    #[test]
    fn antithetic_generations_average_to_root() {
        for n in [1, 4, 256] {
            let k = KernelFamily::donsker(IncrementLaw::Rademacher, n).unwrap();
            simulate_full_tree(&k, 0.0, 12, &VertexRngPolicy::new(1), &FullTreeLimits::default(), |g| {
                assert_eq!(stats::pairwise_sum(g.states()), 0.0)
            })
            .unwrap();
        }
        for n in [3, 8, 64] {
            for law in [IncrementLaw::Rademacher, IncrementLaw::Gaussian { sigma: 1.0 }] {
                let k = KernelFamily::donsker(law, n).unwrap();
                simulate_full_tree(
                    &k,
                    0.0,
                    12,
                    &VertexRngPolicy::new(n),
                    &FullTreeLimits::default(),
                    |g| {
                        let scale = g.states().iter().fold(1.0f64, |m, x| m.max(x.abs()));
                        let mean = stats::pairwise_sum(g.states()) / g.states().len() as f64;
                        assert!(mean.abs() <= 64.0 * f64::EPSILON * scale, "{mean}");
                    },
                )
                .unwrap();
            }
        }
    }

    #[test]
    fn cap_and_depth_errors() {
        let limits = FullTreeLimits { max_generation: 10 };
        let err = simulate_full_tree(&rademacher(1), 0.0, 11, &VertexRngPolicy::new(1), &limits, |_| {});
        assert!(matches!(err, Err(Error::MemoryBudget { .. })));
        let big = FullTreeLimits { max_generation: 100 };
        assert!(big.check(64).is_err());
    }

    #[test]
    fn walk_basics() {
        let policy = VertexRngPolicy::new(3);
        let w = simulate_walk(&rademacher(1), 2.0, 0, &policy).unwrap();
        assert_eq!(w.states, vec![2.0]);
        let p = KernelFamily::poisson(1.0, 4).unwrap();
        let w = simulate_walk(&p, 0.0, 200, &policy).unwrap();
        assert!(w.states.windows(2).all(|s| s[1] >= s[0]));
        assert_eq!(w.at_time(1.0), Some(w.states[4]));
    }

    #[test]
    fn walk_follows_tree_values() {
        let k = rademacher(2);
        let policy = VertexRngPolicy::new(21);
        let w = simulate_walk(&k, 0.0, 10, &policy).unwrap();
        let g = simulate_full_tree(&k, 0.0, 10, &policy, &FullTreeLimits::default(), |_| {}).unwrap();
        assert!(g.states().contains(&w.states[10]));
    }

    #[test]
    fn generation_index() {
        assert_eq!(generation_at(256, 1.0), Some(256));
        assert_eq!(generation_at(10, 0.3), Some(3));
        assert_eq!(generation_at(7, 0.5), Some(3));
        assert_eq!(generation_at(5, 0.0), Some(0));
        assert_eq!(generation_at(5, -1.0), None);
    }

    #[test]
    fn joint_all_leaves_equals_full_tree() {
        let k = KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, 4).unwrap();
        let policy = VertexRngPolicy::new(99);
        let g = simulate_full_tree(&k, 0.0, 8, &policy, &FullTreeLimits::default(), |_| {}).unwrap();
        let leaves: Vec<Vertex> = (0..256).map(|i| Vertex::from_index(8, i).unwrap()).collect();
        let joint = simulate_leaves_joint(&k, 0.0, &leaves, &policy).unwrap();
        for (v, x) in &joint {
            assert_eq!(g.state_at(v), Some(*x));
        }
    }

    #[test]
    fn joint_rejects_bad_leaf_sets() {
        let k = rademacher(1);
        let policy = VertexRngPolicy::new(1);
        let none: Vec<Vertex> = vec![];
        assert!(simulate_leaves_joint(&k, 0.0, &none, &policy).is_err());
        let mixed: Vec<Vertex> = vec!["0".parse().unwrap(), "01".parse().unwrap()];
        assert!(matches!(
            simulate_leaves_joint(&k, 0.0, &mixed, &policy),
            Err(Error::MixedDepths(..))
        ));
    }

    #[test]
    fn dump_round_trip() {
        let k = KernelFamily::poisson(1.0, 4).unwrap();
        let g = simulate_full_tree(&k, 0.0, 5, &VertexRngPolicy::new(4), &FullTreeLimits::default(), |_| {})
            .unwrap();
        let mut bytes = Vec::new();
        write_generation_dump(&mut bytes, &g, StateKind::Integer).unwrap();
        assert_eq!(&bytes[..4], b"TCGB");
        assert_eq!(bytes.len(), 16 + 8 * 32);
        let (back, kind) = read_generation_dump(&bytes[..]).unwrap();
        assert_eq!(kind, StateKind::Integer);
        assert_eq!(back, g);
        bytes[0] = b'X';
        assert!(read_generation_dump(&bytes[..]).is_err());
    }
}
