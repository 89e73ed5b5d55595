//! Combinatorics of the complete binary tree.
//!
//! A [`Vertex`] is a depth plus its root-to-vertex bit path. Bits are packed
//! into 64-bit chunks, most significant first; the final chunk holds the
//! remaining `depth % 64` bits right-aligned, so for depth <= 64 the single
//! chunk is exactly the path read as a binary number. That number is also the
//! vertex's index inside a generation buffer.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};

/// Deepest vertex whose path fits a generation-buffer index.
pub const MAX_INDEXED_DEPTH: u32 = 63;

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Vertex {
    depth: u32,
    chunks: Vec<u64>,
}

#[inline]
fn chunk_bits(depth: u32, c: usize) -> u32 {
    let start = 64 * c as u32;
    (depth - start).min(64)
}

impl Vertex {
    pub fn root() -> Self {
        Self {
            depth: 0,
            chunks: Vec::new(),
        }
    }

    /// Vertex of generation `depth` with buffer index `index`.
    pub fn from_index(depth: u32, index: u64) -> Result<Self> {
        if depth > MAX_INDEXED_DEPTH {
            return Err(Error::InvalidParameter(format!(
                "indexed vertices are limited to depth {MAX_INDEXED_DEPTH}, got {depth}"
            )));
        }
        if depth < 64 && index >> depth != 0 {
            return Err(Error::InvalidParameter(format!(
                "index {index} does not fit generation {depth}"
            )));
        }
        let chunks = if depth == 0 { Vec::new() } else { vec![index] };
        Ok(Self { depth, chunks })
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        bits.iter().fold(Self::root(), |v, &b| v.child(b))
    }

    #[inline]
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn is_root(&self) -> bool {
        self.depth == 0
    }

    /// Buffer index, for depth <= 63.
    pub fn index(&self) -> Option<u64> {
        match self.depth {
            0 => Some(0),
            d if d <= MAX_INDEXED_DEPTH => Some(self.chunks[0]),
            _ => None,
        }
    }

    /// Bit at position `i` (0 = the step out of the root).
    #[inline]
    pub fn bit(&self, i: u32) -> bool {
        debug_assert!(i < self.depth);
        let c = (i / 64) as usize;
        let nb = chunk_bits(self.depth, c);
        let off = i % 64;
        (self.chunks[c] >> (nb - 1 - off)) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.depth).map(move |i| self.bit(i))
    }

    pub fn child(&self, bit: bool) -> Self {
        let mut chunks = self.chunks.clone();
        if self.depth.is_multiple_of(64) {
            chunks.push(u64::from(bit));
        } else {
            let last = chunks.last_mut().unwrap();
            *last = (*last << 1) | u64::from(bit);
        }
        Self {
            depth: self.depth + 1,
            chunks,
        }
    }

    pub fn parent(&self) -> Option<Self> {
        if self.depth == 0 {
            None
        } else {
            Some(self.truncate(self.depth - 1))
        }
    }

    /// Chunk `c` of the length-`len` prefix, right-aligned.
    #[inline]
    pub fn prefix_chunk(&self, c: usize, len: u32) -> u64 {
        let have = chunk_bits(self.depth, c);
        let want = chunk_bits(len, c);
        if want == 0 {
            0
        } else {
            self.chunks[c] >> (have - want)
        }
    }

    fn truncate(&self, len: u32) -> Self {
        let n = len.div_ceil(64) as usize;
        let chunks = (0..n).map(|c| self.prefix_chunk(c, len)).collect();
        Self { depth: len, chunks }
    }

    /// Ancestor of `self` in generation `j`.
    pub fn prefix(&self, j: u32) -> Result<Self> {
        if j > self.depth {
            return Err(Error::PrefixOutOfRange {
                vertex: self.to_string(),
                depth: self.depth,
                requested: j,
            });
        }
        Ok(self.truncate(j))
    }

    /// Length of the longest common prefix of `self` and `other`.
    pub fn common_prefix_len(&self, other: &Vertex) -> u32 {
        let len = self.depth.min(other.depth);
        let n = len.div_ceil(64) as usize;
        for c in 0..n {
            let a = self.prefix_chunk(c, len);
            let b = other.prefix_chunk(c, len);
            if a != b {
                let nb = chunk_bits(len, c);
                let same = (a ^ b).leading_zeros() - (64 - nb);
                return 64 * c as u32 + same;
            }
        }
        len
    }

    /// `self <= other` in the ancestor order.
    pub fn is_ancestor_of(&self, other: &Vertex) -> bool {
        self.depth <= other.depth && self.common_prefix_len(other) == self.depth
    }
}

/// Most recent common ancestor.
pub fn mrca(u: &Vertex, v: &Vertex) -> Vertex {
    u.truncate(u.common_prefix_len(v))
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.depth == 0 {
            return f.write_str("∅");
        }
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vertex({self})")
    }
}

impl FromStr for Vertex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "∅" || s.is_empty() {
            return Ok(Self::root());
        }
        s.chars().try_fold(Self::root(), |v, ch| match ch {
            '0' => Ok(v.child(false)),
            '1' => Ok(v.child(true)),
            _ => Err(Error::InvalidParameter(format!("bad vertex string {s:?}"))),
        })
    }
}

/// Uniform vertex of generation `k`.
pub fn sample_leaf<R: Rng + ?Sized>(k: u32, rng: &mut R) -> Vertex {
    let n = k.div_ceil(64) as usize;
    let chunks = (0..n)
        .map(|c| {
            let nb = chunk_bits(k, c);
            let r = rng.next_u64();
            if nb == 64 { r } else { r >> (64 - nb) }
        })
        .collect();
    Vertex { depth: k, chunks }
}

/// Two independent uniform vertices of generation `k`, conditioned to differ
/// (by rejection).
pub fn sample_distinct_pair<R: Rng + ?Sized>(k: u32, rng: &mut R) -> Result<(Vertex, Vertex)> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "generation 0 has a single vertex; no distinct pair exists".into(),
        ));
    }
    let a = sample_leaf(k, rng);
    loop {
        let b = sample_leaf(k, rng);
        if b != a {
            return Ok((a, b));
        }
    }
}

/// Law of the MRCA depth of two independent uniform vertices of generation `k`.
///
/// Depth `j < k` has mass `2^-(j+1)`; coincident vertices put the remaining
/// `2^-k` on depth `k`.
pub fn mrca_depth_pmf(k: u32) -> Vec<f64> {
    let mut pmf: Vec<f64> = (0..k).map(|j| 0.5f64.powi(j as i32 + 1)).collect();
    pmf.push(0.5f64.powi(k as i32));
    pmf
}

/// Same law, conditioned on the two vertices being distinct (`k >= 1`).
pub fn mrca_depth_pmf_distinct(k: u32) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "generation 0 has a single vertex; no distinct pair exists".into(),
        ));
    }
    let norm = 1.0 - 0.5f64.powi(k as i32);
    Ok((0..k).map(|j| 0.5f64.powi(j as i32 + 1) / norm).collect())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningEdge {
    pub parent: usize,
    pub child: usize,
    /// Tree vertices strictly between the endpoints, top-down.
    pub intermediates: Vec<Vertex>,
}

/// Closure of `{root} ∪ leaves` under pairwise MRCA, with contracted edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpanningTree {
    /// Nodes in depth-first (lexicographic) order; `nodes[0]` is the root.
    pub nodes: Vec<Vertex>,
    pub edges: Vec<SpanningEdge>,
    pub leaves: Vec<Vertex>,
}

impl SpanningTree {
    pub fn node_index(&self, v: &Vertex) -> Option<usize> {
        self.nodes.iter().position(|n| n == v)
    }

    pub fn children_of(&self, node: usize) -> impl Iterator<Item = &SpanningEdge> {
        self.edges.iter().filter(move |e| e.parent == node)
    }

    /// Number of distinct tree vertices covered (nodes plus contracted ones).
    pub fn covered_vertex_count(&self) -> usize {
        self.nodes.len() + self.edges.iter().map(|e| e.intermediates.len()).sum::<usize>()
    }
}

/// Sorted, deduplicated copy of a leaf set, checked for a common depth.
pub(crate) fn normalize_leaves<'a, I>(leaves: I) -> Result<Vec<Vertex>>
where
    I: IntoIterator<Item = &'a Vertex>,
{
    let set: BTreeSet<&Vertex> = leaves.into_iter().collect();
    let mut it = set.iter();
    let first = it.next().ok_or(Error::EmptyLeafSet)?;
    if let Some(bad) = it.find(|v| v.depth != first.depth) {
        return Err(Error::MixedDepths(first.depth, bad.depth));
    }
    Ok(set.into_iter().cloned().collect())
}

pub fn spanning_subtree<'a, I>(leaves: I) -> Result<SpanningTree>
where
    I: IntoIterator<Item = &'a Vertex>,
{
    let leaves = normalize_leaves(leaves)?;
    let mut tree = SpanningTree {
        nodes: vec![Vertex::root()],
        edges: Vec::new(),
        leaves: leaves.clone(),
    };
    attach(&mut tree, 0, &leaves);
    Ok(tree)
}

/// Attach the closure of `leaves` (all below `tree.nodes[parent]`) to `parent`.
fn attach(tree: &mut SpanningTree, parent: usize, leaves: &[Vertex]) {
    let parent_v = tree.nodes[parent].clone();
    let top = mrca(&leaves[0], &leaves[leaves.len() - 1]);
    let node = if top == parent_v {
        parent
    } else {
        let intermediates = (parent_v.depth + 1..top.depth)
            .map(|j| top.truncate(j))
            .collect();
        tree.nodes.push(top.clone());
        let idx = tree.nodes.len() - 1;
        tree.edges.push(SpanningEdge {
            parent,
            child: idx,
            intermediates,
        });
        idx
    };
    if leaves.len() == 1 && top.depth == leaves[0].depth {
        return;
    }
    // Leaves below `top` split on the bit right after it.
    let split = leaves.partition_point(|v| !v.bit(top.depth));
    let (left, right) = leaves.split_at(split);
    for side in [left, right] {
        if !side.is_empty() {
            attach(tree, node, side);
        }
    }
}
