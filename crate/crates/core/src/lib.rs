//! Tree-indexed Markov chains on the complete binary tree.
//!
//! Each vertex of the tree carries a state; the two children of a vertex are
//! drawn jointly from a kernel given the parent's state. The crate simulates
//! such chains reproducibly in parallel, computes the generation-`k`
//! empirical measure `Z_k`, and checks its convergence, after rescaling time
//! by `n`, to the law of the process seen along a uniform random walk.

pub mod cli;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod kernels;
pub mod limits;
pub mod measures;
pub mod oracle;
pub mod rng;
pub mod stats;
pub mod tree;

pub use engine::{
    simulate_full_tree, simulate_leaves_joint, simulate_walk, FullTreeLimits, GenerationBuffer,
    WalkPath,
};
pub use error::{Error, Result};
pub use kernels::{IncrementLaw, KernelFamily, KernelKind, MixtureRow, StateKind};
pub use limits::{GeneratorSpec, LimitLaw};
pub use measures::{EmpiricalMeasure, TestFunction};
pub use rng::VertexRngPolicy;
pub use tree::{mrca, spanning_subtree, Vertex};
