//! Exact enumeration for finite-support kernels at small depth.
//!
//! Every assignment of child pairs to the internal vertices of generations
//! `0..k` is enumerated with rational probabilities, and the law of the
//! observing walk is propagated separately, so both sides of
//! `E<Z_k, φ> = E φ(R_k)` are computed without touching the simulation
//! engine.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::diagnostics::replicate_pairings;
use crate::engine::FullTreeLimits;
use crate::error::{Error, Result};
use crate::kernels::{IncrementLaw, KernelFamily, KernelKind};
use crate::measures::TestFunction;
use crate::rng::VertexRngPolicy;
use crate::stats;

pub type Q = BigRational;

/// Largest number of joint assignments the enumerator accepts.
pub const MAX_ASSIGNMENTS: u64 = 1 << 22;
pub const MAX_ORACLE_DEPTH: u32 = 4;

fn q(x: f64) -> Result<Q> {
    Q::from_float(x).ok_or_else(|| Error::InvalidParameter(format!("non-finite value {x}")))
}

/// A kernel with finitely many additive child-pair rows `(s0, s1, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeKernel {
    rows: Vec<(Q, Q, Q)>,
}

impl LatticeKernel {
    /// Rows of `kernel`, with each floating-point shift and probability read
    /// as the exact rational it represents.
    pub fn from_family(kernel: &KernelFamily) -> Result<Self> {
        let n = kernel.scale();
        let unsupported = || {
            Error::InvalidParameter(format!(
                "the {} kernel has no finite child-pair support",
                kernel.family_id()
            ))
        };
        let rows = match kernel.kind() {
            KernelKind::Donsker { increment } => {
                let s = 1.0 / (n as f64).sqrt();
                let support = increment.support(n).ok_or_else(unsupported)?;
                support
                    .into_iter()
                    .map(|(v, p)| {
                        let d = q(v * s)?;
                        Ok((d.clone(), -d, q(p)?))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
            KernelKind::Poisson { lambda } => {
                let p = q(*lambda)? * Q::from_integer(BigInt::from(2))
                    / Q::from_integer(BigInt::from(n));
                vec![
                    (Q::zero(), Q::zero(), Q::one() - p.clone()),
                    (Q::zero(), Q::one(), p),
                ]
            }
            KernelKind::SymmetricProduct { increment } => {
                let support = exact_support(increment, n).ok_or_else(unsupported)?;
                let mut rows = Vec::new();
                for (a, pa) in &support {
                    for (b, pb) in &support {
                        rows.push((a.clone(), b.clone(), pa * pb));
                    }
                }
                rows
            }
            KernelKind::Custom { rows } => rows
                .iter()
                .map(|r| Ok((q(r.shift0)?, q(r.shift1)?, q(r.prob)?)))
                .collect::<Result<Vec<_>>>()?,
        };
        let rows: Vec<_> = rows.into_iter().filter(|r| !r.2.is_zero()).collect();
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(Q, Q, Q)] {
        &self.rows
    }
}

fn exact_support(law: &IncrementLaw, n: u64) -> Option<Vec<(Q, Q)>> {
    match law {
        IncrementLaw::BernoulliJump { rate } => {
            let p = Q::from_float(*rate)? * Q::from_integer(BigInt::from(2))
                / Q::from_integer(BigInt::from(n));
            Some(vec![(Q::zero(), Q::one() - p.clone()), (Q::one(), p)])
        }
        other => other
            .support(n)?
            .into_iter()
            .map(|(v, p)| Some((Q::from_float(v)?, Q::from_float(p)?)))
            .collect(),
    }
}

/// `φ(x)` in exact arithmetic, for the rational-valued test functions.
pub fn exact_eval(phi: &TestFunction, x: &Q) -> Result<Q> {
    Ok(match phi {
        TestFunction::Identity => x.clone(),
        TestFunction::Square => x * x,
        TestFunction::Quartic => {
            let s = x * x;
            &s * &s
        }
        TestFunction::Indicator { threshold } => {
            if *x >= q(*threshold)? {
                Q::one()
            } else {
                Q::zero()
            }
        }
        TestFunction::Table { knots, values } => {
            let k: Vec<Q> = knots.iter().map(|&v| q(v)).collect::<Result<_>>()?;
            let v: Vec<Q> = values.iter().map(|&v| q(v)).collect::<Result<_>>()?;
            let last = k.len() - 1;
            if *x <= k[0] {
                v[0].clone()
            } else if *x >= k[last] {
                v[last].clone()
            } else {
                let i = k.partition_point(|kk| kk <= x) - 1;
                let w = (x - &k[i]) / (&k[i + 1] - &k[i]);
                &v[i] + w * (&v[i + 1] - &v[i])
            }
        }
        TestFunction::ExpBounded { .. } => {
            return Err(Error::InvalidParameter(
                "exp_bounded is not rational-valued".into(),
            ))
        }
    })
}

/// Exact moments of the generation-`k` empirical measure for one φ.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeMoments {
    pub k: u32,
    /// `E<Z_k, φ>`.
    pub mean_pairing: Q,
    /// `E<Z_k, φ>²`.
    pub second_moment: Q,
    /// `E<Z_k, φ²>`, the diagonal term.
    pub mean_square: Q,
    /// `E[φ(X_Σ1) φ(X_Σ2)]` over distinct uniform leaves; absent at `k = 0`.
    pub distinct_product: Option<Q>,
}

impl TreeMoments {
    /// `D + 2^-k (S − D)` with `D` the distinct-pair term and `S` the diagonal.
    pub fn decomposed_second_moment(&self) -> Q {
        match &self.distinct_product {
            None => self.mean_square.clone(),
            Some(d) => {
                let w = Q::new(BigInt::one(), BigInt::one() << self.k);
                d + w * (&self.mean_square - d)
            }
        }
    }
}

fn assignment_count(rows: usize, k: u32) -> Option<u64> {
    let internal = (1u64 << k) - 1;
    (rows as u64).checked_pow(u32::try_from(internal).ok()?)
}

/// Enumerate all joint child-pair assignments down to generation `k`.
pub fn tree_moments(
    kernel: &LatticeKernel,
    x0: f64,
    k: u32,
    phis: &[TestFunction],
) -> Result<Vec<TreeMoments>> {
    if k > MAX_ORACLE_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "enumeration depth {k} exceeds {MAX_ORACLE_DEPTH}"
        )));
    }
    match assignment_count(kernel.rows.len(), k) {
        Some(c) if c <= MAX_ASSIGNMENTS => {}
        _ => {
            return Err(Error::InvalidParameter(format!(
                "{} rows at depth {k} is too many assignments to enumerate",
                kernel.rows.len()
            )))
        }
    }
    let leaves = 1usize << k;
    // Heap layout: vertex i has children 2i and 2i + 1, root at 1.
    let mut states = vec![Q::zero(); 2 * leaves];
    states[1] = q(x0)?;
    let mut acc = vec![Accumulator::default(); phis.len()];
    enumerate(kernel, 1, leaves, &mut states, &Q::one(), phis, &mut acc)?;
    let n_leaves = Q::from_integer(BigInt::from(leaves));
    let pairs = Q::from_integer(BigInt::from(leaves * (leaves - 1).max(1)));
    Ok(acc
        .into_iter()
        .map(|a| TreeMoments {
            k,
            mean_pairing: a.sum / &n_leaves,
            second_moment: a.sum_sq_of_sum.clone() / (&n_leaves * &n_leaves),
            mean_square: a.sum_of_sq.clone() / &n_leaves,
            distinct_product: (k > 0).then(|| (a.sum_sq_of_sum - a.sum_of_sq) / &pairs),
        })
        .collect())
}

/// Probability-weighted sums of `Σφ`, `(Σφ)²` and `Σφ²` over leaves.
#[derive(Clone, Default)]
struct Accumulator {
    sum: Q,
    sum_sq_of_sum: Q,
    sum_of_sq: Q,
}

fn enumerate(
    kernel: &LatticeKernel,
    vertex: usize,
    leaves: usize,
    states: &mut [Q],
    prob: &Q,
    phis: &[TestFunction],
    acc: &mut [Accumulator],
) -> Result<()> {
    if vertex == leaves {
        for (phi, a) in phis.iter().zip(acc.iter_mut()) {
            let mut s = Q::zero();
            let mut s2 = Q::zero();
            for x in &states[leaves..] {
                let v = exact_eval(phi, x)?;
                s2 += &v * &v;
                s += v;
            }
            a.sum += prob * &s;
            a.sum_sq_of_sum += prob * &s * &s;
            a.sum_of_sq += prob * s2;
        }
        return Ok(());
    }
    for (s0, s1, p) in &kernel.rows {
        let x = states[vertex].clone();
        states[2 * vertex] = &x + s0;
        states[2 * vertex + 1] = &x + s1;
        enumerate(kernel, vertex + 1, leaves, states, &(prob * p), phis, acc)?;
    }
    Ok(())
}

/// Law of `R_k` started at `x0`, as `state -> probability`.
pub fn walk_law(kernel: &LatticeKernel, x0: f64, k: u32) -> Result<BTreeMap<Q, Q>> {
    let half = Q::new(BigInt::one(), BigInt::from(2));
    let mut law = BTreeMap::from([(q(x0)?, Q::one())]);
    for _ in 0..k {
        let mut next = BTreeMap::new();
        for (x, p) in &law {
            for (s0, s1, r) in &kernel.rows {
                let w = p * r * &half;
                *next.entry(x + s0).or_insert_with(Q::zero) += &w;
                *next.entry(x + s1).or_insert_with(Q::zero) += w;
            }
        }
        law = next;
    }
    Ok(law)
}

/// `E φ(R_k)`.
pub fn walk_expectation(law: &BTreeMap<Q, Q>, phi: &TestFunction) -> Result<Q> {
    let mut acc = Q::zero();
    for (x, p) in law {
        acc += exact_eval(phi, x)? * p;
    }
    Ok(acc)
}

pub fn to_f64(x: &Q) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// One row of an oracle-versus-simulation comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub family: String,
    pub n: u64,
    pub k: u32,
    pub phi: String,
    pub exact_pairing: f64,
    pub exact_walk: f64,
    /// Whether `E<Z_k, φ> = E φ(R_k)` holds in exact arithmetic.
    pub exact_equal: bool,
    /// Whether `E<Z_k,φ>² = D + 2^-k (S − D)` holds in exact arithmetic.
    pub decomposition_equal: bool,
    pub replicates: usize,
    pub simulated_mean: f64,
    pub simulated_se: f64,
    /// `|simulated − exact| <= 4·SE`, with a 1e-12 floor for degenerate
    /// pairings.
    pub within_4se: bool,
}

impl OracleRow {
    pub fn pass(&self) -> bool {
        self.exact_equal && self.decomposition_equal && self.within_4se
    }
}

/// Compare exact enumeration with `replicates` simulated trees for every
/// `k <= k_max` and every φ.
pub fn compare(
    family: &KernelFamily,
    x0: f64,
    k_max: u32,
    phis: &[TestFunction],
    replicates: usize,
    policy: &VertexRngPolicy,
) -> Result<Vec<OracleRow>> {
    family.check_state(x0)?;
    let lattice = LatticeKernel::from_family(family)?;
    let limits = FullTreeLimits::default();
    let mut rows = Vec::new();
    for k in 0..=k_max {
        let moments = tree_moments(&lattice, x0, k, phis)?;
        let law = walk_law(&lattice, x0, k)?;
        let sims = if replicates > 0 {
            replicate_pairings(family, x0, k, phis, replicates, policy, &format!("oracle-k{k}"), &limits)?
        } else {
            vec![Vec::new(); phis.len()]
        };
        for ((phi, m), sim) in phis.iter().zip(&moments).zip(&sims) {
            let walk = walk_expectation(&law, phi)?;
            let exact = to_f64(&m.mean_pairing);
            let (mean, se) = if sim.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                (stats::mean(sim), stats::std_error(sim))
            };
            rows.push(OracleRow {
                family: family.family_id().to_string(),
                n: family.scale(),
                k,
                phi: phi.id(),
                exact_pairing: exact,
                exact_walk: to_f64(&walk),
                exact_equal: m.mean_pairing == walk,
                decomposition_equal: m.second_moment == m.decomposed_second_moment(),
                replicates,
                simulated_mean: mean,
                simulated_se: se,
                within_4se: sim.is_empty() || (mean - exact).abs() <= 4.0 * se + 1e-12,
            });
        }
    }
    Ok(rows)
}
