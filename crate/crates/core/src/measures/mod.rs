//! Empirical measures, pairings `<Z, φ>`, moment estimates and distances to
//! reference laws.

mod test_function;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::engine::GenerationBuffer;
use crate::error::{Error, Result};
use crate::stats::{self, Interval};
use crate::tree::Vertex;

pub use test_function::{std_normal_cdf, std_normal_pdf, TestFunction};

/// Uniform-weight atom collection.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<f64>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::EmptyInput("empirical measure needs at least one atom"));
        }
        Ok(Self { atoms })
    }

    pub fn dirac(x: f64) -> Self {
        Self { atoms: vec![x] }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn atom_mass(&self) -> f64 {
        1.0 / self.atoms.len() as f64
    }

    /// Write one atom per row under the header `state`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state")?;
        for a in &self.atoms {
            writeln!(w, "{}", crate::cli::fmt_f64(*a))?;
        }
        Ok(())
    }
}

pub fn empirical_from_buffer(g: &GenerationBuffer) -> EmpiricalMeasure {
    EmpiricalMeasure {
        atoms: g.states().to_vec(),
    }
}

pub fn empirical_from_leaves(leaves: &BTreeMap<Vertex, f64>) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::new(leaves.values().copied().collect())
}

/// `<Z, φ>`: mean of φ over the atoms, summed pairwise.
pub fn integrate(z: &EmpiricalMeasure, phi: &TestFunction) -> f64 {
    stats::pairwise_sum_by(&z.atoms, &|x: &f64| phi.eval(*x)) / z.atoms.len() as f64
}

/// A cumulative distribution function with explicit left limits.
pub trait Cdf {
    fn cdf(&self, x: f64) -> f64;

    /// `F(x-)`; equal to `cdf` for continuous laws.
    fn cdf_left(&self, x: f64) -> f64 {
        self.cdf(x)
    }
}

/// Adapter for a continuous CDF given as a closure.
pub struct ContinuousCdf<F>(pub F);

impl<F: Fn(f64) -> f64> Cdf for ContinuousCdf<F> {
    fn cdf(&self, x: f64) -> f64 {
        (self.0)(x)
    }
}

/// Sup-norm distance between the (right-continuous) empirical CDF of `z` and `law`.
pub fn ks_distance<C: Cdf + ?Sized>(z: &EmpiricalMeasure, law: &C) -> f64 {
    let mut xs = z.atoms.clone();
    xs.sort_by(f64::total_cmp);
    let m = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut below = 0usize;
    let mut i = 0usize;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        let left = below as f64 / m;
        let right = j as f64 / m;
        d = d.max((left - law.cdf_left(x)).abs());
        d = d.max((right - law.cdf(x)).abs());
        below = j;
        i = j;
    }
    d.min(1.0)
}

/// `½ Σ_j |freq_j − pmf_j|` over all nonnegative integers, with the law's mass
/// beyond the largest atom counted in full.
pub fn tv_distance_discrete<P: Fn(u64) -> f64>(z: &EmpiricalMeasure, pmf: P) -> Result<f64> {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &a in &z.atoms {
        if !(a >= 0.0 && a.fract() == 0.0 && a < 9.0e15) {
            return Err(Error::NonIntegerAtom(a));
        }
        *counts.entry(a as u64).or_default() += 1;
    }
    let top = *counts.keys().next_back().unwrap();
    let m = z.atoms.len() as f64;
    let mut covered = 0.0;
    let mut dist = 0.0;
    for j in 0..=top {
        let p = pmf(j);
        covered += p;
        let f = counts.get(&j).copied().unwrap_or(0) as f64 / m;
        dist += (f - p).abs();
    }
    dist += (1.0 - covered).max(0.0);
    Ok((0.5 * dist).clamp(0.0, 1.0))
}

/// First and second moment measures evaluated on test-function pairings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimates {
    /// `E<Z, φ1>` and its standard error.
    pub first: f64,
    pub first_se: f64,
    /// `E[<Z, φ1><Z, φ2>]` and its standard error.
    pub second: f64,
    pub second_se: f64,
    pub replicates: usize,
}

pub fn moment_estimates(phi1_values: &[f64], phi2_values: &[f64]) -> Result<MomentEstimates> {
    if phi1_values.is_empty() || phi1_values.len() != phi2_values.len() {
        return Err(Error::EmptyInput("moment estimates need paired, nonempty replicates"));
    }
    let prods: Vec<f64> = phi1_values
        .iter()
        .zip(phi2_values)
        .map(|(a, b)| a * b)
        .collect();
    Ok(MomentEstimates {
        first: stats::mean(phi1_values),
        first_se: stats::std_error(phi1_values),
        second: stats::mean(&prods),
        second_se: stats::std_error(&prods),
        replicates: prods.len(),
    })
}

pub const MIN_REPLICATES: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductFormGap {
    /// `E[<Z,φ1><Z,φ2>] − E<Z,φ1>·E<Z,φ2>`, estimated.
    pub gap: f64,
    pub interval: Interval,
    pub replicates: usize,
}

impl ProductFormGap {
    /// True when the interval excludes zero, i.e. Z is detectably random.
    pub fn flags_random(&self) -> bool {
        !self.interval.contains(0.0)
    }
}

/// Product-form gap of the second moment measure with a bootstrap interval.
/// A deterministic random measure has gap 0.
pub fn product_form_gap(
    phi1_values: &[f64],
    phi2_values: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ProductFormGap> {
    if phi1_values.len() != phi2_values.len() {
        return Err(Error::InvalidParameter("replicate columns differ in length".into()));
    }
    if phi1_values.len() < MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            required: MIN_REPLICATES,
            got: phi1_values.len(),
        });
    }
    let gap = stats::covariance(phi1_values, phi2_values);
    let interval =
        stats::bootstrap_paired(phi1_values, phi2_values, stats::covariance, resamples, level, seed);
    Ok(ProductFormGap {
        gap,
        interval,
        replicates: phi1_values.len(),
    })
}
