//! Joint child kernels `p_n(x, dx0 × dx1)`, the walk kernel
//! `p_R = ½(p(·, · × E) + p(·, E × ·))`, and exact one-step walk operators.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::TestFunction;
use crate::stats;

const PROB_TOL: f64 = 1e-9;

/// Law of the increment `Y` driving a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum IncrementLaw {
    /// ±1 with probability ½ each.
    Rademacher,
    /// Centered normal with standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// `Y ∈ {0, 1}` with `P(Y = 1) = 2·rate/n` at scale `n`.
    BernoulliJump { rate: f64 },
    PointMass { c: f64 },
    Table { values: Vec<f64>, probs: Vec<f64> },
}

impl IncrementLaw {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Rademacher => Ok(()),
            Self::Gaussian { sigma } if sigma.is_finite() && *sigma > 0.0 => Ok(()),
            Self::Gaussian { .. } => Err(Error::InvalidParameter(
                "gaussian sigma must be positive and finite".into(),
            )),
            Self::BernoulliJump { rate } if rate.is_finite() && *rate > 0.0 => Ok(()),
            Self::BernoulliJump { .. } => Err(Error::InvalidParameter(
                "bernoulli_jump rate must be positive and finite".into(),
            )),
            Self::PointMass { c } if c.is_finite() => Ok(()),
            Self::PointMass { .. } => {
                Err(Error::InvalidParameter("point_mass c must be finite".into()))
            }
            Self::Table { values, probs } => validate_table(values, probs),
        }
    }

    fn check_scale(&self, n: u64) -> Result<()> {
        if let Self::BernoulliJump { rate } = self {
            if (n as f64) <= 2.0 * rate {
                return Err(Error::InvalidParameter(format!(
                    "bernoulli_jump needs n > 2·rate (n = {n}, rate = {rate})"
                )));
            }
        }
        Ok(())
    }

    /// Finite support `(value, prob)` at scale `n`, if any.
    pub fn support(&self, n: u64) -> Option<Vec<(f64, f64)>> {
        match self {
            Self::Rademacher => Some(vec![(1.0, 0.5), (-1.0, 0.5)]),
            Self::Gaussian { .. } => None,
            Self::BernoulliJump { rate } => {
                let p = 2.0 * rate / n as f64;
                Some(vec![(0.0, 1.0 - p), (1.0, p)])
            }
            Self::PointMass { c } => Some(vec![(*c, 1.0)]),
            Self::Table { values, probs } => {
                Some(values.iter().copied().zip(probs.iter().copied()).collect())
            }
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, n: u64, rng: &mut R) -> f64 {
        match self {
            Self::Rademacher => {
                if rng.next_u64() >> 63 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Gaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                sigma * z
            }
            Self::BernoulliJump { rate } => {
                let u: f64 = rng.random();
                if u < 2.0 * rate / n as f64 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::PointMass { c } => *c,
            Self::Table { values, probs } => values[pick(probs, rng.random())],
        }
    }
}

fn validate_table(values: &[f64], probs: &[f64]) -> Result<()> {
    if values.is_empty() || values.len() != probs.len() {
        return Err(Error::InvalidParameter(
            "table needs matching, nonempty values and probs".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("table values must be finite".into()));
    }
    check_probs(probs)
}

fn check_probs(probs: &[f64]) -> Result<()> {
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::InvalidParameter("probabilities must be nonnegative".into()));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidParameter(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Inverse-CDF selection from a probability vector.
#[inline]
fn pick(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One row of a custom mixture kernel: with probability `prob` the children
/// are `(x + shift0, x + shift1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureRow {
    pub shift0: f64,
    pub shift1: f64,
    pub prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    Real,
    /// Nonnegative integers, stored as exact `f64`.
    Integer,
}

/// Map from the scale-`n` state space into the limiting one. Built-in
/// families share the state space with their limit, so only the identity
/// exists.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateEmbedding {
    #[default]
    Identity,
}

impl StateEmbedding {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum KernelKind {
    /// Antithetic children `(x + Y/√n, x − Y/√n)`.
    Donsker { increment: IncrementLaw },
    /// Children `(x, x + Y)` with `Y ~ bernoulli_jump(lambda)`.
    Poisson { lambda: f64 },
    /// Children `x + Z0`, `x + Z1` with `Z0, Z1` i.i.d. from `increment`.
    SymmetricProduct { increment: IncrementLaw },
    Custom { rows: Vec<MixtureRow> },
}

/// A kernel family at a fixed scale `n`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelFamily {
    kind: KernelKind,
    n: u64,
}

/// Result of a one-step walk expectation: exact values carry a zero error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkExpectation {
    pub value: f64,
    pub std_error: f64,
    pub exact: bool,
}

impl KernelFamily {
    pub fn new(kind: KernelKind, n: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("scale n must be positive".into()));
        }
        match &kind {
            KernelKind::Donsker { increment } => {
                increment.validate()?;
                if matches!(increment, IncrementLaw::BernoulliJump { .. }) {
                    return Err(Error::InvalidParameter(
                        "the donsker family needs a centered increment law".into(),
                    ));
                }
            }
            KernelKind::Poisson { lambda } => {
                let law = IncrementLaw::BernoulliJump { rate: *lambda };
                law.validate()?;
                law.check_scale(n)?;
            }
            KernelKind::SymmetricProduct { increment } => {
                increment.validate()?;
                increment.check_scale(n)?;
            }
            KernelKind::Custom { rows } => {
                if rows.is_empty() {
                    return Err(Error::InvalidParameter("custom kernel has no rows".into()));
                }
                if rows.iter().any(|r| !(r.shift0.is_finite() && r.shift1.is_finite())) {
                    return Err(Error::InvalidParameter("custom shifts must be finite".into()));
                }
                let probs: Vec<f64> = rows.iter().map(|r| r.prob).collect();
                check_probs(&probs)?;
            }
        }
        Ok(Self { kind, n })
    }

    pub fn donsker(increment: IncrementLaw, n: u64) -> Result<Self> {
        Self::new(KernelKind::Donsker { increment }, n)
    }

    pub fn poisson(lambda: f64, n: u64) -> Result<Self> {
        Self::new(KernelKind::Poisson { lambda }, n)
    }

    pub fn symmetric_product(increment: IncrementLaw, n: u64) -> Result<Self> {
        Self::new(KernelKind::SymmetricProduct { increment }, n)
    }

    pub fn custom(rows: Vec<MixtureRow>, n: u64) -> Result<Self> {
        Self::new(KernelKind::Custom { rows }, n)
    }

    /// Same family at another scale.
    pub fn with_scale(&self, n: u64) -> Result<Self> {
        Self::new(self.kind.clone(), n)
    }

    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn scale(&self) -> u64 {
        self.n
    }

    pub fn family_id(&self) -> &'static str {
        match self.kind {
            KernelKind::Donsker { .. } => "donsker",
            KernelKind::Poisson { .. } => "poisson",
            KernelKind::SymmetricProduct { .. } => "symmetric_product",
            KernelKind::Custom { .. } => "custom",
        }
    }

    pub fn state_kind(&self) -> StateKind {
        match &self.kind {
            KernelKind::Poisson { .. } => StateKind::Integer,
            _ => StateKind::Real,
        }
    }

    pub fn embedding(&self) -> StateEmbedding {
        StateEmbedding::Identity
    }

    /// True when every draw is a fixed function of the parent.
    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            KernelKind::Donsker { increment } | KernelKind::SymmetricProduct { increment } => {
                matches!(increment, IncrementLaw::PointMass { .. })
            }
            KernelKind::Poisson { .. } => false,
            KernelKind::Custom { rows } => rows.iter().filter(|r| r.prob > 0.0).count() == 1,
        }
    }

    pub fn check_state(&self, x: f64) -> Result<()> {
        let ok = match self.state_kind() {
            StateKind::Real => x.is_finite(),
            StateKind::Integer => x.is_finite() && x >= 0.0 && x.fract() == 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::StateSpace {
                family: self.family_id(),
                state: x,
            })
        }
    }

    #[inline]
    fn step_scale(&self) -> f64 {
        1.0 / (self.n as f64).sqrt()
    }

    /// One draw from `p_n(x, ·×·)`.
    pub fn sample_children<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<(f64, f64)> {
        self.check_state(x)?;
        Ok(self.draw_children(x, rng))
    }

    /// Unchecked draw; callers have validated the root state.
    #[inline]
    pub(crate) fn draw_children<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> (f64, f64) {
        match &self.kind {
            KernelKind::Donsker { increment } => {
                let y = increment.sample(self.n, rng);
                antithetic(x, y * self.step_scale())
            }
            KernelKind::Poisson { lambda } => {
                let u: f64 = rng.random();
                let jump = if u < 2.0 * lambda / self.n as f64 { 1.0 } else { 0.0 };
                (x, x + jump)
            }
            KernelKind::SymmetricProduct { increment } => {
                let a = increment.sample(self.n, rng);
                let b = increment.sample(self.n, rng);
                (x + a, x + b)
            }
            KernelKind::Custom { rows } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = &rows[rows.len() - 1];
                for r in rows {
                    acc += r.prob;
                    if u < acc {
                        chosen = r;
                        break;
                    }
                }
                (x + chosen.shift0, x + chosen.shift1)
            }
        }
    }

    /// One draw from `p_R(x, ·)`: a child pair, then one child uniformly.
    pub fn sample_walk_step<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> Result<f64> {
        let (a, b) = self.sample_children(x, rng)?;
        Ok(if rng.random::<bool>() { b } else { a })
    }

    /// Exact `E[φ(R_1) − φ(x) | R_0 = x]` for built-in families.
    pub fn exact_walk_increment(&self, phi: &TestFunction, x: f64) -> Option<f64> {
        match &self.kind {
            KernelKind::Donsker { increment } => {
                let s = self.step_scale();
                match increment.support(self.n) {
                    Some(support) => {
                        let mut acc = 0.0;
                        for (v, p) in support {
                            let (hi, lo) = antithetic(x, v * s);
                            acc += p * (phi.increment(x, hi - x) + phi.increment(x, lo - x));
                        }
                        Some(0.5 * acc)
                    }
                    None => {
                        let IncrementLaw::Gaussian { sigma } = increment else {
                            unreachable!("only gaussian laws lack finite support")
                        };
                        Some(phi.gaussian_increment(x, sigma * s))
                    }
                }
            }
            KernelKind::Poisson { lambda } => {
                let p = 2.0 * lambda / self.n as f64;
                Some(0.5 * p * phi.increment(x, 1.0))
            }
            KernelKind::SymmetricProduct { increment } => match increment.support(self.n) {
                Some(support) => Some(
                    support
                        .into_iter()
                        .map(|(v, p)| p * phi.increment(x, v))
                        .sum(),
                ),
                None => {
                    let IncrementLaw::Gaussian { sigma } = increment else {
                        unreachable!("only gaussian laws lack finite support")
                    };
                    Some(phi.gaussian_increment(x, *sigma))
                }
            },
            KernelKind::Custom { .. } => None,
        }
    }

    /// Exact `P_R φ(x)` for built-in families.
    pub fn exact_walk_expectation(&self, phi: &TestFunction, x: f64) -> Option<f64> {
        self.exact_walk_increment(phi, x).map(|d| phi.eval(x) + d)
    }

    /// `P_R φ(x)`: exact for built-ins, Monte Carlo over `budget` walk steps
    /// for custom kernels.
    pub fn walk_step_expectation<R: Rng + ?Sized>(
        &self,
        phi: &TestFunction,
        x: f64,
        budget: Option<usize>,
        rng: &mut R,
    ) -> Result<WalkExpectation> {
        self.check_state(x)?;
        if let Some(value) = self.exact_walk_expectation(phi, x) {
            return Ok(WalkExpectation {
                value,
                std_error: 0.0,
                exact: true,
            });
        }
        let budget = budget.filter(|&b| b > 0).ok_or(Error::MissingBudget)?;
        let draws: Vec<f64> = (0..budget)
            .map(|_| self.sample_walk_step(x, rng).map(|y| phi.eval(y)))
            .collect::<Result<_>>()?;
        Ok(WalkExpectation {
            value: stats::mean(&draws),
            std_error: stats::std_error(&draws),
            exact: false,
        })
    }

    /// Monte Carlo `E[φ(R_1) − φ(x)]` with its standard error.
    pub fn sampled_walk_increment<R: Rng + ?Sized>(
        &self,
        phi: &TestFunction,
        x: f64,
        budget: usize,
        rng: &mut R,
    ) -> Result<(f64, f64)> {
        if budget == 0 {
            return Err(Error::MissingBudget);
        }
        let fx = phi.eval(x);
        let draws: Vec<f64> = (0..budget)
            .map(|_| self.sample_walk_step(x, rng).map(|y| phi.eval(y) - fx))
            .collect::<Result<_>>()?;
        Ok((stats::mean(&draws), stats::std_error(&draws)))
    }
}

/// One walk step `R_1 − R_0`, which for the built-in families does not
/// depend on the current state.
#[derive(Clone, Debug, PartialEq)]
pub enum StepLaw {
    Gaussian { sd: f64 },
    /// `(value, prob)` with distinct values.
    Discrete(Vec<(f64, f64)>),
}

/// Largest support the m-step enumeration will walk through.
const MAX_STEP_COMPOSITIONS: u64 = 1 << 20;

impl KernelFamily {
    /// Law of one walk step; `None` for custom kernels.
    pub fn walk_step_law(&self) -> Option<StepLaw> {
        let merge = |pairs: Vec<(f64, f64)>| {
            let mut out: Vec<(f64, f64)> = Vec::new();
            for (v, p) in pairs {
                if p == 0.0 {
                    continue;
                }
                match out.iter_mut().find(|(w, _)| *w == v) {
                    Some(e) => e.1 += p,
                    None => out.push((v, p)),
                }
            }
            StepLaw::Discrete(out)
        };
        match &self.kind {
            KernelKind::Donsker { increment } => {
                let s = self.step_scale();
                match increment.support(self.n) {
                    Some(support) => Some(merge(
                        support
                            .into_iter()
                            .flat_map(|(v, p)| [(v * s, 0.5 * p), (-(v * s), 0.5 * p)])
                            .collect(),
                    )),
                    None => match increment {
                        IncrementLaw::Gaussian { sigma } => Some(StepLaw::Gaussian { sd: sigma * s }),
                        _ => None,
                    },
                }
            }
            KernelKind::Poisson { lambda } => {
                let p = lambda / self.n as f64;
                Some(merge(vec![(0.0, 1.0 - p), (1.0, p)]))
            }
            KernelKind::SymmetricProduct { increment } => match increment.support(self.n) {
                Some(support) => Some(merge(support)),
                None => match increment {
                    IncrementLaw::Gaussian { sigma } => Some(StepLaw::Gaussian { sd: *sigma }),
                    _ => None,
                },
            },
            KernelKind::Custom { .. } => None,
        }
    }

    /// Exact `E[φ(R_m) | R_0 = x]` for built-in families, by summing over the
    /// multinomial counts of each step value. `None` for custom kernels or
    /// when the support is too large to enumerate.
    pub fn walk_expectation_after(&self, phi: &TestFunction, x: f64, m: u32) -> Option<f64> {
        if m == 0 {
            return Some(phi.eval(x));
        }
        match self.walk_step_law()? {
            StepLaw::Gaussian { sd } => Some(phi.gaussian_expectation(x, sd * f64::from(m).sqrt())),
            StepLaw::Discrete(support) => {
                let r = support.len() as u64;
                if binomial(u64::from(m) + r - 1, r - 1)? > MAX_STEP_COMPOSITIONS {
                    return None;
                }
                let ln_m_fact = ln_factorial(m);
                let ln_p: Vec<f64> = support.iter().map(|(_, p)| p.ln()).collect();
                let mut counts = vec![0u32; support.len()];
                let mut acc = 0.0;
                compositions(&mut counts, 0, m, &mut |c| {
                    let mut lw = ln_m_fact;
                    let mut shift = 0.0;
                    for (i, &ci) in c.iter().enumerate() {
                        if ci > 0 {
                            lw += f64::from(ci) * ln_p[i] - ln_factorial(ci);
                            shift += f64::from(ci) * support[i].0;
                        }
                    }
                    acc += lw.exp() * phi.eval(x + shift);
                });
                Some(acc)
            }
        }
    }
}

fn binomial(n: u64, k: u64) -> Option<u64> {
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

fn ln_factorial(k: u32) -> f64 {
    statrs::function::factorial::ln_factorial(u64::from(k))
}

/// Visit every `counts` with `counts[i..]` summing to `left`.
fn compositions<F: FnMut(&[u32])>(counts: &mut [u32], i: usize, left: u32, f: &mut F) {
    if i == counts.len() - 1 {
        counts[i] = left;
        f(counts);
        return;
    }
    for c in 0..=left {
        counts[i] = c;
        compositions(counts, i + 1, left - c, f);
    }
}

/// `(x + δ, x − δ')` where `δ' = fl(x + δ) − x`, so the children sum to `2x`
/// exactly in floating point.
#[inline]
pub(crate) fn antithetic(x: f64, delta: f64) -> (f64, f64) {
    let hi = x + delta;
    let d = hi - x;
    (hi, x - d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamRng;
    use proptest::prelude::*;

    fn rademacher(n: u64) -> KernelFamily {
        KernelFamily::donsker(IncrementLaw::Rademacher, n).unwrap()
    }

    #[test]
    fn donsker_rademacher_children() {
        let k = rademacher(1);
        let mut rng = StreamRng::new(1);
        let mut plus = 0;
        for _ in 0..10_000 {
            let (a, b) = k.sample_children(0.0, &mut rng).unwrap();
            assert!((a, b) == (1.0, -1.0) || (a, b) == (-1.0, 1.0));
            if a > 0.0 {
                plus += 1;
            }
        }
        assert!((plus as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn poisson_left_child_copies_parent() {
        let k = KernelFamily::poisson(1.0, 10).unwrap();
        let mut rng = StreamRng::new(2);
        for x in [0.0, 3.0, 17.0] {
            for _ in 0..1000 {
                let (a, b) = k.sample_children(x, &mut rng).unwrap();
                assert_eq!(a, x);
                assert!(b == x || b == x + 1.0);
            }
        }
    }

    #[test]
    fn point_mass_product_is_deterministic() {
        let k = KernelFamily::symmetric_product(IncrementLaw::PointMass { c: 0.5 }, 1).unwrap();
        let mut rng = StreamRng::new(3);
        assert_eq!(k.sample_children(2.0, &mut rng).unwrap(), (2.5, 2.5));
        let stay = KernelFamily::symmetric_product(IncrementLaw::PointMass { c: 0.0 }, 1).unwrap();
        assert_eq!(stay.sample_walk_step(1.25, &mut rng).unwrap(), 1.25);
        assert!(k.is_deterministic());
    }

    #[test]
    fn state_space_checks() {
        let k = KernelFamily::poisson(1.0, 10).unwrap();
        let mut rng = StreamRng::new(4);
        assert!(matches!(
            k.sample_children(0.5, &mut rng),
            Err(Error::StateSpace { .. })
        ));
        assert!(k.sample_children(-1.0, &mut rng).is_err());
        assert!(rademacher(1).sample_children(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn parameter_validation() {
        assert!(KernelFamily::poisson(1.0, 2).is_err());
        assert!(KernelFamily::poisson(1.0, 3).is_ok());
        assert!(KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 0.0 }, 1).is_err());
        assert!(KernelFamily::donsker(IncrementLaw::BernoulliJump { rate: 1.0 }, 10).is_err());
        assert!(KernelFamily::custom(vec![], 1).is_err());
        let bad = vec![MixtureRow {
            shift0: 0.0,
            shift1: 1.0,
            prob: 0.7,
        }];
        assert!(KernelFamily::custom(bad, 1).is_err());
        assert!(IncrementLaw::Table {
            values: vec![1.0],
            probs: vec![0.5, 0.5]
        }
        .validate()
        .is_err());
        assert!(rademacher(1).with_scale(0).is_err());
    }

    #[test]
    fn walk_step_rademacher_is_symmetric() {
        let k = rademacher(1);
        let mut rng = StreamRng::new(5);
        let n = 20_000;
        let ups = (0..n)
            .filter(|_| k.sample_walk_step(0.0, &mut rng).unwrap() > 0.0)
            .count();
        assert!((ups as f64 / n as f64 - 0.5).abs() < 0.015);
    }

    #[test]
    fn poisson_walk_jump_probability() {
        let k = KernelFamily::poisson(1.0, 20).unwrap();
        let mut rng = StreamRng::new(6);
        let n = 200_000;
        let jumps = (0..n)
            .filter(|_| k.sample_walk_step(0.0, &mut rng).unwrap() > 0.0)
            .count();
        let f = jumps as f64 / n as f64;
        let se = (0.05 * 0.95 / n as f64).sqrt();
        assert!((f - 0.05).abs() < 4.0 * se, "{f}");
    }

    #[test]
    fn exact_walk_expectation_examples() {
        let mut rng = StreamRng::new(7);
        let e = rademacher(4)
            .walk_step_expectation(&TestFunction::Square, 0.0, None, &mut rng)
            .unwrap();
        assert_eq!(e.value, 0.25);
        assert!(e.exact);

        let p = KernelFamily::poisson(1.0, 10).unwrap();
        let e = p
            .walk_step_expectation(&TestFunction::Identity, 0.0, None, &mut rng)
            .unwrap();
        assert!((e.value - 0.1).abs() < 1e-15);

        let c = TestFunction::constant(3.5);
        let families = [
            rademacher(3),
            KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, 5).unwrap(),
            p.clone(),
            KernelFamily::symmetric_product(IncrementLaw::Gaussian { sigma: 0.3 }, 1).unwrap(),
        ];
        for k in &families {
            let e = k.walk_step_expectation(&c, 0.0, None, &mut rng).unwrap();
            assert_eq!(e.value, 3.5);
        }
    }

    #[test]
    fn custom_needs_budget() {
        let rows = vec![
            MixtureRow { shift0: 1.0, shift1: -1.0, prob: 0.25 },
            MixtureRow { shift0: 0.0, shift1: 2.0, prob: 0.75 },
        ];
        let k = KernelFamily::custom(rows, 1).unwrap();
        let mut rng = StreamRng::new(8);
        assert!(matches!(
            k.walk_step_expectation(&TestFunction::Identity, 0.0, None, &mut rng),
            Err(Error::MissingBudget)
        ));
        // Exact value: ½(0.25·(1 − 1) + 0.75·(0 + 2)) = 0.75.
        let e = k
            .walk_step_expectation(&TestFunction::Identity, 0.0, Some(100_000), &mut rng)
            .unwrap();
        assert!(!e.exact);
        assert!((e.value - 0.75).abs() < 4.0 * e.std_error);
        let c = k
            .walk_step_expectation(&TestFunction::constant(2.0), 0.0, Some(10), &mut rng)
            .unwrap();
        assert_eq!(c.value, 2.0);
    }

    #[test]
    fn exact_matches_monte_carlo() {
        let families = [
            rademacher(4),
            KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, 4).unwrap(),
            KernelFamily::poisson(1.5, 10).unwrap(),
            KernelFamily::symmetric_product(
                IncrementLaw::Table { values: vec![-1.0, 0.5], probs: vec![0.3, 0.7] },
                1,
            )
            .unwrap(),
        ];
        let phis = [
            TestFunction::Square,
            TestFunction::Indicator { threshold: 0.2 },
            TestFunction::ExpBounded { a: 0.5 },
        ];
        let mut rng = StreamRng::new(9);
        for k in &families {
            for phi in &phis {
                let x = if k.state_kind() == StateKind::Integer { 1.0 } else { 0.3 };
                let exact = k.exact_walk_expectation(phi, x).unwrap();
                let draws: Vec<f64> = (0..100_000)
                    .map(|_| phi.eval(k.sample_walk_step(x, &mut rng).unwrap()))
                    .collect();
                let (m, se) = (stats::mean(&draws), stats::std_error(&draws));
                assert!(
                    (m - exact).abs() <= 4.0 * se + 1e-12,
                    "{} {}: {m} vs {exact} (se {se})",
                    k.family_id(),
                    phi.id()
                );
            }
        }
    }

    #[test]
    fn m_step_expectation_matches_iterated_one_step() {
        let fams = [
            KernelFamily::donsker(IncrementLaw::Rademacher, 4).unwrap(),
            KernelFamily::poisson(1.0, 8).unwrap(),
            KernelFamily::symmetric_product(
                IncrementLaw::Table { values: vec![-1.0, 0.5, 2.0], probs: vec![0.2, 0.5, 0.3] },
                3,
            )
            .unwrap(),
        ];
        for k in &fams {
            // Propagate the law of R_j explicitly and compare.
            let law = k.walk_step_law().unwrap();
            let StepLaw::Discrete(step) = law else { panic!() };
            let mut dist = vec![(0.25f64, 1.0f64)];
            for m in 0..6u32 {
                for phi in [TestFunction::Square, TestFunction::Indicator { threshold: 0.6 }] {
                    let direct: f64 = dist.iter().map(|(x, p)| p * phi.eval(*x)).sum();
                    let fast = k.walk_expectation_after(&phi, 0.25, m).unwrap();
                    assert!((direct - fast).abs() < 1e-12, "{} m={m}", k.family_id());
                }
                let mut next = Vec::new();
                for (x, p) in &dist {
                    for (v, q) in &step {
                        next.push((x + v, p * q));
                    }
                }
                dist = next;
            }
        }
    }

    #[test]
    fn m_step_gaussian_and_rademacher_closed_forms() {
        let g = KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, 16).unwrap();
        let v = g.walk_expectation_after(&TestFunction::Square, 0.5, 8).unwrap();
        assert!((v - (0.25 + 0.5)).abs() < 1e-15);
        let r = KernelFamily::donsker(IncrementLaw::Rademacher, 64).unwrap();
        let v = r.walk_expectation_after(&TestFunction::Square, 0.0, 64).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        let q = r.walk_expectation_after(&TestFunction::Quartic, 0.0, 64).unwrap();
        // E S_m^4 / n^2 for a ±1 walk: (3m² − 2m) / n².
        assert!((q - (3.0 * 4096.0 - 128.0) / 4096.0).abs() < 1e-12);
        assert!(KernelFamily::custom(vec![MixtureRow { shift0: 1.0, shift1: 0.0, prob: 1.0 }], 2)
            .unwrap()
            .walk_expectation_after(&TestFunction::Square, 0.0, 3)
            .is_none());
    }

    proptest! {
        #[test]
        fn antithetic_children_sum_exactly(x in -1e6f64..1e6, n in 1u64..10_000, seed in any::<u64>()) {
            let k = KernelFamily::donsker(IncrementLaw::Gaussian { sigma: 1.0 }, n).unwrap();
            let mut rng = StreamRng::new(seed);
            let (a, b) = k.sample_children(x, &mut rng).unwrap();
            prop_assert_eq!(a + b, 2.0 * x);
        }

        #[test]
        fn poisson_children_never_decrease(x in 0u32..1000, seed in any::<u64>()) {
            let k = KernelFamily::poisson(2.0, 9).unwrap();
            let mut rng = StreamRng::new(seed);
            let (a, b) = k.sample_children(f64::from(x), &mut rng).unwrap();
            prop_assert!(a >= f64::from(x) && b >= f64::from(x));
        }
    }
}
