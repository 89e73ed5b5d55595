//! Limit laws of the built-in families, their generators, and the finite-n
//! generator `G_n φ(x) = n·E[φ(R_1) − φ(R_0) | R_0 = x]` with grid checks of
//! the approximation hypotheses.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::kernels::{IncrementLaw, KernelFamily, KernelKind};
use crate::measures::{std_normal_cdf, Cdf, TestFunction};

/// Law of `R_t` for the limiting process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LimitLaw {
    Normal { mean: f64, variance: f64 },
    Poisson { mean: f64 },
    PointMass { at: f64 },
}

impl LimitLaw {
    /// `x0 + N(0, variance_rate · t)`; a point mass at `t = 0`.
    pub fn brownian(x0: f64, variance_rate: f64, t: f64) -> Result<Self> {
        check_time(t)?;
        if !(variance_rate.is_finite() && variance_rate >= 0.0) {
            return Err(Error::InvalidParameter("variance rate must be >= 0".into()));
        }
        if t == 0.0 || variance_rate == 0.0 {
            return Ok(Self::PointMass { at: x0 });
        }
        Ok(Self::Normal {
            mean: x0,
            variance: variance_rate * t,
        })
    }

    /// `Poi(λ t)`; a point mass at 0 when `t = 0`.
    pub fn poisson_process(lambda: f64, t: f64) -> Result<Self> {
        check_time(t)?;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidParameter("poisson rate must be > 0".into()));
        }
        if t == 0.0 {
            return Ok(Self::PointMass { at: 0.0 });
        }
        Ok(Self::Poisson { mean: lambda * t })
    }

    /// The limit law a built-in family converges to at time `t` from `x0`.
    pub fn for_family(kernel: &KernelFamily, x0: f64, t: f64) -> Result<Self> {
        match GeneratorSpec::for_family(kernel)? {
            GeneratorSpec::Brownian { variance } => Self::brownian(x0, variance, t),
            GeneratorSpec::PoissonJump { lambda } => {
                if x0 != 0.0 {
                    return Err(Error::LawMismatch(
                        "the poisson limit law is stated for x0 = 0".into(),
                    ));
                }
                Self::poisson_process(lambda, t)
            }
        }
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self, Self::Normal { .. })
    }

    pub fn name(&self) -> String {
        match self {
            Self::Normal { mean, variance } => format!("normal({mean}, {variance})"),
            Self::Poisson { mean } => format!("poisson({mean})"),
            Self::PointMass { at } => format!("point_mass({at})"),
        }
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("time must be >= 0, got {t}")))
    }
}

fn poisson_pmf(mean: f64, j: u64) -> f64 {
    if mean == 0.0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let jf = j as f64;
    (-mean + jf * mean.ln() - ln_gamma(jf + 1.0)).exp()
}

/// CDF of a continuous or point-mass limit law.
pub fn limit_cdf(law: &LimitLaw, x: f64) -> Result<f64> {
    match law {
        LimitLaw::Normal { mean, variance } => Ok(std_normal_cdf((x - mean) / variance.sqrt())),
        LimitLaw::PointMass { at } => Ok(if x >= *at { 1.0 } else { 0.0 }),
        LimitLaw::Poisson { .. } => Err(Error::LawMismatch(
            "cdf queried on a poisson law; use the pmf".into(),
        )),
    }
}

/// PMF of a discrete limit law at the integer `j`.
pub fn limit_pmf(law: &LimitLaw, j: u64) -> Result<f64> {
    match law {
        LimitLaw::Poisson { mean } => Ok(poisson_pmf(*mean, j)),
        LimitLaw::PointMass { at } => Ok(if *at == j as f64 { 1.0 } else { 0.0 }),
        LimitLaw::Normal { .. } => Err(Error::LawMismatch(
            "pmf queried on a normal law; use the cdf".into(),
        )),
    }
}

impl Cdf for LimitLaw {
    fn cdf(&self, x: f64) -> f64 {
        match self {
            LimitLaw::Poisson { mean } => {
                if x < 0.0 {
                    return 0.0;
                }
                (0..=x.floor() as u64).map(|j| poisson_pmf(*mean, j)).sum::<f64>().min(1.0)
            }
            _ => limit_cdf(self, x).expect("continuous or point-mass law"),
        }
    }

    fn cdf_left(&self, x: f64) -> f64 {
        match self {
            LimitLaw::Normal { .. } => self.cdf(x),
            LimitLaw::PointMass { at } => {
                if x > *at {
                    1.0
                } else {
                    0.0
                }
            }
            LimitLaw::Poisson { .. } => {
                if x.fract() == 0.0 {
                    self.cdf(x - 1.0)
                } else {
                    self.cdf(x)
                }
            }
        }
    }
}

/// Closed-form generator of the limiting process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// `½ σ² φ″`.
    Brownian { variance: f64 },
    /// `λ (φ(x + 1) − φ(x))`.
    PoissonJump { lambda: f64 },
}

impl GeneratorSpec {
    pub fn for_family(kernel: &KernelFamily) -> Result<Self> {
        match kernel.kind() {
            KernelKind::Donsker { increment } => Ok(Self::Brownian {
                variance: increment_variance(increment),
            }),
            KernelKind::Poisson { lambda } => Ok(Self::PoissonJump { lambda: *lambda }),
            _ => Err(Error::LawMismatch(format!(
                "the {} family has no built-in limit generator",
                kernel.family_id()
            ))),
        }
    }

    pub fn apply(&self, phi: &TestFunction, x: f64) -> f64 {
        match self {
            Self::Brownian { variance } => 0.5 * variance * second_derivative(phi, x),
            Self::PoissonJump { lambda } => lambda * phi.increment(x, 1.0),
        }
    }
}

/// `E[Y²]` of a centered increment law.
fn increment_variance(law: &IncrementLaw) -> f64 {
    match law {
        IncrementLaw::Rademacher => 1.0,
        IncrementLaw::Gaussian { sigma } => sigma * sigma,
        IncrementLaw::PointMass { c } => c * c,
        IncrementLaw::Table { values, probs } => {
            values.iter().zip(probs).map(|(v, p)| p * v * v).sum()
        }
        IncrementLaw::BernoulliJump { .. } => unreachable!("rejected by the donsker family"),
    }
}

/// Analytic `φ″` where available, else a central second difference with step
/// `max(1e-4, 1e-4·|x|)`.
pub fn second_derivative(phi: &TestFunction, x: f64) -> f64 {
    phi.second_derivative(x).unwrap_or_else(|| {
        let h = 1e-4f64.max(1e-4 * x.abs());
        (phi.eval(x + h) - 2.0 * phi.eval(x) + phi.eval(x - h)) / (h * h)
    })
}

/// `G_n φ(x)` from the exact one-step walk operator.
pub fn generator_estimate(kernel: &KernelFamily, phi: &TestFunction, x: f64) -> Result<f64> {
    kernel.check_state(x)?;
    let inc = kernel
        .exact_walk_increment(phi, x)
        .ok_or(Error::NoExactOperator(kernel.family_id()))?;
    Ok(kernel.scale() as f64 * inc)
}

/// Monte Carlo `G_n φ(x)` with its standard error, for any family.
pub fn generator_estimate_sampled<R: Rng + ?Sized>(
    kernel: &KernelFamily,
    phi: &TestFunction,
    x: f64,
    budget: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let (m, se) = kernel.sampled_walk_increment(phi, x, budget, rng)?;
    let n = kernel.scale() as f64;
    Ok((n * m, n * se))
}

/// Evenly spaced evaluation grid, endpoints included.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step > 0.0) || self.max < self.min {
            return Err(Error::InvalidParameter(format!(
                "bad grid [{}, {}] step {}",
                self.min, self.max, self.step
            )));
        }
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize;
        Ok((0..=count).map(|i| self.min + i as f64 * self.step).collect())
    }
}

/// `sup_x |(G_R φ)(η(x)) − G_n φ(x)|` over the grid.
pub fn generator_gap(
    kernel: &KernelFamily,
    phi: &TestFunction,
    generator: &GeneratorSpec,
    grid: &[f64],
) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("generator gap grid"));
    }
    let eta = kernel.embedding();
    grid.iter().try_fold(0.0f64, |acc, &x| {
        let g = generator.apply(phi, eta.apply(x));
        Ok(acc.max((g - generator_estimate(kernel, phi, x)?).abs()))
    })
}

/// `sup_x |φ(η(x)) − φ_n(x)|` over the grid.
pub fn function_gap<F, G>(phi: F, phi_n: G, grid: &[f64]) -> Result<f64>
where
    F: Fn(f64) -> f64,
    G: Fn(f64) -> f64,
{
    if grid.is_empty() {
        return Err(Error::EmptyInput("function gap grid"));
    }
    Ok(grid.iter().fold(0.0f64, |acc, &x| acc.max((phi(x) - phi_n(x)).abs())))
}

/// One row of a generator-gap report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub phi: String,
    pub family: String,
    pub n: u64,
    pub grid_min: f64,
    pub grid_max: f64,
    pub grid_step: f64,
    pub gap: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rademacher(n: u64) -> KernelFamily {
        KernelFamily::donsker(IncrementLaw::Rademacher, n).unwrap()
    }

    #[test]
    fn cdf_and_pmf_examples() {
        let normal = LimitLaw::brownian(0.0, 1.0, 1.0).unwrap();
        assert!((limit_cdf(&normal, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let poi = LimitLaw::poisson_process(1.0, 1.0).unwrap();
        assert!((limit_pmf(&poi, 0).unwrap() - 0.36787944117144233).abs() < 1e-15);
        let pm = LimitLaw::brownian(0.3, 1.0, 0.0).unwrap();
        assert_eq!(pm, LimitLaw::PointMass { at: 0.3 });
        assert_eq!(limit_cdf(&pm, 0.2999).unwrap(), 0.0);
        assert_eq!(limit_cdf(&pm, 0.3).unwrap(), 1.0);
        assert!(limit_pmf(&normal, 0).is_err());
        assert!(limit_cdf(&poi, 0.0).is_err());
    }

    #[test]
    fn poisson_pmf_normalizes() {
        for mean in [0.5, 1.0, 7.0, 30.0] {
            let law = LimitLaw::Poisson { mean };
            let top = (mean + 40.0 * mean.sqrt()).ceil() as u64;
            let s: f64 = (0..=top).map(|j| limit_pmf(&law, j).unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-12, "{mean}: {s}");
        }
    }

    #[test]
    fn cdf_is_monotone() {
        let laws = [
            LimitLaw::Normal { mean: 0.0, variance: 2.0 },
            LimitLaw::Poisson { mean: 3.0 },
            LimitLaw::PointMass { at: 1.0 },
        ];
        for law in &laws {
            let mut prev = 0.0;
            for i in -100..200 {
                let c = law.cdf(f64::from(i) * 0.05);
                assert!(c >= prev);
                prev = c;
            }
        }
    }

    #[test]
    fn generator_estimate_examples() {
        for n in [1, 2, 7, 100, 1000] {
            for x in [-1.7, 0.0, 0.4, 2.0] {
                let g = generator_estimate(&rademacher(n), &TestFunction::Square, x).unwrap();
                assert!((g - 1.0).abs() < 1e-12, "{n} {x}: {g}");
            }
        }
        let p = KernelFamily::poisson(1.0, 100).unwrap();
        let g = generator_estimate(&p, &TestFunction::Indicator { threshold: 1.0 }, 0.0).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        let g = generator_estimate(&rademacher(9), &TestFunction::constant(3.0), 0.2).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn generator_gaps() {
        let grid = Grid { min: -2.0, max: 2.0, step: 0.1 }.points().unwrap();
        assert_eq!(grid.len(), 41);
        for n in [1, 4, 16, 256] {
            let k = rademacher(n);
            let gen = GeneratorSpec::for_family(&k).unwrap();
            assert!(generator_gap(&k, &TestFunction::Square, &gen, &grid).unwrap() <= 1e-12);
            assert_eq!(generator_gap(&k, &TestFunction::constant(1.0), &gen, &grid).unwrap(), 0.0);
        }
        let gap = |n| {
            let k = rademacher(n);
            let gen = GeneratorSpec::for_family(&k).unwrap();
            generator_gap(&k, &TestFunction::Quartic, &gen, &grid).unwrap()
        };
        for n in [8, 16, 32] {
            let r = gap(n) / gap(2 * n);
            assert!((1.6..=2.4).contains(&r), "{r}");
        }
        assert!(generator_gap(&rademacher(1), &TestFunction::Square, &GeneratorSpec::Brownian { variance: 1.0 }, &[]).is_err());
    }

    #[test]
    fn function_gap_examples() {
        let grid = Grid { min: -1.0, max: 1.0, step: 0.25 }.points().unwrap();
        let phi = |x: f64| x * x;
        assert_eq!(function_gap(phi, phi, &grid).unwrap(), 0.0);
        let n = 8.0;
        let g = function_gap(phi, |x| x * x + 1.0 / n, &grid).unwrap();
        assert!((g - 0.125).abs() < 1e-15);
        assert!(function_gap(phi, phi, &[]).is_err());
    }

    #[test]
    fn custom_family_generator_needs_sampling() {
        let rows = vec![crate::kernels::MixtureRow { shift0: 1.0, shift1: -1.0, prob: 1.0 }];
        let k = KernelFamily::custom(rows, 4).unwrap();
        assert!(matches!(
            generator_estimate(&k, &TestFunction::Square, 0.0),
            Err(Error::NoExactOperator(_))
        ));
        let mut rng = crate::rng::StreamRng::new(1);
        // Children ±1 deterministically: φ = x² increments by 1 → G = 4.
        let (g, se) = generator_estimate_sampled(&k, &TestFunction::Square, 0.0, 1000, &mut rng).unwrap();
        assert_eq!((g, se), (4.0, 0.0));
    }
}
