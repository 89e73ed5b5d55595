use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// Test function φ paired against measures.
///
/// `identity`, `square` and `quartic` are unbounded; they are admitted as
/// locally bounded on the range an experiment actually reaches, and reports
/// flag them through [`TestFunction::is_bounded`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Identity,
    Square,
    Quartic,
    /// `1[x >= threshold]`.
    Indicator { threshold: f64 },
    /// `exp(-a x^2)`, `a >= 0`.
    ExpBounded { a: f64 },
    /// Piecewise-linear interpolation through `(knots[i], values[i])`,
    /// constant outside the knot range.
    Table { knots: Vec<f64>, values: Vec<f64> },
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self::Table {
            knots: vec![0.0],
            values: vec![c],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Indicator { threshold } if !threshold.is_finite() => Err(
                Error::InvalidParameter("indicator threshold must be finite".into()),
            ),
            Self::ExpBounded { a } if !(a.is_finite() && *a >= 0.0) => Err(
                Error::InvalidParameter("exp_bounded needs a finite a >= 0".into()),
            ),
            Self::Table { knots, values } => {
                if knots.is_empty() || knots.len() != values.len() {
                    return Err(Error::InvalidParameter(
                        "table test function needs matching, nonempty knots and values".into(),
                    ));
                }
                if knots.iter().chain(values).any(|x| !x.is_finite()) {
                    return Err(Error::InvalidParameter("table entries must be finite".into()));
                }
                if knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::InvalidParameter(
                        "table knots must be strictly increasing".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Identity => "identity".into(),
            Self::Square => "square".into(),
            Self::Quartic => "quartic".into(),
            Self::Indicator { threshold } => format!("indicator({threshold})"),
            Self::ExpBounded { a } => format!("exp_bounded({a})"),
            Self::Table { knots, .. } => format!("table({} knots)", knots.len()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Square => x * x,
            Self::Quartic => {
                let s = x * x;
                s * s
            }
            Self::Indicator { threshold } => {
                if x >= *threshold {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ExpBounded { a } => (-a * x * x).exp(),
            Self::Table { knots, values } => {
                let n = knots.len();
                if x <= knots[0] {
                    return values[0];
                }
                if x >= knots[n - 1] {
                    return values[n - 1];
                }
                let i = knots.partition_point(|&k| k <= x) - 1;
                let w = (x - knots[i]) / (knots[i + 1] - knots[i]);
                values[i] + w * (values[i + 1] - values[i])
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self, Self::Identity | Self::Square | Self::Quartic)
    }

    /// `sup |φ|` for bounded functions.
    pub fn sup_norm(&self) -> Option<f64> {
        match self {
            Self::Indicator { .. } | Self::ExpBounded { .. } => Some(1.0),
            Self::Table { values, .. } => Some(values.iter().fold(0.0, |m, v| m.max(v.abs()))),
            _ => None,
        }
    }

    /// Analytic second derivative where φ is C².
    pub fn second_derivative(&self, x: f64) -> Option<f64> {
        match self {
            Self::Identity => Some(0.0),
            Self::Square => Some(2.0),
            Self::Quartic => Some(12.0 * x * x),
            Self::ExpBounded { a } => Some((4.0 * a * a * x * x - 2.0 * a) * (-a * x * x).exp()),
            Self::Indicator { .. } | Self::Table { .. } => None,
        }
    }

    /// `φ(x + h) − φ(x)`, evaluated without cancellation for polynomials.
    #[inline]
    pub fn increment(&self, x: f64, h: f64) -> f64 {
        match self {
            Self::Identity => h,
            Self::Square => h * (2.0 * x + h),
            Self::Quartic => h * (4.0 * x * x * x + h * (6.0 * x * x + h * (4.0 * x + h))),
            _ => self.eval(x + h) - self.eval(x),
        }
    }

    /// `E φ(mean + sd·N(0,1)) − φ(mean)` in closed form.
    pub fn gaussian_increment(&self, mean: f64, sd: f64) -> f64 {
        let v = sd * sd;
        match self {
            Self::Identity => 0.0,
            Self::Square => v,
            Self::Quartic => v * (6.0 * mean * mean + 3.0 * v),
            _ => self.gaussian_expectation(mean, sd) - self.eval(mean),
        }
    }

    /// `E φ(mean + sd·N(0,1))` in closed form.
    pub fn gaussian_expectation(&self, mean: f64, sd: f64) -> f64 {
        if sd == 0.0 {
            return self.eval(mean);
        }
        let v = sd * sd;
        match self {
            Self::Identity => mean,
            Self::Square => mean * mean + v,
            Self::Quartic => {
                let m2 = mean * mean;
                m2 * m2 + 6.0 * m2 * v + 3.0 * v * v
            }
            Self::Indicator { threshold } => std_normal_cdf((mean - threshold) / sd),
            Self::ExpBounded { a } => {
                let d = 1.0 + 2.0 * a * v;
                (-a * mean * mean / d).exp() / d.sqrt()
            }
            Self::Table { knots, values } => {
                let hinge = |k: f64| {
                    let z = (mean - k) / sd;
                    (mean - k) * std_normal_cdf(z) + sd * std_normal_pdf(z)
                };
                let mut e = values[0];
                for i in 0..knots.len() - 1 {
                    let slope = (values[i + 1] - values[i]) / (knots[i + 1] - knots[i]);
                    e += slope * (hinge(knots[i]) - hinge(knots[i + 1]));
                }
                e
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation() {
        assert_eq!(TestFunction::Square.eval(3.0), 9.0);
        assert_eq!(TestFunction::Quartic.eval(-2.0), 16.0);
        let ind = TestFunction::Indicator { threshold: 1.0 };
        assert_eq!(ind.eval(1.0), 1.0);
        assert_eq!(ind.eval(0.999), 0.0);
        let t = TestFunction::Table {
            knots: vec![0.0, 1.0, 3.0],
            values: vec![1.0, 3.0, -1.0],
        };
        assert_eq!(t.eval(-5.0), 1.0);
        assert_eq!(t.eval(0.5), 2.0);
        assert_eq!(t.eval(2.0), 1.0);
        assert_eq!(t.eval(10.0), -1.0);
        assert_eq!(TestFunction::constant(4.5).eval(-100.0), 4.5);
    }

    #[test]
    fn validation() {
        assert!(TestFunction::Table {
            knots: vec![1.0, 0.0],
            values: vec![0.0, 0.0]
        }
        .validate()
        .is_err());
        assert!(TestFunction::ExpBounded { a: -1.0 }.validate().is_err());
        assert!(TestFunction::Square.validate().is_ok());
    }

    /// Trapezoid quadrature of φ against the normal density.
    fn quadrature(f: &TestFunction, mean: f64, sd: f64) -> f64 {
        let n = 200_000;
        let (lo, hi) = (-12.0, 12.0);
        let h = (hi - lo) / n as f64;
        (0..=n)
            .map(|i| {
                let z = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * f.eval(mean + sd * z) * std_normal_pdf(z)
            })
            .sum::<f64>()
            * h
    }

    #[test]
    fn gaussian_expectation_matches_quadrature() {
        let fns = [
            TestFunction::Identity,
            TestFunction::Square,
            TestFunction::Quartic,
            TestFunction::Indicator { threshold: 0.3 },
            TestFunction::ExpBounded { a: 0.7 },
            TestFunction::Table {
                knots: vec![-1.0, 0.0, 0.5, 2.0],
                values: vec![0.0, 2.0, -1.0, 1.5],
            },
        ];
        for f in &fns {
            for (m, s) in [(0.0, 1.0), (0.4, 0.25), (-1.3, 2.0)] {
                let exact = f.gaussian_expectation(m, s);
                let quad = quadrature(f, m, s);
                assert!((exact - quad).abs() < 1e-4, "{} {m} {s}: {exact} vs {quad}", f.id());
            }
        }
    }

    #[test]
    fn second_derivatives_match_differences() {
        for f in [TestFunction::Quartic, TestFunction::ExpBounded { a: 0.3 }] {
            for x in [-1.5, 0.0, 0.7] {
                let h = 1e-4;
                let fd = (f.eval(x + h) - 2.0 * f.eval(x) + f.eval(x - h)) / (h * h);
                assert!((fd - f.second_derivative(x).unwrap()).abs() < 1e-5);
            }
        }
    }
}
