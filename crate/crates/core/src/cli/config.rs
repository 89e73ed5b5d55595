//! Experiment configuration: one TOML file per run, strict about unknown keys.

use serde::{Deserialize, Serialize};

use crate::engine::{FullTreeLimits, DEFAULT_MAX_FULL_GENERATION};
use crate::error::{Error, Result};
use crate::kernels::{IncrementLaw, KernelFamily, KernelKind, MixtureRow};
use crate::limits::{Grid, LimitLaw};
use crate::measures::TestFunction;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default)]
    pub x0: f64,
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<LimitsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub martingale: Option<MartingaleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paircov: Option<PairCovConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genchk: Option<GenChkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrca: Option<MrcaConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    Donsker,
    Poisson,
    SymmetricProduct,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: FamilyId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub increment: Option<IncrementLaw>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<MixtureRow>>,
}

impl KernelConfig {
    /// The family at scale `n`.
    pub fn family_at(&self, n: u64) -> Result<KernelFamily> {
        let extra = |what: &str| {
            Error::Config(format!("kernel.{what} does not apply to the {:?} family", self.family))
        };
        let missing = |what: &str| {
            Error::Config(format!("the {:?} family needs kernel.{what}", self.family))
        };
        let kind = match self.family {
            FamilyId::Donsker | FamilyId::SymmetricProduct => {
                if self.lambda.is_some() {
                    return Err(extra("lambda"));
                }
                if self.rows.is_some() {
                    return Err(extra("rows"));
                }
                let increment = self.increment.clone().ok_or_else(|| missing("increment"))?;
                if self.family == FamilyId::Donsker {
                    KernelKind::Donsker { increment }
                } else {
                    KernelKind::SymmetricProduct { increment }
                }
            }
            FamilyId::Poisson => {
                if self.increment.is_some() {
                    return Err(extra("increment"));
                }
                if self.rows.is_some() {
                    return Err(extra("rows"));
                }
                KernelKind::Poisson {
                    lambda: self.lambda.ok_or_else(|| missing("lambda"))?,
                }
            }
            FamilyId::Custom => {
                if self.increment.is_some() {
                    return Err(extra("increment"));
                }
                if self.lambda.is_some() {
                    return Err(extra("lambda"));
                }
                KernelKind::Custom {
                    rows: self.rows.clone().ok_or_else(|| missing("rows"))?,
                }
            }
        };
        KernelFamily::new(kind, n).map_err(|e| Error::Config(e.to_string()))
    }

    /// The single-scale family from `kernel.n`.
    pub fn family(&self) -> Result<KernelFamily> {
        self.family_at(self.n.ok_or_else(|| Error::Config("kernel.n is required".into()))?)
    }

    /// `kernel.n_list`, or `[kernel.n]` when no list is given.
    pub fn scales(&self) -> Result<Vec<u64>> {
        match (&self.n_list, self.n) {
            (Some(list), _) if !list.is_empty() => Ok(list.clone()),
            (Some(_), _) => Err(Error::Config("kernel.n_list is empty".into())),
            (None, Some(n)) => Ok(vec![n]),
            (None, None) => Err(Error::Config("kernel.n or kernel.n_list is required".into())),
        }
    }

    /// Every scale the run may touch, validated.
    fn validate(&self) -> Result<()> {
        let mut all: Vec<u64> = self.n.into_iter().collect();
        all.extend(self.n_list.iter().flatten());
        if all.is_empty() {
            return Err(Error::Config("kernel.n or kernel.n_list is required".into()));
        }
        for n in all {
            self.family_at(n)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsConfig {
    #[serde(default = "default_max_generation")]
    pub max_generation: u32,
}

fn default_max_generation() -> u32 {
    DEFAULT_MAX_FULL_GENERATION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Full-tree depth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation: Option<u32>,
    /// Also write the final generation as a binary dump.
    #[serde(default)]
    pub dump: bool,
    /// Walk path horizon `T`; simulates `[nT]` steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walk_horizon: Option<f64>,
    /// Pairings `<Z_k, φ>` reported per generation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub phis: Vec<TestFunction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCheck {
    pub phi: TestFunction,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnConfig {
    pub t: f64,
    pub m: usize,
    pub threshold: f64,
    /// Defaults to the family's limit law at time `t`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub law: Option<LimitLaw>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub moments: Vec<MomentCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleConfig {
    pub horizon: f64,
    pub phi: TestFunction,
    pub replicates: usize,
    /// Checked against every replicate's terminal compensator to 1e-12.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_compensator: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapConfig {
    #[serde(default = "default_resamples")]
    pub resamples: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

fn default_resamples() -> usize {
    2000
}

fn default_level() -> f64 {
    0.95
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: default_resamples(),
            level: default_level(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairCovConfig {
    pub t: f64,
    pub phi: TestFunction,
    pub replicates: usize,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceAnchor {
    pub n: u64,
    pub expected: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    pub t: f64,
    pub phi: TestFunction,
    pub replicates: usize,
    /// Require `Var(last n) < ratio · Var(first n)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ratio: Option<f64>,
    /// A scale whose variance is known in closed form; its bootstrap interval
    /// must cover `expected`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<VarianceAnchor>,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapCheck {
    pub phi: TestFunction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_gap: Option<f64>,
    /// Bounds on `gap(n) / gap(2n)` for consecutive doubled scales.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenChkConfig {
    pub grid: Grid,
    pub checks: Vec<GapCheck>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrcaConfig {
    pub k_list: Vec<u32>,
    pub pairs: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub k_max: u32,
    pub phis: Vec<TestFunction>,
    pub replicates: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.x0.is_finite() {
            return Err(Error::Config("x0 must be finite".into()));
        }
        self.kernel.validate()?;
        let cap = self.full_tree_limits().max_generation;
        if cap > 40 {
            return Err(Error::Config(format!("limits.max_generation {cap} exceeds 40")));
        }
        let phis = self
            .simulate
            .iter()
            .flat_map(|s| s.phis.iter())
            .chain(self.lln.iter().flat_map(|l| l.moments.iter().map(|m| &m.phi)))
            .chain(self.martingale.iter().map(|m| &m.phi))
            .chain(self.paircov.iter().map(|p| &p.phi))
            .chain(self.variance.iter().map(|v| &v.phi))
            .chain(self.genchk.iter().flat_map(|g| g.checks.iter().map(|c| &c.phi)))
            .chain(self.oracle.iter().flat_map(|o| o.phis.iter()));
        for phi in phis {
            phi.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn full_tree_limits(&self) -> FullTreeLimits {
        FullTreeLimits {
            max_generation: self
                .limits
                .map_or(DEFAULT_MAX_FULL_GENERATION, |l| l.max_generation),
        }
    }
}
