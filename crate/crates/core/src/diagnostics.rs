//! Statistical checks built from the ingredients of the convergence proof:
//! the compensated martingale of `<Z_k, φ>`, the covariance of φ at two
//! distinct random leaves, the decay of `Var <Z_t^n, φ>`, and the headline
//! comparison of the empirical measure with the analytic limit law.

use serde::{Deserialize, Serialize};

use crate::engine::{self, generation_at, FullTreeLimits};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, StateKind};
use crate::limits::{limit_pmf, LimitLaw};
use crate::measures::{self, EmpiricalMeasure, TestFunction, MIN_REPLICATES};
use crate::rng::VertexRngPolicy;
use crate::stats::{self, Interval};
use crate::tree::{sample_distinct_pair, sample_leaf, Vertex};

/// Bootstrap settings shared by the interval-producing checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
        }
    }
}

/// `M_j = <Z_j, φ> − <Z_0, φ> − Σ_{k=1}^{j} <Z_{k−1}, P_R φ − φ>` on the grid
/// `t_j = j / n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingalePath {
    pub scale: u64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Compensator partial sums `C_j`.
    pub compensator: Vec<f64>,
    /// `<Z_j, φ>`.
    pub pairings: Vec<f64>,
}

impl MartingalePath {
    pub fn terminal(&self) -> f64 {
        *self.values.last().unwrap()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn martingale_path(
    kernel: &KernelFamily,
    x0: f64,
    horizon: f64,
    phi: &TestFunction,
    policy: &VertexRngPolicy,
    limits: &FullTreeLimits,
) -> Result<MartingalePath> {
    if kernel.exact_walk_increment(phi, x0).is_none() {
        return Err(Error::NoExactOperator(kernel.family_id()));
    }
    let n = kernel.scale();
    let steps = generation_at(n, horizon)
        .ok_or_else(|| Error::InvalidParameter(format!("bad horizon {horizon}")))?;
    limits.check(steps)?;
    let mut pairings = Vec::with_capacity(steps as usize + 1);
    let mut drifts = Vec::with_capacity(steps as usize + 1);
    engine::simulate_full_tree(kernel, x0, steps, policy, limits, |g| {
        let len = g.states().len() as f64;
        pairings.push(stats::pairwise_sum_by(g.states(), &|x: &f64| phi.eval(*x)) / len);
        if g.generation() < steps {
            let drift = stats::pairwise_sum_by(g.states(), &|x: &f64| {
                kernel.exact_walk_increment(phi, *x).unwrap_or(f64::NAN)
            }) / len;
            drifts.push(drift);
        }
    })?;
    let mut compensator = vec![0.0];
    for d in &drifts {
        compensator.push(compensator.last().unwrap() + d);
    }
    let values = pairings
        .iter()
        .zip(&compensator)
        .map(|(p, c)| (p - pairings[0]) - c)
        .collect();
    Ok(MartingalePath {
        scale: n,
        times: (0..=steps).map(|j| f64::from(j) / n as f64).collect(),
        values,
        compensator,
        pairings,
    })
}

/// Replicate paths of the martingale at one scale.
pub fn martingale_replicates(
    kernel: &KernelFamily,
    x0: f64,
    horizon: f64,
    phi: &TestFunction,
    replicates: usize,
    policy: &VertexRngPolicy,
    limits: &FullTreeLimits,
) -> Result<Vec<MartingalePath>> {
    let label = format!("martingale-n{}", kernel.scale());
    stats::par_map_indexed(replicates, |r| {
        martingale_path(kernel, x0, horizon, phi, &policy.replicate(&label, r as u64), limits)
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupDecayRow {
    pub n: u64,
    pub replicates: usize,
    pub median_sup: f64,
    pub mean_terminal: f64,
    pub se_terminal: f64,
}

/// Median of `sup_{s <= T} |M_s|` for each scale in `n_list`.
#[allow(clippy::too_many_arguments)]
pub fn martingale_sup_decay(
    kernel: &KernelFamily,
    phi: &TestFunction,
    x0: f64,
    horizon: f64,
    n_list: &[u64],
    replicates: usize,
    policy: &VertexRngPolicy,
    limits: &FullTreeLimits,
) -> Result<Vec<SupDecayRow>> {
    if replicates < MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            required: MIN_REPLICATES,
            got: replicates,
        });
    }
    n_list
        .iter()
        .map(|&n| {
            let k = kernel.with_scale(n)?;
            let paths = martingale_replicates(&k, x0, horizon, phi, replicates, policy, limits)?;
            let sups: Vec<f64> = paths.iter().map(MartingalePath::sup_abs).collect();
            let terminals: Vec<f64> = paths.iter().map(MartingalePath::terminal).collect();
            Ok(SupDecayRow {
                n,
                replicates,
                median_sup: stats::median(&sups),
                mean_terminal: stats::mean(&terminals),
                se_terminal: stats::std_error(&terminals),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceEstimator {
    /// Sample covariance of `(φ(X_Σ1), φ(X_Σ2))`.
    Plain,
    /// Mean of `P^m φ(Y_1) · P^m φ(Y_2) − (P^k φ(x0))²`, where `Y_1, Y_2` are
    /// the states of the two children of the pair's most recent common
    /// ancestor and `m` is the remaining depth.
    Conditional,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairCovReport {
    pub n: u64,
    pub t: f64,
    pub generation: u32,
    pub phi: String,
    pub replicates: usize,
    pub estimator: CovarianceEstimator,
    /// Estimate of `Cov[φ(X_Σ1), φ(X_Σ2)]` for distinct uniform leaves.
    pub covariance: f64,
    pub interval: Interval,
    pub plain_covariance: f64,
    pub plain_interval: Interval,
    /// Plain estimate of `E[φ(X_Σ1) φ(X_Σ2)]`.
    pub mean_product: f64,
    /// Analytic bound `2‖φ‖²·2^-[nt]` on the diagonal remainder term; absent
    /// for unbounded φ.
    pub remainder_bound: Option<f64>,
}

/// Covariance of φ at a distinct uniform leaf pair of generation `[n t]`,
/// each pair simulated jointly through its spanning subtree.
///
/// When the family has an exact multi-step walk operator the reported
/// estimate is the conditional one: below the children of the most recent
/// common ancestor the two leaves evolve independently, so that part is
/// integrated out exactly.
#[allow(clippy::too_many_arguments)]
pub fn pair_covariance(
    kernel: &KernelFamily,
    x0: f64,
    t: f64,
    phi: &TestFunction,
    replicates: usize,
    policy: &VertexRngPolicy,
    bootstrap: &BootstrapOptions,
) -> Result<PairCovReport> {
    if replicates < MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            required: MIN_REPLICATES,
            got: replicates,
        });
    }
    kernel.check_state(x0)?;
    let n = kernel.scale();
    let depth = generation_at(n, t).ok_or_else(|| Error::InvalidParameter(format!("bad time {t}")))?;
    if depth == 0 {
        return Err(Error::InvalidParameter(
            "pair covariance needs generation >= 1".into(),
        ));
    }
    let label = format!("paircov-n{n}");
    let mean_phi = kernel.walk_expectation_after(phi, x0, depth);
    let samples: Vec<(f64, f64, Option<f64>)> = stats::par_map_indexed(replicates, |r| {
        let rep = policy.replicate(&label, r as u64);
        let mut leaf_rng = rep.aux_stream("pair");
        let (a, b) = sample_distinct_pair(depth, &mut leaf_rng).expect("depth >= 1");
        let states = engine::simulate_leaves_joint(kernel, x0, [&a, &b], &rep)
            .expect("validated leaf pair");
        let split = a.common_prefix_len(&b) + 1;
        let conditional = mean_phi.and_then(|_| {
            let (ca, cb) = (a.prefix(split).ok()?, b.prefix(split).ok()?);
            let top = engine::simulate_leaves_joint(kernel, x0, [&ca, &cb], &rep).ok()?;
            let m = depth - split;
            Some(
                kernel.walk_expectation_after(phi, top[&ca], m)?
                    * kernel.walk_expectation_after(phi, top[&cb], m)?,
            )
        });
        (phi.eval(states[&a]), phi.eval(states[&b]), conditional)
    });
    let xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let prods: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a * b).collect();
    let seed = crate::rng::derive_seed(policy.master_seed, &label, u64::MAX);
    let plain_interval = stats::bootstrap_paired(
        &xs,
        &ys,
        stats::covariance,
        bootstrap.resamples,
        bootstrap.level,
        seed,
    );
    let plain_covariance = stats::covariance(&xs, &ys);
    let conditional: Option<Vec<f64>> = samples.iter().map(|s| s.2).collect();
    let (estimator, covariance, interval) = match (conditional, mean_phi) {
        (Some(c), Some(mu)) => {
            let mu2 = mu * mu;
            let iv = stats::bootstrap(&c, stats::mean, bootstrap.resamples, bootstrap.level, seed);
            (
                CovarianceEstimator::Conditional,
                stats::mean(&c) - mu2,
                Interval {
                    lo: iv.lo - mu2,
                    hi: iv.hi - mu2,
                },
            )
        }
        _ => (CovarianceEstimator::Plain, plain_covariance, plain_interval),
    };
    Ok(PairCovReport {
        n,
        t,
        generation: depth,
        phi: phi.id(),
        replicates,
        estimator,
        covariance,
        interval,
        plain_covariance,
        plain_interval,
        mean_product: stats::mean(&prods),
        remainder_bound: phi
            .sup_norm()
            .map(|s| 2.0 * s * s * 0.5f64.powi(depth.min(1074) as i32)),
    })
}

/// `<Z_k, φ>` over independent replicate trees, one column per test function.
#[allow(clippy::too_many_arguments)]
pub fn replicate_pairings(
    kernel: &KernelFamily,
    x0: f64,
    generation: u32,
    phis: &[TestFunction],
    replicates: usize,
    policy: &VertexRngPolicy,
    label: &str,
    limits: &FullTreeLimits,
) -> Result<Vec<Vec<f64>>> {
    limits.check(generation)?;
    kernel.check_state(x0)?;
    let rows: Vec<Result<Vec<f64>>> = stats::par_map_indexed(replicates, |r| {
        let rep = policy.replicate(label, r as u64);
        let g = engine::simulate_full_tree(kernel, x0, generation, &rep, limits, |_| {})?;
        let z = measures::empirical_from_buffer(&g);
        Ok(phis.iter().map(|phi| measures::integrate(&z, phi)).collect())
    });
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok((0..phis.len())
        .map(|c| rows.iter().map(|row| row[c]).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub n: u64,
    pub generation: u32,
    pub replicates: usize,
    pub mean: f64,
    /// Unbiased sample variance of `<Z̃_t^n, φ>` over replicates.
    pub variance: f64,
    pub interval: Interval,
}

/// Sample `Var <Z̃_t^n, φ>` for each scale in `n_list`.
#[allow(clippy::too_many_arguments)]
pub fn variance_decay(
    kernel: &KernelFamily,
    x0: f64,
    phi: &TestFunction,
    t: f64,
    n_list: &[u64],
    replicates: usize,
    policy: &VertexRngPolicy,
    limits: &FullTreeLimits,
    bootstrap: &BootstrapOptions,
) -> Result<Vec<VarianceRow>> {
    if replicates < 2 {
        return Err(Error::TooFewReplicates {
            required: 2,
            got: replicates,
        });
    }
    let gens = n_list
        .iter()
        .map(|&n| {
            let g = generation_at(n, t).ok_or_else(|| Error::InvalidParameter(format!("bad time {t}")))?;
            limits.check(g)?;
            Ok(g)
        })
        .collect::<Result<Vec<u32>>>()?;
    n_list
        .iter()
        .zip(gens)
        .map(|(&n, generation)| {
            let k = kernel.with_scale(n)?;
            let label = format!("variance-n{n}");
            let values = replicate_pairings(
                &k,
                x0,
                generation,
                std::slice::from_ref(phi),
                replicates,
                policy,
                &label,
                limits,
            )?
            .remove(0);
            let interval = stats::bootstrap(
                &values,
                stats::sample_variance,
                bootstrap.resamples,
                bootstrap.level,
                crate::rng::derive_seed(policy.master_seed, &label, u64::MAX),
            );
            Ok(VarianceRow {
                n,
                generation,
                replicates,
                mean: stats::mean(&values),
                variance: stats::sample_variance(&values),
                interval,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    Ks,
    Tv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlnVerdict {
    pub family: String,
    pub n: u64,
    pub t: f64,
    pub generation: u32,
    pub m: usize,
    pub law: String,
    pub distance_kind: DistanceKind,
    pub distance: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlnOutcome {
    pub verdict: LlnVerdict,
    /// The m-leaf surrogate of `Z̃_t^n`.
    pub measure: EmpiricalMeasure,
}

pub const MIN_LLN_SAMPLE: usize = 1000;

/// Compare the empirical measure of `m` jointly simulated uniform leaves of
/// generation `[n t]` with `law`.
#[allow(clippy::too_many_arguments)]
pub fn lln_check(
    kernel: &KernelFamily,
    x0: f64,
    t: f64,
    m: usize,
    law: &LimitLaw,
    threshold: f64,
    policy: &VertexRngPolicy,
) -> Result<LlnOutcome> {
    if m < MIN_LLN_SAMPLE {
        return Err(Error::InvalidParameter(format!(
            "lln check needs m >= {MIN_LLN_SAMPLE}, got {m}"
        )));
    }
    let state = kernel.state_kind();
    let kind = match (law, state) {
        (LimitLaw::Poisson { .. }, StateKind::Real) => {
            return Err(Error::LawMismatch(format!(
                "poisson law against the real-valued {} family",
                kernel.family_id()
            )))
        }
        (LimitLaw::Normal { .. }, StateKind::Integer) => {
            return Err(Error::LawMismatch(format!(
                "normal law against the integer-valued {} family",
                kernel.family_id()
            )))
        }
        (LimitLaw::Poisson { .. }, StateKind::Integer) => DistanceKind::Tv,
        _ => DistanceKind::Ks,
    };
    kernel.check_state(x0)?;
    let n = kernel.scale();
    let depth = generation_at(n, t).ok_or_else(|| Error::InvalidParameter(format!("bad time {t}")))?;
    let mut leaf_rng = policy.aux_stream("lln-leaves");
    let leaves: Vec<Vertex> = (0..m).map(|_| sample_leaf(depth, &mut leaf_rng)).collect();
    let joint = engine::simulate_leaves_joint(kernel, x0, &leaves, policy)?;
    let atoms: Vec<f64> = leaves.iter().map(|v| joint[v]).collect();
    let measure = EmpiricalMeasure::new(atoms)?;
    let distance = match kind {
        DistanceKind::Ks => measures::ks_distance(&measure, law),
        DistanceKind::Tv => measures::tv_distance_discrete(&measure, |j| {
            limit_pmf(law, j).expect("discrete law")
        })?,
    };
    Ok(LlnOutcome {
        verdict: LlnVerdict {
            family: kernel.family_id().to_string(),
            n,
            t,
            generation: depth,
            m,
            law: law.name(),
            distance_kind: kind,
            distance,
            threshold,
            pass: distance < threshold,
        },
        measure,
    })
}
