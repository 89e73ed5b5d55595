use serde_json::json;

use super::{fmt_f64, CheckResult, Command, ExperimentConfig, RunOutput, RunReport, Table};
use crate::diagnostics::{self, BootstrapOptions};
use crate::engine::{self, generation_at};
use crate::error::{Error, Result};
use crate::limits::{self, GeneratorSpec, LimitLaw};
use crate::measures;
use crate::oracle;
use crate::rng::VertexRngPolicy;
use crate::stats;
use crate::tree::{mrca, mrca_depth_pmf, sample_leaf};

struct Parts {
    checks: Vec<CheckResult>,
    results: serde_json::Value,
    tables: Vec<Table>,
    files: Vec<(String, Vec<u8>)>,
}

fn section<'a, T>(s: &'a Option<T>, name: &str) -> Result<&'a T> {
    s.as_ref()
        .ok_or_else(|| Error::Config(format!("the {name} command needs a [{name}] section")))
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report types serialize")
}

fn time_to_generation(n: u64, t: f64) -> Result<u32> {
    generation_at(n, t).ok_or_else(|| Error::Config(format!("bad time {t}")))
}

fn bootstrap_options(b: &super::BootstrapConfig) -> BootstrapOptions {
    BootstrapOptions {
        resamples: b.resamples,
        level: b.level,
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

pub(super) fn dispatch(command: Command, cfg: &ExperimentConfig) -> Result<RunOutput> {
    let parts = match command {
        Command::Simulate => simulate(cfg),
        Command::Lln => lln(cfg),
        Command::Martingale => martingale(cfg),
        Command::Paircov => paircov(cfg),
        Command::Variance => variance(cfg),
        Command::Genchk => genchk(cfg),
        Command::Mrca => mrca_check(cfg),
        Command::Oracle => oracle_check(cfg),
    }?;
    Ok(RunOutput {
        report: RunReport {
            tool: "treemc".into(),
            version: format!("v{}", env!("CARGO_PKG_VERSION")),
            command,
            config: cfg.clone(),
            pass: parts.checks.iter().all(|c| c.pass),
            checks: parts.checks,
            results: parts.results,
        },
        tables: parts.tables,
        files: parts.files,
    })
}

fn simulate(cfg: &ExperimentConfig) -> Result<Parts> {
    let sc = section(&cfg.simulate, "simulate")?;
    if sc.generation.is_none() && sc.walk_horizon.is_none() {
        return Err(Error::Config(
            "[simulate] needs generation and/or walk_horizon".into(),
        ));
    }
    let kernel = cfg.kernel.family()?;
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let mut results = serde_json::Map::new();
    let mut tables = Vec::new();
    let mut files = Vec::new();
    if let Some(k) = sc.generation {
        let mut pairings = Table::new("pairings", &["generation", "phi", "pairing"]);
        let g = engine::simulate_full_tree(&kernel, cfg.x0, k, &policy, &cfg.full_tree_limits(), |g| {
            let z = measures::empirical_from_buffer(g);
            for phi in &sc.phis {
                pairings.push(vec![
                    g.generation().to_string(),
                    phi.id(),
                    fmt_f64(measures::integrate(&z, phi)),
                ]);
            }
        })?;
        let states = g.states();
        results.insert(
            "generation".into(),
            json!({
                "generation": k,
                "leaves": states.len(),
                "mean": stats::mean(states),
                "min": states.iter().copied().fold(f64::INFINITY, f64::min),
                "max": states.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }),
        );
        let mut t = Table::new("generation", &["index", "state"]);
        for (i, x) in states.iter().enumerate() {
            t.push(vec![i.to_string(), fmt_f64(*x)]);
        }
        tables.push(t);
        if !sc.phis.is_empty() {
            tables.push(pairings);
        }
        if sc.dump {
            let mut bytes = Vec::new();
            engine::write_generation_dump(&mut bytes, &g, kernel.state_kind())?;
            files.push((format!("generation_{k}.tcgb"), bytes));
        }
    }
    if let Some(horizon) = sc.walk_horizon {
        let steps = time_to_generation(kernel.scale(), horizon)?;
        let path = engine::simulate_walk(&kernel, cfg.x0, steps, &policy)?;
        let mut t = Table::new("walk", &["step", "time", "state"]);
        for (j, (time, x)) in path.times().zip(&path.states).enumerate() {
            t.push(vec![j.to_string(), fmt_f64(time), fmt_f64(*x)]);
        }
        tables.push(t);
        results.insert(
            "walk".into(),
            json!({ "steps": steps, "terminal": path.states.last() }),
        );
    }
    Ok(Parts {
        checks: Vec::new(),
        results: results.into(),
        tables,
        files,
    })
}

fn lln(cfg: &ExperimentConfig) -> Result<Parts> {
    let lc = section(&cfg.lln, "lln")?;
    let kernel = cfg.kernel.family()?;
    let law = match lc.law {
        Some(l) => l,
        None => LimitLaw::for_family(&kernel, cfg.x0, lc.t)?,
    };
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let out = diagnostics::lln_check(&kernel, cfg.x0, lc.t, lc.m, &law, lc.threshold, &policy)?;
    let v = &out.verdict;
    let mut checks = vec![CheckResult::new(
        "lln_distance",
        v.pass,
        format!(
            "{:?} distance {} to {} (threshold {})",
            v.distance_kind, v.distance, v.law, v.threshold
        ),
    )];
    let mut moments = Vec::new();
    for mc in &lc.moments {
        let value = measures::integrate(&out.measure, &mc.phi);
        let pass = value >= mc.min && value <= mc.max;
        checks.push(CheckResult::new(
            format!("moment_{}", mc.phi.id()),
            pass,
            format!("{value} in [{}, {}]", mc.min, mc.max),
        ));
        moments.push(json!({ "phi": mc.phi.id(), "value": value, "min": mc.min, "max": mc.max }));
    }
    let mut atoms = Table::new("lln_atoms", &["state"]);
    for a in out.measure.atoms() {
        atoms.push(vec![fmt_f64(*a)]);
    }
    Ok(Parts {
        checks,
        results: json!({ "verdict": to_value(v), "law": to_value(&law), "moments": moments }),
        tables: vec![atoms],
        files: Vec::new(),
    })
}

fn martingale(cfg: &ExperimentConfig) -> Result<Parts> {
    let mc = section(&cfg.martingale, "martingale")?;
    let kernel = cfg.kernel.family()?;
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let limits = cfg.full_tree_limits();
    if mc.replicates < measures::MIN_REPLICATES {
        return Err(Error::TooFewReplicates {
            required: measures::MIN_REPLICATES,
            got: mc.replicates,
        });
    }
    let paths = diagnostics::martingale_replicates(
        &kernel, cfg.x0, mc.horizon, &mc.phi, mc.replicates, &policy, &limits,
    )?;
    let terminals: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
    let comp: Vec<f64> = paths.iter().map(|p| *p.compensator.last().unwrap()).collect();
    let mean = stats::mean(&terminals);
    let se = stats::std_error(&terminals);
    let mut checks = vec![CheckResult::new(
        "terminal_mean_within_4se",
        mean.abs() <= 4.0 * se + 1e-12,
        format!("mean M_T = {mean}, SE = {se}"),
    )];
    let comp_min = comp.iter().copied().fold(f64::INFINITY, f64::min);
    let comp_max = comp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(expected) = mc.expected_compensator {
        let err = comp.iter().fold(0.0f64, |m, c| m.max((c - expected).abs()));
        checks.push(CheckResult::new(
            "compensator",
            err <= 1e-12,
            format!("max |C_T − {expected}| = {err:e}"),
        ));
    }
    let mut rows = Vec::new();
    if let Some(list) = &cfg.kernel.n_list {
        rows = diagnostics::martingale_sup_decay(
            &kernel, &mc.phi, cfg.x0, mc.horizon, list, mc.replicates, &policy, &limits,
        )?;
        let medians: Vec<f64> = rows.iter().map(|r| r.median_sup).collect();
        checks.push(CheckResult::new(
            "median_sup_decreasing",
            strictly_decreasing(&medians),
            format!("median sup|M| over n = {list:?}: {medians:?}"),
        ));
    }
    let mut sup = Table::new("martingale_sup", &["n", "replicates", "median_sup", "mean_terminal", "se_terminal"]);
    for r in &rows {
        sup.push(vec![
            r.n.to_string(),
            r.replicates.to_string(),
            fmt_f64(r.median_sup),
            fmt_f64(r.mean_terminal),
            fmt_f64(r.se_terminal),
        ]);
    }
    let mut path = Table::new("martingale_path", &["time", "value", "compensator", "pairing"]);
    let p0 = &paths[0];
    for j in 0..p0.values.len() {
        path.push(vec![
            fmt_f64(p0.times[j]),
            fmt_f64(p0.values[j]),
            fmt_f64(p0.compensator[j]),
            fmt_f64(p0.pairings[j]),
        ]);
    }
    Ok(Parts {
        checks,
        results: json!({
            "n": kernel.scale(),
            "replicates": mc.replicates,
            "mean_terminal": mean,
            "se_terminal": se,
            "compensator_min": comp_min,
            "compensator_max": comp_max,
            "sup_decay": to_value(&rows),
        }),
        tables: vec![sup, path],
        files: Vec::new(),
    })
}

fn paircov(cfg: &ExperimentConfig) -> Result<Parts> {
    let pc = section(&cfg.paircov, "paircov")?;
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let boot = bootstrap_options(&pc.bootstrap);
    let reports = cfg
        .kernel
        .scales()?
        .into_iter()
        .map(|n| {
            let k = cfg.kernel.family_at(n)?;
            diagnostics::pair_covariance(&k, cfg.x0, pc.t, &pc.phi, pc.replicates, &policy, &boot)
        })
        .collect::<Result<Vec<_>>>()?;
    let abs: Vec<f64> = reports.iter().map(|r| r.covariance.abs()).collect();
    let last = reports.last().unwrap();
    let mut checks = Vec::new();
    if reports.len() > 1 {
        checks.push(CheckResult::new(
            "abs_covariance_decreasing",
            strictly_decreasing(&abs),
            format!("|cov| = {abs:?}"),
        ));
    }
    checks.push(CheckResult::new(
        "last_interval_contains_zero",
        last.interval.contains(0.0),
        format!("n = {}: [{}, {}]", last.n, last.interval.lo, last.interval.hi),
    ));
    let mut t = Table::new("paircov", &["n", "generation", "covariance", "ci_lo", "ci_hi", "mean_product"]);
    for r in &reports {
        t.push(vec![
            r.n.to_string(),
            r.generation.to_string(),
            fmt_f64(r.covariance),
            fmt_f64(r.interval.lo),
            fmt_f64(r.interval.hi),
            fmt_f64(r.mean_product),
        ]);
    }
    Ok(Parts {
        checks,
        results: json!({ "rows": to_value(&reports) }),
        tables: vec![t],
        files: Vec::new(),
    })
}

fn variance(cfg: &ExperimentConfig) -> Result<Parts> {
    let vc = section(&cfg.variance, "variance")?;
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let limits = cfg.full_tree_limits();
    let boot = bootstrap_options(&vc.bootstrap);
    let scales = cfg.kernel.scales()?;
    let base = cfg.kernel.family_at(scales[0])?;
    let rows = diagnostics::variance_decay(
        &base, cfg.x0, &vc.phi, vc.t, &scales, vc.replicates, &policy, &limits, &boot,
    )?;
    let vars: Vec<f64> = rows.iter().map(|r| r.variance).collect();
    let mut checks = vec![CheckResult::new(
        "variance_decreasing",
        strictly_decreasing(&vars),
        format!("Var over n = {scales:?}: {vars:?}"),
    )];
    if let Some(ratio) = vc.max_ratio {
        let r = vars[vars.len() - 1] / vars[0];
        checks.push(CheckResult::new(
            "variance_ratio",
            r < ratio,
            format!("Var(last)/Var(first) = {r} (limit {ratio})"),
        ));
    }
    let mut anchor = serde_json::Value::Null;
    if let Some(a) = vc.anchor {
        let k = cfg.kernel.family_at(a.n)?;
        let row = diagnostics::variance_decay(
            &k, cfg.x0, &vc.phi, vc.t, &[a.n], vc.replicates, &policy, &limits, &boot,
        )?
        .remove(0);
        checks.push(CheckResult::new(
            "variance_anchor",
            row.interval.contains(a.expected),
            format!(
                "n = {}: Var = {} with interval [{}, {}], expected {}",
                a.n, row.variance, row.interval.lo, row.interval.hi, a.expected
            ),
        ));
        anchor = to_value(&row);
    }
    let mut t = Table::new("variance", &["n", "generation", "mean", "variance", "ci_lo", "ci_hi"]);
    for r in &rows {
        t.push(vec![
            r.n.to_string(),
            r.generation.to_string(),
            fmt_f64(r.mean),
            fmt_f64(r.variance),
            fmt_f64(r.interval.lo),
            fmt_f64(r.interval.hi),
        ]);
    }
    Ok(Parts {
        checks,
        results: json!({ "rows": to_value(&rows), "anchor": anchor }),
        tables: vec![t],
        files: Vec::new(),
    })
}

fn genchk(cfg: &ExperimentConfig) -> Result<Parts> {
    let gc = section(&cfg.genchk, "genchk")?;
    let grid = gc.grid.points()?;
    let scales = cfg.kernel.scales()?;
    let mut reports = Vec::new();
    let mut checks = Vec::new();
    let mut t = Table::new("genchk", &["phi", "n", "generator_gap", "function_gap"]);
    for check in &gc.checks {
        let mut gaps = Vec::new();
        for &n in &scales {
            let kernel = cfg.kernel.family_at(n)?;
            let spec = GeneratorSpec::for_family(&kernel)?;
            let gap = limits::generator_gap(&kernel, &check.phi, &spec, &grid)?;
            let eta = kernel.embedding();
            let fgap = limits::function_gap(|x| check.phi.eval(eta.apply(x)), |x| check.phi.eval(x), &grid)?;
            t.push(vec![check.phi.id(), n.to_string(), fmt_f64(gap), fmt_f64(fgap)]);
            checks.push(CheckResult::new(
                format!("function_gap_{}_n{n}", check.phi.id()),
                fgap == 0.0,
                format!("{fgap}"),
            ));
            reports.push(limits::GapReport {
                phi: check.phi.id(),
                family: kernel.family_id().to_string(),
                n,
                grid_min: gc.grid.min,
                grid_max: gc.grid.max,
                grid_step: gc.grid.step,
                gap,
            });
            gaps.push((n, gap));
        }
        if let Some(max) = check.max_gap {
            let worst = gaps.iter().fold(0.0f64, |m, g| m.max(g.1));
            checks.push(CheckResult::new(
                format!("max_gap_{}", check.phi.id()),
                worst <= max,
                format!("max generator gap {worst:e} (limit {max:e})"),
            ));
        }
        if let Some([lo, hi]) = check.ratio {
            for w in gaps.windows(2) {
                let ((n1, g1), (n2, g2)) = (w[0], w[1]);
                if n2 != 2 * n1 {
                    continue;
                }
                let r = g1 / g2;
                checks.push(CheckResult::new(
                    format!("gap_ratio_{}_n{n1}", check.phi.id()),
                    r >= lo && r <= hi,
                    format!("gap({n1})/gap({n2}) = {r} (bounds [{lo}, {hi}])"),
                ));
            }
        }
    }
    Ok(Parts {
        checks,
        results: json!({ "rows": to_value(&reports) }),
        tables: vec![t],
        files: Vec::new(),
    })
}

fn mrca_check(cfg: &ExperimentConfig) -> Result<Parts> {
    let mc = section(&cfg.mrca, "mrca")?;
    if mc.pairs == 0 {
        return Err(Error::Config("mrca.pairs must be positive".into()));
    }
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut t = Table::new("mrca", &["k", "depth", "observed", "expected"]);
    for &k in &mc.k_list {
        let mut rng = policy.aux_stream(&format!("mrca-k{k}"));
        let mut counts = vec![0u64; k as usize + 1];
        for _ in 0..mc.pairs {
            let a = sample_leaf(k, &mut rng);
            let b = sample_leaf(k, &mut rng);
            counts[mrca(&a, &b).depth() as usize] += 1;
        }
        let pmf = mrca_depth_pmf(k);
        let chi = stats::chi_square_gof(&counts, &pmf);
        for (j, (c, p)) in counts.iter().zip(&pmf).enumerate() {
            t.push(vec![
                k.to_string(),
                j.to_string(),
                c.to_string(),
                fmt_f64(p * mc.pairs as f64),
            ]);
        }
        checks.push(CheckResult::new(
            format!("mrca_chi_square_k{k}"),
            chi.p_value >= mc.alpha,
            format!("statistic {} on {} dof, p = {}", chi.statistic, chi.dof, chi.p_value),
        ));
        rows.push(json!({ "k": k, "counts": counts, "pmf": pmf, "chi_square": to_value(&chi) }));
    }
    Ok(Parts {
        checks,
        results: json!({ "rows": rows }),
        tables: vec![t],
        files: Vec::new(),
    })
}

fn oracle_check(cfg: &ExperimentConfig) -> Result<Parts> {
    let oc = section(&cfg.oracle, "oracle")?;
    let kernel = cfg.kernel.family()?;
    let policy = VertexRngPolicy::new(cfg.master_seed);
    let rows = oracle::compare(&kernel, cfg.x0, oc.k_max, &oc.phis, oc.replicates, &policy)?;
    let mut t = Table::new(
        "oracle",
        &["k", "phi", "exact_pairing", "exact_walk", "simulated_mean", "simulated_se"],
    );
    let mut checks = Vec::new();
    for r in &rows {
        t.push(vec![
            r.k.to_string(),
            r.phi.clone(),
            fmt_f64(r.exact_pairing),
            fmt_f64(r.exact_walk),
            fmt_f64(r.simulated_mean),
            fmt_f64(r.simulated_se),
        ]);
        checks.push(CheckResult::new(
            format!("oracle_k{}_{}", r.k, r.phi),
            r.pass(),
            format!(
                "exact {} = walk {}: {}; decomposition: {}; simulated {} ± {}",
                r.exact_pairing, r.exact_walk, r.exact_equal, r.decomposition_equal,
                r.simulated_mean, r.simulated_se
            ),
        ));
    }
    Ok(Parts {
        checks,
        results: json!({ "rows": to_value(&rows) }),
        tables: vec![t],
        files: Vec::new(),
    })
}
