//! Experiment harness: subcommand dispatch, report assembly and output files.

mod commands;
mod config;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{
    BootstrapConfig, ExperimentConfig, FamilyId, GapCheck, GenChkConfig, KernelConfig, LimitsConfig,
    LlnConfig, MartingaleConfig, MomentCheck, MrcaConfig, OracleConfig, OutputConfig, OutputFormat,
    PairCovConfig, SimulateConfig, VarianceAnchor, VarianceConfig,
};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

/// Seventeen significant digits, locale independent.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Simulate,
    Lln,
    Martingale,
    Paircov,
    Variance,
    Genchk,
    Mrca,
    Oracle,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Self::Simulate,
        Self::Lln,
        Self::Martingale,
        Self::Paircov,
        Self::Variance,
        Self::Genchk,
        Self::Mrca,
        Self::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Lln => "lln",
            Self::Martingale => "martingale",
            Self::Paircov => "paircov",
            Self::Variance => "variance",
            Self::Genchk => "genchk",
            Self::Mrca => "mrca",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown command {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl CheckResult {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

/// Everything a run reports except wall time, which lives in `timing.json`
/// so that reports compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: Command,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub checks: Vec<CheckResult>,
    pub results: serde_json::Value,
}

/// A CSV table written as `<name>.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// In-memory result of one subcommand.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    pub tables: Vec<Table>,
    /// Extra binary files, such as generation dumps.
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    pub fn report_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(&self.report)
            .map_err(|e| Error::Config(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn exit_code(&self) -> i32 {
        if self.report.pass {
            EXIT_PASS
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

impl RunOptions {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if self.out_dir.is_some() || self.format.is_some() {
            let out = cfg.output.get_or_insert_with(OutputConfig::default);
            if let Some(dir) = &self.out_dir {
                out.dir = Some(dir.to_string_lossy().into_owned());
            }
            if let Some(f) = self.format {
                out.format = Some(f);
            }
        }
    }
}

/// Run `command` on a validated config, on a pool of `workers` threads.
pub fn execute(command: Command, cfg: &ExperimentConfig, workers: Option<usize>) -> Result<RunOutput> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(command, cfg))
}

/// Write `report.json`, `timing.json`, CSV tables (csv format only) and extra
/// files into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path, format: OutputFormat, wall_seconds: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), out.report_json()?)?;
    let timing = serde_json::json!({ "command": out.report.command, "wall_seconds": wall_seconds });
    std::fs::write(dir.join("timing.json"), format!("{timing}\n"))?;
    if format == OutputFormat::Csv {
        for t in &out.tables {
            std::fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
    }
    for (name, bytes) in &out.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Parse the config at `path`, apply overrides, run, write outputs and return
/// the process exit code. Errors go to stderr.
pub fn run_from_path(command: Command, path: &Path, opts: &RunOptions) -> i32 {
    match try_run(command, path, opts) {
        Ok(out) => {
            for c in &out.report.checks {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", c.name, c.detail);
            }
            out.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn try_run(command: Command, path: &Path, opts: &RunOptions) -> Result<RunOutput> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    opts.apply(&mut cfg);
    let start = Instant::now();
    let out = execute(command, &cfg, opts.workers)?;
    let wall = start.elapsed().as_secs_f64();
    let output = cfg.output.clone().unwrap_or_default();
    let dir = PathBuf::from(output.dir.unwrap_or_else(|| "out".into()));
    write_outputs(&out, &dir, output.format.unwrap_or_default(), wall)?;
    Ok(out)
}
