//! Experiment files: parsing, expansion into simulation cells, parallel
//! execution and the CSV artifacts written for each experiment.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::Calibration;
use crate::engine::{self, compare, write_metrics_csv, Comparison, RunSummary, SimConfig, SimError};
use crate::page::Pid;
use crate::policy::PolicyConfig;
use crate::workload::{
    load_trace, npb_profile, AccessPattern, FootprintClass, RegionSpec, WorkloadSource, WorkloadSpec,
};

pub const EXPERIMENT_SCHEMA: &str = "tiersim-experiment/1";

#[derive(Debug, Error)]
pub enum HarnessError {
    /// The experiment or one of its cells is invalid; nothing was run.
    #[error("invalid experiment: {0}")]
    Config(String),
    /// A cell aborted while running.
    #[error("run {cell} aborted: {source}")]
    Runtime { cell: String, source: SimError },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl HarnessError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Runtime { .. } | HarnessError::Io { .. } => 1,
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    Matrix,
    RatioSweep,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierOverrides {
    pub fast_pages: Option<u64>,
    pub slow_pages: Option<u64>,
}

/// One `[[workloads]]` entry: an NPB profile, a trace file, or inline regions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadEntry {
    pub profile: Option<String>,
    #[serde(default)]
    pub footprints: Vec<String>,
    pub trace: Option<String>,
    pub name: Option<String>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    pub latency_tolerance_ns: Option<f64>,
    /// Expands an inline workload into one variant per demand level.
    #[serde(default)]
    pub demand_levels: Vec<f64>,
    /// Regions whose demand is set to each level; defaults to all.
    #[serde(default)]
    pub level_regions: Vec<String>,
}

/// Parameters of a `ratio_sweep` experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepDef {
    pub demand_levels: Vec<f64>,
    /// FAST shares to try; defaults to the grid {1, 1 - step, ..., 0}.
    #[serde(default)]
    pub ratios: Vec<f64>,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    pub pages: u64,
    #[serde(default = "default_read_fraction")]
    pub read_fraction: f64,
    pub latency_tolerance_ns: Option<f64>,
    #[serde(default = "default_random")]
    pub pattern: AccessPattern,
}

fn default_grid_step() -> f64 {
    0.05
}
fn default_read_fraction() -> f64 {
    1.0
}
fn default_random() -> AccessPattern {
    AccessPattern::Random
}
fn default_epoch_ms() -> f64 {
    10.0
}
fn default_one() -> u64 {
    1
}
fn default_seeds() -> Vec<u64> {
    vec![1]
}
fn default_warmup() -> f64 {
    0.5
}
fn default_window() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub schema: String,
    pub name: String,
    #[serde(default)]
    pub kind: ExperimentKind,
    pub horizon: u64,
    #[serde(default = "default_epoch_ms")]
    pub epoch_ms: f64,
    #[serde(default = "default_one")]
    pub page_scale: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_window")]
    pub counter_window: usize,
    pub baseline: Option<String>,
    #[serde(default)]
    pub policies: Vec<String>,
    /// Calibration file, relative to the experiment file.
    pub calibration: Option<String>,
    #[serde(default)]
    pub tiers: TierOverrides,
    #[serde(default)]
    pub workloads: Vec<WorkloadEntry>,
    /// Per-policy parameter overrides, `[policy.<name>]`.
    #[serde(default)]
    pub policy: BTreeMap<String, toml::Table>,
    pub sweep: Option<SweepDef>,
}

/// A parsed experiment plus the directory its relative paths resolve from.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub file: ExperimentFile,
    pub base_dir: PathBuf,
}

impl Experiment {
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self, HarnessError> {
        let file: ExperimentFile = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        if file.schema != EXPERIMENT_SCHEMA {
            return Err(config_err(format!("schema {:?}, expected {:?}", file.schema, EXPERIMENT_SCHEMA)));
        }
        Ok(Experiment { file, base_dir: base_dir.into() })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base).map_err(|e| match e {
            HarnessError::Config(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// One simulation of an experiment.
#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub config: SimConfig,
    /// Demand level for sweep cells and levelled workloads.
    pub level: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the experiment's seed list.
    pub seeds: Option<Vec<u64>>,
    /// Upper bound on concurrently running cells; 0 means one per CPU.
    pub workers: usize,
    /// Directory receiving `<experiment name>/...`; nothing is written if unset.
    pub out: Option<PathBuf>,
    pub dry_run: bool,
    /// Suppresses the timestamp line at the top of summary tables.
    pub no_timestamp: bool,
    /// Calibration used when the experiment names none.
    pub calibration: Option<PathBuf>,
}

fn policy_config(name: &str, overrides: Option<&toml::Table>) -> Result<PolicyConfig, HarnessError> {
    let base = PolicyConfig::named(name).ok_or_else(|| config_err(format!("unknown policy {name:?}")))?;
    let Some(over) = overrides else { return Ok(base) };
    let mut table = toml::Table::try_from(&base).map_err(|e| config_err(e.to_string()))?;
    for (k, v) in over {
        if k == "kind" {
            return Err(config_err(format!("[policy.{name}] may not set kind")));
        }
        table.insert(k.clone(), v.clone());
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| config_err(format!("[policy.{name}]: {}", e.message())))
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.@".contains(c) { c } else { '_' }).collect()
}

fn level_tag(level: f64) -> String {
    if level.fract() == 0.0 {
        format!("{}", level as u64)
    } else {
        format!("{level}")
    }
}

impl Experiment {
    fn calibration(&self, opts: &RunOptions) -> Result<Calibration, HarnessError> {
        let path = match (&self.file.calibration, &opts.calibration) {
            (Some(p), _) => Some(self.base_dir.join(p)),
            (None, Some(p)) => Some(p.clone()),
            (None, None) => None,
        };
        let cal = match path {
            Some(p) => Calibration::load(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?,
            None => Calibration::default(),
        };
        let t = &self.file.tiers;
        let (fast, slow) = (
            t.fast_pages.unwrap_or(cal.fast.capacity_pages),
            t.slow_pages.unwrap_or(cal.slow.capacity_pages),
        );
        Ok(cal.with_capacities(fast, slow))
    }

    /// Workloads with their demand level, in file order.
    fn workloads(&self, cal: &Calibration) -> Result<Vec<(WorkloadSource, Option<f64>)>, HarnessError> {
        let mut out = Vec::new();
        for (i, w) in self.file.workloads.iter().enumerate() {
            let what = format!("workloads[{i}]");
            let kinds = [w.profile.is_some(), w.trace.is_some(), !w.regions.is_empty()];
            if kinds.iter().filter(|&&k| k).count() != 1 {
                return Err(config_err(format!("{what}: give exactly one of profile, trace or regions")));
            }
            if let Some(p) = &w.profile {
                if w.footprints.is_empty() {
                    return Err(config_err(format!("{what}: profile {p} needs footprints")));
                }
                for f in &w.footprints {
                    let class = FootprintClass::parse(f).ok_or_else(|| config_err(format!("{what}: unknown footprint {f:?}")))?;
                    let mut spec = npb_profile(p, class, cal.fast.capacity_pages).map_err(|e| config_err(format!("{what}: {e}")))?;
                    if let Some(t) = w.latency_tolerance_ns {
                        spec.latency_tolerance_ns = Some(t);
                    }
                    out.push((WorkloadSource::Synthetic(spec), None));
                }
            } else if let Some(t) = &w.trace {
                let path = self.base_dir.join(t);
                let f = fs::File::open(&path).map_err(|e| config_err(format!("{what}: {}: {e}", path.display())))?;
                let name = w.name.clone().unwrap_or_else(|| {
                    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trace".into())
                });
                let mut trace = load_trace(BufReader::new(f), &name).map_err(|e| config_err(format!("{what}: {e}")))?;
                if w.latency_tolerance_ns.is_some() {
                    trace.latency_tolerance_ns = w.latency_tolerance_ns;
                }
                out.push((WorkloadSource::Trace(trace), None));
            } else {
                let name = w.name.clone().ok_or_else(|| config_err(format!("{what}: inline workloads need a name")))?;
                let spec = WorkloadSpec {
                    name: name.clone(),
                    regions: w.regions.clone(),
                    footprint_class: None,
                    latency_tolerance_ns: w.latency_tolerance_ns,
                };
                if w.demand_levels.is_empty() {
                    out.push((WorkloadSource::Synthetic(spec), None));
                    continue;
                }
                for r in &w.level_regions {
                    if !spec.regions.iter().any(|x| &x.name == r) {
                        return Err(config_err(format!("{what}: level region {r:?} not defined")));
                    }
                }
                for &level in &w.demand_levels {
                    let mut s = spec.clone();
                    s.name = format!("{name}@{}", level_tag(level));
                    for r in s.regions.iter_mut() {
                        if w.level_regions.is_empty() || w.level_regions.contains(&r.name) {
                            r.demand_mbps = level;
                        }
                    }
                    out.push((WorkloadSource::Synthetic(s), Some(level)));
                }
            }
        }
        Ok(out)
    }

    fn sweep_cells(&self) -> Result<Vec<(WorkloadSource, Option<f64>, PolicyConfig)>, HarnessError> {
        let s = self.file.sweep.as_ref().ok_or_else(|| config_err("ratio_sweep experiments need a [sweep] table"))?;
        let ratios = sweep_ratios(s)?;
        if s.demand_levels.is_empty() {
            return Err(config_err("[sweep] demand_levels is empty"));
        }
        let mut out = Vec::new();
        for &level in &s.demand_levels {
            let spec = WorkloadSpec {
                name: format!("sweep@{}", level_tag(level)),
                regions: vec![RegionSpec {
                    name: "active".into(),
                    pid: 1,
                    pages: s.pages,
                    read_fraction: s.read_fraction,
                    demand_mbps: level,
                    pattern: s.pattern,
                    active: true,
                    phases: vec![],
                }],
                footprint_class: None,
                latency_tolerance_ns: s.latency_tolerance_ns,
            };
            for &r in &ratios {
                out.push((WorkloadSource::Synthetic(spec.clone()), Some(level), PolicyConfig::Interleave { fast_share: r }));
            }
        }
        Ok(out)
    }

    /// Expands the experiment into validated cells.
    pub fn cells(&self, opts: &RunOptions) -> Result<Vec<Cell>, HarnessError> {
        let f = &self.file;
        let cal = self.calibration(opts)?;
        let seeds = opts.seeds.clone().unwrap_or_else(|| f.seeds.clone());
        if seeds.is_empty() {
            return Err(config_err("no seeds"));
        }
        for name in f.policy.keys() {
            if PolicyConfig::named(name).is_none() {
                return Err(config_err(format!("[policy.{name}]: unknown policy")));
            }
        }
        let combos: Vec<(WorkloadSource, Option<f64>, PolicyConfig)> = match f.kind {
            ExperimentKind::RatioSweep => self.sweep_cells()?,
            ExperimentKind::Matrix => {
                if f.policies.is_empty() || f.workloads.is_empty() {
                    return Err(config_err("matrix experiments need policies and workloads"));
                }
                if let Some(b) = &f.baseline {
                    if !f.policies.contains(b) {
                        return Err(config_err(format!("baseline {b:?} is not among the policies")));
                    }
                }
                let policies = f
                    .policies
                    .iter()
                    .map(|p| policy_config(p, f.policy.get(p)))
                    .collect::<Result<Vec<_>, _>>()?;
                let mut v = Vec::new();
                for (w, level) in self.workloads(&cal)? {
                    for p in &policies {
                        v.push((w.clone(), level, p.clone()));
                    }
                }
                v
            }
        };
        let mut cells = Vec::new();
        for &seed in &seeds {
            for (w, level, p) in &combos {
                let label = sanitize(&format!("{}__{}__s{}", w.name(), p, seed));
                let config = SimConfig {
                    name: label.clone(),
                    epoch_ms: f.epoch_ms,
                    horizon: f.horizon,
                    seed,
                    page_scale: f.page_scale,
                    calibration: cal.clone(),
                    workload: w.clone(),
                    policy: p.clone(),
                    counter_window: f.counter_window,
                    warmup_fraction: f.warmup_fraction,
                };
                config.validate().map_err(|e| config_err(format!("{label}: {e}")))?;
                cells.push(Cell { label, config, level: *level });
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for c in &cells {
            if !seen.insert(&c.label) {
                return Err(config_err(format!("duplicate cell {}", c.label)));
            }
        }
        Ok(cells)
    }
}

fn sweep_ratios(s: &SweepDef) -> Result<Vec<f64>, HarnessError> {
    let ratios = if s.ratios.is_empty() {
        let steps = 1.0 / s.grid_step;
        if !(s.grid_step > 0.0 && (steps - steps.round()).abs() < 1e-6) {
            return Err(config_err("[sweep] grid_step must divide 1"));
        }
        (0..=steps.round() as usize).map(|i| (1.0 - i as f64 * s.grid_step).max(0.0)).collect()
    } else {
        s.ratios.clone()
    };
    if ratios.is_empty() {
        return Err(config_err("[sweep] empty ratio grid"));
    }
    if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(config_err(format!("[sweep] ratio {bad} outside [0, 1]")));
    }
    Ok(ratios)
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub level: Option<f64>,
    pub summary: RunSummary,
}

/// Best FAST share at one demand level of a ratio sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepLevel {
    pub demand_mbps: f64,
    pub seed: u64,
    pub best_fast_share: f64,
    pub best_throughput_mbps: f64,
    /// Throughput with every page in FAST, if that share was swept.
    pub all_fast_throughput_mbps: Option<f64>,
    pub gain: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub name: String,
    pub kind: ExperimentKind,
    pub cells: Vec<CellResult>,
    pub comparison: Option<Comparison>,
    pub sweep: Vec<SweepLevel>,
    /// Directory artifacts were written to.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentReport {
    pub fn summaries(&self) -> impl Iterator<Item = &RunSummary> {
        self.cells.iter().map(|c| &c.summary)
    }

    /// Cells of one workload and policy, over seeds.
    pub fn find<'a>(&'a self, workload: &'a str, policy: &'a str) -> impl Iterator<Item = &'a CellResult> + 'a {
        self.cells.iter().filter(move |c| c.summary.workload == workload && c.summary.policy == policy)
    }
}

/// Per-(level, seed) best share; ties go to the larger FAST share.
pub fn sweep_levels(cells: &[CellResult]) -> Vec<SweepLevel> {
    let mut groups: BTreeMap<(u64, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for c in cells {
        let Some(level) = c.level else { continue };
        let share = match c.summary.policy.strip_prefix("interleave-").and_then(|s| s.split(':').next()) {
            Some(p) => p.parse::<f64>().unwrap_or(f64::NAN) / 100.0,
            None => continue,
        };
        groups.entry((level.to_bits(), c.summary.seed)).or_default().push((share, c.summary.steady_throughput_mbps));
    }
    let mut out: Vec<SweepLevel> = groups
        .into_iter()
        .map(|((bits, seed), mut v)| {
            v.sort_by(|a, b| b.0.total_cmp(&a.0));
            let mut best = v[0];
            for &x in &v[1..] {
                if x.1 > best.1 {
                    best = x;
                }
            }
            let all_fast = v.iter().find(|x| x.0 == 1.0).map(|x| x.1);
            SweepLevel {
                demand_mbps: f64::from_bits(bits),
                seed,
                best_fast_share: best.0,
                best_throughput_mbps: best.1,
                all_fast_throughput_mbps: all_fast,
                gain: all_fast.map(|a| if best.1 == a { 1.0 } else { best.1 / a }),
            }
        })
        .collect();
    out.sort_by(|a, b| a.demand_mbps.total_cmp(&b.demand_mbps).then(a.seed.cmp(&b.seed)));
    out
}

fn run_cell(cell: &Cell, cells_dir: Option<&Path>) -> Result<CellResult, HarnessError> {
    let out = engine::run(&cell.config).map_err(|source| HarnessError::Runtime { cell: cell.label.clone(), source })?;
    if let Some(dir) = cells_dir {
        let mpath = dir.join(format!("{}.metrics.csv", cell.label));
        let f = fs::File::create(&mpath).map_err(io_err(&mpath))?;
        write_metrics_csv(BufWriter::new(f), &out.metrics).map_err(|source| HarnessError::Runtime { cell: cell.label.clone(), source })?;
        let epath = dir.join(format!("{}.events.log", cell.label));
        let f = fs::File::create(&epath).map_err(io_err(&epath))?;
        out.events.write_to(BufWriter::new(f)).map_err(io_err(&epath))?;
    }
    Ok(CellResult { label: cell.label.clone(), level: cell.level, summary: out.summary })
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs cells on at most `workers` threads; results keep cell order.
pub fn run_cells(cells: &[Cell], workers: usize, cells_dir: Option<&Path>) -> Result<Vec<CellResult>, HarnessError> {
    let workers = if workers == 0 { default_workers() } else { workers }.min(cells.len()).max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<CellResult, HarnessError>>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let r = run_cell(&cells[i], cells_dir);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("result lock").into_iter().map(|r| r.expect("every cell ran")).collect()
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    cell: &'a str,
    workload: &'a str,
    policy: &'a str,
    seed: u64,
    level: Option<f64>,
    epochs: u64,
    throughput_mbps: f64,
    steady_throughput_mbps: f64,
    steady_latency_ns: f64,
    energy_nj: f64,
    energy_per_byte_nj: f64,
    migrated_pages: u64,
    migrated_bytes: u64,
    clamped_epochs: u64,
    violations: u64,
}

#[derive(Serialize)]
struct ProcessRow<'a> {
    cell: &'a str,
    workload: &'a str,
    policy: &'a str,
    seed: u64,
    level: Option<f64>,
    pid: Pid,
    steady_throughput_mbps: f64,
    steady_latency_ns: f64,
    fast_fraction: f64,
}

fn write_table<T: Serialize>(path: &Path, header: Option<&str>, rows: impl IntoIterator<Item = T>) -> Result<(), HarnessError> {
    let err = io_err(path);
    let file = fs::File::create(path).map_err(err)?;
    let mut w = BufWriter::new(file);
    if let Some(h) = header {
        writeln!(w, "{h}").map_err(io_err(path))?;
    }
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e.into() })?;
    }
    csv.flush().map_err(io_err(path))
}

fn write_artifacts(dir: &Path, report: &ExperimentReport, opts: &RunOptions) -> Result<(), HarnessError> {
    let header = if opts.no_timestamp {
        None
    } else {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Some(format!("# tiersim experiment={} generated_unix={secs}", report.name))
    };
    let header = header.as_deref();
    write_table(
        &dir.join("summary.csv"),
        header,
        report.cells.iter().map(|c| {
            let s = &c.summary;
            SummaryRow {
                cell: &c.label,
                workload: &s.workload,
                policy: &s.policy,
                seed: s.seed,
                level: c.level,
                epochs: s.epochs,
                throughput_mbps: s.throughput_mbps,
                steady_throughput_mbps: s.steady_throughput_mbps,
                steady_latency_ns: s.steady_latency_ns,
                energy_nj: s.energy_nj,
                energy_per_byte_nj: s.energy_per_byte(),
                migrated_pages: s.migrated_pages,
                migrated_bytes: s.migrated_bytes,
                clamped_epochs: s.clamped_epochs,
                violations: s.invariants.total(),
            }
        }),
    )?;
    let procs = report.cells.iter().flat_map(|c| {
        c.summary.processes.iter().map(move |(&pid, p)| ProcessRow {
            cell: &c.label,
            workload: &c.summary.workload,
            policy: &c.summary.policy,
            seed: c.summary.seed,
            level: c.level,
            pid,
            steady_throughput_mbps: p.steady_throughput_mbps,
            steady_latency_ns: p.steady_latency_ns,
            fast_fraction: p.fast_fraction,
        })
    });
    write_table(&dir.join("processes.csv"), header, procs)?;
    if let Some(c) = &report.comparison {
        write_table(&dir.join("comparison.csv"), header, &c.rows)?;
        write_table(&dir.join("geomean.csv"), header, &c.geomean)?;
    }
    if !report.sweep.is_empty() {
        write_table(&dir.join("ratio_sweep.csv"), header, &report.sweep)?;
    }
    Ok(())
}

/// Validates and (unless `dry_run`) runs every cell of an experiment.
pub fn cmd_run(exp: &Experiment, opts: &RunOptions) -> Result<(ExperimentReport, Vec<Cell>), HarnessError> {
    let cells = exp.cells(opts)?;
    let mut report = ExperimentReport {
        name: exp.file.name.clone(),
        kind: exp.file.kind,
        cells: Vec::new(),
        comparison: None,
        sweep: Vec::new(),
        out_dir: None,
    };
    if opts.dry_run {
        return Ok((report, cells));
    }
    let dir = opts.out.as_ref().map(|o| o.join(sanitize(&exp.file.name)));
    let cells_dir = dir.as_ref().map(|d| d.join("cells"));
    if let Some(cd) = &cells_dir {
        fs::create_dir_all(cd).map_err(io_err(cd))?;
    }
    report.cells = run_cells(&cells, opts.workers, cells_dir.as_deref())?;
    if let Some(b) = &exp.file.baseline {
        let runs: Vec<RunSummary> = report.cells.iter().map(|c| c.summary.clone()).collect();
        let base = policy_config(b, exp.file.policy.get(b))?.to_string();
        report.comparison = Some(compare(&runs, &base).map_err(|source| HarnessError::Runtime { cell: "comparison".into(), source })?);
    }
    if exp.file.kind == ExperimentKind::RatioSweep {
        report.sweep = sweep_levels(&report.cells);
    }
    if let Some(d) = &dir {
        write_artifacts(d, &report, opts)?;
        report.out_dir = Some(d.clone());
    }
    Ok((report, cells))
}
