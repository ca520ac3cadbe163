//! The epoch loop: workload → page table → policy → tiers → counters.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::calibration::Calibration;
use crate::events::EventLog;
use crate::page::{MigrationReport, PageError, PageTable, Pid};
use crate::policy::{PolicyConfig, PolicyContext, PolicyError};
use crate::tier::{CounterHistory, MemorySystem, PerTier, TierError, TierId, Traffic, MB};
use crate::workload::{AccessBatch, WorkloadGenerator, WorkloadSource};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("allocation failed after {allocated} pages: {source}")]
    Allocation { allocated: usize, source: PageError },
    #[error("epoch {epoch}: {source}")]
    Page { epoch: u64, source: PageError },
    #[error("epoch {epoch}: {source}")]
    Policy { epoch: u64, source: PolicyError },
    #[error("epoch {epoch}: {source}")]
    Tier { epoch: u64, source: TierError },
    #[error("cannot compare runs: {0}")]
    Compare(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub name: String,
    pub epoch_ms: f64,
    pub horizon: u64,
    pub seed: u64,
    /// Base 4 KiB pages represented by one simulated page.
    pub page_scale: u64,
    pub calibration: Calibration,
    pub workload: WorkloadSource,
    pub policy: PolicyConfig,
    /// Epochs of counter history kept for policies.
    pub counter_window: usize,
    /// Leading fraction of the run excluded from steady-state figures.
    pub warmup_fraction: f64,
}

impl SimConfig {
    pub fn new(name: impl Into<String>, workload: WorkloadSource, policy: PolicyConfig) -> Self {
        SimConfig {
            name: name.into(),
            epoch_ms: 10.0,
            horizon: 1000,
            seed: 1,
            page_scale: 1,
            calibration: Calibration::default(),
            workload,
            policy,
            counter_window: 1000,
            warmup_fraction: 0.5,
        }
    }

    pub fn epoch_s(&self) -> f64 {
        self.epoch_ms / 1000.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.epoch_ms.is_finite() && self.epoch_ms > 0.0) {
            return bad(format!("epoch_ms must be positive, got {}", self.epoch_ms));
        }
        if self.page_scale == 0 {
            return bad("page_scale must be positive".into());
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return bad("warmup_fraction must lie in [0, 1)".into());
        }
        if self.counter_window == 0 {
            return bad("counter_window must be positive".into());
        }
        match &self.workload {
            WorkloadSource::Synthetic(spec) => {
                spec.validate().map_err(|e| SimError::Config(e.to_string()))?;
                let capacity = self.calibration.fast.capacity_pages + self.calibration.slow.capacity_pages;
                if spec.total_pages() > capacity {
                    return bad(format!("workload needs {} pages, tiers hold {}", spec.total_pages(), capacity));
                }
            }
            WorkloadSource::Trace(t) => {
                if (t.epoch_ms - self.epoch_ms).abs() > 1e-9 {
                    return bad(format!("trace epoch {} ms differs from run epoch {} ms", t.epoch_ms, self.epoch_ms));
                }
            }
        }
        self.policy.build(self.epoch_ms).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(())
    }
}

/// One row of the per-epoch metrics CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    pub fast_offered_mbps: f64,
    pub fast_achieved_mbps: f64,
    pub fast_latency_ns: f64,
    pub fast_energy_nj: f64,
    pub fast_backlog_bytes: f64,
    pub slow_offered_mbps: f64,
    pub slow_achieved_mbps: f64,
    pub slow_latency_ns: f64,
    pub slow_energy_nj: f64,
    pub slow_backlog_bytes: f64,
    /// Application bytes serviced this epoch, as a rate.
    pub app_mbps: f64,
    pub migrated_pages: usize,
    pub migrated_bytes: u64,
    pub promoted: usize,
    pub demoted: usize,
    pub fast_used: u64,
    pub slow_used: u64,
    /// Smallest per-process issue factor.
    pub issue_factor: f64,
    pub clamped: bool,
}

impl EpochMetrics {
    pub fn tier(&self, t: TierId) -> (f64, f64, f64) {
        match t {
            TierId::Fast => (self.fast_offered_mbps, self.fast_achieved_mbps, self.fast_latency_ns),
            TierId::Slow => (self.slow_offered_mbps, self.slow_achieved_mbps, self.slow_latency_ns),
        }
    }
}

pub fn write_metrics_csv<W: Write>(mut out: W, rows: &[EpochMetrics]) -> Result<(), SimError> {
    if rows.is_empty() {
        writeln!(out, "{METRICS_HEADER}")?;
        return Ok(());
    }
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InvariantReport {
    pub page_count: u64,
    pub exchange_occupancy: u64,
    pub work_conservation: u64,
    pub migration_rate: u64,
}

impl InvariantReport {
    pub fn total(&self) -> u64 {
        self.page_count + self.exchange_occupancy + self.work_conservation + self.migration_rate
    }

    pub fn merge(&mut self, o: &InvariantReport) {
        self.page_count += o.page_count;
        self.exchange_occupancy += o.exchange_occupancy;
        self.work_conservation += o.work_conservation;
        self.migration_rate += o.migration_rate;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProcessSummary {
    pub steady_throughput_mbps: f64,
    /// Byte-weighted latency of the process's serviced traffic.
    pub steady_latency_ns: f64,
    /// Share of the process's steady-state bytes served by FAST.
    pub fast_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub workload: String,
    pub policy: String,
    pub seed: u64,
    pub epochs: u64,
    /// Application bytes serviced over the whole run divided by its length.
    pub throughput_mbps: f64,
    pub steady_throughput_mbps: f64,
    pub steady_latency_ns: f64,
    pub energy_nj: f64,
    pub app_bytes: f64,
    pub migrated_pages: u64,
    pub migrated_bytes: u64,
    pub clamped_epochs: u64,
    #[serde(skip)]
    pub processes: BTreeMap<Pid, ProcessSummary>,
    #[serde(skip)]
    pub invariants: InvariantReport,
    /// Tier setup the run used; comparisons require it to match.
    #[serde(skip)]
    pub tiers: String,
}

impl RunSummary {
    /// Energy per serviced application byte.
    pub fn energy_per_byte(&self) -> f64 {
        if self.app_bytes > 0.0 {
            self.energy_nj / self.app_bytes
        } else {
            0.0
        }
    }

    pub fn process(&self, pid: Pid) -> ProcessSummary {
        self.processes.get(&pid).cloned().unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub metrics: Vec<EpochMetrics>,
    pub events: EventLog,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    App(Pid),
    Migration,
}

const BISECTION_STEPS: usize = 48;
const ISSUE_ROUNDS: usize = 20;
const WORK_TOLERANCE: f64 = 1e-6;

/// Per-process issue factors: each process slows down in proportion to how
/// far the latency it sees exceeds its tolerance, `f = min(1, tol / L(f))`.
/// Latency rises with every factor, so each coordinate has a unique root,
/// found by bisection; processes are swept until the factors settle.
fn issue_factors(
    memory: &MemorySystem,
    nominal: &BTreeMap<Pid, PerTier<Traffic>>,
    fixed: &PerTier<Traffic>,
    tolerance: Option<f64>,
    epoch_s: f64,
) -> BTreeMap<Pid, f64> {
    let mut f: BTreeMap<Pid, f64> = nominal.keys().map(|&p| (p, 1.0)).collect();
    let Some(tol) = tolerance else { return f };
    let latency_of = |f: &BTreeMap<Pid, f64>, pid: Pid| {
        let mut offered = *fixed;
        for (p, t) in nominal {
            for tier in TierId::ALL {
                offered[tier].add(t[tier].scaled(f[p]));
            }
        }
        let t = &nominal[&pid];
        let bytes = t[TierId::Fast].total() + t[TierId::Slow].total();
        TierId::ALL
            .iter()
            .map(|&tier| t[tier].total() * memory.operating_point(tier, offered[tier], epoch_s).latency_ns)
            .sum::<f64>()
            / bytes
    };
    let active: Vec<Pid> = nominal
        .iter()
        .filter(|(_, t)| t[TierId::Fast].total() + t[TierId::Slow].total() > 0.0)
        .map(|(&p, _)| p)
        .collect();
    for _ in 0..ISSUE_ROUNDS {
        let mut change: f64 = 0.0;
        for &pid in &active {
            let old = f[&pid];
            // excess(x) = x - min(1, tol / L(x)) is increasing in x.
            let excess = |x: f64, f: &mut BTreeMap<Pid, f64>| {
                f.insert(pid, x);
                x - (tol / latency_of(f, pid)).min(1.0)
            };
            let root = if excess(1.0, &mut f) <= 0.0 {
                1.0
            } else {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..BISECTION_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if excess(mid, &mut f) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            f.insert(pid, root);
            change = change.max((root - old).abs());
        }
        if active.len() <= 1 || change < 1e-9 {
            break;
        }
    }
    f
}

fn tiers_fingerprint(c: &Calibration, page_scale: u64) -> String {
    format!("fast={} slow={} scale={}", c.fast.capacity_pages, c.slow.capacity_pages, page_scale)
}

pub fn run(cfg: &SimConfig) -> Result<RunOutput, SimError> {
    cfg.validate()?;
    let epoch_s = cfg.epoch_s();
    let memory = cfg.calibration.memory_system();
    let mut policy = cfg.policy.build(cfg.epoch_ms).map_err(|e| SimError::Config(e.to_string()))?;
    let capacity = PerTier::new(cfg.calibration.fast.capacity_pages, cfg.calibration.slow.capacity_pages);
    let mut table = PageTable::new(capacity, cfg.page_scale);
    for pid in cfg.workload.pids() {
        table.bind(pid);
    }
    let mut log = EventLog::new();
    log.record(0, "start", &[("run", &cfg.name.replace(' ', "_")), ("policy", &cfg.policy), ("seed", &cfg.seed)]);
    let order = cfg.workload.allocation_order();
    for (i, (key, kind)) in order.iter().enumerate() {
        let hint = policy.placement(i, *key);
        table
            .allocate(key.pid, key.vaddr, hint, *kind)
            .map_err(|source| SimError::Allocation { allocated: i, source })?;
    }
    let occ = table.occupancy();
    log.record(0, "allocated", &[("fast", &occ.used[TierId::Fast]), ("slow", &occ.used[TierId::Slow])]);

    let generator = match &cfg.workload {
        WorkloadSource::Synthetic(spec) => Some(WorkloadGenerator::new(spec.clone(), cfg.seed, epoch_s, table.page_bytes())),
        WorkloadSource::Trace(_) => None,
    };
    let tolerance = cfg.workload.latency_tolerance_ns();
    let total_pages = table.len();
    let rate_bound = policy.rate_bound();
    let steady_from = (cfg.horizon as f64 * cfg.warmup_fraction).floor() as u64;

    let mut counters = CounterHistory::new(epoch_s, cfg.counter_window);
    let mut backlog: BTreeMap<(TierId, Source), Traffic> = BTreeMap::new();
    let mut metrics = Vec::with_capacity(cfg.horizon as usize);
    let mut inv = InvariantReport::default();
    let (mut offered_total, mut served_total) = (0.0f64, 0.0f64);
    let mut bucket: (u64, usize) = (0, 0);
    let mut app_bytes = 0.0;
    let mut energy = 0.0;
    let mut migrated = MigrationReport::default();
    let mut clamped_epochs = 0;
    // Steady-state accumulators per pid: bytes, latency-weighted bytes, FAST bytes.
    let mut steady: BTreeMap<Pid, (f64, f64, f64)> = BTreeMap::new();

    for epoch in 0..cfg.horizon {
        let before = table.occupancy();
        let mut ctx = PolicyContext {
            epoch,
            epoch_s,
            table: &mut table,
            counters: &counters,
            memory: &memory,
            log: &mut log,
            moved: MigrationReport::default(),
        };
        policy.on_epoch(&mut ctx).map_err(|source| SimError::Policy { epoch, source })?;
        let batch = match (&generator, &cfg.workload) {
            (Some(g), _) => g.generate(epoch),
            (None, WorkloadSource::Trace(t)) => t.batch(epoch),
            (None, _) => AccessBatch::empty(epoch),
        };
        let traffic = ctx.table.apply_access_batch(&batch).map_err(|source| SimError::Page { epoch, source })?;
        policy.after_access(&mut ctx, &batch).map_err(|source| SimError::Policy { epoch, source })?;
        let moved = ctx.moved;
        let pending = table.take_pending_traffic();

        // Closed-loop issue against the latency the epoch's load produces.
        let mut fixed = pending;
        for ((tier, _), t) in &backlog {
            fixed[*tier].add(*t);
        }
        let factors = issue_factors(&memory, &traffic.per_pid, &fixed, tolerance, epoch_s);

        let mut offered: BTreeMap<(TierId, Source), Traffic> = std::mem::take(&mut backlog);
        for tier in TierId::ALL {
            if !pending[tier].is_zero() {
                offered.entry((tier, Source::Migration)).or_default().add(pending[tier]);
                offered_total += pending[tier].total();
            }
        }
        for (pid, t) in &traffic.per_pid {
            for tier in TierId::ALL {
                let issued = t[tier].scaled(factors[pid]);
                if !issued.is_zero() {
                    offered.entry((tier, Source::App(*pid))).or_default().add(issued);
                    offered_total += issued.total();
                }
            }
        }

        let mut row = EpochMetrics { epoch, clamped: batch.clamped, ..Default::default() };
        let mut served_app = PerTier::<Traffic>::default();
        for tier in TierId::ALL {
            let mut tier_offered = Traffic::default();
            for t in offered.iter().filter(|((t, _), _)| *t == tier).map(|(_, x)| x) {
                tier_offered.add(*t);
            }
            let out = memory.service_epoch(tier, tier_offered, epoch_s).map_err(|source| SimError::Tier { epoch, source })?;
            let phi = if tier_offered.total() > 0.0 { out.served.total() / tier_offered.total() } else { 0.0 };
            let mut tier_backlog = 0.0;
            for ((t, src), x) in offered.iter().filter(|((t, _), _)| *t == tier) {
                let served = x.scaled(phi);
                served_total += served.total();
                let left = Traffic::new(x.read_bytes - served.read_bytes, x.write_bytes - served.write_bytes);
                if left.total() > 0.0 {
                    tier_backlog += left.total();
                    backlog.insert((*t, *src), left);
                }
                if let Source::App(pid) = src {
                    served_app[tier].add(served);
                    if epoch >= steady_from {
                        let e = steady.entry(*pid).or_default();
                        e.0 += served.total();
                        e.1 += served.total() * out.mean_latency_ns;
                        if tier == TierId::Fast {
                            e.2 += served.total();
                        }
                    }
                }
            }
            energy += out.energy_nj;
            let (offered_mbps, achieved, energy_nj) = (tier_offered.total() / epoch_s / MB, out.served.total() / epoch_s / MB, out.energy_nj);
            match tier {
                TierId::Fast => {
                    row.fast_offered_mbps = offered_mbps;
                    row.fast_achieved_mbps = achieved;
                    row.fast_latency_ns = out.mean_latency_ns;
                    row.fast_energy_nj = energy_nj;
                    row.fast_backlog_bytes = tier_backlog;
                }
                TierId::Slow => {
                    row.slow_offered_mbps = offered_mbps;
                    row.slow_achieved_mbps = achieved;
                    row.slow_latency_ns = out.mean_latency_ns;
                    row.slow_energy_nj = energy_nj;
                    row.slow_backlog_bytes = tier_backlog;
                }
            }
        }
        counters.record(served_app);
        let app = served_app[TierId::Fast].total() + served_app[TierId::Slow].total();
        app_bytes += app;
        row.app_mbps = app / epoch_s / MB;
        row.issue_factor = factors.values().copied().fold(1.0, f64::min);
        row.migrated_pages = moved.moved;
        row.migrated_bytes = moved.bytes;
        row.promoted = moved.promoted;
        row.demoted = moved.demoted;
        let occ = table.occupancy();
        row.fast_used = occ.used[TierId::Fast];
        row.slow_used = occ.used[TierId::Slow];
        migrated.merge(moved);
        if batch.clamped {
            clamped_epochs += 1;
        }

        // Invariants.
        if occ.used[TierId::Fast] + occ.used[TierId::Slow] != total_pages as u64 || table.len() != total_pages {
            inv.page_count += 1;
        }
        if let Some((period, cap)) = rate_bound {
            let delta = occ.used[TierId::Fast] as i64 - before.used[TierId::Fast] as i64;
            if delta != moved.promoted as i64 - moved.demoted as i64 {
                inv.exchange_occupancy += 1;
            }
            let b = epoch / period;
            if b != bucket.0 {
                bucket = (b, 0);
            }
            bucket.1 += moved.moved;
            if bucket.1 > cap && bucket.1 - moved.moved <= cap {
                inv.migration_rate += 1;
                log.record(epoch, "rate_violation", &[("pages", &bucket.1), ("cap", &cap)]);
            }
        }
        let pending_backlog: f64 = backlog.values().map(|t| t.total()).sum();
        if (served_total + pending_backlog - offered_total).abs() > WORK_TOLERANCE * offered_total.max(1.0) {
            inv.work_conservation += 1;
        }
        metrics.push(row);
    }

    let wall = cfg.horizon as f64 * epoch_s;
    let steady_wall = (cfg.horizon - steady_from) as f64 * epoch_s;
    let mut processes = BTreeMap::new();
    let (mut sb, mut sl) = (0.0, 0.0);
    for pid in cfg.workload.pids() {
        let (b, l, f) = steady.get(&pid).copied().unwrap_or_default();
        sb += b;
        sl += l;
        processes.insert(
            pid,
            ProcessSummary {
                steady_throughput_mbps: if steady_wall > 0.0 { b / steady_wall / MB } else { 0.0 },
                steady_latency_ns: if b > 0.0 { l / b } else { 0.0 },
                fast_fraction: if b > 0.0 { f / b } else { 0.0 },
            },
        );
    }
    let summary = RunSummary {
        name: cfg.name.clone(),
        workload: cfg.workload.name().to_string(),
        policy: cfg.policy.to_string(),
        seed: cfg.seed,
        epochs: cfg.horizon,
        throughput_mbps: if wall > 0.0 { app_bytes / wall / MB } else { 0.0 },
        steady_throughput_mbps: if steady_wall > 0.0 { sb / steady_wall / MB } else { 0.0 },
        steady_latency_ns: if sb > 0.0 { sl / sb } else { 0.0 },
        energy_nj: energy,
        app_bytes,
        migrated_pages: migrated.moved as u64,
        migrated_bytes: migrated.bytes,
        clamped_epochs,
        processes,
        invariants: inv,
        tiers: tiers_fingerprint(&cfg.calibration, cfg.page_scale),
    };
    log.record(
        cfg.horizon,
        "end",
        &[
            ("throughput_mbps", &format!("{:.3}", summary.throughput_mbps)),
            ("migrated_pages", &summary.migrated_pages),
            ("violations", &inv.total()),
        ],
    );
    Ok(RunOutput { summary, metrics, events: log })
}

// ---------------------------------------------------------------------------
// Comparison

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub workload: String,
    pub policy: String,
    pub seeds: usize,
    pub throughput_mbps: f64,
    /// Mean over seeds of throughput relative to the baseline.
    pub speedup: f64,
    pub speedup_min: f64,
    pub speedup_max: f64,
    /// Energy per application byte relative to the baseline.
    pub energy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeomeanRow {
    pub policy: String,
    pub workloads: usize,
    pub geomean_speedup: f64,
    pub geomean_energy_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub geomean: Vec<GeomeanRow>,
    /// Rank correlation between energy gain and speedup over non-baseline rows.
    pub energy_speedup_rank_correlation: Option<f64>,
}

impl Comparison {
    pub fn geomean_of(&self, policy: &str) -> Option<f64> {
        self.geomean.iter().find(|g| g.policy == policy).map(|g| g.geomean_speedup)
    }
}

pub fn geomean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

fn ratio(x: f64, base: f64) -> f64 {
    if x == base {
        1.0
    } else {
        x / base
    }
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation; `None` with fewer than three points or no spread.
pub fn rank_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 3 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Speedup and energy of every (workload, policy) against `baseline`,
/// paired seed by seed, plus geometric means across workloads.
pub fn compare(runs: &[RunSummary], baseline: &str) -> Result<Comparison, SimError> {
    let mut by_wl: BTreeMap<&str, BTreeMap<&str, BTreeMap<u64, &RunSummary>>> = BTreeMap::new();
    for r in runs {
        by_wl.entry(&r.workload).or_default().entry(&r.policy).or_default().insert(r.seed, r);
    }
    let mut rows = Vec::new();
    for (wl, policies) in &by_wl {
        let base = policies
            .get(baseline)
            .ok_or_else(|| SimError::Compare(format!("workload {wl} has no {baseline} run")))?;
        for (policy, seeds) in policies {
            let mut speedups = Vec::new();
            let mut energy = Vec::new();
            let mut thr = Vec::new();
            for (seed, r) in seeds {
                let b = base.get(seed).ok_or_else(|| SimError::Compare(format!("{wl}: no {baseline} run for seed {seed}")))?;
                if r.tiers != b.tiers {
                    return Err(SimError::Compare(format!("{wl}: {policy} ran on {} but {baseline} on {}", r.tiers, b.tiers)));
                }
                speedups.push(ratio(r.throughput_mbps, b.throughput_mbps));
                energy.push(ratio(r.energy_per_byte(), b.energy_per_byte()));
                thr.push(r.throughput_mbps);
            }
            let n = speedups.len() as f64;
            rows.push(ComparisonRow {
                workload: wl.to_string(),
                policy: policy.to_string(),
                seeds: speedups.len(),
                throughput_mbps: thr.iter().sum::<f64>() / n,
                speedup: speedups.iter().sum::<f64>() / n,
                speedup_min: speedups.iter().copied().fold(f64::INFINITY, f64::min),
                speedup_max: speedups.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                energy_ratio: energy.iter().sum::<f64>() / n,
            });
        }
    }
    let mut per_policy: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &rows {
        let e = per_policy.entry(&r.policy).or_default();
        e.0.push(r.speedup);
        e.1.push(r.energy_ratio);
    }
    let geomean = per_policy
        .into_iter()
        .map(|(p, (s, e))| GeomeanRow { policy: p.to_string(), workloads: s.len(), geomean_speedup: geomean(&s), geomean_energy_ratio: geomean(&e) })
        .collect();
    let others: Vec<&ComparisonRow> = rows.iter().filter(|r| r.policy != baseline).collect();
    let gains: Vec<f64> = others.iter().map(|r| 1.0 / r.energy_ratio).collect();
    let speed: Vec<f64> = others.iter().map(|r| r.speedup).collect();
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
        geomean,
        energy_speedup_rank_correlation: rank_correlation(&gains, &speed),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::HyPlacerConfig;
    use crate::workload::{AccessPattern, RegionSpec, WorkloadSpec};

    fn region(name: &str, pid: Pid, pages: u64, rf: f64, demand: f64) -> RegionSpec {
        RegionSpec {
            name: name.into(),
            pid,
            pages,
            read_fraction: rf,
            demand_mbps: demand,
            pattern: AccessPattern::Sequential,
            active: true,
            phases: vec![],
        }
    }

    fn small_cfg(policy: PolicyConfig, regions: Vec<RegionSpec>) -> SimConfig {
        let spec = WorkloadSpec { name: "w".into(), regions, footprint_class: None, latency_tolerance_ns: Some(150.0) };
        let mut cfg = SimConfig::new("t", WorkloadSource::Synthetic(spec), policy);
        cfg.calibration = Calibration::default().with_capacities(64, 512);
        cfg.page_scale = 64;
        cfg.horizon = 300;
        cfg
    }

    #[test]
    fn zero_horizon_is_empty() {
        let mut cfg = small_cfg(PolicyConfig::Admdefault, vec![region("a", 1, 10, 1.0, 1000.0)]);
        cfg.horizon = 0;
        let out = run(&cfg).unwrap();
        assert!(out.metrics.is_empty());
        assert_eq!(out.summary.throughput_mbps, 0.0);
    }

    #[test]
    fn small_footprint_is_served_by_fast() {
        let mut cfg = small_cfg(PolicyConfig::Admdefault, vec![region("a", 1, 50, 0.7, 5000.0)]);
        cfg.page_scale = 512;
        let out = run(&cfg).unwrap();
        assert_eq!(out.summary.clamped_epochs, 0);
        assert!(out.metrics[150..].iter().all(|m| m.slow_offered_mbps == 0.0));
        assert_eq!(out.summary.process(1).fast_fraction, 1.0);
        assert!((out.summary.steady_throughput_mbps - 5000.0).abs() < 1.0);
    }

    #[test]
    fn identical_seeds_give_identical_logs() {
        let mut wl = region("a", 1, 300, 0.6, 20_000.0);
        wl.pattern = AccessPattern::Random;
        let hp = PolicyConfig::Hyplacer(HyPlacerConfig { max_pages_per_activation: 64, ..Default::default() });
        let cfg = small_cfg(hp, vec![region("b", 1, 64, 1.0, 1000.0), wl]);
        let (a, b) = (run(&cfg).unwrap(), run(&cfg).unwrap());
        assert_eq!(a.events, b.events);
        assert_eq!(a.metrics, b.metrics);
        assert!(a.summary.migrated_pages > 0);
        assert_eq!(a.summary.invariants.total(), 0, "{:?}", a.summary.invariants);
    }

    #[test]
    fn work_is_conserved_under_overload() {
        // Open loop, far above SLOW's peak: backlog must build up and be
        // accounted for.
        let mut cfg = small_cfg(PolicyConfig::Admdefault, vec![region("a", 1, 400, 0.0, 30_000.0)]);
        if let WorkloadSource::Synthetic(s) = &mut cfg.workload {
            s.latency_tolerance_ns = None;
        }
        cfg.page_scale = 512;
        let out = run(&cfg).unwrap();
        assert!(out.metrics.last().unwrap().slow_backlog_bytes > 0.0);
        assert_eq!(out.summary.invariants, InvariantReport::default());
    }

    #[test]
    fn allocation_failure_is_reported() {
        let mut cfg = small_cfg(PolicyConfig::Admdefault, vec![region("a", 1, 600, 1.0, 10.0)]);
        cfg.calibration = Calibration::default().with_capacities(64, 512);
        assert!(matches!(run(&cfg), Err(SimError::Config(_))));
    }

    #[test]
    fn geomean_arithmetic() {
        assert!((geomean(&[2.0, 8.0]) - 4.0).abs() < 1e-12);
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(rank_correlation(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
    }

    fn summary(workload: &str, policy: &str, seed: u64, thr: f64) -> RunSummary {
        RunSummary {
            name: format!("{workload}-{policy}"),
            workload: workload.into(),
            policy: policy.into(),
            seed,
            epochs: 10,
            throughput_mbps: thr,
            steady_throughput_mbps: thr,
            steady_latency_ns: 100.0,
            energy_nj: thr,
            app_bytes: thr * 2.0,
            migrated_pages: 0,
            migrated_bytes: 0,
            clamped_epochs: 0,
            processes: BTreeMap::new(),
            invariants: InvariantReport::default(),
            tiers: "x".into(),
        }
    }

    #[test]
    fn comparison_against_self_and_baseline() {
        let runs = vec![
            summary("A", "admdefault", 1, 10.0),
            summary("A", "hyplacer", 1, 20.0),
            summary("B", "admdefault", 1, 10.0),
            summary("B", "hyplacer", 1, 80.0),
        ];
        let c = compare(&runs, "admdefault").unwrap();
        assert_eq!(c.geomean_of("admdefault"), Some(1.0));
        assert!((c.geomean_of("hyplacer").unwrap() - 4.0).abs() < 1e-12);
        let base = c.rows.iter().find(|r| r.policy == "admdefault").unwrap();
        assert_eq!((base.speedup, base.energy_ratio), (1.0, 1.0));
        let single = compare(&runs[..1], "admdefault").unwrap();
        assert_eq!(single.rows[0].speedup, 1.0);
    }

    #[test]
    fn comparison_refuses_mismatch() {
        let mut other = summary("A", "hyplacer", 1, 20.0);
        other.tiers = "y".into();
        assert!(compare(&[summary("A", "admdefault", 1, 10.0), other], "admdefault").is_err());
        assert!(compare(&[summary("A", "hyplacer", 1, 10.0)], "admdefault").is_err());
    }

    #[test]
    fn metrics_csv_has_documented_header() {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[EpochMetrics::default()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        let mut empty = Vec::new();
        write_metrics_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().trim_end(), METRICS_HEADER);
    }
}

/// Header of the per-epoch metrics CSV.
pub const METRICS_HEADER: &str = "epoch,fast_offered_mbps,fast_achieved_mbps,fast_latency_ns,fast_energy_nj,fast_backlog_bytes,\
slow_offered_mbps,slow_achieved_mbps,slow_latency_ns,slow_energy_nj,slow_backlog_bytes,app_mbps,migrated_pages,\
migrated_bytes,promoted,demoted,fast_used,slow_used,issue_factor,clamped";
