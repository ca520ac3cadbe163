//! Synthetic and trace-backed memory demand.
//!
//! A [`WorkloadSpec`] is a list of regions, each a contiguous run of pages of
//! one process with its own demand, read/write mix and access pattern.
//! Generation is a pure function of `(spec, epoch, seed)`.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::page::{AccessKind, PageKey, Pid, Vpn};
use crate::tier::{LINE_SIZE, MB, PAGE_SIZE};

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("unknown benchmark profile {0:?}")]
    UnknownProfile(String),
    #[error("profile {name}: {msg}")]
    Profile { name: String, msg: String },
    #[error("region {region:?}: {msg}")]
    Region { region: String, msg: String },
    #[error("trace line {line}: {msg}")]
    Trace { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessPattern {
    Sequential,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start_epoch: u64,
    pub demand_mbps: f64,
    pub read_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub name: String,
    #[serde(default = "default_pid")]
    pub pid: Pid,
    pub pages: u64,
    pub read_fraction: f64,
    pub demand_mbps: f64,
    #[serde(default = "default_pattern")]
    pub pattern: AccessPattern,
    #[serde(default = "default_true")]
    pub active: bool,
    #[serde(default)]
    pub phases: Vec<Phase>,
}

fn default_pid() -> Pid {
    1
}
fn default_pattern() -> AccessPattern {
    AccessPattern::Sequential
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FootprintClass {
    Small,
    Medium,
    Large,
}

impl FootprintClass {
    pub const ALL: [FootprintClass; 3] = [FootprintClass::Small, FootprintClass::Medium, FootprintClass::Large];

    /// Footprint relative to fast-tier capacity.
    pub fn factor(self) -> f64 {
        match self {
            FootprintClass::Small => 0.85,
            FootprintClass::Medium => 1.5,
            FootprintClass::Large => 3.5,
        }
    }

    /// Accepted footprint range relative to fast-tier capacity.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            FootprintClass::Small => (0.0, 1.0),
            FootprintClass::Medium => (1.3, 1.7),
            FootprintClass::Large => (3.0, 4.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FootprintClass::Small => "SMALL",
            FootprintClass::Medium => "MEDIUM",
            FootprintClass::Large => "LARGE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SMALL" | "S" => Some(FootprintClass::Small),
            "MEDIUM" | "M" => Some(FootprintClass::Medium),
            "LARGE" | "L" => Some(FootprintClass::Large),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub footprint_class: Option<FootprintClass>,
    /// Mean access latency up to which every process sustains its nominal
    /// demand; above it issue slows in proportion. `None` issues open loop.
    #[serde(default)]
    pub latency_tolerance_ns: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessEntry {
    pub key: PageKey,
    /// 64B lines read.
    pub reads: u64,
    /// 64B lines written.
    pub writes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessBatch {
    pub epoch: u64,
    pub entries: Vec<AccessEntry>,
    /// Some region asked for more bytes than its pages can carry in one epoch.
    pub clamped: bool,
}

impl AccessBatch {
    pub fn empty(epoch: u64) -> Self {
        AccessBatch { epoch, entries: Vec::new(), clamped: false }
    }

    pub fn lines(&self) -> (u64, u64) {
        self.entries.iter().fold((0, 0), |(r, w), e| (r + e.reads, w + e.writes))
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl WorkloadSpec {
    pub fn total_pages(&self) -> u64 {
        self.regions.iter().map(|r| r.pages).sum()
    }

    pub fn pids(&self) -> BTreeSet<Pid> {
        self.regions.iter().map(|r| r.pid).collect()
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        for r in &self.regions {
            let bad = |msg: &str| Err(WorkloadError::Region { region: r.name.clone(), msg: msg.into() });
            if r.pages == 0 {
                return bad("pages must be positive");
            }
            let fractions = std::iter::once(r.read_fraction).chain(r.phases.iter().map(|p| p.read_fraction));
            let demands = std::iter::once(r.demand_mbps).chain(r.phases.iter().map(|p| p.demand_mbps));
            if fractions.into_iter().any(|f| !(0.0..=1.0).contains(&f)) {
                return bad("read_fraction must lie in [0, 1]");
            }
            if demands.into_iter().any(|d| !(d.is_finite() && d >= 0.0)) {
                return bad("demand must be finite and non-negative");
            }
            if r.phases.windows(2).any(|w| w[1].start_epoch <= w[0].start_epoch) {
                return bad("phase starts must be strictly increasing");
            }
        }
        if let Some(tol) = self.latency_tolerance_ns {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(WorkloadError::Region { region: self.name.clone(), msg: "latency tolerance must be positive".into() });
            }
        }
        Ok(())
    }

    /// First virtual page of every region; regions of one process are laid
    /// out back to back in listing order.
    pub fn region_bases(&self) -> Vec<Vpn> {
        let mut next = std::collections::BTreeMap::<Pid, Vpn>::new();
        self.regions
            .iter()
            .map(|r| {
                let slot = next.entry(r.pid).or_insert(0);
                let base = *slot;
                *slot += r.pages;
                base
            })
            .collect()
    }

    /// Pages in initialization order with the kind of their first access.
    /// Regions that are not read-only are initialized with stores.
    pub fn allocation_order(&self) -> Vec<(PageKey, AccessKind)> {
        let bases = self.region_bases();
        let mut out = Vec::with_capacity(self.total_pages() as usize);
        for (r, base) in self.regions.iter().zip(bases) {
            let kind = if r.read_fraction < 1.0 { AccessKind::Write } else { AccessKind::Read };
            out.extend((0..r.pages).map(|i| (PageKey::new(r.pid, base + i), kind)));
        }
        out
    }

    /// Aggregate read fraction over the regions' nominal demand.
    pub fn read_fraction(&self) -> f64 {
        let (mut reads, mut total) = (0.0, 0.0);
        for r in self.regions.iter().filter(|r| r.active) {
            reads += r.demand_mbps * r.read_fraction;
            total += r.demand_mbps;
        }
        if total > 0.0 {
            reads / total
        } else {
            1.0
        }
    }

    /// Nominal application demand at `epoch`, in MB/s.
    pub fn demand_at(&self, epoch: u64) -> f64 {
        self.regions.iter().filter(|r| r.active).map(|r| region_segment(r, epoch).1).sum()
    }
}

/// Returns (segment start, demand, read fraction) in effect at `epoch`.
fn region_segment(r: &RegionSpec, epoch: u64) -> (u64, f64, f64) {
    r.phases
        .iter()
        .rev()
        .find(|p| p.start_epoch <= epoch)
        .map(|p| (p.start_epoch, p.demand_mbps, p.read_fraction))
        .unwrap_or((0, r.demand_mbps, r.read_fraction))
}

/// Deterministic batch generator for a [`WorkloadSpec`].
#[derive(Debug, Clone)]
pub struct WorkloadGenerator {
    spec: WorkloadSpec,
    bases: Vec<Vpn>,
    seed: u64,
    epoch_s: f64,
    page_bytes: u64,
}

impl WorkloadGenerator {
    pub fn new(spec: WorkloadSpec, seed: u64, epoch_s: f64, page_bytes: u64) -> Self {
        let bases = spec.region_bases();
        WorkloadGenerator { spec, bases, seed, epoch_s, page_bytes }
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn generate(&self, epoch: u64) -> AccessBatch {
        let mut batch = AccessBatch::empty(epoch);
        for (idx, (r, &base)) in self.spec.regions.iter().zip(&self.bases).enumerate() {
            if !r.active {
                continue;
            }
            let (start, demand, rf) = region_segment(r, epoch);
            let lines_per_epoch = demand * MB * self.epoch_s / LINE_SIZE as f64;
            if lines_per_epoch <= 0.0 {
                continue;
            }
            let k = (epoch - start) as f64;
            // Cumulative floors keep long-run totals exact.
            let cum = |k: f64| (k * lines_per_epoch).floor();
            let (c0, c1) = (cum(k), cum(k + 1.0));
            let mut lines = (c1 - c0) as u64;
            let mut reads = ((c1 * rf).floor() - (c0 * rf).floor()) as u64;
            let page_lines = self.page_bytes / LINE_SIZE;
            let max_lines = r.pages * page_lines;
            if lines > max_lines {
                reads = (reads as f64 * max_lines as f64 / lines as f64).round() as u64;
                lines = max_lines;
                batch.clamped = true;
            }
            if lines == 0 {
                continue;
            }
            let count = lines.div_ceil(page_lines).clamp(1, r.pages);
            let offsets: Vec<u64> = match r.pattern {
                AccessPattern::Sequential => {
                    let sweep = (k * lines_per_epoch / page_lines as f64).floor() as u64;
                    (0..count).map(|i| (sweep + i) % r.pages).collect()
                }
                AccessPattern::Random => {
                    let mix = splitmix(self.seed ^ splitmix(epoch ^ splitmix(idx as u64)));
                    let mut rng = ChaCha8Rng::seed_from_u64(mix);
                    rand::seq::index::sample(&mut rng, r.pages as usize, count as usize)
                        .into_iter()
                        .map(|i| i as u64)
                        .collect()
                }
            };
            let (lq, lr) = (lines / count, lines % count);
            let (rq, rr) = (reads / count, reads % count);
            for (i, off) in offsets.into_iter().enumerate() {
                let i = i as u64;
                let l = lq + u64::from(i < lr);
                let rd = rq + u64::from(i < rr);
                batch.entries.push(AccessEntry { key: PageKey::new(r.pid, base + off), reads: rd, writes: l - rd });
            }
        }
        batch
    }
}

// ---------------------------------------------------------------------------
// Benchmark profiles

#[derive(Debug, Deserialize)]
struct ProfileRegion {
    name: String,
    page_fraction: f64,
    read_fraction: f64,
    /// Share of total demand in each phase.
    share: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ProfileFile {
    name: String,
    target_read_fraction: f64,
    demand_mbps: f64,
    latency_tolerance_ns: f64,
    phase_starts: Vec<u64>,
    pattern: AccessPattern,
    regions: Vec<ProfileRegion>,
}

pub const PROFILE_NAMES: [&str; 4] = ["BT", "FT", "MG", "CG"];

fn profile_text(name: &str) -> Option<&'static str> {
    Some(match name.to_ascii_uppercase().as_str() {
        "BT" => include_str!("../profiles/bt.toml"),
        "FT" => include_str!("../profiles/ft.toml"),
        "MG" => include_str!("../profiles/mg.toml"),
        "CG" => include_str!("../profiles/cg.toml"),
        _ => return None,
    })
}

/// Target aggregate read fraction of a shipped profile.
pub fn profile_read_fraction(name: &str) -> Result<f64, WorkloadError> {
    let text = profile_text(name).ok_or_else(|| WorkloadError::UnknownProfile(name.into()))?;
    let file: ProfileFile = toml::from_str(text)
        .map_err(|e| WorkloadError::Profile { name: name.into(), msg: e.to_string() })?;
    Ok(file.target_read_fraction)
}

/// Region-structured stand-in for one of the NPB applications, sized
/// relative to `fast_capacity_pages`.
pub fn npb_profile(name: &str, footprint: FootprintClass, fast_capacity_pages: u64) -> Result<WorkloadSpec, WorkloadError> {
    let text = profile_text(name).ok_or_else(|| WorkloadError::UnknownProfile(name.into()))?;
    let perr = |msg: String| WorkloadError::Profile { name: name.into(), msg };
    let file: ProfileFile = toml::from_str(text).map_err(|e| perr(e.to_string()))?;
    let total = (footprint.factor() * fast_capacity_pages as f64).round() as u64;
    let nphases = file.phase_starts.len();
    if nphases == 0 || file.phase_starts[0] != 0 {
        return Err(perr("phase_starts must begin at 0".into()));
    }
    let mut regions = Vec::with_capacity(file.regions.len());
    let mut assigned = 0;
    for (i, pr) in file.regions.iter().enumerate() {
        if pr.share.len() != nphases {
            return Err(perr(format!("region {} has {} shares for {} phases", pr.name, pr.share.len(), nphases)));
        }
        let pages = if i + 1 == file.regions.len() {
            total - assigned
        } else {
            (pr.page_fraction * total as f64).round() as u64
        };
        assigned += pages;
        let phases = file
            .phase_starts
            .iter()
            .zip(&pr.share)
            .skip(1)
            .map(|(&start, &share)| Phase {
                start_epoch: start,
                demand_mbps: share * file.demand_mbps,
                read_fraction: pr.read_fraction,
            })
            .collect();
        regions.push(RegionSpec {
            name: pr.name.clone(),
            pid: 1,
            pages: pages.max(1),
            read_fraction: pr.read_fraction,
            demand_mbps: pr.share[0] * file.demand_mbps,
            pattern: file.pattern,
            active: true,
            phases,
        });
    }
    let spec = WorkloadSpec {
        name: format!("{}-{}", file.name, footprint.as_str()),
        regions,
        footprint_class: Some(footprint),
        latency_tolerance_ns: Some(file.latency_tolerance_ns),
    };
    spec.validate()?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Traces

pub const TRACE_MAGIC: &str = "tiersim-trace 1";

/// A recorded sequence of access batches.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceWorkload {
    pub name: String,
    pub epoch_ms: f64,
    pub batches: Vec<AccessBatch>,
    pub latency_tolerance_ns: Option<f64>,
}

impl TraceWorkload {
    pub fn epochs(&self) -> u64 {
        self.batches.len() as u64
    }

    pub fn pids(&self) -> BTreeSet<Pid> {
        self.batches.iter().flat_map(|b| b.entries.iter().map(|e| e.key.pid)).collect()
    }

    /// Pages in order of first appearance with their first access kind.
    pub fn allocation_order(&self) -> Vec<(PageKey, AccessKind)> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for e in self.batches.iter().flat_map(|b| &b.entries) {
            if seen.insert(e.key) {
                let kind = if e.writes > 0 && e.reads == 0 { AccessKind::Write } else { AccessKind::Read };
                out.push((e.key, kind));
            }
        }
        out
    }

    pub fn batch(&self, epoch: u64) -> AccessBatch {
        self.batches.get(epoch as usize).cloned().unwrap_or_else(|| AccessBatch::empty(epoch))
    }
}

/// Writes batches in the trace format:
///
/// ```text
/// tiersim-trace 1
/// page_size 4096
/// epoch_ms 10
/// <epoch> <pid> <vaddr> <read_lines> <write_lines>
/// ```
pub fn write_trace<W: Write>(mut out: W, epoch_ms: f64, batches: &[AccessBatch]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_MAGIC}")?;
    writeln!(out, "page_size {PAGE_SIZE}")?;
    writeln!(out, "epoch_ms {epoch_ms}")?;
    for b in batches {
        for e in &b.entries {
            writeln!(out, "{} {} {} {} {}", b.epoch, e.key.pid, e.key.vaddr, e.reads, e.writes)?;
        }
    }
    Ok(())
}

/// Reads a trace written by [`write_trace`]. Epochs must be non-decreasing;
/// `# ...` lines and blank lines are ignored.
pub fn load_trace<R: BufRead>(input: R, name: &str) -> Result<TraceWorkload, WorkloadError> {
    let mut header: Vec<(usize, String)> = Vec::new();
    let mut batches: Vec<AccessBatch> = Vec::new();
    let mut epoch_ms = None;
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| WorkloadError::Trace { line: lineno, msg: e.to_string() })?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| WorkloadError::Trace { line: lineno, msg };
        if header.len() < 3 {
            header.push((lineno, line.to_string()));
            match header.len() {
                1 if line != TRACE_MAGIC => return Err(err(format!("expected {TRACE_MAGIC:?}"))),
                2 => {
                    let size = line.strip_prefix("page_size ").and_then(|v| v.trim().parse::<u64>().ok());
                    if size != Some(PAGE_SIZE) {
                        return Err(err(format!("expected `page_size {PAGE_SIZE}`")));
                    }
                }
                3 => {
                    let ms = line.strip_prefix("epoch_ms ").and_then(|v| v.trim().parse::<f64>().ok());
                    match ms {
                        Some(ms) if ms > 0.0 => epoch_ms = Some(ms),
                        _ => return Err(err("expected `epoch_ms <positive number>`".into())),
                    }
                }
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |k: usize| fields[k].parse::<u64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
        let epoch = num(0)?;
        let pid = Pid::try_from(num(1)?).map_err(|e| err(e.to_string()))?;
        let entry = AccessEntry { key: PageKey::new(pid, num(2)?), reads: num(3)?, writes: num(4)? };
        let last = batches.len() as u64;
        if last > 0 && epoch + 1 < last {
            return Err(err(format!("epoch {epoch} after epoch {}", last - 1)));
        }
        while batches.len() as u64 <= epoch {
            batches.push(AccessBatch::empty(batches.len() as u64));
        }
        batches[epoch as usize].entries.push(entry);
    }
    if !header.is_empty() && header.len() < 3 {
        let line = header.last().map(|h| h.0).unwrap_or(1);
        return Err(WorkloadError::Trace { line, msg: "truncated header".into() });
    }
    Ok(TraceWorkload {
        name: name.to_string(),
        epoch_ms: epoch_ms.unwrap_or(10.0),
        batches,
        latency_tolerance_ns: None,
    })
}

/// Where a simulation's demand comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkloadSource {
    Synthetic(WorkloadSpec),
    Trace(TraceWorkload),
}

impl WorkloadSource {
    pub fn name(&self) -> &str {
        match self {
            WorkloadSource::Synthetic(s) => &s.name,
            WorkloadSource::Trace(t) => &t.name,
        }
    }

    pub fn pids(&self) -> BTreeSet<Pid> {
        match self {
            WorkloadSource::Synthetic(s) => s.pids(),
            WorkloadSource::Trace(t) => t.pids(),
        }
    }

    pub fn allocation_order(&self) -> Vec<(PageKey, AccessKind)> {
        match self {
            WorkloadSource::Synthetic(s) => s.allocation_order(),
            WorkloadSource::Trace(t) => t.allocation_order(),
        }
    }

    pub fn latency_tolerance_ns(&self) -> Option<f64> {
        match self {
            WorkloadSource::Synthetic(s) => s.latency_tolerance_ns,
            WorkloadSource::Trace(t) => t.latency_tolerance_ns,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPOCH: f64 = 0.01;

    fn region(name: &str, pages: u64, rf: f64, demand: f64) -> RegionSpec {
        RegionSpec {
            name: name.into(),
            pid: 1,
            pages,
            read_fraction: rf,
            demand_mbps: demand,
            pattern: AccessPattern::Sequential,
            active: true,
            phases: vec![],
        }
    }

    fn spec(regions: Vec<RegionSpec>) -> WorkloadSpec {
        WorkloadSpec { name: "t".into(), regions, footprint_class: None, latency_tolerance_ns: None }
    }

    #[test]
    fn inactive_spec_is_empty() {
        let mut r = region("idle", 64, 1.0, 1000.0);
        r.active = false;
        let g = WorkloadGenerator::new(spec(vec![r]), 1, EPOCH, PAGE_SIZE);
        assert!(g.generate(0).entries.is_empty());
    }

    #[test]
    fn read_only_region_realizes_demand() {
        // 100 MB/s over 10 ms = 1 MB = 15625 lines per epoch.
        let g = WorkloadGenerator::new(spec(vec![region("r", 1000, 1.0, 100.0)]), 1, EPOCH, PAGE_SIZE);
        for e in 0..5 {
            let (r, w) = g.generate(e).lines();
            assert_eq!(r * LINE_SIZE, 1_000_000);
            assert_eq!(w, 0);
        }
    }

    #[test]
    fn two_to_one_mix() {
        let g = WorkloadGenerator::new(spec(vec![region("rw", 4000, 2.0 / 3.0, 300.0)]), 1, EPOCH, PAGE_SIZE);
        let (mut r, mut w) = (0, 0);
        for e in 0..10 {
            let (a, b) = g.generate(e).lines();
            r += a;
            w += b;
        }
        assert!((r as f64 / w as f64 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn generation_is_deterministic() {
        let mut r = region("rand", 500, 0.7, 2000.0);
        r.pattern = AccessPattern::Random;
        let g1 = WorkloadGenerator::new(spec(vec![r.clone()]), 42, EPOCH, PAGE_SIZE);
        let g2 = WorkloadGenerator::new(spec(vec![r]), 42, EPOCH, PAGE_SIZE);
        for e in [0, 3, 99] {
            assert_eq!(g1.generate(e), g2.generate(e));
        }
        let entries = g1.generate(7).entries;
        let distinct: BTreeSet<u64> = entries.iter().map(|e| e.key.vaddr).collect();
        assert_eq!(distinct.len(), entries.len());
    }

    #[test]
    fn over_demand_is_clamped_and_flagged() {
        let g = WorkloadGenerator::new(spec(vec![region("tiny", 2, 1.0, 10_000.0)]), 1, EPOCH, PAGE_SIZE);
        let b = g.generate(0);
        assert!(b.clamped);
        assert_eq!(b.lines().0, 2 * PAGE_SIZE / LINE_SIZE);
    }

    #[test]
    fn sequential_full_coverage() {
        // 64 pages, 8 pages' worth per epoch: 8 epochs touch every page.
        let demand = 8.0 * PAGE_SIZE as f64 / EPOCH / MB;
        let g = WorkloadGenerator::new(spec(vec![region("seq", 64, 1.0, demand)]), 1, EPOCH, PAGE_SIZE);
        let touched: BTreeSet<u64> = (0..8).flat_map(|e| g.generate(e).entries.into_iter().map(|x| x.key.vaddr)).collect();
        assert_eq!(touched.len(), 64);
    }

    #[test]
    fn phases_switch_demand() {
        let mut r = region("p", 100, 1.0, 100.0);
        r.phases = vec![Phase { start_epoch: 5, demand_mbps: 0.0, read_fraction: 1.0 }];
        let g = WorkloadGenerator::new(spec(vec![r]), 1, EPOCH, PAGE_SIZE);
        assert!(!g.generate(4).entries.is_empty());
        assert!(g.generate(5).entries.is_empty());
    }

    #[test]
    fn regions_of_one_process_are_contiguous() {
        let mut b = region("b", 5, 1.0, 0.0);
        b.pid = 2;
        let s = spec(vec![region("a", 3, 1.0, 0.0), b, region("c", 2, 0.5, 0.0)]);
        assert_eq!(s.region_bases(), vec![0, 0, 3]);
        let order = s.allocation_order();
        assert_eq!(order.len(), 10);
        assert_eq!(order[8], (PageKey::new(1, 3), AccessKind::Write));
    }

    #[test]
    fn profiles_match_table_ratios_and_footprints() {
        let fast = 1024;
        let cg = npb_profile("CG", FootprintClass::Large, fast).unwrap();
        assert!(cg.read_fraction() >= 60.0 / 61.0);
        let f = cg.total_pages() as f64 / fast as f64;
        assert!((f - 3.5).abs() < 0.01);
        let bt = npb_profile("BT", FootprintClass::Small, fast).unwrap();
        assert!(bt.total_pages() <= fast);
        assert!((bt.read_fraction() - 3.5 / 4.5).abs() < 1e-3);
        let ft = npb_profile("ft", FootprintClass::Medium, fast).unwrap();
        assert!((ft.read_fraction() - 1.7 / 2.7).abs() < 1e-3);
        let mg = npb_profile("MG", FootprintClass::Medium, fast).unwrap();
        assert!((mg.read_fraction() - 0.8).abs() < 1e-3);
        for name in PROFILE_NAMES {
            for class in FootprintClass::ALL {
                let s = npb_profile(name, class, fast).unwrap();
                let (lo, hi) = class.bounds();
                let f = s.total_pages() as f64 / fast as f64;
                assert!(f > lo && f <= hi, "{name} {class:?} {f}");
            }
        }
        assert_eq!(npb_profile("LU", FootprintClass::Small, fast), Err(WorkloadError::UnknownProfile("LU".into())));
    }

    #[test]
    fn profile_batches_reproduce_ratio() {
        // Counting oracle over 100 generated epochs.
        for name in PROFILE_NAMES {
            let s = npb_profile(name, FootprintClass::Large, 1024).unwrap();
            let target = profile_read_fraction(name).unwrap();
            let g = WorkloadGenerator::new(s, 3, EPOCH, PAGE_SIZE * 512);
            let (mut r, mut t) = (0u64, 0u64);
            for e in 0..100 {
                let (a, b) = g.generate(e).lines();
                r += a;
                t += a + b;
            }
            let realized = r as f64 / t as f64;
            assert!((realized - target).abs() / target < 0.01, "{name}: {realized} vs {target}");
        }
    }

    #[test]
    fn trace_round_trip() {
        let mut r = region("rand", 200, 0.6, 50.0);
        r.pattern = AccessPattern::Random;
        let g = WorkloadGenerator::new(spec(vec![r]), 9, EPOCH, PAGE_SIZE);
        let batches: Vec<AccessBatch> = (0..6).map(|e| g.generate(e)).collect();
        let mut buf = Vec::new();
        write_trace(&mut buf, 10.0, &batches).unwrap();
        let t = load_trace(buf.as_slice(), "rt").unwrap();
        assert_eq!(t.batches, batches);
        assert_eq!(t.epoch_ms, 10.0);
    }

    #[test]
    fn empty_trace_has_no_epochs() {
        let t = load_trace("".as_bytes(), "empty").unwrap();
        assert_eq!(t.epochs(), 0);
        let t = load_trace(format!("{TRACE_MAGIC}\npage_size 4096\nepoch_ms 10\n").as_bytes(), "empty").unwrap();
        assert_eq!(t.epochs(), 0);
    }

    #[test]
    fn trace_errors_carry_line_numbers() {
        let head = format!("{TRACE_MAGIC}\npage_size 4096\nepoch_ms 10\n");
        let out_of_order = format!("{head}2 1 0 1 0\n1 1 0 1 0\n");
        assert_eq!(
            load_trace(out_of_order.as_bytes(), "x"),
            Err(WorkloadError::Trace { line: 5, msg: "epoch 1 after epoch 2".into() })
        );
        let malformed = format!("{head}0 1 zero 1 0\n");
        assert!(matches!(load_trace(malformed.as_bytes(), "x"), Err(WorkloadError::Trace { line: 4, .. })));
        assert!(matches!(load_trace("bogus\n".as_bytes(), "x"), Err(WorkloadError::Trace { line: 1, .. })));
    }
}
