//! Memory tiers, their load- and mix-dependent performance surfaces, and the
//! simulated per-tier bandwidth counters.

use std::collections::VecDeque;
use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Size of a base page in bytes.
pub const PAGE_SIZE: u64 = 4096;
/// Size of a cache line in bytes; energy is accounted per line.
pub const LINE_SIZE: u64 = 64;
/// Bytes per MB as used by every MB/s figure in the crate.
pub const MB: f64 = 1e6;

#[derive(Debug, Error, PartialEq)]
pub enum TierError {
    #[error("epoch length must be positive and finite, got {0}")]
    InvalidEpoch(f64),
    #[error("offered byte counts must be non-negative and finite (read {read}, write {write})")]
    InvalidBytes { read: f64, write: f64 },
    #[error("no epoch has elapsed yet; counters cannot be sampled")]
    NoHistory,
    #[error("sampling window must be at least one epoch")]
    EmptyWindow,
    #[error("invalid anchor table: {0}")]
    InvalidAnchors(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierId {
    /// DRAM.
    Fast,
    /// Persistent memory.
    Slow,
}

impl TierId {
    pub const ALL: [TierId; 2] = [TierId::Fast, TierId::Slow];

    pub fn index(self) -> usize {
        match self {
            TierId::Fast => 0,
            TierId::Slow => 1,
        }
    }

    pub fn other(self) -> TierId {
        match self {
            TierId::Fast => TierId::Slow,
            TierId::Slow => TierId::Fast,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TierId::Fast => "fast",
            TierId::Slow => "slow",
        }
    }
}

impl fmt::Display for TierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value held once per tier, indexable by [`TierId`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerTier<T>(pub [T; 2]);

impl<T> PerTier<T> {
    pub fn new(fast: T, slow: T) -> Self {
        PerTier([fast, slow])
    }

    pub fn iter(&self) -> impl Iterator<Item = (TierId, &T)> {
        TierId::ALL.into_iter().zip(self.0.iter())
    }

    pub fn map<U>(&self, mut f: impl FnMut(TierId, &T) -> U) -> PerTier<U> {
        PerTier([f(TierId::Fast, &self.0[0]), f(TierId::Slow, &self.0[1])])
    }
}

impl<T> Index<TierId> for PerTier<T> {
    type Output = T;
    fn index(&self, tier: TierId) -> &T {
        &self.0[tier.index()]
    }
}

impl<T> IndexMut<TierId> for PerTier<T> {
    fn index_mut(&mut self, tier: TierId) -> &mut T {
        &mut self.0[tier.index()]
    }
}

/// Read and write byte volume. Fractional bytes arise from proportional
/// bandwidth sharing, so both fields are floating point.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Traffic {
    pub read_bytes: f64,
    pub write_bytes: f64,
}

impl Traffic {
    pub fn new(read_bytes: f64, write_bytes: f64) -> Self {
        Traffic { read_bytes, write_bytes }
    }

    pub fn total(&self) -> f64 {
        self.read_bytes + self.write_bytes
    }

    /// Read share of the traffic; an idle stream counts as all reads.
    pub fn read_fraction(&self) -> f64 {
        let total = self.total();
        if total > 0.0 {
            self.read_bytes / total
        } else {
            1.0
        }
    }

    pub fn scaled(&self, factor: f64) -> Traffic {
        Traffic::new(self.read_bytes * factor, self.write_bytes * factor)
    }

    pub fn add(&mut self, other: Traffic) {
        self.read_bytes += other.read_bytes;
        self.write_bytes += other.write_bytes;
    }

    pub fn is_zero(&self) -> bool {
        self.read_bytes == 0.0 && self.write_bytes == 0.0
    }
}

/// One calibration point of a performance surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub read_fraction: f64,
    pub demand_mbps: f64,
    pub latency_ns: f64,
    pub bandwidth_mbps: f64,
}

/// Value of a performance surface at one operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub latency_ns: f64,
    pub achieved_mbps: f64,
}

/// Parameters of the closed-form shape used to generate the default anchor
/// grid. Runtime evaluation never uses these, only the resulting table.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceShape {
    pub base_latency_ns: f64,
    /// Latency reached when demand equals the mix-dependent peak.
    pub saturation_latency_ns: f64,
    /// Peak bandwidth at each grid read fraction.
    pub peaks: Vec<(f64, f64)>,
    pub divergence_knee_mbps: f64,
    pub demand_step_mbps: f64,
    pub demand_max_mbps: f64,
}

impl SurfaceShape {
    /// Loaded-latency curve: flat at low utilization, steep close to the peak,
    /// and growing in proportion to the surplus once demand exceeds it.
    fn latency(&self, demand: f64, peak: f64) -> f64 {
        let u = demand / peak;
        if u <= 1.0 {
            const C: f64 = 0.8;
            let f = u.powi(4) * (1.0 - C) / (1.0 - C * u);
            self.base_latency_ns + (self.saturation_latency_ns - self.base_latency_ns) * f
        } else {
            self.saturation_latency_ns * u
        }
    }

    pub fn build(&self) -> TierPerformanceModel {
        let steps = (self.demand_max_mbps / self.demand_step_mbps).round() as usize;
        let demands: Vec<f64> = (0..=steps).map(|i| i as f64 * self.demand_step_mbps).collect();
        let read_fractions: Vec<f64> = self.peaks.iter().map(|p| p.0).collect();
        let latency = self
            .peaks
            .iter()
            .map(|&(_, peak)| demands.iter().map(|&d| self.latency(d, peak)).collect())
            .collect();
        let bandwidth = self
            .peaks
            .iter()
            .map(|&(_, peak)| demands.iter().map(|&d| d.min(peak)).collect())
            .collect();
        TierPerformanceModel {
            read_fractions,
            demands,
            latency,
            bandwidth,
            base_latency_ns: self.base_latency_ns,
            divergence_knee_mbps: self.divergence_knee_mbps,
        }
    }
}

/// Latency/bandwidth surface over a rectangular (read fraction, demand)
/// anchor grid, evaluated by bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct TierPerformanceModel {
    read_fractions: Vec<f64>,
    demands: Vec<f64>,
    /// Indexed `[read_fraction][demand]`.
    latency: Vec<Vec<f64>>,
    bandwidth: Vec<Vec<f64>>,
    base_latency_ns: f64,
    divergence_knee_mbps: f64,
}

/// Locates `x` in the ascending `grid`, returning the lower index and the
/// interpolation weight of the upper neighbour (clamped to the grid).
fn bracket(grid: &[f64], x: f64) -> (usize, f64) {
    let last = grid.len() - 1;
    if x <= grid[0] {
        return (0, 0.0);
    }
    if x >= grid[last] {
        return (last - 1, 1.0);
    }
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    (lo, (x - grid[lo]) / (grid[hi] - grid[lo]))
}

impl TierPerformanceModel {
    /// Builds a model from explicit anchors. The anchors must form a full
    /// rectangular grid covering read fractions 0 and 1 and starting at zero
    /// demand; latency must be non-decreasing in demand and bandwidth may never
    /// exceed demand.
    pub fn from_anchors(
        anchors: &[Anchor],
        base_latency_ns: f64,
        divergence_knee_mbps: f64,
    ) -> Result<Self, TierError> {
        let bad = |m: String| Err(TierError::InvalidAnchors(m));
        if anchors.is_empty() {
            return bad("no anchors".into());
        }
        let mut rfs: Vec<f64> = anchors.iter().map(|a| a.read_fraction).collect();
        let mut ds: Vec<f64> = anchors.iter().map(|a| a.demand_mbps).collect();
        for v in rfs.iter().chain(ds.iter()) {
            if !v.is_finite() {
                return bad("non-finite grid coordinate".into());
            }
        }
        rfs.sort_by(f64::total_cmp);
        rfs.dedup();
        ds.sort_by(f64::total_cmp);
        ds.dedup();
        if rfs.len() < 2 || ds.len() < 2 {
            return bad("grid needs at least two read fractions and two demand levels".into());
        }
        if rfs[0] != 0.0 || *rfs.last().unwrap() != 1.0 {
            return bad("read fractions must span [0, 1]".into());
        }
        if ds[0] != 0.0 {
            return bad("demand grid must start at 0".into());
        }
        if anchors.len() != rfs.len() * ds.len() {
            return bad(format!(
                "grid is not rectangular: {} anchors for {} x {} points",
                anchors.len(),
                rfs.len(),
                ds.len()
            ));
        }
        let mut latency = vec![vec![f64::NAN; ds.len()]; rfs.len()];
        let mut bandwidth = vec![vec![f64::NAN; ds.len()]; rfs.len()];
        for a in anchors {
            let i = rfs.partition_point(|&r| r < a.read_fraction);
            let j = ds.partition_point(|&d| d < a.demand_mbps);
            if !latency[i][j].is_nan() {
                return bad(format!(
                    "duplicate anchor at read_fraction {} demand {}",
                    a.read_fraction, a.demand_mbps
                ));
            }
            latency[i][j] = a.latency_ns;
            bandwidth[i][j] = a.bandwidth_mbps;
        }
        let mut problems = Vec::new();
        for (i, rf) in rfs.iter().enumerate() {
            for j in 0..ds.len() {
                let (lat, bw) = (latency[i][j], bandwidth[i][j]);
                if !(lat.is_finite() && lat > 0.0 && bw.is_finite() && bw >= 0.0) {
                    problems.push(format!("rf {rf} demand {}: non-positive or non-finite value", ds[j]));
                }
                if bw > ds[j] + 1e-9 {
                    problems.push(format!("rf {rf} demand {}: bandwidth {bw} exceeds demand", ds[j]));
                }
                if j > 0 && lat < latency[i][j - 1] {
                    problems.push(format!(
                        "rf {rf} demand {}: latency {lat} below {} at demand {}",
                        ds[j],
                        latency[i][j - 1],
                        ds[j - 1]
                    ));
                }
            }
        }
        if !problems.is_empty() {
            return bad(problems.join("; "));
        }
        Ok(TierPerformanceModel {
            read_fractions: rfs,
            demands: ds,
            latency,
            bandwidth,
            base_latency_ns,
            divergence_knee_mbps,
        })
    }

    pub fn anchors(&self) -> Vec<Anchor> {
        let mut out = Vec::with_capacity(self.read_fractions.len() * self.demands.len());
        for (i, &rf) in self.read_fractions.iter().enumerate() {
            for (j, &d) in self.demands.iter().enumerate() {
                out.push(Anchor {
                    read_fraction: rf,
                    demand_mbps: d,
                    latency_ns: self.latency[i][j],
                    bandwidth_mbps: self.bandwidth[i][j],
                });
            }
        }
        out
    }

    pub fn base_latency_ns(&self) -> f64 {
        self.base_latency_ns
    }

    pub fn divergence_knee_mbps(&self) -> f64 {
        self.divergence_knee_mbps
    }

    /// Value along one read-fraction row; beyond the last demand anchor the
    /// bandwidth stays at its last value and latency continues the last segment.
    fn row(&self, i: usize, demand: f64) -> SurfacePoint {
        let ds = &self.demands;
        let last = ds.len() - 1;
        if demand > ds[last] {
            let slope = (self.latency[i][last] - self.latency[i][last - 1]) / (ds[last] - ds[last - 1]);
            return SurfacePoint {
                latency_ns: self.latency[i][last] + slope * (demand - ds[last]),
                achieved_mbps: self.bandwidth[i][last].min(demand),
            };
        }
        let (j, w) = bracket(ds, demand);
        SurfacePoint {
            latency_ns: self.latency[i][j] * (1.0 - w) + self.latency[i][j + 1] * w,
            achieved_mbps: self.bandwidth[i][j] * (1.0 - w) + self.bandwidth[i][j + 1] * w,
        }
    }

    /// Evaluates the surface at `read_fraction` (clamped to [0, 1]) and
    /// non-negative `demand_mbps`.
    pub fn evaluate(&self, read_fraction: f64, demand_mbps: f64) -> SurfacePoint {
        let rf = read_fraction.clamp(0.0, 1.0);
        let demand = demand_mbps.max(0.0);
        let (i, w) = bracket(&self.read_fractions, rf);
        let lo = self.row(i, demand);
        let hi = self.row(i + 1, demand);
        SurfacePoint {
            latency_ns: lo.latency_ns * (1.0 - w) + hi.latency_ns * w,
            achieved_mbps: lo.achieved_mbps * (1.0 - w) + hi.achieved_mbps * w,
        }
    }

    /// Highest bandwidth the surface reaches at the given mix.
    pub fn peak_bandwidth(&self, read_fraction: f64) -> f64 {
        let rf = read_fraction.clamp(0.0, 1.0);
        let (i, w) = bracket(&self.read_fractions, rf);
        let peak = |row: usize| self.bandwidth[row].iter().copied().fold(0.0, f64::max);
        peak(i) * (1.0 - w) + peak(i + 1) * w
    }

    pub fn peak_read_bw(&self) -> f64 {
        self.peak_bandwidth(1.0)
    }

    pub fn peak_write_limited_bw(&self) -> f64 {
        self.peak_bandwidth(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierSpec {
    pub id: TierId,
    pub capacity_pages: u64,
    pub perf: TierPerformanceModel,
    /// nJ per 64B line read.
    pub read_energy_nj: f64,
    /// nJ per 64B line written.
    pub write_energy_nj: f64,
}

/// Result of servicing one epoch of offered traffic on a tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceOutcome {
    pub achieved_mbps: f64,
    pub mean_latency_ns: f64,
    pub energy_nj: f64,
    /// Bytes completed this epoch, with the offered read/write mix.
    pub served: Traffic,
}

/// The two-tier main memory.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySystem {
    pub tiers: PerTier<TierSpec>,
}

impl MemorySystem {
    pub fn new(fast: TierSpec, slow: TierSpec) -> Self {
        MemorySystem { tiers: PerTier::new(fast, slow) }
    }

    pub fn spec(&self, tier: TierId) -> &TierSpec {
        &self.tiers[tier]
    }

    /// Surface value for a tier at the given offered traffic.
    pub fn operating_point(&self, tier: TierId, offered: Traffic, epoch_s: f64) -> SurfacePoint {
        let perf = &self.tiers[tier].perf;
        if offered.total() <= 0.0 {
            return SurfacePoint { latency_ns: perf.base_latency_ns(), achieved_mbps: 0.0 };
        }
        perf.evaluate(offered.read_fraction(), offered.total() / epoch_s / MB)
    }

    pub fn service_epoch(
        &self,
        tier: TierId,
        offered: Traffic,
        epoch_s: f64,
    ) -> Result<ServiceOutcome, TierError> {
        if !(epoch_s.is_finite() && epoch_s > 0.0) {
            return Err(TierError::InvalidEpoch(epoch_s));
        }
        let (r, w) = (offered.read_bytes, offered.write_bytes);
        if !(r.is_finite() && w.is_finite() && r >= 0.0 && w >= 0.0) {
            return Err(TierError::InvalidBytes { read: r, write: w });
        }
        let point = self.operating_point(tier, offered, epoch_s);
        let total = offered.total();
        let served_fraction = if total > 0.0 {
            (point.achieved_mbps * MB * epoch_s / total).min(1.0)
        } else {
            0.0
        };
        let served = offered.scaled(served_fraction);
        Ok(ServiceOutcome {
            achieved_mbps: point.achieved_mbps,
            mean_latency_ns: point.latency_ns,
            energy_nj: self.energy_nj(tier, served),
            served,
        })
    }

    pub fn energy_nj(&self, tier: TierId, traffic: Traffic) -> f64 {
        let spec = &self.tiers[tier];
        traffic.read_bytes / LINE_SIZE as f64 * spec.read_energy_nj
            + traffic.write_bytes / LINE_SIZE as f64 * spec.write_energy_nj
    }
}

/// Per-tier read/write rates over a sampling window.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TierRates {
    pub read_mbps: f64,
    pub write_mbps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandwidthCounters {
    pub rates: PerTier<TierRates>,
    /// Epochs actually covered by the sample.
    pub window_epochs: usize,
    /// Set when fewer epochs than requested were available.
    pub short_window: bool,
}

impl BandwidthCounters {
    pub fn slow_write_mbps(&self) -> f64 {
        self.rates[TierId::Slow].write_mbps
    }
}

/// Rolling per-epoch traffic history feeding [`BandwidthCounters`].
#[derive(Debug, Clone)]
pub struct CounterHistory {
    epoch_s: f64,
    capacity: usize,
    epochs: VecDeque<PerTier<Traffic>>,
}

impl CounterHistory {
    /// Keeps at most `capacity` epochs of history.
    pub fn new(epoch_s: f64, capacity: usize) -> Self {
        CounterHistory { epoch_s, capacity: capacity.max(1), epochs: VecDeque::new() }
    }

    pub fn record(&mut self, traffic: PerTier<Traffic>) {
        if self.epochs.len() == self.capacity {
            self.epochs.pop_front();
        }
        self.epochs.push_back(traffic);
    }

    pub fn elapsed(&self) -> usize {
        self.epochs.len()
    }

    pub fn reset(&mut self) {
        self.epochs.clear();
    }

    pub fn sample(&self, window: usize) -> Result<BandwidthCounters, TierError> {
        if window == 0 {
            return Err(TierError::EmptyWindow);
        }
        if self.epochs.is_empty() {
            return Err(TierError::NoHistory);
        }
        let n = window.min(self.epochs.len());
        let mut sum = PerTier::<Traffic>::default();
        for epoch in self.epochs.iter().rev().take(n) {
            for tier in TierId::ALL {
                sum[tier].add(epoch[tier]);
            }
        }
        let seconds = n as f64 * self.epoch_s;
        Ok(BandwidthCounters {
            rates: sum.map(|_, t| TierRates {
                read_mbps: t.read_bytes / seconds / MB,
                write_mbps: t.write_bytes / seconds / MB,
            }),
            window_epochs: n,
            short_window: n < window,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Calibration;

    fn system() -> MemorySystem {
        Calibration::default().memory_system()
    }

    /// Independent bilinear evaluation straight from the anchor list.
    fn oracle(anchors: &[Anchor], rf: f64, d: f64) -> f64 {
        let mut rfs: Vec<f64> = anchors.iter().map(|a| a.read_fraction).collect();
        rfs.sort_by(f64::total_cmp);
        rfs.dedup();
        let mut ds: Vec<f64> = anchors.iter().map(|a| a.demand_mbps).collect();
        ds.sort_by(f64::total_cmp);
        ds.dedup();
        let r0 = *rfs.iter().filter(|&&r| r <= rf).last().unwrap();
        let r1 = *rfs.iter().find(|&&r| r >= rf).unwrap();
        let d0 = *ds.iter().filter(|&&x| x <= d).last().unwrap();
        let d1 = *ds.iter().find(|&&x| x >= d).unwrap();
        let lat = |r: f64, x: f64| {
            anchors
                .iter()
                .find(|a| a.read_fraction == r && a.demand_mbps == x)
                .unwrap()
                .latency_ns
        };
        let wr = if r1 > r0 { (rf - r0) / (r1 - r0) } else { 0.0 };
        let wd = if d1 > d0 { (d - d0) / (d1 - d0) } else { 0.0 };
        let along = |r: f64| lat(r, d0) * (1.0 - wd) + lat(r, d1) * wd;
        along(r0) * (1.0 - wr) + along(r1) * wr
    }

    #[test]
    fn zero_demand_is_base_latency() {
        let sys = system();
        let out = sys.service_epoch(TierId::Fast, Traffic::default(), 1.0).unwrap();
        assert_eq!(out.achieved_mbps, 0.0);
        assert_eq!(out.mean_latency_ns, sys.spec(TierId::Fast).perf.base_latency_ns());
        assert_eq!(out.energy_nj, 0.0);
    }

    #[test]
    fn slow_saturation_ratios() {
        let sys = system();
        let fast_peak = sys.spec(TierId::Fast).perf.peak_read_bw();
        let slow = &sys.spec(TierId::Slow).perf;
        let demand = slow.peak_read_bw();
        let bytes = demand * MB;
        let s = sys.service_epoch(TierId::Slow, Traffic::new(bytes, 0.0), 1.0).unwrap();
        let f = sys.service_epoch(TierId::Fast, Traffic::new(bytes, 0.0), 1.0).unwrap();
        assert!((s.achieved_mbps - 0.5 * fast_peak).abs() < 1e-6);
        assert!(s.mean_latency_ns >= 11.3 * f.mean_latency_ns, "{} vs {}", s.mean_latency_ns, f.mean_latency_ns);
    }

    #[test]
    fn slow_mixed_latency_exceeds_reads_past_knee() {
        let sys = system();
        let perf = &sys.spec(TierId::Slow).perf;
        let d = 1.5 * perf.divergence_knee_mbps();
        let mixed = perf.evaluate(2.0 / 3.0, d);
        let reads = perf.evaluate(1.0, d);
        assert!(mixed.latency_ns > reads.latency_ns);
        let anchors = perf.anchors();
        assert!((mixed.latency_ns - oracle(&anchors, 2.0 / 3.0, d)).abs() < 1e-9);
        assert!((reads.latency_ns - oracle(&anchors, 1.0, d)).abs() < 1e-9);
        // Off-grid point in both coordinates.
        let p = perf.evaluate(0.73, 31_234.0);
        assert!((p.latency_ns - oracle(&anchors, 0.73, 31_234.0)).abs() < 1e-9);
    }

    #[test]
    fn fast_divergence_starts_at_higher_knee() {
        let sys = system();
        let fast = &sys.spec(TierId::Fast).perf;
        let slow = &sys.spec(TierId::Slow).perf;
        assert!(fast.divergence_knee_mbps() > slow.divergence_knee_mbps());
        let gap = |p: &TierPerformanceModel, d: f64| p.evaluate(2.0 / 3.0, d).latency_ns / p.evaluate(1.0, d).latency_ns;
        // Below the slow knee both tiers barely diverge; past it only the slow tier does.
        assert!(gap(fast, 10_000.0) < 1.05 && gap(slow, 10_000.0) < 1.05);
        assert!(gap(slow, 25_000.0) > 1.5);
        assert!(gap(fast, 25_000.0) < 1.1);
        assert!(gap(fast, 65_000.0) > 1.5);
    }

    #[test]
    fn beyond_grid_extrapolates_latency_and_clamps_bandwidth() {
        let sys = system();
        let perf = &sys.spec(TierId::Fast).perf;
        let last = perf.anchors().last().copied().unwrap();
        let p1 = perf.evaluate(1.0, last.demand_mbps + 10_000.0);
        let p2 = perf.evaluate(1.0, last.demand_mbps + 20_000.0);
        assert!(p1.latency_ns > last.latency_ns && p2.latency_ns > p1.latency_ns);
        assert_eq!(p1.achieved_mbps, last.bandwidth_mbps);
    }

    #[test]
    fn service_rejects_bad_inputs() {
        let sys = system();
        assert_eq!(
            sys.service_epoch(TierId::Fast, Traffic::default(), 0.0),
            Err(TierError::InvalidEpoch(0.0))
        );
        assert!(matches!(
            sys.service_epoch(TierId::Fast, Traffic::new(-1.0, 0.0), 1.0),
            Err(TierError::InvalidBytes { .. })
        ));
    }

    #[test]
    fn energy_follows_line_counts() {
        let sys = system();
        let out = sys.service_epoch(TierId::Slow, Traffic::new(640.0, 64.0), 1.0).unwrap();
        let spec = sys.spec(TierId::Slow);
        assert!((out.energy_nj - (10.0 * spec.read_energy_nj + spec.write_energy_nj)).abs() < 1e-9);
    }

    #[test]
    fn counters_idle_and_threshold_boundary() {
        let mut h = CounterHistory::new(1.0, 16);
        assert_eq!(h.sample(4), Err(TierError::NoHistory));
        for _ in 0..4 {
            h.record(PerTier::default());
        }
        let c = h.sample(4).unwrap();
        assert_eq!(c.rates[TierId::Fast], TierRates::default());
        assert_eq!(c.rates[TierId::Slow], TierRates::default());

        let mut h = CounterHistory::new(1.0, 16);
        for _ in 0..4 {
            h.record(PerTier::new(Traffic::default(), Traffic::new(0.0, 10.0 * MB)));
        }
        let c = h.sample(4).unwrap();
        assert_eq!(c.slow_write_mbps(), 10.0);
        assert!(!c.short_window);
    }

    #[test]
    fn counters_split_arithmetic_and_short_window() {
        let epoch_s = 0.01;
        let mut h = CounterHistory::new(epoch_s, 100);
        // 7 MB reads + 3 MB writes per epoch split 70/30 between tiers.
        for _ in 0..5 {
            h.record(PerTier::new(
                Traffic::new(0.7 * 7.0 * MB, 0.7 * 3.0 * MB),
                Traffic::new(0.3 * 7.0 * MB, 0.3 * 3.0 * MB),
            ));
        }
        let c = h.sample(10).unwrap();
        assert!(c.short_window);
        assert_eq!(c.window_epochs, 5);
        let fast = c.rates[TierId::Fast];
        let slow = c.rates[TierId::Slow];
        assert!((fast.read_mbps - 490.0).abs() < 1e-9);
        assert!((fast.write_mbps - 210.0).abs() < 1e-9);
        assert!((slow.read_mbps - 210.0).abs() < 1e-9);
        assert!((slow.write_mbps - 90.0).abs() < 1e-9);
        h.reset();
        assert_eq!(h.sample(1), Err(TierError::NoHistory));
    }

    #[test]
    fn anchor_validation_rejects_decreasing_latency() {
        let mut anchors = system().spec(TierId::Fast).perf.anchors();
        let victim = anchors.iter().position(|a| a.demand_mbps > 0.0).unwrap();
        anchors[victim].latency_ns = 1.0;
        let err = TierPerformanceModel::from_anchors(&anchors, 80.0, 60_000.0).unwrap_err();
        assert!(matches!(err, TierError::InvalidAnchors(_)));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn latency_monotone_and_bandwidth_bounded(
                rf in 0.0f64..=1.0,
                d1 in 0.0f64..250_000.0,
                d2 in 0.0f64..250_000.0,
                slow in any::<bool>(),
            ) {
                let sys = system();
                let tier = if slow { TierId::Slow } else { TierId::Fast };
                let perf = &sys.spec(tier).perf;
                let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
                let a = perf.evaluate(rf, lo);
                let b = perf.evaluate(rf, hi);
                prop_assert!(a.latency_ns <= b.latency_ns + 1e-9);
                prop_assert!(b.achieved_mbps <= hi + 1e-6);
                prop_assert!(b.achieved_mbps <= perf.peak_bandwidth(rf) + 1e-6);
            }
        }
    }
}
