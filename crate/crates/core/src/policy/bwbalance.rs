use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, PolicyError};
use crate::page::{PageId, Visit, WalkCursor};
use crate::tier::{MemorySystem, TierError, TierId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BwBalanceConfig {
    pub control_period_epochs: u64,
    pub max_pages_per_activation: usize,
    /// Spacing of the FAST-share grid searched for the best split.
    pub grid_step: f64,
}

impl Default for BwBalanceConfig {
    fn default() -> Self {
        BwBalanceConfig { control_period_epochs: 400, max_pages_per_activation: 100_000, grid_step: 0.05 }
    }
}

/// Aggregate bandwidth when a `fast_share` fraction of `demand_mbps` goes to
/// FAST and the rest to SLOW: the demand itself, or whichever tier saturates
/// first.
pub fn ideal_aggregate_mbps(memory: &MemorySystem, read_fraction: f64, demand_mbps: f64, fast_share: f64) -> f64 {
    let peak = |t: TierId| memory.spec(t).perf.peak_bandwidth(read_fraction);
    let mut bw = demand_mbps;
    if fast_share > 0.0 {
        bw = bw.min(peak(TierId::Fast) / fast_share);
    }
    if fast_share < 1.0 {
        bw = bw.min(peak(TierId::Slow) / (1.0 - fast_share));
    }
    bw
}

/// FAST share on the grid {1, 1 - step, ...} maximizing
/// [`ideal_aggregate_mbps`]; ties go to the larger FAST share.
pub fn best_ratio(memory: &MemorySystem, read_fraction: f64, demand_mbps: f64, step: f64) -> f64 {
    let steps = (1.0 / step).round() as usize;
    let mut best = (1.0, ideal_aggregate_mbps(memory, read_fraction, demand_mbps, 1.0));
    for i in 1..=steps {
        let r = 1.0 - i as f64 * step;
        let r = if r < 1e-9 { 0.0 } else { r };
        let bw = ideal_aggregate_mbps(memory, read_fraction, demand_mbps, r);
        if bw > best.1 * (1.0 + 1e-9) {
            best = (r, bw);
        }
    }
    best.0
}

/// Spreads hot pages between the tiers in the ratio that maximizes modeled
/// aggregate bandwidth for the observed demand and mix.
#[derive(Debug, Clone)]
pub struct BwBalance {
    cfg: BwBalanceConfig,
}

impl BwBalance {
    pub fn new(cfg: BwBalanceConfig) -> Result<Self, PolicyError> {
        let steps = 1.0 / cfg.grid_step;
        if cfg.control_period_epochs == 0 || cfg.max_pages_per_activation == 0 || !(steps >= 1.0 && (steps - steps.round()).abs() < 1e-6) {
            return Err(PolicyError::Config { policy: "bwbalance", msg: "period, cap and a grid step dividing 1 are required".into() });
        }
        Ok(BwBalance { cfg })
    }

    fn scan(ctx: &mut PolicyContext<'_>, tier: TierId) -> (Vec<PageId>, Vec<PageId>) {
        let (mut hot, mut cold) = (Vec::new(), Vec::new());
        ctx.table.walk(WalkCursor::start(tier), usize::MAX, |p| {
            if p.referenced { hot.push(p.id) } else { cold.push(p.id) }
            p.clear_bits();
            Visit::Continue
        });
        (hot, cold)
    }
}

impl Policy for BwBalance {
    fn name(&self) -> &'static str {
        "bwbalance"
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        let period = self.cfg.control_period_epochs;
        if ctx.epoch == 0 || ctx.epoch % period != 0 {
            return Ok(());
        }
        let counters = match ctx.sample(period as usize) {
            Ok(c) => c,
            Err(TierError::NoHistory) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let (reads, total) = counters
            .rates
            .iter()
            .fold((0.0, 0.0), |(r, t), (_, x)| (r + x.read_mbps, t + x.read_mbps + x.write_mbps));
        let rf = if total > 0.0 { reads / total } else { 1.0 };
        let ratio = best_ratio(ctx.memory, rf, total, self.cfg.grid_step);
        let (fast_hot, fast_cold) = Self::scan(ctx, TierId::Fast);
        let (slow_hot, slow_cold) = Self::scan(ctx, TierId::Slow);
        let hot = fast_hot.len() + slow_hot.len();
        let want_fast = (ratio * hot as f64).round() as usize;
        ctx.log.record(
            ctx.epoch,
            "balance",
            &[("demand_mbps", &format!("{total:.1}")), ("read_fraction", &format!("{rf:.4}")), ("fast_share", &ratio), ("hot", &hot), ("hot_fast", &fast_hot.len())],
        );
        let budget = self.cfg.max_pages_per_activation;
        if want_fast > fast_hot.len() {
            // Move hot SLOW pages up: into free space, then over cold FAST pages.
            let need = (want_fast - fast_hot.len()).min(slow_hot.len()).min(budget);
            let free = (ctx.table.free(TierId::Fast) as usize).min(need);
            ctx.migrate(&slow_hot[..free], TierId::Fast, "balance_up")?;
            let pairs = (need - free).min(fast_cold.len()).min((budget - free) / 2);
            ctx.exchange(&fast_cold[..pairs], &slow_hot[free..free + pairs], "balance_up")?;
        } else if want_fast < fast_hot.len() {
            // Move hot FAST pages down, over cold SLOW pages where possible.
            let need = (fast_hot.len() - want_fast).min(budget);
            let pairs = need.min(slow_cold.len()).min(budget / 2);
            ctx.exchange(&fast_hot[..pairs], &slow_cold[..pairs], "balance_down")?;
            let rest = (need - pairs).min(ctx.table.free(TierId::Slow) as usize).min(budget - 2 * pairs);
            ctx.migrate(&fast_hot[pairs..pairs + rest], TierId::Slow, "balance_down")?;
        }
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((self.cfg.control_period_epochs, self.cfg.max_pages_per_activation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::Calibration;
    use crate::page::AccessKind;
    use crate::policy::testutil::Rig;

    #[test]
    fn low_demand_prefers_all_fast() {
        let m = Calibration::default().memory_system();
        assert_eq!(best_ratio(&m, 1.0, 10_000.0, 0.05), 1.0);
        assert_eq!(best_ratio(&m, 0.5, 1_000.0, 0.05), 1.0);
    }

    #[test]
    fn saturating_reads_split_by_peaks() {
        // Peaks 80 and 40 GB/s: the ideal split is 2:1. On the 5% grid the
        // neighbours 70% and 65% tie at 80/0.7 = 40/0.35 = 114.3 GB/s, and
        // the tie goes to the larger FAST share.
        let m = Calibration::default().memory_system();
        let r = best_ratio(&m, 1.0, 200_000.0, 0.05);
        assert!((r - 0.7).abs() < 1e-9, "{r}");
        let bw = ideal_aggregate_mbps(&m, 1.0, 200_000.0, 0.7);
        assert!((bw - 80_000.0 / 0.7).abs() < 1e-6);
        assert!(ideal_aggregate_mbps(&m, 1.0, 200_000.0, 0.75) < bw);
        assert_eq!(ideal_aggregate_mbps(&m, 1.0, 200_000.0, 1.0), 80_000.0);
    }

    #[test]
    fn moves_hot_pages_toward_ratio() {
        let cfg = BwBalanceConfig { control_period_epochs: 10, ..Default::default() };
        let mut p = BwBalance::new(cfg).unwrap();
        let mut rig = Rig::new(100, 200);
        rig.alloc(&mut p, 100, AccessKind::Read);
        for v in 100..200 {
            rig.table.allocate(1, v, TierId::Slow, AccessKind::Read).unwrap();
        }
        for tier in TierId::ALL {
            rig.table.walk(WalkCursor::start(tier), usize::MAX, |p| {
                p.clear_bits();
                Visit::Continue
            });
        }
        let hot = crate::workload::AccessBatch {
            epoch: 9,
            entries: (0..40)
                .map(|v| crate::workload::AccessEntry { key: crate::page::PageKey::new(1, v), reads: 1, writes: 0 })
                .collect(),
            clamped: false,
        };
        rig.table.apply_access_batch(&hot).unwrap();
        // Saturating read traffic recorded against FAST.
        for _ in 0..10 {
            rig.counters.record(crate::tier::PerTier::new(
                crate::tier::Traffic::new(2000e6, 0.0),
                crate::tier::Traffic::default(),
            ));
        }
        rig.epoch = 10;
        let moved = rig.step(&mut p, &[], 0.0).moved;
        // 40 hot pages at a 70% share: 28 stay, 12 move down by exchange.
        assert_eq!(moved, 24);
        assert_eq!(rig.table.occupancy().used.0, [100, 100]);
    }
}
