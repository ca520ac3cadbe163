use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, PolicyError};
use crate::page::{PageId, Visit, WalkCursor};
use crate::tier::TierId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FillFirstConfig {
    pub scan_period_epochs: u64,
    pub usage_threshold: f64,
    pub hysteresis: f64,
    pub max_pages_per_activation: usize,
    /// Promote pages written during the scan before merely read ones.
    pub rw_aware: bool,
}

impl Default for FillFirstConfig {
    fn default() -> Self {
        FillFirstConfig {
            scan_period_epochs: 100,
            usage_threshold: 0.95,
            hysteresis: 0.02,
            max_pages_per_activation: 131_072,
            rw_aware: false,
        }
    }
}

/// Hotness-only fill-FAST-first placement with LRU demotion, in the style
/// of active/inactive list tiering.
#[derive(Debug, Clone)]
pub struct FillFirstLru {
    cfg: FillFirstConfig,
    /// Epoch each page was last seen referenced, indexed by page id.
    last_seen: Vec<u64>,
}

impl FillFirstLru {
    pub fn new(cfg: FillFirstConfig) -> Result<Self, PolicyError> {
        if cfg.scan_period_epochs == 0 || cfg.max_pages_per_activation == 0 {
            return Err(PolicyError::Config { policy: "fillfirst_lru", msg: "period and page cap must be positive".into() });
        }
        if !(cfg.usage_threshold > 0.0 && cfg.usage_threshold <= 1.0 && (0.0..cfg.usage_threshold).contains(&cfg.hysteresis)) {
            return Err(PolicyError::Config { policy: "fillfirst_lru", msg: "usage_threshold must lie in (0, 1] above hysteresis".into() });
        }
        Ok(FillFirstLru { cfg, last_seen: Vec::new() })
    }

    /// Clears R/D on every page of `tier`; returns (referenced, idle) pages,
    /// referenced ones with their dirty bit.
    fn scan(&mut self, ctx: &mut PolicyContext<'_>, tier: TierId) -> (Vec<(PageId, bool)>, Vec<PageId>) {
        let (mut hot, mut idle) = (Vec::new(), Vec::new());
        let epoch = ctx.epoch;
        let last_seen = &mut self.last_seen;
        ctx.table.walk(WalkCursor::start(tier), usize::MAX, |p| {
            if p.referenced {
                last_seen[p.id.0 as usize] = epoch;
                hot.push((p.id, p.dirty));
            } else {
                idle.push(p.id);
            }
            p.clear_bits();
            Visit::Continue
        });
        (hot, idle)
    }
}

fn pages_at(fraction: f64, capacity: u64) -> u64 {
    (fraction * capacity as f64 + 1e-9).floor() as u64
}

impl Policy for FillFirstLru {
    fn name(&self) -> &'static str {
        "fillfirst_lru"
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        if ctx.epoch == 0 || ctx.epoch % self.cfg.scan_period_epochs != 0 {
            return Ok(());
        }
        self.last_seen.resize(ctx.table.len(), 0);
        let (_, mut fast_idle) = self.scan(ctx, TierId::Fast);
        let (mut slow_hot, _) = self.scan(ctx, TierId::Slow);
        let mut fast_by_age: Vec<PageId> = ctx.table.resident(TierId::Fast).collect();
        fast_by_age.sort_by_key(|id| (self.last_seen[id.0 as usize], *id));
        fast_idle.sort_by_key(|id| (self.last_seen[id.0 as usize], *id));
        if self.cfg.rw_aware {
            slow_hot.sort_by_key(|&(_, dirty)| !dirty);
        }
        let mut budget = self.cfg.max_pages_per_activation;
        let occ = ctx.occupancy();
        let capacity = occ.capacity[TierId::Fast];

        // Above the threshold: demote least recently referenced pages.
        if occ.usage(TierId::Fast) > self.cfg.usage_threshold {
            let target = pages_at(self.cfg.usage_threshold - self.cfg.hysteresis, capacity);
            let n = ((occ.used[TierId::Fast] - target.min(occ.used[TierId::Fast])) as usize)
                .min(budget)
                .min(ctx.table.free(TierId::Slow) as usize);
            ctx.migrate(&fast_by_age[..n], TierId::Slow, "lru_demote")?;
            return Ok(());
        }

        // Fill FAST up to the threshold with referenced SLOW pages.
        let room = pages_at(self.cfg.usage_threshold, capacity).saturating_sub(ctx.table.occupancy().used[TierId::Fast]);
        let n = (room as usize).min(budget).min(slow_hot.len());
        let promote: Vec<PageId> = slow_hot.drain(..n).map(|(id, _)| id).collect();
        budget -= n;
        ctx.migrate(&promote, TierId::Fast, "fill")?;

        // Then swap remaining hot SLOW pages with idle FAST ones.
        let pairs = slow_hot.len().min(fast_idle.len()).min(budget / 2);
        if pairs > 0 {
            let up: Vec<PageId> = slow_hot[..pairs].iter().map(|&(id, _)| id).collect();
            ctx.exchange(&fast_idle[..pairs], &up, "lru_swap")?;
        }
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((self.cfg.scan_period_epochs, self.cfg.max_pages_per_activation))
    }
}
