use serde::{Deserialize, Serialize};

use super::{delay_epochs, Policy, PolicyContext, PolicyError};
use crate::page::{PageId, Visit, WalkCursor};
use crate::tier::TierId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionedConfig {
    pub control_period_epochs: u64,
    pub delay_ms: f64,
    pub max_pages_per_activation: usize,
}

impl Default for PartitionedConfig {
    fn default() -> Self {
        PartitionedConfig { control_period_epochs: 100, delay_ms: 50.0, max_pages_per_activation: 131_072 }
    }
}

/// Read/write partitioning: pages written during the observation window
/// belong in FAST, pages only read belong in SLOW.
#[derive(Debug, Clone)]
pub struct Partitioned {
    cfg: PartitionedConfig,
    delay_epochs: u64,
    ready_at: Option<u64>,
}

impl Partitioned {
    pub fn new(cfg: PartitionedConfig, epoch_ms: f64) -> Result<Self, PolicyError> {
        if cfg.control_period_epochs == 0 || cfg.max_pages_per_activation == 0 {
            return Err(PolicyError::Config { policy: "partitioned", msg: "period and page cap must be positive".into() });
        }
        let delay_epochs = delay_epochs("partitioned", cfg.delay_ms, epoch_ms)?;
        if delay_epochs >= cfg.control_period_epochs {
            return Err(PolicyError::Config { policy: "partitioned", msg: "delay must be shorter than the period".into() });
        }
        Ok(Partitioned { cfg, delay_epochs, ready_at: None })
    }

    fn collect(ctx: &mut PolicyContext<'_>, tier: TierId, want_dirty: bool) -> Vec<PageId> {
        let mut out = Vec::new();
        ctx.table.walk(WalkCursor::start(tier), usize::MAX, |p| {
            if p.referenced && p.dirty == want_dirty {
                out.push(p.id);
            }
            Visit::Continue
        });
        out
    }
}

impl Policy for Partitioned {
    fn name(&self) -> &'static str {
        "partitioned"
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        if let Some(at) = self.ready_at {
            if ctx.epoch < at {
                return Ok(());
            }
            self.ready_at = None;
            let mut budget = self.cfg.max_pages_per_activation;
            let mut readers = Self::collect(ctx, TierId::Fast, false);
            readers.truncate((ctx.table.free(TierId::Slow) as usize).min(budget));
            budget -= readers.len();
            ctx.migrate(&readers, TierId::Slow, "read_dominated")?;
            let mut writers = Self::collect(ctx, TierId::Slow, true);
            let overflow = writers.len().saturating_sub((ctx.table.free(TierId::Fast) as usize).min(budget));
            writers.truncate(writers.len() - overflow);
            ctx.migrate(&writers, TierId::Fast, "write_intensive")?;
            if overflow > 0 {
                ctx.log.record(ctx.epoch, "fast_full", &[("left_in_slow", &overflow)]);
            }
            return Ok(());
        }
        if ctx.epoch % self.cfg.control_period_epochs == 0 {
            for tier in TierId::ALL {
                ctx.table.walk(WalkCursor::start(tier), usize::MAX, |p| {
                    p.clear_bits();
                    Visit::Continue
                });
            }
            self.ready_at = Some(ctx.epoch + self.delay_epochs);
        }
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((self.cfg.control_period_epochs, self.cfg.max_pages_per_activation))
    }
}
