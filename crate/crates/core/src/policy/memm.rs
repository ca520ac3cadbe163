use serde::{Deserialize, Serialize};

use super::{Policy, PolicyContext, PolicyError};
use crate::page::{PageId, PageKey};
use crate::tier::{TierId, Traffic, LINE_SIZE};
use crate::workload::AccessBatch;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemmConfig {
    /// Associativity of the FAST page cache; 1 is direct-mapped.
    pub ways: usize,
}

impl Default for MemmConfig {
    fn default() -> Self {
        MemmConfig { ways: 16 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Way {
    id: PageId,
    last_use: u64,
    dirty_bytes: u64,
}

/// Memory mode: FAST is a set-associative LRU cache in front of SLOW, which
/// holds every page. Misses are served by SLOW and then filled; evicting a
/// dirty page writes its modified bytes back.
#[derive(Debug, Clone)]
pub struct MemM {
    cfg: MemmConfig,
    sets: Vec<Vec<Way>>,
    tick: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct CacheStats {
    hits: u64,
    misses: u64,
    evictions: u64,
    writebacks: u64,
}

impl MemM {
    pub fn new(cfg: MemmConfig) -> Result<Self, PolicyError> {
        if cfg.ways == 0 {
            return Err(PolicyError::Config { policy: "memm", msg: "ways must be positive".into() });
        }
        Ok(MemM { cfg, sets: Vec::new(), tick: 0 })
    }

    fn set_of(&self, key: PageKey) -> usize {
        ((key.vaddr as u128 + key.pid as u128 * 7919) % self.sets.len() as u128) as usize
    }

    /// Page ids currently cached.
    pub fn cached(&self) -> impl Iterator<Item = PageId> + '_ {
        self.sets.iter().flatten().map(|w| w.id)
    }

    fn init(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        let capacity = ctx.table.occupancy().capacity[TierId::Fast] as usize;
        let nsets = (capacity / self.cfg.ways).max(1);
        self.sets = vec![Vec::with_capacity(self.cfg.ways); nsets];
        // Pages that spilled into FAST at allocation join the cache.
        let spilled: Vec<PageId> = ctx.table.resident(TierId::Fast).collect();
        for id in spilled {
            let key = ctx.table.page(id).expect("resident page").key();
            let s = self.set_of(key);
            if self.sets[s].len() < self.cfg.ways {
                self.sets[s].push(Way { id, last_use: 0, dirty_bytes: 0 });
            } else {
                ctx.table.relocate(id, TierId::Slow)?;
            }
        }
        Ok(())
    }
}

impl Policy for MemM {
    fn name(&self) -> &'static str {
        "memm"
    }

    fn placement(&mut self, _index: usize, _key: PageKey) -> TierId {
        TierId::Slow
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        if self.sets.is_empty() {
            self.init(ctx)?;
        }
        Ok(())
    }

    fn after_access(&mut self, ctx: &mut PolicyContext<'_>, batch: &AccessBatch) -> Result<(), PolicyError> {
        if self.sets.is_empty() {
            self.init(ctx)?;
        }
        let page_bytes = ctx.table.page_bytes();
        let mut stats = CacheStats::default();
        for e in &batch.entries {
            if e.reads == 0 && e.writes == 0 {
                continue;
            }
            self.tick += 1;
            let id = match ctx.table.lookup(e.key) {
                Some(id) => id,
                None => continue,
            };
            let written = (e.writes * LINE_SIZE).min(page_bytes);
            let s = self.set_of(e.key);
            if let Some(way) = self.sets[s].iter_mut().find(|w| w.id == id) {
                stats.hits += 1;
                way.last_use = self.tick;
                way.dirty_bytes = (way.dirty_bytes + written).min(page_bytes);
                continue;
            }
            stats.misses += 1;
            if self.sets[s].len() >= self.cfg.ways {
                let (slot, _) = self.sets[s]
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, w)| w.last_use)
                    .expect("full set");
                let victim = self.sets[s].swap_remove(slot);
                ctx.table.relocate(victim.id, TierId::Slow)?;
                stats.evictions += 1;
                if victim.dirty_bytes > 0 {
                    stats.writebacks += 1;
                    let b = victim.dirty_bytes as f64;
                    ctx.table.charge(TierId::Fast, Traffic::new(b, 0.0));
                    ctx.table.charge(TierId::Slow, Traffic::new(0.0, b));
                }
            }
            ctx.table.relocate(id, TierId::Fast)?;
            let filled = ((e.reads + e.writes) * LINE_SIZE).min(page_bytes);
            ctx.table.charge(TierId::Fast, Traffic::new(0.0, filled as f64));
            self.sets[s].push(Way { id, last_use: self.tick, dirty_bytes: written });
        }
        if stats.misses > 0 {
            ctx.log.record(
                ctx.epoch,
                "cache",
                &[("hits", &stats.hits), ("misses", &stats.misses), ("evictions", &stats.evictions), ("writebacks", &stats.writebacks)],
            );
        }
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        // Hardware cache fills are not software migrations.
        None
    }
}
