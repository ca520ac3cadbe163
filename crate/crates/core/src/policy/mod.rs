//! Placement policies and the interface the engine drives them through.

mod bwbalance;
mod fillfirst;
mod hyplacer;
mod memm;
mod partitioned;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::events::EventLog;
use crate::page::{MigrationReport, PageError, PageId, PageKey, PageTable, TierOccupancy};
use crate::selection::SelectionError;
use crate::tier::{BandwidthCounters, CounterHistory, MemorySystem, TierError, TierId};
use crate::workload::AccessBatch;

pub use bwbalance::{best_ratio, ideal_aggregate_mbps, BwBalance, BwBalanceConfig};
pub use fillfirst::{FillFirstConfig, FillFirstLru};
pub use hyplacer::{hyplacer_decide, HyPlacer, HyPlacerConfig, PlacementDecision};
pub use memm::{MemM, MemmConfig};
pub use partitioned::{Partitioned, PartitionedConfig};

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Tier(#[from] TierError),
    #[error("invalid {policy} configuration: {msg}")]
    Config { policy: &'static str, msg: String },
}

/// Everything a policy may observe or change during one epoch.
pub struct PolicyContext<'a> {
    pub epoch: u64,
    pub epoch_s: f64,
    pub table: &'a mut PageTable,
    pub counters: &'a CounterHistory,
    pub memory: &'a MemorySystem,
    pub log: &'a mut EventLog,
    /// Pages moved by the policy so far this epoch.
    pub moved: MigrationReport,
}

impl PolicyContext<'_> {
    pub fn occupancy(&self) -> TierOccupancy {
        self.table.occupancy()
    }

    pub fn sample(&self, window: usize) -> Result<BandwidthCounters, TierError> {
        self.counters.sample(window)
    }

    /// Migrates `pages`, logging the move. A destination without room is
    /// logged and leaves the pages where they are.
    pub fn migrate(&mut self, pages: &[PageId], dest: TierId, reason: &str) -> Result<MigrationReport, PolicyError> {
        if pages.is_empty() {
            return Ok(MigrationReport::default());
        }
        match self.table.migrate(pages, dest) {
            Ok(r) => {
                self.log.record(self.epoch, "migrate", &[("to", &dest), ("pages", &r.moved), ("reason", &reason)]);
                self.moved.merge(r);
                Ok(r)
            }
            Err(PageError::CapacityExceeded { tier, free, needed }) => {
                self.log.record(self.epoch, "migrate_refused", &[("to", &tier), ("free", &free), ("needed", &needed)]);
                Ok(MigrationReport::default())
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn exchange(&mut self, fast: &[PageId], slow: &[PageId], reason: &str) -> Result<MigrationReport, PolicyError> {
        if fast.is_empty() && slow.is_empty() {
            return Ok(MigrationReport::default());
        }
        let r = self.table.exchange(fast, slow)?;
        self.log.record(self.epoch, "exchange", &[("pairs", &fast.len()), ("reason", &reason)]);
        self.moved.merge(r);
        Ok(r)
    }
}

/// A placement policy. The engine calls [`Policy::on_epoch`] at the start of
/// every epoch and [`Policy::after_access`] once the epoch's accesses have
/// been applied to the page table.
pub trait Policy: Send {
    fn name(&self) -> &'static str;

    /// Preferred tier for the `index`-th page allocated, in allocation order.
    fn placement(&mut self, _index: usize, _key: PageKey) -> TierId {
        TierId::Fast
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError>;

    fn after_access(&mut self, _ctx: &mut PolicyContext<'_>, _batch: &AccessBatch) -> Result<(), PolicyError> {
        Ok(())
    }

    /// `(period_epochs, max_pages)` if the policy promises to move at most
    /// `max_pages` pages in every aligned window of `period_epochs` epochs.
    fn rate_bound(&self) -> Option<(u64, usize)>;
}

/// Default Linux first-touch placement without any migration.
#[derive(Debug, Clone, Default)]
pub struct AdmDefault;

impl Policy for AdmDefault {
    fn name(&self) -> &'static str {
        "admdefault"
    }

    fn on_epoch(&mut self, _ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((1, 0))
    }
}

/// Static weighted interleave: a `fast_share` fraction of pages, spread
/// evenly through allocation order, go to FAST. No migration.
#[derive(Debug, Clone)]
pub struct Interleave {
    pub fast_share: f64,
}

impl Policy for Interleave {
    fn name(&self) -> &'static str {
        "interleave"
    }

    fn placement(&mut self, index: usize, _key: PageKey) -> TierId {
        let i = index as f64;
        if ((i + 1.0) * self.fast_share).floor() > (i * self.fast_share).floor() {
            TierId::Fast
        } else {
            TierId::Slow
        }
    }

    fn on_epoch(&mut self, _ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        Ok(())
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((1, 0))
    }
}

/// Policy selection plus parameters, as written in experiment files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyConfig {
    Admdefault,
    Hyplacer(HyPlacerConfig),
    Memm(MemmConfig),
    Partitioned(PartitionedConfig),
    #[serde(rename = "fillfirst_lru")]
    FillFirstLru(FillFirstConfig),
    Bwbalance(BwBalanceConfig),
    Interleave { fast_share: f64 },
}

pub const POLICY_NAMES: [&str; 7] =
    ["admdefault", "hyplacer", "memm", "partitioned", "fillfirst_lru", "bwbalance", "interleave"];

impl PolicyConfig {
    /// Defaults for a policy name.
    pub fn named(name: &str) -> Option<PolicyConfig> {
        Some(match name {
            "admdefault" => PolicyConfig::Admdefault,
            "hyplacer" => PolicyConfig::Hyplacer(HyPlacerConfig::default()),
            "memm" => PolicyConfig::Memm(MemmConfig::default()),
            "partitioned" => PolicyConfig::Partitioned(PartitionedConfig::default()),
            "fillfirst_lru" => PolicyConfig::FillFirstLru(FillFirstConfig::default()),
            "bwbalance" => PolicyConfig::Bwbalance(BwBalanceConfig::default()),
            "interleave" => PolicyConfig::Interleave { fast_share: 1.0 },
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Admdefault => "admdefault",
            PolicyConfig::Hyplacer(_) => "hyplacer",
            PolicyConfig::Memm(_) => "memm",
            PolicyConfig::Partitioned(_) => "partitioned",
            PolicyConfig::FillFirstLru(_) => "fillfirst_lru",
            PolicyConfig::Bwbalance(_) => "bwbalance",
            PolicyConfig::Interleave { .. } => "interleave",
        }
    }

    pub fn build(&self, epoch_ms: f64) -> Result<Box<dyn Policy>, PolicyError> {
        Ok(match self {
            PolicyConfig::Admdefault => Box::new(AdmDefault),
            PolicyConfig::Hyplacer(c) => Box::new(HyPlacer::new(c.clone(), epoch_ms)?),
            PolicyConfig::Memm(c) => Box::new(MemM::new(c.clone())?),
            PolicyConfig::Partitioned(c) => Box::new(Partitioned::new(c.clone(), epoch_ms)?),
            PolicyConfig::FillFirstLru(c) => Box::new(FillFirstLru::new(c.clone())?),
            PolicyConfig::Bwbalance(c) => Box::new(BwBalance::new(c.clone())?),
            PolicyConfig::Interleave { fast_share } => {
                if !(0.0..=1.0).contains(fast_share) {
                    return Err(PolicyError::Config { policy: "interleave", msg: "fast_share must lie in [0, 1]".into() });
                }
                Box::new(Interleave { fast_share: *fast_share })
            }
        })
    }
}

impl fmt::Display for PolicyConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyConfig::Interleave { fast_share } => {
                let pct = (fast_share * 100.0).round() as u32;
                write!(f, "interleave-{}:{}", pct, 100 - pct)
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Converts a delay in milliseconds into whole epochs.
pub(crate) fn delay_epochs(policy: &'static str, delay_ms: f64, epoch_ms: f64) -> Result<u64, PolicyError> {
    let n = delay_ms / epoch_ms;
    if !(n.is_finite() && n >= 1.0 && (n - n.round()).abs() < 1e-9) {
        return Err(PolicyError::Config {
            policy,
            msg: format!("delay {delay_ms} ms is not a positive multiple of the {epoch_ms} ms epoch"),
        });
    }
    Ok(n.round() as u64)
}

pub(crate) fn positive(policy: &'static str, what: &str, v: f64) -> Result<(), PolicyError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(PolicyError::Config { policy, msg: format!("{what} must be positive") })
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::calibration::Calibration;
    use crate::page::AccessKind;
    use crate::tier::{PerTier, Traffic};
    use crate::workload::AccessEntry;

    /// Minimal harness: a page table, counters and a memory model.
    pub struct Rig {
        pub table: PageTable,
        pub counters: CounterHistory,
        pub memory: MemorySystem,
        pub log: EventLog,
        pub epoch: u64,
    }

    impl Rig {
        pub fn new(fast: u64, slow: u64) -> Self {
            let mut table = PageTable::new(PerTier::new(fast, slow), 1);
            table.bind(1);
            Rig {
                table,
                counters: CounterHistory::new(0.01, 1000),
                memory: Calibration::default().memory_system(),
                log: EventLog::new(),
                epoch: 0,
            }
        }

        pub fn alloc(&mut self, policy: &mut dyn Policy, n: u64, kind: AccessKind) -> Vec<PageId> {
            let start = self.table.len();
            (0..n)
                .map(|i| {
                    let key = PageKey::new(1, start as u64 + i);
                    let hint = policy.placement(start + i as usize, key);
                    self.table.allocate(1, key.vaddr, hint, kind).unwrap()
                })
                .collect()
        }

        /// Runs one epoch: policy step, accesses, counter update.
        pub fn step(&mut self, policy: &mut dyn Policy, accesses: &[(u64, u64, u64)], slow_write_mbps: f64) -> MigrationReport {
            let mut ctx = PolicyContext {
                epoch: self.epoch,
                epoch_s: 0.01,
                table: &mut self.table,
                counters: &self.counters,
                memory: &self.memory,
                log: &mut self.log,
                moved: MigrationReport::default(),
            };
            policy.on_epoch(&mut ctx).unwrap();
            let batch = AccessBatch {
                epoch: self.epoch,
                entries: accesses
                    .iter()
                    .map(|&(v, r, w)| AccessEntry { key: PageKey::new(1, v), reads: r, writes: w })
                    .collect(),
                clamped: false,
            };
            ctx.table.apply_access_batch(&batch).unwrap();
            policy.after_access(&mut ctx, &batch).unwrap();
            let moved = ctx.moved;
            let wbytes = slow_write_mbps * 1e6 * 0.01;
            self.counters.record(PerTier::new(Traffic::default(), Traffic::new(0.0, wbytes)));
            self.table.take_pending_traffic();
            self.epoch += 1;
            moved
        }
    }
}
