use std::fmt;

use serde::{Deserialize, Serialize};

use super::{delay_epochs, positive, Policy, PolicyContext, PolicyError};
use crate::page::TierOccupancy;
use crate::selection::{PageFindMode, PageFindReply, Selector};
use crate::tier::{BandwidthCounters, TierError, TierId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyPlacerConfig {
    pub dram_usage_threshold: f64,
    pub slow_write_bw_threshold_mbps: f64,
    pub max_pages_per_activation: usize,
    pub delay_ms: f64,
    pub control_period_epochs: u64,
    /// Free-space buffer restored below the usage threshold by DEMOTE, as
    /// a fraction of FAST capacity.
    pub hysteresis: f64,
    /// Treat "FAST full while SLOW writes are high" as on target instead of
    /// switching pages.
    pub treat_full_as_on_target: bool,
}

impl Default for HyPlacerConfig {
    fn default() -> Self {
        HyPlacerConfig {
            dram_usage_threshold: 0.95,
            slow_write_bw_threshold_mbps: 10.0,
            max_pages_per_activation: 131_072,
            delay_ms: 50.0,
            control_period_epochs: 100,
            hysteresis: 0.02,
            treat_full_as_on_target: false,
        }
    }
}

impl HyPlacerConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let bad = |msg: &str| Err(PolicyError::Config { policy: "hyplacer", msg: msg.into() });
        if !(self.dram_usage_threshold > 0.0 && self.dram_usage_threshold < 1.0) {
            return bad("dram_usage_threshold must lie in (0, 1)");
        }
        if !(0.0..self.dram_usage_threshold).contains(&self.hysteresis) {
            return bad("hysteresis must lie in [0, dram_usage_threshold)");
        }
        if self.max_pages_per_activation == 0 || self.control_period_epochs == 0 {
            return bad("max_pages_per_activation and control_period_epochs must be positive");
        }
        positive("hyplacer", "slow_write_bw_threshold_mbps", self.slow_write_bw_threshold_mbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementDecision {
    None,
    Demote(usize),
    Promote(usize),
    PromoteInt(usize),
    /// Number of page pairs to exchange; twice as many pages move.
    Switch(usize),
}

impl PlacementDecision {
    pub fn count(self) -> usize {
        match self {
            PlacementDecision::None => 0,
            PlacementDecision::Demote(n) | PlacementDecision::Promote(n) | PlacementDecision::PromoteInt(n) => n,
            PlacementDecision::Switch(n) => n,
        }
    }

    pub fn mode(self) -> Option<PageFindMode> {
        Some(match self {
            PlacementDecision::None => return None,
            PlacementDecision::Demote(_) => PageFindMode::Demote,
            PlacementDecision::Promote(_) => PageFindMode::Promote,
            PlacementDecision::PromoteInt(_) => PageFindMode::PromoteInt,
            PlacementDecision::Switch(_) => PageFindMode::Switch,
        })
    }
}

impl fmt::Display for PlacementDecision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode() {
            None => f.write_str("NONE"),
            Some(m) => write!(f, "{}({})", m, self.count()),
        }
    }
}

fn pages_at(fraction: f64, capacity: u64) -> u64 {
    (fraction * capacity as f64 + 1e-9).floor() as u64
}

/// The control decision for one period. Thresholds compare strictly, so a
/// value equal to its threshold is on target.
pub fn hyplacer_decide(counters: &BandwidthCounters, occ: &TierOccupancy, cfg: &HyPlacerConfig) -> PlacementDecision {
    let cap = cfg.max_pages_per_activation;
    let capacity = occ.capacity[TierId::Fast];
    let used = occ.used[TierId::Fast];
    let full = occ.usage(TierId::Fast) > cfg.dram_usage_threshold;
    let room = (pages_at(cfg.dram_usage_threshold, capacity).saturating_sub(used) as usize).min(cap);
    let decision = if counters.slow_write_mbps() > cfg.slow_write_bw_threshold_mbps {
        // Write-hot with no room left below the threshold is at capacity too.
        if !full && room > 0 {
            PlacementDecision::PromoteInt(room)
        } else if cfg.treat_full_as_on_target {
            PlacementDecision::None
        } else {
            PlacementDecision::Switch(cap / 2)
        }
    } else if full {
        let target = pages_at(cfg.dram_usage_threshold - cfg.hysteresis, capacity);
        PlacementDecision::Demote((used.saturating_sub(target) as usize).min(cap))
    } else {
        PlacementDecision::Promote(room)
    };
    if decision.count() == 0 {
        PlacementDecision::None
    } else {
        decision
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Idle,
    Waiting { decision: PlacementDecision, ready_at: u64 },
}

/// The HyPlacer control loop: decide, clear SLOW bits, wait, select, move.
#[derive(Debug, Clone)]
pub struct HyPlacer {
    cfg: HyPlacerConfig,
    delay_epochs: u64,
    selector: Selector,
    stage: Stage,
}

impl HyPlacer {
    pub fn new(cfg: HyPlacerConfig, epoch_ms: f64) -> Result<Self, PolicyError> {
        cfg.validate()?;
        let delay_epochs = delay_epochs("hyplacer", cfg.delay_ms, epoch_ms)?;
        if delay_epochs >= cfg.control_period_epochs {
            return Err(PolicyError::Config { policy: "hyplacer", msg: "delay must be shorter than the control period".into() });
        }
        Ok(HyPlacer { cfg, delay_epochs, selector: Selector::new(), stage: Stage::Idle })
    }

    pub fn config(&self) -> &HyPlacerConfig {
        &self.cfg
    }

    fn log_select(ctx: &mut PolicyContext<'_>, mode: PageFindMode, asked: usize, reply: &PageFindReply) {
        let cursor = reply.cursor.last.map(|k| format!("{}:{}", k.pid, k.vaddr)).unwrap_or_else(|| "-".into());
        ctx.log.record(
            ctx.epoch,
            "pagefind",
            &[
                ("mode", &mode),
                ("count", &asked),
                ("selected", &reply.selected.len()),
                ("classes", &reply.histogram().to_string().replace(' ', ",")),
                ("exhausted", &reply.exhausted),
                ("cursor", &cursor),
            ],
        );
        if reply.selected.len() < asked {
            ctx.log.record(ctx.epoch, "shortfall", &[("mode", &mode), ("asked", &asked), ("got", &reply.selected.len())]);
        }
    }

    fn execute(&mut self, ctx: &mut PolicyContext<'_>, decision: PlacementDecision) -> Result<(), PolicyError> {
        match decision {
            PlacementDecision::None => {}
            PlacementDecision::Demote(n) => {
                let reply = self.selector.find_demote(ctx.table, n);
                Self::log_select(ctx, PageFindMode::Demote, n, &reply);
                ctx.migrate(&reply.ids(), TierId::Slow, "demote")?;
            }
            PlacementDecision::Promote(n) | PlacementDecision::PromoteInt(n) => {
                let intensive = matches!(decision, PlacementDecision::PromoteInt(_));
                // Occupancy may have moved during the delay window.
                let occ = ctx.occupancy();
                let room = pages_at(self.cfg.dram_usage_threshold, occ.capacity[TierId::Fast])
                    .saturating_sub(occ.used[TierId::Fast]) as usize;
                let n = n.min(room);
                let reply = self.selector.find_promote(ctx.table, n, intensive)?;
                Self::log_select(ctx, decision.mode().expect("promotion mode"), n, &reply);
                ctx.migrate(&reply.ids(), TierId::Fast, if intensive { "promote_int" } else { "promote" })?;
            }
            PlacementDecision::Switch(n) => {
                let reply = self.selector.find_switch(ctx.table, n)?;
                Self::log_select(ctx, PageFindMode::Switch, n, &reply.promote);
                ctx.exchange(&reply.demote.ids(), &reply.promote.ids(), "switch")?;
            }
        }
        Ok(())
    }
}

impl Policy for HyPlacer {
    fn name(&self) -> &'static str {
        "hyplacer"
    }

    fn on_epoch(&mut self, ctx: &mut PolicyContext<'_>) -> Result<(), PolicyError> {
        match self.stage {
            Stage::Waiting { decision, ready_at } => {
                if ctx.epoch >= ready_at {
                    self.stage = Stage::Idle;
                    self.execute(ctx, decision)?;
                }
                Ok(())
            }
            Stage::Idle => {
                let period = self.cfg.control_period_epochs;
                if ctx.epoch == 0 || ctx.epoch % period != 0 {
                    return Ok(());
                }
                let counters = match ctx.sample(period as usize) {
                    Ok(c) => c,
                    Err(TierError::NoHistory) => return Ok(()),
                    Err(e) => return Err(e.into()),
                };
                let occ = ctx.occupancy();
                let decision = hyplacer_decide(&counters, &occ, &self.cfg);
                ctx.log.record(
                    ctx.epoch,
                    "decide",
                    &[
                        ("decision", &decision),
                        ("slow_write_mbps", &format!("{:.3}", counters.slow_write_mbps())),
                        ("fast_usage", &format!("{:.4}", occ.usage(TierId::Fast))),
                    ],
                );
                match decision {
                    PlacementDecision::None => {}
                    PlacementDecision::Demote(_) => self.execute(ctx, decision)?,
                    _ => {
                        let cleared = self.selector.clear_slow_bits(ctx.table);
                        ctx.log.record(ctx.epoch, "pagefind", &[("mode", &PageFindMode::DcpmmClear), ("cleared", &cleared)]);
                        self.stage = Stage::Waiting { decision, ready_at: ctx.epoch + self.delay_epochs };
                    }
                }
                Ok(())
            }
        }
    }

    fn rate_bound(&self) -> Option<(u64, usize)> {
        Some((self.cfg.control_period_epochs, self.cfg.max_pages_per_activation))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::AccessKind;
    use crate::policy::testutil::Rig;
    use crate::tier::{PerTier, TierRates};

    fn counters(slow_write: f64) -> BandwidthCounters {
        BandwidthCounters {
            rates: PerTier::new(
                TierRates { read_mbps: 1000.0, write_mbps: 500.0 },
                TierRates { read_mbps: 100.0, write_mbps: slow_write },
            ),
            window_epochs: 100,
            short_window: false,
        }
    }

    fn occ(used: u64, capacity: u64) -> TierOccupancy {
        TierOccupancy { used: PerTier::new(used, 0), capacity: PerTier::new(capacity, 100_000) }
    }

    #[test]
    fn decision_table() {
        let cfg = HyPlacerConfig::default();
        // Hand-computed for a 1000-page FAST tier: threshold 950 pages,
        // demotion target 930, switch pairs 65536.
        let cases = [
            (15.0, 970, PlacementDecision::Switch(65_536)),
            (15.0, 500, PlacementDecision::PromoteInt(450)),
            (2.0, 500, PlacementDecision::Promote(450)),
            (2.0, 970, PlacementDecision::Demote(40)),
            (10.0, 500, PlacementDecision::Promote(450)),
            (10.0, 970, PlacementDecision::Demote(40)),
            (15.0, 950, PlacementDecision::Switch(65_536)),
            (2.0, 950, PlacementDecision::None),
        ];
        for (bw, used, expect) in cases {
            assert_eq!(hyplacer_decide(&counters(bw), &occ(used, 1000), &cfg), expect, "bw={bw} used={used}");
        }
    }

    #[test]
    fn counts_are_capped() {
        let cfg = HyPlacerConfig { max_pages_per_activation: 100, ..Default::default() };
        assert_eq!(hyplacer_decide(&counters(2.0), &occ(0, 1_000_000), &cfg), PlacementDecision::Promote(100));
        assert_eq!(hyplacer_decide(&counters(2.0), &occ(1_000_000, 1_000_000), &cfg), PlacementDecision::Demote(100));
        assert_eq!(hyplacer_decide(&counters(50.0), &occ(1_000_000, 1_000_000), &cfg), PlacementDecision::Switch(50));
        let defaults = HyPlacerConfig::default();
        assert_eq!(hyplacer_decide(&counters(2.0), &occ(0, 1_000_000), &defaults), PlacementDecision::Promote(131_072));
    }

    #[test]
    fn full_on_target_variant() {
        let cfg = HyPlacerConfig { treat_full_as_on_target: true, ..Default::default() };
        assert_eq!(hyplacer_decide(&counters(15.0), &occ(970, 1000), &cfg), PlacementDecision::None);
    }

    #[test]
    fn decide_is_pure() {
        let cfg = HyPlacerConfig::default();
        let (c, o) = (counters(12.5), occ(600, 1000));
        let first = hyplacer_decide(&c, &o, &cfg);
        assert!((0..100).all(|_| hyplacer_decide(&c, &o, &cfg) == first));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(HyPlacer::new(HyPlacerConfig { dram_usage_threshold: 1.0, ..Default::default() }, 10.0).is_err());
        assert!(HyPlacer::new(HyPlacerConfig { delay_ms: 45.0, ..Default::default() }, 10.0).is_err());
        assert!(HyPlacer::new(HyPlacerConfig::default(), 10.0).is_ok());
    }

    #[test]
    fn write_hot_region_is_promoted_within_bound() {
        // Region A: 20 read pages in FAST. B: 30 write-hot pages in SLOW.
        // C: 30 cold pages in SLOW. Cap 8 pages per activation.
        let cfg = HyPlacerConfig { max_pages_per_activation: 8, control_period_epochs: 10, ..Default::default() };
        let mut p = HyPlacer::new(cfg, 10.0).unwrap();
        let mut rig = Rig::new(100, 100);
        rig.alloc(&mut p, 20, AccessKind::Read);
        for v in 20..80 {
            rig.table.allocate(1, v, TierId::Slow, AccessKind::Write).unwrap();
        }
        let mut acc: Vec<(u64, u64, u64)> = (0..20).map(|v| (v, 4, 0)).collect();
        acc.extend((20..50).map(|v| (v, 1, 3)));
        let periods = 30usize.div_ceil(8) as u64;
        for _ in 0..=periods * 10 + 5 {
            rig.step(&mut p, &acc, 50.0);
        }
        let in_fast = |rig: &Rig, r: std::ops::Range<u64>| {
            r.filter(|&v| {
                let id = rig.table.lookup(crate::page::PageKey::new(1, v)).unwrap();
                rig.table.page(id).unwrap().tier == TierId::Fast
            })
            .count()
        };
        assert_eq!(in_fast(&rig, 20..50), 30);
        assert_eq!(in_fast(&rig, 50..80), 0);
        assert_eq!(in_fast(&rig, 0..20), 20);
        assert_eq!(rig.log.of_kind("decide").count() as u64, periods);
    }

    #[test]
    fn on_target_state_moves_nothing() {
        let cfg = HyPlacerConfig { control_period_epochs: 10, ..Default::default() };
        let mut p = HyPlacer::new(cfg, 10.0).unwrap();
        let mut rig = Rig::new(100, 100);
        rig.alloc(&mut p, 40, AccessKind::Read);
        for _ in 0..50 {
            assert_eq!(rig.step(&mut p, &[(0, 1, 0)], 0.0).moved, 0);
        }
    }

    #[test]
    fn full_fast_with_slow_writes_switches() {
        let cfg = HyPlacerConfig { control_period_epochs: 10, ..Default::default() };
        let mut p = HyPlacer::new(cfg, 10.0).unwrap();
        let mut rig = Rig::new(10, 20);
        rig.alloc(&mut p, 10, AccessKind::Read);
        for v in 10..20 {
            rig.table.allocate(1, v, TierId::Slow, AccessKind::Write).unwrap();
        }
        // FAST pages 0..10 read-hot, SLOW pages 10..14 written.
        let mut acc: Vec<(u64, u64, u64)> = (0..10).map(|v| (v, 2, 0)).collect();
        acc.extend((10..14).map(|v| (v, 0, 2)));
        let mut moved = 0;
        for _ in 0..16 {
            moved += rig.step(&mut p, &acc, 40.0).moved;
        }
        assert_eq!(moved, 8);
        assert_eq!(rig.table.occupancy().used.0, [10, 10]);
        assert!(rig.log.lines().iter().any(|l| l.contains("decision=SWITCH(")));
    }
}
