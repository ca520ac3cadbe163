//! Page selection: turns PageFind requests into page lists by walking a
//! tier's page table with a per-mode callback.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::page::{PageDescriptor, PageId, PageTable, Visit, WalkCursor};
use crate::tier::{PerTier, TierId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PageFindMode {
    Demote,
    Promote,
    PromoteInt,
    Switch,
    DcpmmClear,
}

impl PageFindMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PageFindMode::Demote => "DEMOTE",
            PageFindMode::Promote => "PROMOTE",
            PageFindMode::PromoteInt => "PROMOTE_INT",
            PageFindMode::Switch => "SWITCH",
            PageFindMode::DcpmmClear => "DCPMM_CLEAR",
        }
    }

    /// Tier the request walks; `None` for the bidirectional SWITCH.
    pub fn scope(self) -> Option<TierId> {
        match self {
            PageFindMode::Demote => Some(TierId::Fast),
            PageFindMode::Switch => None,
            _ => Some(TierId::Slow),
        }
    }
}

impl fmt::Display for PageFindMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PageClass {
    WriteIntensive,
    ReadIntensive,
    Cold,
}

impl PageClass {
    pub fn of(p: &PageDescriptor) -> PageClass {
        if p.dirty {
            PageClass::WriteIntensive
        } else if p.referenced {
            PageClass::ReadIntensive
        } else {
            PageClass::Cold
        }
    }

    pub fn is_intensive(self) -> bool {
        self != PageClass::Cold
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageFindRequest {
    pub mode: PageFindMode,
    pub count: usize,
    /// Bit-clear delay preceding promotion modes.
    pub delay_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectedPage {
    pub id: PageId,
    pub class: PageClass,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageFindReply {
    pub selected: Vec<SelectedPage>,
    /// The whole tier was walked.
    pub exhausted: bool,
    pub cursor: WalkCursor,
}

impl PageFindReply {
    pub fn ids(&self) -> Vec<PageId> {
        self.selected.iter().map(|s| s.id).collect()
    }

    pub fn histogram(&self) -> ClassHistogram {
        ClassHistogram::from_iter(self.selected.iter().map(|s| s.class))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SwitchReply {
    pub promote: PageFindReply,
    pub demote: PageFindReply,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassHistogram {
    pub write_intensive: usize,
    pub read_intensive: usize,
    pub cold: usize,
}

impl FromIterator<PageClass> for ClassHistogram {
    fn from_iter<I: IntoIterator<Item = PageClass>>(iter: I) -> Self {
        let mut h = ClassHistogram::default();
        for c in iter {
            match c {
                PageClass::WriteIntensive => h.write_intensive += 1,
                PageClass::ReadIntensive => h.read_intensive += 1,
                PageClass::Cold => h.cold += 1,
            }
        }
        h
    }
}

impl fmt::Display for ClassHistogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "W={} R={} C={}", self.write_intensive, self.read_intensive, self.cold)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SelectionError {
    #[error("{0} requested without a preceding DCPMM_CLEAR")]
    ProtocolViolation(PageFindMode),
}

/// Per-tier walk cursors plus the state of the clear+delay protocol.
#[derive(Debug, Clone)]
pub struct Selector {
    cursors: PerTier<WalkCursor>,
    cleared: bool,
}

impl Default for Selector {
    fn default() -> Self {
        Selector::new()
    }
}

impl Selector {
    pub fn new() -> Self {
        Selector { cursors: PerTier::new(WalkCursor::start(TierId::Fast), WalkCursor::start(TierId::Slow)), cleared: false }
    }

    pub fn cursor(&self, tier: TierId) -> WalkCursor {
        self.cursors[tier]
    }

    /// Whether a DCPMM_CLEAR is waiting to be consumed by a promotion.
    pub fn armed(&self) -> bool {
        self.cleared
    }

    /// DCPMM_CLEAR: zeroes R/D on every SLOW-resident page and arms the
    /// promotion protocol. Returns the number of descriptors visited.
    pub fn clear_slow_bits(&mut self, table: &mut PageTable) -> usize {
        let out = table.walk(WalkCursor::start(TierId::Slow), usize::MAX, |p| {
            p.clear_bits();
            Visit::Continue
        });
        self.cleared = true;
        out.visited
    }

    /// Class of every SLOW page from the bits set since the last clear.
    pub fn classify_after_delay(&self, table: &PageTable) -> Result<BTreeMap<PageId, PageClass>, SelectionError> {
        if !self.cleared {
            return Err(SelectionError::ProtocolViolation(PageFindMode::DcpmmClear));
        }
        Ok(table
            .resident(TierId::Slow)
            .map(|id| (id, PageClass::of(table.page(id).expect("resident page"))))
            .collect())
    }

    /// DEMOTE: second-chance walk over FAST. Unreferenced pages are
    /// candidates; referenced ones get their bits cleared and are passed
    /// over. Clean candidates are taken before dirty ones.
    pub fn find_demote(&mut self, table: &mut PageTable, count: usize) -> PageFindReply {
        let mut clean = Vec::new();
        let mut dirty = Vec::new();
        let out = table.walk(self.cursors[TierId::Fast], usize::MAX, |p| {
            if p.referenced {
                p.clear_bits();
            } else if p.dirty {
                dirty.push(SelectedPage { id: p.id, class: PageClass::WriteIntensive });
            } else {
                clean.push(SelectedPage { id: p.id, class: PageClass::Cold });
                if clean.len() >= count {
                    return Visit::Stop;
                }
            }
            Visit::Continue
        });
        self.cursors[TierId::Fast] = out.cursor;
        clean.extend(dirty);
        clean.truncate(count);
        PageFindReply { selected: clean, exhausted: out.wrapped, cursor: out.cursor }
    }

    /// PROMOTE / PROMOTE_INT: walks SLOW and returns write-intensive pages,
    /// then read-intensive ones, then (unless `intensive_only`) cold ones,
    /// each group in walk order. Bits are left untouched.
    pub fn find_promote(
        &mut self,
        table: &mut PageTable,
        count: usize,
        intensive_only: bool,
    ) -> Result<PageFindReply, SelectionError> {
        let mode = if intensive_only { PageFindMode::PromoteInt } else { PageFindMode::Promote };
        if !self.cleared {
            return Err(SelectionError::ProtocolViolation(mode));
        }
        self.cleared = false;
        let mut reply = self.walk_slow(table, count, !intensive_only);
        reply.selected.truncate(count);
        Ok(reply)
    }

    fn walk_slow(&mut self, table: &mut PageTable, count: usize, with_cold: bool) -> PageFindReply {
        let mut by_class: [Vec<PageId>; 3] = Default::default();
        let out = table.walk(self.cursors[TierId::Slow], usize::MAX, |p| {
            let class = PageClass::of(p);
            if class.is_intensive() || with_cold {
                by_class[class as usize].push(p.id);
            }
            if by_class[PageClass::WriteIntensive as usize].len() >= count {
                Visit::Stop
            } else {
                Visit::Continue
            }
        });
        self.cursors[TierId::Slow] = out.cursor;
        let classes = [PageClass::WriteIntensive, PageClass::ReadIntensive, PageClass::Cold];
        let selected = classes
            .iter()
            .zip(by_class)
            .flat_map(|(&class, ids)| ids.into_iter().map(move |id| SelectedPage { id, class }))
            .collect();
        PageFindReply { selected, exhausted: out.wrapped, cursor: out.cursor }
    }

    /// SWITCH: pairs intensive SLOW pages with FAST pages that are less
    /// valuable. A write-intensive page displaces a cold FAST page, or a
    /// read-intensive one when no cold page is left; a read-intensive page
    /// displaces only cold pages. Both lists have equal length.
    pub fn find_switch(&mut self, table: &mut PageTable, count: usize) -> Result<SwitchReply, SelectionError> {
        if !self.cleared {
            return Err(SelectionError::ProtocolViolation(PageFindMode::Switch));
        }
        self.cleared = false;
        let mut up = self.walk_slow(table, count, false);
        up.selected.truncate(count);
        let wanted = up.selected.len();

        let mut cold = Vec::new();
        let mut read = Vec::new();
        let out = if wanted == 0 {
            table.walk(self.cursors[TierId::Fast], 0, |_| Visit::Stop)
        } else {
            table.walk(self.cursors[TierId::Fast], usize::MAX, |p| {
                match PageClass::of(p) {
                    PageClass::Cold => cold.push(p.id),
                    PageClass::ReadIntensive => read.push(p.id),
                    PageClass::WriteIntensive => {}
                }
                if p.referenced {
                    p.clear_bits();
                }
                if cold.len() >= wanted {
                    Visit::Stop
                } else {
                    Visit::Continue
                }
            })
        };
        self.cursors[TierId::Fast] = out.cursor;

        let (mut promote, mut demote) = (Vec::new(), Vec::new());
        let (mut cold, mut read) = (cold.into_iter(), read.into_iter());
        let (writes, reads): (Vec<_>, Vec<_>) =
            up.selected.iter().partition(|s| s.class == PageClass::WriteIntensive);
        for s in writes {
            let victim = cold
                .next()
                .map(|id| SelectedPage { id, class: PageClass::Cold })
                .or_else(|| read.next().map(|id| SelectedPage { id, class: PageClass::ReadIntensive }));
            match victim {
                Some(v) => {
                    promote.push(s);
                    demote.push(v);
                }
                None => break,
            }
        }
        for s in reads {
            match cold.next() {
                Some(id) => {
                    promote.push(s);
                    demote.push(SelectedPage { id, class: PageClass::Cold });
                }
                None => break,
            }
        }
        Ok(SwitchReply {
            promote: PageFindReply { selected: promote, exhausted: up.exhausted, cursor: up.cursor },
            demote: PageFindReply { selected: demote, exhausted: out.wrapped, cursor: out.cursor },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::page::tests::table;
    use crate::page::{AccessKind, PageKey};
    use crate::workload::{AccessBatch, AccessEntry};
    use proptest::prelude::*;

    fn fill(pt: &mut PageTable, n: u64, tier: TierId) -> Vec<PageId> {
        (0..n).map(|v| pt.allocate(1, v, tier, AccessKind::Read).unwrap()).collect()
    }

    fn touch(pt: &mut PageTable, accesses: &[(u64, u64, u64)]) {
        let entries = accesses
            .iter()
            .map(|&(v, r, w)| AccessEntry { key: PageKey::new(1, v), reads: r, writes: w })
            .collect();
        pt.apply_access_batch(&AccessBatch { epoch: 0, entries, clamped: false }).unwrap();
    }

    fn bits(pt: &PageTable) -> Vec<(bool, bool)> {
        pt.pages().map(|p| (p.referenced, p.dirty)).collect()
    }

    #[test]
    fn demote_first_pass_selects_nothing() {
        let mut pt = table(16, 16);
        fill(&mut pt, 16, TierId::Fast);
        let mut sel = Selector::new();
        let r = sel.find_demote(&mut pt, 4);
        assert!(r.selected.is_empty());
        assert!(r.exhausted);
        assert!(pt.pages().all(|p| !p.referenced && !p.dirty));
        let r = sel.find_demote(&mut pt, 4);
        assert_eq!(r.ids(), vec![PageId(0), PageId(1), PageId(2), PageId(3)]);
    }

    #[test]
    fn demote_on_empty_fast() {
        let mut pt = table(4, 4);
        let r = Selector::new().find_demote(&mut pt, 3);
        assert!(r.selected.is_empty());
        assert!(r.exhausted);
    }

    #[test]
    fn demote_is_capped_at_activation_limit() {
        let cap = 131_072;
        let mut pt = table(140_000, 8);
        fill(&mut pt, 140_000, TierId::Fast);
        let mut sel = Selector::new();
        sel.find_demote(&mut pt, cap);
        assert_eq!(sel.find_demote(&mut pt, cap).selected.len(), cap);
    }

    /// Textbook second-chance clock over a ring of reference bits.
    struct ClockOracle {
        referenced: Vec<bool>,
        hand: usize,
    }

    impl ClockOracle {
        fn select(&mut self, count: usize) -> Vec<usize> {
            let n = self.referenced.len();
            let mut out = Vec::new();
            for _ in 0..n {
                let i = self.hand;
                self.hand = (self.hand + 1) % n;
                if self.referenced[i] {
                    self.referenced[i] = false;
                } else {
                    out.push(i);
                    if out.len() == count {
                        break;
                    }
                }
            }
            out
        }
    }

    #[test]
    fn demote_matches_scripted_clock() {
        let mut pt = table(16, 0);
        fill(&mut pt, 16, TierId::Fast);
        let mut oracle = ClockOracle { referenced: vec![true; 16], hand: 0 };
        let mut sel = Selector::new();
        let script: [(&[u64], usize); 5] = [(&[], 3), (&[0, 1, 2], 5), (&[3, 9, 15], 4), (&[], 16), (&[5], 2)];
        for (touched, count) in script {
            let acc: Vec<_> = touched.iter().map(|&v| (v, 1, 0)).collect();
            touch(&mut pt, &acc);
            for &v in touched {
                oracle.referenced[v as usize] = true;
            }
            let got: Vec<usize> = sel.find_demote(&mut pt, count).ids().iter().map(|id| id.0 as usize).collect();
            assert_eq!(got, oracle.select(count));
        }
    }

    #[test]
    fn demote_prefers_clean_over_dirty_candidates() {
        let mut pt = table(8, 0);
        fill(&mut pt, 8, TierId::Fast);
        let mut sel = Selector::new();
        sel.find_demote(&mut pt, 1);
        // Leave a dirty, unreferenced page ahead of the clean ones.
        pt.page_mut(PageId(0)).unwrap().dirty = true;
        let r = sel.find_demote(&mut pt, 3);
        assert_eq!(r.ids(), vec![PageId(1), PageId(2), PageId(3)]);
        let r = sel.find_demote(&mut pt, 8);
        assert_eq!(r.histogram().write_intensive, 1);
        assert_eq!(r.selected.last().unwrap().id, PageId(0));
    }

    #[test]
    fn clear_slow_bits_is_exhaustive_and_idempotent() {
        let mut pt = table(4, 200);
        let mut sel = Selector::new();
        assert_eq!(sel.clear_slow_bits(&mut pt), 0);
        fill(&mut pt, 100, TierId::Slow);
        sel.clear_slow_bits(&mut pt);
        touch(&mut pt, &(0..40).map(|v| (v, 1, v % 2)).collect::<Vec<_>>());
        assert_eq!(sel.clear_slow_bits(&mut pt), 100);
        assert!(pt.pages().all(|p| !p.referenced && !p.dirty));
        let before = bits(&pt);
        sel.clear_slow_bits(&mut pt);
        assert_eq!(bits(&pt), before);
    }

    #[test]
    fn classification_follows_window_accesses() {
        let mut pt = table(4, 8);
        fill(&mut pt, 3, TierId::Slow);
        let mut sel = Selector::new();
        assert_eq!(
            sel.classify_after_delay(&pt),
            Err(SelectionError::ProtocolViolation(PageFindMode::DcpmmClear))
        );
        sel.clear_slow_bits(&mut pt);
        touch(&mut pt, &[(0, 2, 1), (1, 3, 0)]);
        let before = bits(&pt);
        let classes = sel.classify_after_delay(&pt).unwrap();
        assert_eq!(bits(&pt), before);
        assert_eq!(classes[&PageId(0)], PageClass::WriteIntensive);
        assert_eq!(classes[&PageId(1)], PageClass::ReadIntensive);
        assert_eq!(classes[&PageId(2)], PageClass::Cold);
    }

    #[test]
    fn promote_requires_clear() {
        let mut pt = table(4, 4);
        let err = Selector::new().find_promote(&mut pt, 1, true);
        assert_eq!(err, Err(SelectionError::ProtocolViolation(PageFindMode::PromoteInt)));
        let err = Selector::new().find_switch(&mut pt, 1);
        assert_eq!(err, Err(SelectionError::ProtocolViolation(PageFindMode::Switch)));
    }

    #[test]
    fn promote_int_on_cold_tier_is_empty() {
        let mut pt = table(4, 16);
        fill(&mut pt, 16, TierId::Slow);
        let mut sel = Selector::new();
        sel.clear_slow_bits(&mut pt);
        let r = sel.find_promote(&mut pt, 8, true).unwrap();
        assert!(r.selected.is_empty());
        assert!(r.exhausted);
    }

    fn mixed_slow(pt: &mut PageTable, sel: &mut Selector) {
        // Pages 0..10 in SLOW: W at 3 and 8, R at 1, 2, 5, 6, 9, cold elsewhere.
        fill(pt, 10, TierId::Slow);
        sel.clear_slow_bits(pt);
        touch(pt, &[(1, 1, 0), (2, 1, 0), (3, 1, 1), (5, 1, 0), (6, 1, 0), (8, 0, 1), (9, 1, 0)]);
    }

    #[test]
    fn promote_int_priority_order() {
        let mut pt = table(4, 10);
        let mut sel = Selector::new();
        mixed_slow(&mut pt, &mut sel);
        let before = bits(&pt);
        let r = sel.find_promote(&mut pt, 3, true).unwrap();
        assert_eq!(bits(&pt), before);
        assert_eq!(r.ids(), vec![PageId(3), PageId(8), PageId(1)]);
        assert_eq!(r.histogram(), ClassHistogram { write_intensive: 2, read_intensive: 1, cold: 0 });
    }

    #[test]
    fn promote_fills_with_cold_in_walk_order() {
        let mut pt = table(4, 10);
        let mut sel = Selector::new();
        mixed_slow(&mut pt, &mut sel);
        let r = sel.find_promote(&mut pt, 9, false).unwrap();
        let expect: Vec<PageId> = [3, 8, 1, 2, 5, 6, 9, 0, 4].iter().map(|&i| PageId(i)).collect();
        assert_eq!(r.ids(), expect);
    }

    #[test]
    fn switch_without_cold_fast_pages_is_empty() {
        let mut pt = table(4, 8);
        fill(&mut pt, 4, TierId::Fast);
        let slow: Vec<PageId> = (10..14).map(|v| pt.allocate(1, v, TierId::Slow, AccessKind::Read).unwrap()).collect();
        let mut sel = Selector::new();
        sel.clear_slow_bits(&mut pt);
        touch(&mut pt, &[(0, 1, 0), (1, 1, 0), (2, 1, 0), (3, 1, 0), (10, 1, 0), (11, 1, 0)]);
        let r = sel.find_switch(&mut pt, 8).unwrap();
        assert!(r.promote.selected.is_empty() && r.demote.selected.is_empty());
        assert_eq!(slow.len(), 4);
    }

    #[test]
    fn switch_truncates_to_available_cold() {
        // 10 intensive SLOW pages against 4 cold FAST pages.
        let mut pt = table(8, 16);
        fill(&mut pt, 8, TierId::Fast);
        for v in 100..110 {
            pt.allocate(1, v, TierId::Slow, AccessKind::Read).unwrap();
        }
        let mut sel = Selector::new();
        sel.find_demote(&mut pt, 1);
        sel.clear_slow_bits(&mut pt);
        let mut acc: Vec<_> = (100..110).map(|v| (v, 1, 0)).collect();
        acc.extend([(0, 0, 1), (2, 0, 1), (4, 0, 1), (6, 0, 1)]);
        touch(&mut pt, &acc);
        let r = sel.find_switch(&mut pt, 32).unwrap();
        assert_eq!(r.promote.selected.len(), 4);
        assert_eq!(r.demote.selected.len(), 4);
        assert!(r.demote.selected.iter().all(|s| s.class == PageClass::Cold));
        let fast: Vec<_> = r.demote.ids();
        pt.exchange(&fast, &r.promote.ids()).unwrap();
    }

    #[test]
    fn write_intensive_displaces_read_intensive() {
        let mut pt = table(4, 8);
        fill(&mut pt, 4, TierId::Fast);
        for v in 10..14 {
            pt.allocate(1, v, TierId::Slow, AccessKind::Read).unwrap();
        }
        let mut sel = Selector::new();
        sel.clear_slow_bits(&mut pt);
        touch(&mut pt, &[(0, 1, 0), (1, 1, 0), (2, 1, 0), (3, 1, 0), (10, 1, 1), (11, 1, 0)]);
        let r = sel.find_switch(&mut pt, 8).unwrap();
        assert_eq!(r.promote.ids(), vec![pt.lookup(PageKey::new(1, 10)).unwrap()]);
        assert_eq!(r.demote.histogram().read_intensive, 1);
    }

    proptest! {
        #[test]
        fn demote_equals_clock_reference(
            n in 1usize..64,
            rounds in prop::collection::vec((prop::collection::vec(0usize..64, 0..20), 1usize..70), 1..8),
        ) {
            let mut pt = table(n as u64, 0);
            fill(&mut pt, n as u64, TierId::Fast);
            let mut oracle = ClockOracle { referenced: vec![true; n], hand: 0 };
            let mut sel = Selector::new();
            for (touched, count) in rounds {
                let mut acc: Vec<_> = touched.iter().filter(|&&v| v < n).map(|&v| (v as u64, 1, 0)).collect();
                acc.sort();
                acc.dedup();
                touch(&mut pt, &acc);
                for &(v, _, _) in &acc {
                    oracle.referenced[v as usize] = true;
                }
                let got: Vec<usize> = sel.find_demote(&mut pt, count).ids().iter().map(|id| id.0 as usize).collect();
                prop_assert_eq!(got, oracle.select(count));
            }
        }

        #[test]
        fn classification_matches_truth(accesses in prop::collection::vec((0u64..32, 0u64..4, 0u64..4), 0..40)) {
            let mut pt = table(4, 32);
            fill(&mut pt, 32, TierId::Slow);
            let mut sel = Selector::new();
            sel.clear_slow_bits(&mut pt);
            let mut acc = accesses.clone();
            acc.sort_by_key(|a| a.0);
            acc.dedup_by_key(|a| a.0);
            touch(&mut pt, &acc);
            let classes = sel.classify_after_delay(&pt).unwrap();
            for p in pt.pages() {
                let expect = if p.truth_writes > 0 {
                    PageClass::WriteIntensive
                } else if p.truth_reads > 0 {
                    PageClass::ReadIntensive
                } else {
                    PageClass::Cold
                };
                prop_assert_eq!(classes[&p.id], expect);
            }
        }

        #[test]
        fn promotion_never_mutates_bits(accesses in prop::collection::vec((0u64..24, 0u64..3, 0u64..3), 0..30), count in 1usize..30, int in any::<bool>()) {
            let mut pt = table(4, 24);
            fill(&mut pt, 24, TierId::Slow);
            let mut sel = Selector::new();
            sel.clear_slow_bits(&mut pt);
            let mut acc = accesses.clone();
            acc.sort_by_key(|a| a.0);
            acc.dedup_by_key(|a| a.0);
            touch(&mut pt, &acc);
            let before = bits(&pt);
            let r = sel.find_promote(&mut pt, count, int).unwrap();
            prop_assert!(r.selected.len() <= count);
            prop_assert_eq!(bits(&pt), before);
        }
    }
}
