//! Simulated process page tables: residency, R/D bits, ground-truth access
//! counts, cursor-based pagewalks, and the migrate/exchange primitives.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;
use std::ops::Bound;

use thiserror::Error;

use crate::tier::{PerTier, TierId, Traffic, LINE_SIZE, PAGE_SIZE};
use crate::workload::AccessBatch;

pub type Pid = u32;
/// Virtual page number.
pub type Vpn = u64;

/// Globally unique page handle; indexes the descriptor table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageId(pub u32);

/// Page identity as seen by a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PageKey {
    pub pid: Pid,
    pub vaddr: Vpn,
}

impl PageKey {
    pub fn new(pid: Pid, vaddr: Vpn) -> Self {
        PageKey { pid, vaddr }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PageError {
    #[error("process {0} is not bound")]
    UnboundPid(Pid),
    #[error("page {0:?} is not resident")]
    NotResident(PageKey),
    #[error("page {0:?} is already resident")]
    AlreadyResident(PageKey),
    #[error("unknown page id {0:?}")]
    UnknownPage(PageId),
    #[error("page {page:?} is resident in {actual}, expected {expected}")]
    WrongTier { page: PageId, expected: TierId, actual: TierId },
    #[error("page {0:?} appears more than once in the request")]
    Duplicate(PageId),
    #[error("{tier} tier has {free} free pages, request needs {needed}")]
    CapacityExceeded { tier: TierId, free: u64, needed: u64 },
    #[error("exchange lists differ in length ({fast} fast, {slow} slow)")]
    UnequalExchange { fast: usize, slow: usize },
    #[error("both tiers are full; cannot allocate {0:?}")]
    OutOfMemory(PageKey),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageDescriptor {
    pub id: PageId,
    pub pid: Pid,
    pub vaddr: Vpn,
    pub tier: TierId,
    pub referenced: bool,
    pub dirty: bool,
    /// Lines read this epoch.
    pub truth_reads: u64,
    /// Lines written this epoch.
    pub truth_writes: u64,
}

impl PageDescriptor {
    pub fn key(&self) -> PageKey {
        PageKey::new(self.pid, self.vaddr)
    }

    pub fn clear_bits(&mut self) {
        self.referenced = false;
        self.dirty = false;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Read,
    Write,
}

/// Resume point of a per-tier walk. `None` starts from the first page in
/// canonical (pid, vaddr) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkCursor {
    pub tier: TierId,
    pub last: Option<PageKey>,
}

impl WalkCursor {
    pub fn start(tier: TierId) -> Self {
        WalkCursor { tier, last: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Visit {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkOutcome {
    pub cursor: WalkCursor,
    pub visited: usize,
    /// Every resident page of the tier was visited.
    pub wrapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TierOccupancy {
    pub used: PerTier<u64>,
    pub capacity: PerTier<u64>,
}

impl TierOccupancy {
    pub fn usage(&self, tier: TierId) -> f64 {
        self.used[tier] as f64 / self.capacity[tier] as f64
    }

    pub fn free(&self, tier: TierId) -> u64 {
        self.capacity[tier] - self.used[tier]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MigrationReport {
    pub moved: usize,
    /// Bytes copied, counted once per page.
    pub bytes: u64,
    pub promoted: usize,
    pub demoted: usize,
}

impl MigrationReport {
    pub fn merge(&mut self, other: MigrationReport) {
        self.moved += other.moved;
        self.bytes += other.bytes;
        self.promoted += other.promoted;
        self.demoted += other.demoted;
    }
}

/// Traffic produced by one access batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchTraffic {
    pub per_tier: PerTier<Traffic>,
    pub per_pid: BTreeMap<Pid, PerTier<Traffic>>,
}

#[derive(Debug, Clone)]
pub struct PageTable {
    pages: Vec<PageDescriptor>,
    index: HashMap<PageKey, PageId>,
    resident: PerTier<BTreeMap<PageKey, PageId>>,
    capacity: PerTier<u64>,
    bound: BTreeSet<Pid>,
    page_bytes: u64,
    touched: Vec<PageId>,
    pending: PerTier<Traffic>,
}

impl PageTable {
    /// `page_scale` base pages are represented by each simulated page; it
    /// scales every byte figure but none of the page counts.
    pub fn new(capacity: PerTier<u64>, page_scale: u64) -> Self {
        PageTable {
            pages: Vec::new(),
            index: HashMap::new(),
            resident: PerTier::default(),
            capacity,
            bound: BTreeSet::new(),
            page_bytes: PAGE_SIZE * page_scale.max(1),
            touched: Vec::new(),
            pending: PerTier::default(),
        }
    }

    pub fn page_bytes(&self) -> u64 {
        self.page_bytes
    }

    pub fn bind(&mut self, pid: Pid) {
        self.bound.insert(pid);
    }

    pub fn is_bound(&self, pid: Pid) -> bool {
        self.bound.contains(&pid)
    }

    pub fn len(&self) -> usize {
        self.pages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pages.is_empty()
    }

    pub fn page(&self, id: PageId) -> Option<&PageDescriptor> {
        self.pages.get(id.0 as usize)
    }

    pub fn page_mut(&mut self, id: PageId) -> Option<&mut PageDescriptor> {
        self.pages.get_mut(id.0 as usize)
    }

    pub fn lookup(&self, key: PageKey) -> Option<PageId> {
        self.index.get(&key).copied()
    }

    pub fn pages(&self) -> impl Iterator<Item = &PageDescriptor> {
        self.pages.iter()
    }

    /// Pages resident in `tier`, in canonical order.
    pub fn resident(&self, tier: TierId) -> impl Iterator<Item = PageId> + '_ {
        self.resident[tier].values().copied()
    }

    pub fn resident_count(&self, tier: TierId) -> usize {
        self.resident[tier].len()
    }

    pub fn occupancy(&self) -> TierOccupancy {
        TierOccupancy {
            used: PerTier::new(self.resident[TierId::Fast].len() as u64, self.resident[TierId::Slow].len() as u64),
            capacity: self.capacity,
        }
    }

    pub fn free(&self, tier: TierId) -> u64 {
        self.capacity[tier] - self.resident[tier].len() as u64
    }

    /// First-touch allocation: the hinted tier while it has room, the other
    /// one otherwise. The allocating access sets the referenced bit, and the
    /// dirty bit too when it is a store.
    pub fn allocate(
        &mut self,
        pid: Pid,
        vaddr: Vpn,
        hint: TierId,
        first_access: AccessKind,
    ) -> Result<PageId, PageError> {
        let key = PageKey::new(pid, vaddr);
        if !self.bound.contains(&pid) {
            return Err(PageError::UnboundPid(pid));
        }
        if self.index.contains_key(&key) {
            return Err(PageError::AlreadyResident(key));
        }
        let tier = if self.free(hint) > 0 {
            hint
        } else if self.free(hint.other()) > 0 {
            hint.other()
        } else {
            return Err(PageError::OutOfMemory(key));
        };
        let id = PageId(self.pages.len() as u32);
        self.pages.push(PageDescriptor {
            id,
            pid,
            vaddr,
            tier,
            referenced: true,
            dirty: first_access == AccessKind::Write,
            truth_reads: 0,
            truth_writes: 0,
        });
        self.index.insert(key, id);
        self.resident[tier].insert(key, id);
        Ok(id)
    }

    /// Applies one epoch of accesses: sets R/D bits, counts ground truth, and
    /// returns the byte traffic per tier and per process. Each page is charged
    /// at most one page worth of bytes per batch. Truth counters from the
    /// previous batch are reset first.
    pub fn apply_access_batch(&mut self, batch: &AccessBatch) -> Result<BatchTraffic, PageError> {
        for id in self.touched.drain(..) {
            let p = &mut self.pages[id.0 as usize];
            p.truth_reads = 0;
            p.truth_writes = 0;
        }
        // Validate first so a bad batch leaves no partial effects.
        let mut ids = Vec::with_capacity(batch.entries.len());
        for e in &batch.entries {
            if !self.bound.contains(&e.key.pid) {
                return Err(PageError::UnboundPid(e.key.pid));
            }
            ids.push(self.index.get(&e.key).copied().ok_or(PageError::NotResident(e.key))?);
        }
        let cap = self.page_bytes as f64;
        let mut out = BatchTraffic::default();
        for (e, id) in batch.entries.iter().zip(ids) {
            if e.reads == 0 && e.writes == 0 {
                continue;
            }
            let p = &mut self.pages[id.0 as usize];
            if p.truth_reads == 0 && p.truth_writes == 0 {
                self.touched.push(id);
            }
            let before = ((p.truth_reads + p.truth_writes) as f64 * LINE_SIZE as f64).min(cap);
            p.truth_reads += e.reads;
            p.truth_writes += e.writes;
            p.referenced = true;
            if e.writes > 0 {
                p.dirty = true;
            }
            let after = ((p.truth_reads + p.truth_writes) as f64 * LINE_SIZE as f64).min(cap);
            let charged = after - before;
            if charged <= 0.0 {
                continue;
            }
            let share = e.reads as f64 / (e.reads + e.writes) as f64;
            let t = Traffic::new(charged * share, charged * (1.0 - share));
            out.per_tier[p.tier].add(t);
            out.per_pid.entry(p.pid).or_default()[p.tier].add(t);
        }
        Ok(out)
    }

    /// Visits up to `budget` pages resident in the cursor's tier, in canonical
    /// order starting strictly after the cursor and wrapping around. The
    /// returned cursor sits on the last visited page.
    pub fn walk<F>(&mut self, cursor: WalkCursor, budget: usize, mut visitor: F) -> WalkOutcome
    where
        F: FnMut(&mut PageDescriptor) -> Visit,
    {
        let tier = cursor.tier;
        let map = &self.resident[tier];
        let n = map.len();
        let mut out = WalkOutcome { cursor, visited: 0, wrapped: n == 0 };
        if n == 0 || budget == 0 {
            return out;
        }
        let limit = budget.min(n);
        let order: Box<dyn Iterator<Item = (&PageKey, &PageId)>> = match cursor.last {
            Some(last) => Box::new(
                map.range((Bound::Excluded(last), Bound::Unbounded))
                    .chain(map.range(..=last)),
            ),
            None => Box::new(map.iter()),
        };
        for (key, id) in order.take(limit) {
            out.visited += 1;
            out.cursor.last = Some(*key);
            if visitor(&mut self.pages[id.0 as usize]) == Visit::Stop {
                break;
            }
        }
        out.wrapped = out.visited == n;
        out
    }

    fn check_move(&self, pages: &[PageId], from: TierId) -> Result<(), PageError> {
        let mut seen = HashSet::with_capacity(pages.len());
        for &id in pages {
            let p = self.page(id).ok_or(PageError::UnknownPage(id))?;
            if p.tier != from {
                return Err(PageError::WrongTier { page: id, expected: from, actual: p.tier });
            }
            if !seen.insert(id) {
                return Err(PageError::Duplicate(id));
            }
        }
        Ok(())
    }

    fn set_tier(&mut self, id: PageId, dest: TierId) {
        let p = &mut self.pages[id.0 as usize];
        let key = p.key();
        self.resident[p.tier].remove(&key);
        p.tier = dest;
        // The new mapping starts with clean R/D bits.
        p.clear_bits();
        self.resident[dest].insert(key, id);
    }

    fn charge_copy(&mut self, from: TierId, to: TierId, pages: usize) -> u64 {
        let bytes = pages as u64 * self.page_bytes;
        self.pending[from].add(Traffic::new(bytes as f64, 0.0));
        self.pending[to].add(Traffic::new(0.0, bytes as f64));
        bytes
    }

    /// Moves every page to `dest`, or none of them if `dest` lacks room.
    pub fn migrate(&mut self, pages: &[PageId], dest: TierId) -> Result<MigrationReport, PageError> {
        if pages.is_empty() {
            return Ok(MigrationReport::default());
        }
        let from = dest.other();
        self.check_move(pages, from)?;
        let free = self.free(dest);
        if (pages.len() as u64) > free {
            return Err(PageError::CapacityExceeded { tier: dest, free, needed: pages.len() as u64 });
        }
        for &id in pages {
            self.set_tier(id, dest);
        }
        let bytes = self.charge_copy(from, dest, pages.len());
        let mut report = MigrationReport { moved: pages.len(), bytes, ..Default::default() };
        match dest {
            TierId::Fast => report.promoted = pages.len(),
            TierId::Slow => report.demoted = pages.len(),
        }
        Ok(report)
    }

    /// Swaps equal-sized page sets between the tiers; occupancy is unchanged.
    pub fn exchange(&mut self, fast_pages: &[PageId], slow_pages: &[PageId]) -> Result<MigrationReport, PageError> {
        if fast_pages.len() != slow_pages.len() {
            return Err(PageError::UnequalExchange { fast: fast_pages.len(), slow: slow_pages.len() });
        }
        if fast_pages.is_empty() {
            return Ok(MigrationReport::default());
        }
        self.check_move(fast_pages, TierId::Fast)?;
        self.check_move(slow_pages, TierId::Slow)?;
        for &id in fast_pages {
            self.set_tier(id, TierId::Slow);
        }
        for &id in slow_pages {
            self.set_tier(id, TierId::Fast);
        }
        let n = fast_pages.len();
        let bytes = self.charge_copy(TierId::Fast, TierId::Slow, n) + self.charge_copy(TierId::Slow, TierId::Fast, n);
        Ok(MigrationReport { moved: 2 * n, bytes, promoted: n, demoted: n })
    }

    /// Changes residency without charging copy traffic; the caller accounts
    /// for it. Used by the hardware-cache mode.
    pub fn relocate(&mut self, id: PageId, dest: TierId) -> Result<(), PageError> {
        let p = self.page(id).ok_or(PageError::UnknownPage(id))?;
        if p.tier == dest {
            return Ok(());
        }
        if self.free(dest) == 0 {
            return Err(PageError::CapacityExceeded { tier: dest, free: 0, needed: 1 });
        }
        // A cache fill keeps the PTE, so R/D bits survive.
        let p = &mut self.pages[id.0 as usize];
        let (key, from) = (p.key(), p.tier);
        p.tier = dest;
        self.resident[from].remove(&key);
        self.resident[dest].insert(key, id);
        Ok(())
    }

    /// Adds traffic to a tier's pending (non-application) stream.
    pub fn charge(&mut self, tier: TierId, traffic: Traffic) {
        self.pending[tier].add(traffic);
    }

    /// Drains migration and cache traffic accumulated since the last call.
    pub fn take_pending_traffic(&mut self) -> PerTier<Traffic> {
        std::mem::take(&mut self.pending)
    }

    /// One line per page in canonical order: `pid vaddr tier R D`.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut all: Vec<&PageDescriptor> = self.pages.iter().collect();
        all.sort_by_key(|p| p.key());
        for p in all {
            writeln!(out, "{} {} {} {} {}", p.pid, p.vaddr, p.tier, p.referenced as u8, p.dirty as u8)?;
        }
        Ok(())
    }
}
