//! Tiered multi-threaded allocator: per-thread local caches in front of a
//! shared transfer cache in front of a central heap.
//!
//! Most requests hit the thread's local cache. An empty local cache refills a
//! batch from the shared cache (or the central heap behind it), an overfull
//! one flushes a batch back, and a free from a thread other than the
//! allocating one goes straight to the shared cache. Every operation that
//! reaches the shared tier costs one atomic synchronization.
//!
//! The thread-local-only mode drops the shared tier: each thread owns a
//! private heap and keeps whatever it frees, so memory freed by one thread is
//! never reused by the thread that allocated it.

use std::collections::HashMap;

use thiserror::Error;

use crate::heap::{
    BlockKind, HeapConfig, HeapError, HeapLayout, HeapState, MetaTouch, SizeClass, DEFAULT_HEAP_BASE,
    DEFAULT_META_BASE, LINE_BYTES, META_REGION_LEN,
};
use crate::trace::{Rw, ThreadId};

/// Per-thread list heads, one 4 KiB page per thread.
const LOCAL_META_BASE: u64 = 0x0800_0000;
const LOCAL_META_STRIDE: u64 = 0x1000;
const SHARED_META_BASE: u64 = 0x0400_0000;
const SHARED_LOCK_OFF: u64 = 0x1000;
/// Address span reserved per private heap in thread-local mode.
const HEAP_SPAN_SHIFT: u32 = 36;
pub const MAX_PRIVATE_HEAPS: usize = ((DEFAULT_HEAP_BASE - DEFAULT_META_BASE) / META_REGION_LEN) as usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TierMode {
    Tiered,
    ThreadLocalOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieredConfig {
    pub batch_size: usize,
    pub local_cap: usize,
    pub mode: TierMode,
    pub heap: HeapConfig,
}

impl Default for TieredConfig {
    fn default() -> Self {
        TieredConfig {
            batch_size: 32,
            local_cap: 64,
            mode: TierMode::Tiered,
            heap: HeapConfig::default(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TieredError {
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error("thread {0} out of range")]
    UnknownThread(ThreadId),
    #[error("invalid tiered configuration: {0}")]
    BadConfig(String),
}

/// Where a request was served.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TierPath {
    Local,
    SharedRefill,
    /// Refilled from the central (or, thread-locally, private) heap.
    Central,
    Large,
    LocalFree,
    Flush,
    CrossFree,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostEvents {
    pub path: TierPath,
    pub atomic_syncs: u32,
    /// Shared-metadata lines last written by a different thread.
    pub ownership_transfers: u32,
    pub chunk_acquired: bool,
    /// Metadata lines touched, including the in-band link word of the block.
    pub touches: Vec<MetaTouch>,
}

impl CostEvents {
    fn new(path: TierPath) -> Self {
        CostEvents {
            path,
            atomic_syncs: 0,
            ownership_transfers: 0,
            chunk_acquired: false,
            touches: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockCensus {
    pub carved: u64,
    pub live: u64,
    pub local: u64,
    pub shared: u64,
    pub backing: u64,
    pub heap_free: u64,
}

impl BlockCensus {
    pub fn balanced(&self) -> bool {
        self.carved == self.live + self.local + self.shared + self.backing + self.heap_free
    }
}

#[derive(Debug, Clone, Copy)]
struct LiveBlock {
    owner: ThreadId,
    kind: BlockKind,
}

#[derive(Debug, Clone)]
pub struct TieredState {
    config: TieredConfig,
    /// `local[thread][class]`, head at the end.
    local: Vec<Vec<Vec<u64>>>,
    shared: Vec<Vec<u64>>,
    /// Thread-local mode: overflow beyond `local_cap`, never shared.
    backing: Vec<Vec<Vec<u64>>>,
    /// One central heap, or one private heap per thread.
    heaps: Vec<HeapState>,
    live: HashMap<u64, LiveBlock>,
    shared_writer: HashMap<u64, ThreadId>,
    atomic_syncs: u64,
    ownership_transfers: u64,
    peak_committed: u64,
}

impl TieredState {
    pub fn new(config: TieredConfig, threads: usize) -> Result<Self, TieredError> {
        if threads == 0 {
            return Err(TieredError::BadConfig("need at least one thread".into()));
        }
        if config.batch_size == 0 || config.local_cap == 0 {
            return Err(TieredError::BadConfig("batch_size and local_cap must be > 0".into()));
        }
        if config.batch_size > config.local_cap {
            return Err(TieredError::BadConfig(format!(
                "batch_size {} exceeds local_cap {}",
                config.batch_size, config.local_cap
            )));
        }
        let heaps = match config.mode {
            TierMode::Tiered => vec![HeapState::new(config.heap.clone())?],
            TierMode::ThreadLocalOnly => {
                if threads > MAX_PRIVATE_HEAPS {
                    return Err(TieredError::BadConfig(format!(
                        "thread-local mode supports at most {MAX_PRIVATE_HEAPS} threads"
                    )));
                }
                (0..threads as u64)
                    .map(|i| {
                        let layout = HeapLayout {
                            heap_base: DEFAULT_HEAP_BASE + (i << HEAP_SPAN_SHIFT),
                            meta_base: DEFAULT_META_BASE + i * META_REGION_LEN,
                        };
                        HeapState::with_layout(config.heap.clone(), layout)
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let classes = config.heap.class_table.len();
        Ok(TieredState {
            local: vec![vec![Vec::new(); classes]; threads],
            shared: vec![Vec::new(); classes],
            backing: vec![vec![Vec::new(); classes]; threads],
            heaps,
            live: HashMap::new(),
            shared_writer: HashMap::new(),
            atomic_syncs: 0,
            ownership_transfers: 0,
            peak_committed: 0,
            config,
        })
    }

    pub fn config(&self) -> &TieredConfig {
        &self.config
    }

    pub fn threads(&self) -> usize {
        self.local.len()
    }

    pub fn size_to_class(&self, size: u64) -> SizeClass {
        self.heaps[0].size_to_class(size)
    }

    pub fn committed_bytes(&self) -> u64 {
        self.heaps.iter().map(|h| h.committed_bytes()).sum()
    }

    /// Peak of the summed committed bytes over all heaps.
    pub fn peak_committed_bytes(&self) -> u64 {
        self.peak_committed
    }

    pub fn mmap_calls(&self) -> u64 {
        self.heaps.iter().map(|h| h.mmap_calls()).sum()
    }

    pub fn live_bytes(&self) -> u64 {
        self.heaps.iter().map(|h| h.live_bytes()).sum()
    }

    pub fn atomic_syncs(&self) -> u64 {
        self.atomic_syncs
    }

    pub fn ownership_transfers(&self) -> u64 {
        self.ownership_transfers
    }

    pub fn local_len(&self, thread: ThreadId, class: usize) -> usize {
        self.local[thread as usize][class].len()
    }

    pub fn shared_len(&self, class: usize) -> usize {
        self.shared[class].len()
    }

    pub fn block_len(&self, addr: u64) -> Option<u64> {
        let b = self.live.get(&addr)?;
        Some(self.heaps[self.heap_of(addr)].block_len(b.kind))
    }

    fn heap_of(&self, addr: u64) -> usize {
        match self.config.mode {
            TierMode::Tiered => 0,
            TierMode::ThreadLocalOnly => ((addr - DEFAULT_HEAP_BASE) >> HEAP_SPAN_SHIFT) as usize,
        }
    }

    fn check_thread(&self, thread: ThreadId) -> Result<usize, TieredError> {
        let t = thread as usize;
        if t < self.local.len() {
            Ok(t)
        } else {
            Err(TieredError::UnknownThread(thread))
        }
    }

    fn local_head(&self, thread: usize, class: usize) -> u64 {
        LOCAL_META_BASE + thread as u64 * LOCAL_META_STRIDE + class as u64 * LINE_BYTES
    }

    fn note_peak(&mut self) {
        self.peak_committed = self.peak_committed.max(self.committed_bytes());
    }

    /// One atomic operation on the shared tier: writes its lock and list
    /// head lines and records ownership transfers on them.
    fn shared_op(&mut self, thread: usize, class: Option<usize>, ev: &mut CostEvents) {
        let c = class.map_or(self.shared.len(), |c| c) as u64;
        ev.atomic_syncs += 1;
        self.atomic_syncs += 1;
        for line in [
            SHARED_META_BASE + SHARED_LOCK_OFF + c * LINE_BYTES,
            SHARED_META_BASE + c * LINE_BYTES,
        ] {
            ev.touches.push(MetaTouch { addr: line, rw: Rw::Write });
            let prev = self.shared_writer.insert(line, thread as ThreadId);
            if matches!(prev, Some(p) if p as usize != thread) {
                ev.ownership_transfers += 1;
                self.ownership_transfers += 1;
            }
        }
    }

    fn hand_out(&mut self, thread: usize, addr: u64, class: usize) {
        let h = self.heap_of(addr);
        self.heaps[h].adopt_live(addr, class);
        self.live.insert(
            addr,
            LiveBlock {
                owner: thread as ThreadId,
                kind: BlockKind::Class(class),
            },
        );
    }

    /// Allocates `size` bytes for `thread`, routing large requests to the
    /// heap directly.
    pub fn malloc(&mut self, thread: ThreadId, size: u64) -> Result<(u64, CostEvents), TieredError> {
        match self.size_to_class(size) {
            SizeClass::Small(class) => self.tiered_malloc(thread, class),
            SizeClass::Large => self.malloc_large(thread, size),
        }
    }

    pub fn tiered_malloc(&mut self, thread: ThreadId, class: usize) -> Result<(u64, CostEvents), TieredError> {
        let t = self.check_thread(thread)?;
        if class >= self.shared.len() {
            return Err(HeapError::InvalidClass(class).into());
        }
        let head = self.local_head(t, class);

        if let Some(addr) = self.local[t][class].pop() {
            let mut ev = CostEvents::new(TierPath::Local);
            ev.touches.push(MetaTouch { addr: head, rw: Rw::Write });
            ev.touches.push(MetaTouch { addr, rw: Rw::Read });
            self.hand_out(t, addr, class);
            return Ok((addr, ev));
        }

        let batch = self.config.batch_size;
        let (mut ev, mut blocks) = match self.config.mode {
            TierMode::Tiered if !self.shared[class].is_empty() => {
                let mut ev = CostEvents::new(TierPath::SharedRefill);
                self.shared_op(t, Some(class), &mut ev);
                let list = &mut self.shared[class];
                let keep = list.len().saturating_sub(batch);
                let mut blocks = list.split_off(keep);
                blocks.reverse();
                (ev, blocks)
            }
            TierMode::ThreadLocalOnly if !self.backing[t][class].is_empty() => {
                let ev = CostEvents::new(TierPath::SharedRefill);
                let list = &mut self.backing[t][class];
                let keep = list.len().saturating_sub(batch);
                let mut blocks = list.split_off(keep);
                blocks.reverse();
                (ev, blocks)
            }
            mode => {
                let mut ev = CostEvents::new(TierPath::Central);
                let h = match mode {
                    TierMode::Tiered => {
                        self.shared_op(t, Some(class), &mut ev);
                        0
                    }
                    TierMode::ThreadLocalOnly => t,
                };
                let heap = &mut self.heaps[h];
                let before = heap.mmap_calls();
                let mut blocks = heap.take_free_blocks(class, batch);
                if blocks.is_empty() {
                    let (addr, touches) = heap.malloc_generic(class)?;
                    heap.release_to_cache(addr)?;
                    ev.touches.extend(touches);
                    blocks.push(addr);
                    blocks.extend(heap.take_free_blocks(class, batch - 1));
                } else {
                    ev.touches
                        .extend(heap.metadata_touch_set(crate::heap::MetaOp::MallocFast, Some(class), Some(blocks[0])));
                }
                ev.chunk_acquired = heap.mmap_calls() > before;
                self.note_peak();
                (ev, blocks)
            }
        };

        // `blocks` is head-first; the first one goes to the caller.
        let addr = blocks.remove(0);
        ev.touches.push(MetaTouch { addr: head, rw: Rw::Write });
        let local = &mut self.local[t][class];
        local.extend(blocks.into_iter().rev());
        self.hand_out(t, addr, class);
        Ok((addr, ev))
    }

    fn malloc_large(&mut self, thread: ThreadId, size: u64) -> Result<(u64, CostEvents), TieredError> {
        let t = self.check_thread(thread)?;
        let mut ev = CostEvents::new(TierPath::Large);
        let h = match self.config.mode {
            TierMode::Tiered => {
                self.shared_op(t, None, &mut ev);
                0
            }
            TierMode::ThreadLocalOnly => t,
        };
        let before = self.heaps[h].mmap_calls();
        let a = self.heaps[h].malloc_large(size)?;
        ev.chunk_acquired = self.heaps[h].mmap_calls() > before;
        ev.touches.extend(a.touches);
        self.live.insert(
            a.addr,
            LiveBlock {
                owner: thread,
                kind: a.kind,
            },
        );
        self.note_peak();
        Ok((a.addr, ev))
    }

    pub fn tiered_free(&mut self, thread: ThreadId, addr: u64) -> Result<CostEvents, TieredError> {
        let t = self.check_thread(thread)?;
        let block = *self.live.get(&addr).ok_or(HeapError::InvalidFree(addr))?;
        let h = self.heap_of(addr);

        let class = match block.kind {
            BlockKind::Large { .. } => {
                let mut ev = CostEvents::new(TierPath::Large);
                if self.config.mode == TierMode::Tiered {
                    self.shared_op(t, None, &mut ev);
                }
                ev.touches.extend(self.heaps[h].free_block(addr)?);
                self.live.remove(&addr);
                return Ok(ev);
            }
            BlockKind::Class(c) => c,
        };
        self.heaps[h].release_to_cache(addr)?;
        self.live.remove(&addr);
        let link = MetaTouch { addr, rw: Rw::Write };

        if self.config.mode == TierMode::Tiered && block.owner as usize != t {
            let mut ev = CostEvents::new(TierPath::CrossFree);
            self.shared_op(t, Some(class), &mut ev);
            ev.touches.push(link);
            self.shared[class].push(addr);
            return Ok(ev);
        }

        let head = self.local_head(t, class);
        let local = &mut self.local[t][class];
        local.push(addr);
        if local.len() <= self.config.local_cap {
            let mut ev = CostEvents::new(TierPath::LocalFree);
            ev.touches.push(MetaTouch { addr: head, rw: Rw::Write });
            ev.touches.push(link);
            return Ok(ev);
        }

        // Overfull: move the coldest batch out of the local cache.
        let moved: Vec<u64> = local.drain(..self.config.batch_size).collect();
        let mut ev = CostEvents::new(TierPath::Flush);
        ev.touches.push(MetaTouch { addr: head, rw: Rw::Write });
        ev.touches.push(link);
        match self.config.mode {
            TierMode::Tiered => {
                self.shared_op(t, Some(class), &mut ev);
                self.shared[class].extend(moved);
            }
            TierMode::ThreadLocalOnly => self.backing[t][class].extend(moved),
        }
        Ok(ev)
    }

    pub fn census(&self) -> BlockCensus {
        let sum = |v: &Vec<Vec<Vec<u64>>>| v.iter().flatten().map(|l| l.len() as u64).sum::<u64>();
        BlockCensus {
            carved: self.heaps.iter().map(|h| h.carved_block_count()).sum(),
            live: self
                .live
                .values()
                .filter(|b| matches!(b.kind, BlockKind::Class(_)))
                .count() as u64,
            local: sum(&self.local),
            shared: self.shared.iter().map(|l| l.len() as u64).sum(),
            backing: sum(&self.backing),
            heap_free: self.heaps.iter().map(|h| h.free_block_count() as u64).sum(),
        }
    }

    /// Exhaustive structural check; `Err` describes the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        let cached = self
            .local
            .iter()
            .chain(&self.backing)
            .flatten()
            .chain(&self.shared)
            .flatten();
        for &addr in cached {
            if !seen.insert(addr) {
                return Err(format!("{addr:#x} cached twice"));
            }
            if self.live.contains_key(&addr) {
                return Err(format!("{addr:#x} both cached and live"));
            }
        }
        for (t, lists) in self.local.iter().enumerate() {
            for (c, l) in lists.iter().enumerate() {
                if l.len() > self.config.local_cap {
                    return Err(format!("thread {t} class {c} local cache holds {}", l.len()));
                }
            }
        }
        if self.config.mode == TierMode::ThreadLocalOnly && self.shared.iter().any(|l| !l.is_empty()) {
            return Err("shared cache used in thread-local mode".into());
        }
        let census = self.census();
        if !census.balanced() {
            return Err(format!("block census unbalanced: {census:?}"));
        }
        for h in &self.heaps {
            h.check_invariants()?;
        }
        Ok(())
    }
}

/// Replays the allocation records of `trace` in record order and returns the
/// peak committed bytes.
pub fn blowup_probe(config: &TieredConfig, trace: &crate::trace::Trace) -> Result<u64, TieredError> {
    use crate::trace::TraceRecord;
    let mut state = TieredState::new(config.clone(), trace.threads as usize)?;
    let mut addrs: HashMap<u64, u64> = HashMap::new();
    for rec in &trace.records {
        match *rec {
            TraceRecord::Malloc { thread, object, size } => {
                let (addr, _) = state.malloc(thread, size)?;
                addrs.insert(object, addr);
            }
            TraceRecord::Free { thread, object } => {
                let addr = addrs.remove(&object).ok_or(HeapError::InvalidFree(0))?;
                state.tiered_free(thread, addr)?;
            }
            _ => {}
        }
    }
    Ok(state.peak_committed_bytes())
}
