//! Centralized segregated free-list allocator.
//!
//! Requests round up to a size class and pop the head of that class's free
//! list (the fast path). An empty list takes the generic path: acquire a fresh
//! chunk, carve it into blocks, refill the list and pop again. Requests above
//! the large threshold bypass the classes and take whole chunks.
//!
//! Free lists are lists of block addresses kept in a metadata region that is
//! disjoint from every chunk, so serving a request touches metadata lines and
//! never the user blocks themselves. [`HeapState::metadata_touch_set`] reports
//! which metadata lines an operation reads or writes, for the cache model.

use std::collections::HashMap;

use thiserror::Error;

use crate::trace::Rw;

pub const LINE_BYTES: u64 = 64;
pub const PAGE_BYTES: u64 = 4096;
const MIN_ALIGN: u64 = 16;

pub const DEFAULT_HEAP_BASE: u64 = 0x1_0000_0000;
pub const DEFAULT_META_BASE: u64 = 0x1000_0000;
/// Length of a heap's metadata region.
pub const META_REGION_LEN: u64 = 0x400_0000;

// Offsets inside the metadata region.
const CLASS_TABLE_OFF: u64 = 0x0;
const LIST_HEAD_OFF: u64 = 0x1000;
const OS_TABLE_OFF: u64 = 0x2000;
const LARGE_HEAD_OFF: u64 = 0x3000;
const AUX_OFF: u64 = 0x1_0000;
const AUX_LINES_PER_CLASS: u64 = 64;
const CHUNK_DESC_OFF: u64 = 0x10_0000;
const CHUNK_DESC_LINES: u64 = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HeapError {
    #[error("invalid free of address {0:#x} (not live)")]
    InvalidFree(u64),
    #[error("chunk budget of {budget} chunks exhausted")]
    OutOfMemory { budget: u64 },
    #[error("size class index {0} out of range")]
    InvalidClass(usize),
    #[error("invalid size class table: {0}")]
    BadTable(String),
    #[error("invalid heap configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeClass {
    Small(usize),
    Large,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SizeClassTable {
    sizes: Vec<u64>,
    large_threshold: u64,
}

impl Default for SizeClassTable {
    /// Powers of two from 16 B to 32 KiB; larger requests are Large.
    fn default() -> Self {
        let sizes = (4..=15).map(|s| 1u64 << s).collect();
        SizeClassTable {
            sizes,
            large_threshold: 32 * 1024,
        }
    }
}

impl SizeClassTable {
    pub fn new(sizes: Vec<u64>, large_threshold: u64) -> Result<Self, HeapError> {
        if sizes.is_empty() {
            return Err(HeapError::BadTable("no classes".into()));
        }
        if sizes[0] < MIN_ALIGN {
            return Err(HeapError::BadTable(format!(
                "first class {} below minimum alignment {MIN_ALIGN}",
                sizes[0]
            )));
        }
        for w in sizes.windows(2) {
            if w[0] >= w[1] {
                return Err(HeapError::BadTable("sizes must be strictly increasing".into()));
            }
        }
        if let Some(s) = sizes.iter().find(|s| *s % 16 != 0) {
            return Err(HeapError::BadTable(format!("{s} is not a multiple of 16")));
        }
        let largest = *sizes.last().unwrap();
        if large_threshold > largest {
            return Err(HeapError::BadTable(format!(
                "large threshold {large_threshold} exceeds largest class {largest}"
            )));
        }
        Ok(SizeClassTable {
            sizes,
            large_threshold,
        })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn large_threshold(&self) -> u64 {
        self.large_threshold
    }

    pub fn block_size(&self, class: usize) -> u64 {
        self.sizes[class]
    }

    /// Smallest class whose block holds `size`; zero maps to the smallest class.
    pub fn class_of(&self, size: u64) -> SizeClass {
        if size > self.large_threshold {
            return SizeClass::Large;
        }
        let idx = self.sizes.partition_point(|&b| b < size);
        SizeClass::Small(idx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeapConfig {
    pub class_table: SizeClassTable,
    pub chunk_size: u64,
    pub meta_lines_fast: usize,
    pub meta_lines_generic: usize,
    /// Maximum number of chunks; `None` is unlimited.
    pub chunk_budget: Option<u64>,
}

impl Default for HeapConfig {
    fn default() -> Self {
        HeapConfig {
            class_table: SizeClassTable::default(),
            chunk_size: 64 * 1024,
            meta_lines_fast: 3,
            meta_lines_generic: 8,
            chunk_budget: None,
        }
    }
}

impl HeapConfig {
    pub fn check(&self) -> Result<(), HeapError> {
        if self.chunk_size == 0 || !self.chunk_size.is_multiple_of(PAGE_BYTES) {
            return Err(HeapError::BadConfig(format!(
                "chunk size {} must be a nonzero multiple of {PAGE_BYTES}",
                self.chunk_size
            )));
        }
        if self.meta_lines_fast == 0 || self.meta_lines_generic == 0 {
            return Err(HeapError::BadConfig("metadata line counts must be >= 1".into()));
        }
        if self.meta_lines_fast as u64 > AUX_LINES_PER_CLASS
            || self.meta_lines_generic as u64 > AUX_LINES_PER_CLASS
        {
            return Err(HeapError::BadConfig(format!(
                "metadata line counts must be <= {AUX_LINES_PER_CLASS}"
            )));
        }
        Ok(())
    }
}

/// Where a heap places its chunks and its metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeapLayout {
    pub heap_base: u64,
    pub meta_base: u64,
}

impl Default for HeapLayout {
    fn default() -> Self {
        HeapLayout {
            heap_base: DEFAULT_HEAP_BASE,
            meta_base: DEFAULT_META_BASE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Chunk {
    pub base: u64,
    pub len: u64,
    pub bytes_carved: u64,
    /// Class the chunk was carved for; `None` for a large chunk.
    pub class: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Class(usize),
    Large { chunk: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetaOp {
    MallocFast,
    MallocGeneric,
    Free,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetaTouch {
    pub addr: u64,
    pub rw: Rw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FastOutcome {
    Hit(u64),
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocPath {
    Fast,
    Generic,
    LargeReuse,
    LargeNew,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Allocation {
    pub addr: u64,
    pub kind: BlockKind,
    /// Bytes reserved for the object (class block size or large chunk length).
    pub len: u64,
    pub path: AllocPath,
    pub touches: Vec<MetaTouch>,
}

#[derive(Debug, Clone)]
pub struct HeapState {
    config: HeapConfig,
    layout: HeapLayout,
    /// Per-class LIFO lists; the head is the last element.
    free_lists: Vec<Vec<u64>>,
    chunks: Vec<Chunk>,
    large_free: Vec<usize>,
    live: HashMap<u64, BlockKind>,
    live_bytes: u64,
    committed_bytes: u64,
    peak_committed_bytes: u64,
    mmap_calls: u64,
    next_base: u64,
}

impl HeapState {
    pub fn new(config: HeapConfig) -> Result<Self, HeapError> {
        Self::with_layout(config, HeapLayout::default())
    }

    pub fn with_layout(config: HeapConfig, layout: HeapLayout) -> Result<Self, HeapError> {
        config.check()?;
        let meta_end = layout.meta_base + META_REGION_LEN;
        if meta_end > layout.heap_base {
            return Err(HeapError::BadConfig("metadata region must lie below the heap".into()));
        }
        let classes = config.class_table.len();
        Ok(HeapState {
            config,
            layout,
            free_lists: vec![Vec::new(); classes],
            chunks: Vec::new(),
            large_free: Vec::new(),
            live: HashMap::new(),
            live_bytes: 0,
            committed_bytes: 0,
            peak_committed_bytes: 0,
            mmap_calls: 0,
            next_base: layout.heap_base,
        })
    }

    pub fn config(&self) -> &HeapConfig {
        &self.config
    }

    pub fn class_table(&self) -> &SizeClassTable {
        &self.config.class_table
    }

    pub fn size_to_class(&self, size: u64) -> SizeClass {
        self.config.class_table.class_of(size)
    }

    pub fn committed_bytes(&self) -> u64 {
        self.committed_bytes
    }

    pub fn peak_committed_bytes(&self) -> u64 {
        self.peak_committed_bytes
    }

    pub fn mmap_calls(&self) -> u64 {
        self.mmap_calls
    }

    pub fn live_bytes(&self) -> u64 {
        self.live_bytes
    }

    pub fn live_count(&self) -> usize {
        self.live.len()
    }

    pub fn chunks(&self) -> &[Chunk] {
        &self.chunks
    }

    pub fn free_list(&self, class: usize) -> &[u64] {
        &self.free_lists[class]
    }

    pub fn free_block_count(&self) -> usize {
        self.free_lists.iter().map(Vec::len).sum()
    }

    pub fn carved_block_count(&self) -> u64 {
        self.chunks
            .iter()
            .filter_map(|c| c.class.map(|k| c.bytes_carved / self.block_size(k)))
            .sum()
    }

    pub fn is_live(&self, addr: u64) -> bool {
        self.live.contains_key(&addr)
    }

    pub fn live_kind(&self, addr: u64) -> Option<BlockKind> {
        self.live.get(&addr).copied()
    }

    pub fn block_size(&self, class: usize) -> u64 {
        self.config.class_table.block_size(class)
    }

    /// Bytes reserved for a live block of the given kind.
    pub fn block_len(&self, kind: BlockKind) -> u64 {
        match kind {
            BlockKind::Class(c) => self.block_size(c),
            BlockKind::Large { chunk } => self.chunks[chunk].len,
        }
    }

    pub fn metadata_region(&self) -> (u64, u64) {
        (self.layout.meta_base, self.layout.meta_base + META_REGION_LEN)
    }

    fn check_class(&self, class: usize) -> Result<(), HeapError> {
        if class < self.free_lists.len() {
            Ok(())
        } else {
            Err(HeapError::InvalidClass(class))
        }
    }

    /// Pops the head of the class list. An empty list is a normal outcome
    /// that sends the caller down the generic path.
    pub fn malloc_fast(&mut self, class: usize) -> Result<(FastOutcome, Vec<MetaTouch>), HeapError> {
        self.check_class(class)?;
        let touches = self.metadata_touch_set(MetaOp::MallocFast, Some(class), None);
        match self.free_lists[class].pop() {
            Some(addr) => {
                self.mark_live(addr, BlockKind::Class(class));
                Ok((FastOutcome::Hit(addr), touches))
            }
            None => Ok((FastOutcome::Empty, touches)),
        }
    }

    /// Acquires a chunk, carves it into blocks of the class size, and pops one.
    pub fn malloc_generic(&mut self, class: usize) -> Result<(u64, Vec<MetaTouch>), HeapError> {
        self.check_class(class)?;
        let block = self.block_size(class);
        let len = block.div_ceil(self.config.chunk_size).max(1) * self.config.chunk_size;
        let chunk_idx = self.acquire_chunk(len, lcm(PAGE_BYTES, block), Some(class))?;
        let touches = self.generic_touches(class, chunk_idx);

        let chunk = &mut self.chunks[chunk_idx];
        let blocks = chunk.len / block;
        chunk.bytes_carved = blocks * block;
        let base = chunk.base;
        // Highest address first so the head is the chunk's first block.
        let list = &mut self.free_lists[class];
        list.extend((0..blocks).rev().map(|i| base + i * block));

        let addr = self.free_lists[class].pop().expect("fresh chunk holds a block");
        self.mark_live(addr, BlockKind::Class(class));
        Ok((addr, touches))
    }

    /// Allocates `size` bytes, taking the fast path, the generic path, or the
    /// large path as appropriate. Touches include the empty fast-path probe.
    pub fn malloc(&mut self, size: u64) -> Result<Allocation, HeapError> {
        match self.size_to_class(size) {
            SizeClass::Small(class) => {
                let (outcome, mut touches) = self.malloc_fast(class)?;
                let (addr, path) = match outcome {
                    FastOutcome::Hit(addr) => (addr, AllocPath::Fast),
                    FastOutcome::Empty => {
                        let (addr, more) = self.malloc_generic(class)?;
                        touches.extend(more);
                        (addr, AllocPath::Generic)
                    }
                };
                Ok(Allocation {
                    addr,
                    kind: BlockKind::Class(class),
                    len: self.block_size(class),
                    path,
                    touches,
                })
            }
            SizeClass::Large => self.malloc_large(size),
        }
    }

    /// Whole-chunk allocation. A freed large chunk is reused first-fit for
    /// any later request no longer than it.
    pub fn malloc_large(&mut self, size: u64) -> Result<Allocation, HeapError> {
        let need = size.max(1).div_ceil(PAGE_BYTES) * PAGE_BYTES;
        let reuse = self
            .large_free
            .iter()
            .position(|&c| self.chunks[c].len >= need);
        let (chunk_idx, path) = match reuse {
            Some(pos) => (self.large_free.remove(pos), AllocPath::LargeReuse),
            None => (
                self.acquire_chunk(need, PAGE_BYTES, None)?,
                AllocPath::LargeNew,
            ),
        };
        let chunk = &mut self.chunks[chunk_idx];
        chunk.bytes_carved = chunk.len;
        let addr = chunk.base;
        let len = chunk.len;
        let kind = BlockKind::Large { chunk: chunk_idx };
        self.mark_live(addr, kind);
        let touches = self.metadata_touch_set(MetaOp::Large, None, Some(addr));
        Ok(Allocation {
            addr,
            kind,
            len,
            path,
            touches,
        })
    }

    /// Returns a live block to the head of its class list (or a large chunk to
    /// the reusable pool). Chunks are never returned to the system.
    pub fn free_block(&mut self, addr: u64) -> Result<Vec<MetaTouch>, HeapError> {
        let kind = self.live.remove(&addr).ok_or(HeapError::InvalidFree(addr))?;
        self.live_bytes -= self.block_len(kind);
        match kind {
            BlockKind::Class(class) => {
                self.free_lists[class].push(addr);
                Ok(self.metadata_touch_set(MetaOp::Free, Some(class), Some(addr)))
            }
            BlockKind::Large { chunk } => {
                self.large_free.push(chunk);
                Ok(self.metadata_touch_set(MetaOp::Large, None, Some(addr)))
            }
        }
    }

    /// Pops up to `n` blocks off a class list without marking them live.
    /// Used by cache tiers that hold blocks on behalf of threads.
    pub fn take_free_blocks(&mut self, class: usize, n: usize) -> Vec<u64> {
        let list = &mut self.free_lists[class];
        let keep = list.len().saturating_sub(n);
        let mut taken = list.split_off(keep);
        taken.reverse();
        taken
    }

    /// Marks a block handed out by [`take_free_blocks`](Self::take_free_blocks)
    /// as live on behalf of a cache tier.
    pub fn adopt_live(&mut self, addr: u64, class: usize) {
        self.mark_live(addr, BlockKind::Class(class));
    }

    /// Releases a live block without returning it to a free list; the caller
    /// keeps it in its own cache.
    pub fn release_to_cache(&mut self, addr: u64) -> Result<BlockKind, HeapError> {
        let kind = self.live.remove(&addr).ok_or(HeapError::InvalidFree(addr))?;
        self.live_bytes -= self.block_len(kind);
        Ok(kind)
    }

    fn mark_live(&mut self, addr: u64, kind: BlockKind) {
        self.live_bytes += self.block_len(kind);
        let prev = self.live.insert(addr, kind);
        debug_assert!(prev.is_none(), "block {addr:#x} handed out twice");
    }

    fn acquire_chunk(&mut self, len: u64, align: u64, class: Option<usize>) -> Result<usize, HeapError> {
        if let Some(budget) = self.config.chunk_budget {
            if self.chunks.len() as u64 >= budget {
                return Err(HeapError::OutOfMemory { budget });
            }
        }
        let base = self.next_base.div_ceil(align) * align;
        self.next_base = base + len;
        self.chunks.push(Chunk {
            base,
            len,
            bytes_carved: 0,
            class,
        });
        self.committed_bytes += len;
        self.peak_committed_bytes = self.peak_committed_bytes.max(self.committed_bytes);
        self.mmap_calls += 1;
        Ok(self.chunks.len() - 1)
    }

    /// Index of the chunk containing `addr`.
    pub fn chunk_of(&self, addr: u64) -> Option<usize> {
        let idx = self.chunks.partition_point(|c| c.base <= addr);
        let idx = idx.checked_sub(1)?;
        let c = &self.chunks[idx];
        (addr < c.base + c.len).then_some(idx)
    }

    fn meta(&self, off: u64) -> u64 {
        debug_assert!(off < META_REGION_LEN);
        self.layout.meta_base + off
    }

    fn chunk_desc_line(&self, chunk: usize, k: u64) -> u64 {
        let slots = (META_REGION_LEN - CHUNK_DESC_OFF) / (CHUNK_DESC_LINES * LINE_BYTES);
        let slot = chunk as u64 % slots;
        self.meta(CHUNK_DESC_OFF + (slot * CHUNK_DESC_LINES + k) * LINE_BYTES)
    }

    fn aux_line(&self, class: Option<usize>, k: u64) -> u64 {
        let c = class.map_or(self.free_lists.len() as u64, |c| c as u64);
        self.meta(AUX_OFF + (c * AUX_LINES_PER_CLASS + k % AUX_LINES_PER_CLASS) * LINE_BYTES)
    }

    /// Metadata lines an operation reads or writes. All addresses lie in this
    /// heap's metadata region.
    ///
    /// Fast paths and frees touch the class-table line, the list-head line and
    /// the descriptor line of the chunk holding the block involved (the list
    /// head for a malloc). Generic and large paths touch the class-table or
    /// large-list line, the list head, the OS chunk table and the new chunk's
    /// descriptor lines. Configured counts above these defaults extend the set
    /// with per-class auxiliary lines; smaller counts truncate it.
    pub fn metadata_touch_set(&self, op: MetaOp, class: Option<usize>, block: Option<u64>) -> Vec<MetaTouch> {
        let r = |addr| MetaTouch { addr, rw: Rw::Read };
        let w = |addr| MetaTouch { addr, rw: Rw::Write };
        let class_line = |c: Option<usize>| match c {
            Some(c) => self.meta(CLASS_TABLE_OFF + c as u64 * LINE_BYTES),
            None => self.meta(LARGE_HEAD_OFF),
        };
        let head_line = |c: Option<usize>| match c {
            Some(c) => self.meta(LIST_HEAD_OFF + c as u64 * LINE_BYTES),
            None => self.meta(LARGE_HEAD_OFF + LINE_BYTES),
        };
        let (mut lines, want) = match op {
            MetaOp::MallocFast | MetaOp::Free => {
                let block = block.or_else(|| class.and_then(|c| self.free_lists[c].last().copied()));
                let desc = match block.and_then(|b| self.chunk_of(b)) {
                    Some(chunk) => self.chunk_desc_line(chunk, 0),
                    None => self.aux_line(class, 0),
                };
                (
                    vec![r(class_line(class)), w(head_line(class)), w(desc)],
                    self.config.meta_lines_fast,
                )
            }
            MetaOp::MallocGeneric | MetaOp::Large => {
                let chunk = match block.and_then(|b| self.chunk_of(b)) {
                    Some(c) => c,
                    None => self.chunks.len(),
                };
                let mut v = vec![r(class_line(class)), w(head_line(class)), w(self.meta(OS_TABLE_OFF))];
                v.extend((0..5).map(|k| w(self.chunk_desc_line(chunk, k))));
                (v, self.config.meta_lines_generic)
            }
        };
        let mut k = 1;
        while lines.len() < want {
            lines.push(w(self.aux_line(class, k)));
            k += 1;
        }
        lines.truncate(want);
        lines
    }

    fn generic_touches(&self, class: usize, chunk: usize) -> Vec<MetaTouch> {
        let base = self.chunks[chunk].base;
        self.metadata_touch_set(MetaOp::MallocGeneric, Some(class), Some(base))
    }

    /// Exhaustive structural check; `Err` describes the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (class, list) in self.free_lists.iter().enumerate() {
            for &addr in list {
                if !seen.insert(addr) {
                    return Err(format!("{addr:#x} appears twice in free lists"));
                }
                if self.live.contains_key(&addr) {
                    return Err(format!("{addr:#x} is both free and live"));
                }
                let chunk = self
                    .chunk_of(addr)
                    .ok_or_else(|| format!("free block {addr:#x} outside every chunk"))?;
                if self.chunks[chunk].class != Some(class) {
                    return Err(format!("free block {addr:#x} in a chunk of another class"));
                }
            }
        }
        let mut spans: Vec<(u64, u64)> = Vec::with_capacity(self.live.len());
        for (&addr, &kind) in &self.live {
            let len = self.block_len(kind);
            let chunk = self
                .chunk_of(addr)
                .ok_or_else(|| format!("live block {addr:#x} outside every chunk"))?;
            let c = &self.chunks[chunk];
            if addr + len > c.base + c.len {
                return Err(format!("live block {addr:#x} crosses its chunk end"));
            }
            spans.push((addr, addr + len));
        }
        spans.sort_unstable();
        for w in spans.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(format!("live blocks {:#x} and {:#x} overlap", w[0].0, w[1].0));
            }
        }
        let committed: u64 = self.chunks.iter().map(|c| c.len).sum();
        if committed != self.committed_bytes {
            return Err("committed bytes differ from the chunk table".into());
        }
        if self.peak_committed_bytes < self.committed_bytes {
            return Err("peak below committed".into());
        }
        let (m0, m1) = self.metadata_region();
        if self.chunks.iter().any(|c| c.base < m1 && m0 < c.base + c.len) {
            return Err("metadata region overlaps a chunk".into());
        }
        Ok(())
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn lcm(a: u64, b: u64) -> u64 {
    a / gcd(a, b) * b
}

/// Replays the allocation records of `trace` in record order on one heap and
/// returns the peak committed bytes.
pub fn replay_peak(config: HeapConfig, trace: &crate::trace::Trace) -> Result<u64, HeapError> {
    use crate::trace::TraceRecord;
    let mut heap = HeapState::new(config)?;
    let mut addrs = HashMap::new();
    for rec in &trace.records {
        match *rec {
            TraceRecord::Malloc { object, size, .. } => {
                addrs.insert(object, heap.malloc(size)?.addr);
            }
            TraceRecord::Free { object, .. } => {
                let addr = addrs.remove(&object).ok_or(HeapError::InvalidFree(0))?;
                heap.free_block(addr)?;
            }
            _ => {}
        }
    }
    Ok(heap.peak_committed_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn heap() -> HeapState {
        HeapState::new(HeapConfig::default()).unwrap()
    }

    fn class_for(h: &HeapState, size: u64) -> usize {
        match h.size_to_class(size) {
            SizeClass::Small(c) => c,
            SizeClass::Large => panic!("large"),
        }
    }

    #[test]
    fn size_class_rounding() {
        let t = SizeClassTable::default();
        assert_eq!(t.class_of(64), SizeClass::Small(2));
        assert_eq!(t.block_size(2), 64);
        assert_eq!(t.class_of(65), SizeClass::Small(3));
        assert_eq!(t.block_size(3), 128);
        assert_eq!(t.class_of(0), SizeClass::Small(0));
        assert_eq!(t.block_size(0), 16);
        assert_eq!(t.class_of(32 * 1024), SizeClass::Small(11));
        assert_eq!(t.class_of(32 * 1024 + 1), SizeClass::Large);
    }

    #[test]
    fn bad_tables_rejected() {
        assert!(SizeClassTable::new(vec![], 0).is_err());
        assert!(SizeClassTable::new(vec![8, 16], 16).is_err());
        assert!(SizeClassTable::new(vec![32, 16], 16).is_err());
        assert!(SizeClassTable::new(vec![16, 40], 40).is_err());
        assert!(SizeClassTable::new(vec![16, 48], 64).is_err());
        assert!(SizeClassTable::new(vec![16, 48, 96], 96).is_ok());
    }

    #[test]
    fn fast_path_pops_lifo_head() {
        let mut h = heap();
        let c = class_for(&h, 64);
        let (a, _) = h.malloc_generic(c).unwrap();
        let head = *h.free_list(c).last().unwrap();
        let second = h.free_list(c)[h.free_list(c).len() - 2];
        let (out, _) = h.malloc_fast(c).unwrap();
        assert_eq!(out, FastOutcome::Hit(head));
        assert_eq!(*h.free_list(c).last().unwrap(), second);
        assert_ne!(a, head);
    }

    #[test]
    fn empty_list_reports_empty() {
        let mut h = heap();
        let (out, touches) = h.malloc_fast(0).unwrap();
        assert_eq!(out, FastOutcome::Empty);
        assert_eq!(touches.len(), 3);
    }

    #[test]
    fn freed_block_is_reused_first() {
        let mut h = heap();
        let c = class_for(&h, 100);
        let (a, _) = h.malloc_generic(c).unwrap();
        h.free_block(a).unwrap();
        assert_eq!(*h.free_list(c).last().unwrap(), a);
        assert_eq!(h.malloc_fast(c).unwrap().0, FastOutcome::Hit(a));
    }

    #[test]
    fn generic_carves_chunk_into_class_blocks() {
        // 4096 / 64 = 64 blocks; count them by popping until empty.
        let mut cfg = HeapConfig::default();
        cfg.chunk_size = 4096;
        let mut h = HeapState::new(cfg).unwrap();
        let c = class_for(&h, 64);
        h.malloc_generic(c).unwrap();
        let mut pops = 0;
        while let (FastOutcome::Hit(_), _) = h.malloc_fast(c).unwrap() {
            pops += 1;
        }
        assert_eq!(pops, 63);
        assert_eq!(h.committed_bytes(), 4096);
        assert_eq!(h.mmap_calls(), 1);

        let c4k = class_for(&h, 4096);
        h.malloc_generic(c4k).unwrap();
        assert!(h.free_list(c4k).is_empty());
    }

    #[test]
    fn successive_chunks_are_disjoint() {
        let mut h = heap();
        let c = class_for(&h, 256);
        let (a, _) = h.malloc_generic(c).unwrap();
        let first: Vec<u64> = h.free_list(c).iter().copied().chain([a]).collect();
        let (b, _) = h.malloc_generic(c).unwrap();
        let second: Vec<u64> = h.free_list(c).iter().copied().filter(|x| !first.contains(x)).chain([b]).collect();
        assert_eq!(second.len() as u64, 64 * 1024 / 256);
        assert!(first.iter().all(|x| !second.contains(x)));
        assert_eq!(h.committed_bytes(), 2 * 64 * 1024);
        h.check_invariants().unwrap();
    }

    #[test]
    fn invalid_and_double_free() {
        let mut h = heap();
        let a = h.malloc(64).unwrap().addr;
        h.free_block(a).unwrap();
        assert_eq!(h.free_block(a), Err(HeapError::InvalidFree(a)));
        assert_eq!(h.free_block(12345), Err(HeapError::InvalidFree(12345)));
    }

    #[test]
    fn large_chunk_reused_for_smaller_request() {
        let mut h = heap();
        let a = h.malloc(100_000).unwrap();
        assert_eq!(a.path, AllocPath::LargeNew);
        assert_eq!(a.len, 102_400);
        h.free_block(a.addr).unwrap();
        let b = h.malloc(40_000).unwrap();
        assert_eq!(b.path, AllocPath::LargeReuse);
        assert_eq!(b.addr, a.addr);
        let c = h.malloc(200_000).unwrap();
        assert_eq!(c.path, AllocPath::LargeNew);
        assert_eq!(h.mmap_calls(), 2);
        assert_eq!(c.addr % PAGE_BYTES, 0);
    }

    #[test]
    fn chunk_budget_exhaustion() {
        let cfg = HeapConfig {
            chunk_budget: Some(1),
            ..HeapConfig::default()
        };
        let mut h = HeapState::new(cfg).unwrap();
        h.malloc(16).unwrap();
        assert_eq!(h.malloc(64), Err(HeapError::OutOfMemory { budget: 1 }));
    }

    #[test]
    fn touch_sets() {
        let mut h = heap();
        let (m0, m1) = h.metadata_region();
        let (a, generic) = h.malloc_generic(2).unwrap();
        assert_eq!(generic.len(), 8);
        let f1 = h.metadata_touch_set(MetaOp::MallocFast, Some(2), None);
        let f2 = h.metadata_touch_set(MetaOp::MallocFast, Some(2), None);
        assert_eq!(f1.len(), 3);
        assert_eq!(f1, f2);
        assert!(f1.iter().chain(&generic).all(|t| (m0..m1).contains(&t.addr)));
        assert!(f1.iter().all(|t| t.addr != a));

        let cfg = HeapConfig {
            meta_lines_fast: 5,
            meta_lines_generic: 2,
            ..HeapConfig::default()
        };
        let mut h = HeapState::new(cfg).unwrap();
        assert_eq!(h.malloc_generic(0).unwrap().1.len(), 2);
        assert_eq!(h.malloc_fast(0).unwrap().1.len(), 5);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Malloc(u64),
        Free(usize),
    }

    fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
        proptest::collection::vec(
            prop_oneof![
                3 => prop_oneof![0u64..600, 0u64..40_000, 30_000u64..200_000].prop_map(Op::Malloc),
                2 => any::<usize>().prop_map(Op::Free),
            ],
            1..400,
        )
    }

    /// Interval-set oracle: inserting an overlapping span or removing an
    /// unknown start is an error.
    #[derive(Default)]
    struct Intervals(BTreeMap<u64, u64>);

    impl Intervals {
        fn insert(&mut self, start: u64, len: u64) -> Result<(), String> {
            let end = start + len;
            if let Some((&s, &e)) = self.0.range(..end).next_back() {
                if e > start {
                    return Err(format!("[{start:#x},{end:#x}) overlaps [{s:#x},{e:#x})"));
                }
            }
            self.0.insert(start, end);
            Ok(())
        }

        fn remove(&mut self, start: u64) -> Result<(), String> {
            self.0.remove(&start).map(|_| ()).ok_or_else(|| format!("{start:#x} not live"))
        }
    }

    proptest! {
        #[test]
        fn live_set_disjoint_aligned_and_accounted(ops in arb_ops()) {
            let mut h = heap();
            let mut oracle = Intervals::default();
            let mut live: Vec<u64> = Vec::new();
            let mut peak = 0;
            for op in ops {
                match op {
                    Op::Malloc(size) => {
                        let a = h.malloc(size).unwrap();
                        let align = match a.kind {
                            BlockKind::Class(c) => h.block_size(c),
                            BlockKind::Large { .. } => PAGE_BYTES,
                        };
                        prop_assert_eq!(a.addr % align, 0);
                        prop_assert!(a.len >= size);
                        oracle.insert(a.addr, a.len).map_err(TestCaseError::fail)?;
                        for t in &a.touches {
                            prop_assert!(t.addr < DEFAULT_HEAP_BASE);
                        }
                        live.push(a.addr);
                    }
                    Op::Free(i) if !live.is_empty() => {
                        let addr = live.swap_remove(i % live.len());
                        h.free_block(addr).unwrap();
                        oracle.remove(addr).map_err(TestCaseError::fail)?;
                    }
                    Op::Free(_) => {}
                }
                peak = peak.max(h.committed_bytes());
                prop_assert_eq!(h.peak_committed_bytes(), peak);
            }
            h.check_invariants().map_err(TestCaseError::fail)?;
        }
    }
}
