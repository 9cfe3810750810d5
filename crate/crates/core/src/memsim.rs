//! Multi-level set-associative cache model.
//!
//! Each main core has a private L1 and L2; the support core has its own
//! private L1 (and an L2 when it is modeled as a full core). All cores share
//! one LLC sized per main core. Fills are non-inclusive, write-allocate and
//! write-back with LRU replacement and no prefetching; inclusion is not
//! enforced, so a line can live in L2 without being in L1 and vice versa.
//!
//! Coherence is modeled by last writer only: touching a line last written by
//! another core invalidates it in that core's private levels and costs a flat
//! transfer latency. A read downgrades the line (no last writer); a write
//! makes the accessing core the last writer.
//!
//! Every resident line carries the stream that filled it (user data or
//! allocator metadata). With an L2 partition, metadata fills go to the
//! reserved low ways and user fills to the rest.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use thiserror::Error;

use crate::trace::Rw;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    User,
    Metadata,
}

impl Stream {
    fn idx(self) -> usize {
        match self {
            Stream::User => 0,
            Stream::Metadata => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    L1,
    L2,
    Llc,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::Llc];

    fn idx(self) -> usize {
        match self {
            Level::L1 => 0,
            Level::L2 => 1,
            Level::Llc => 2,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CacheError {
    #[error("core {0} is not configured")]
    UnknownCore(usize),
    #[error("partition of {ways} ways out of range for {assoc}-way cache")]
    PartitionOutOfRange { ways: usize, assoc: usize },
    #[error("partitioning is only modeled at L2")]
    UnsupportedLevel,
    #[error("invalid cache configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheLevelConfig {
    pub capacity_bytes: u64,
    pub associativity: usize,
    pub line_bytes: u64,
    pub hit_latency: u64,
}

impl CacheLevelConfig {
    pub const fn new(capacity_bytes: u64, associativity: usize, hit_latency: u64) -> Self {
        CacheLevelConfig {
            capacity_bytes,
            associativity,
            line_bytes: 64,
            hit_latency,
        }
    }

    pub fn sets(&self) -> usize {
        (self.capacity_bytes / (self.associativity as u64 * self.line_bytes)) as usize
    }

    fn check(&self, name: &str) -> Result<(), CacheError> {
        let bad = |m: String| Err(CacheError::BadConfig(format!("{name}: {m}")));
        if self.associativity == 0 || self.line_bytes == 0 || self.capacity_bytes == 0 {
            return bad("size, ways and line must be nonzero".into());
        }
        if !self.capacity_bytes.is_multiple_of(self.associativity as u64 * self.line_bytes) {
            return bad(format!(
                "capacity {} not divisible by ways x line ({} x {})",
                self.capacity_bytes, self.associativity, self.line_bytes
            ));
        }
        if self.hit_latency == 0 {
            return bad("latency must be > 0".into());
        }
        Ok(())
    }
}

/// How the allocator-serving core's private hierarchy is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceCore {
    /// Lightweight support core: private L1 only.
    Support,
    /// A regular core harvested for allocation: L1 and L2 like a main core.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HwConfig {
    pub l1: CacheLevelConfig,
    pub l2: CacheLevelConfig,
    /// LLC capacity contributed by each main core.
    pub llc_per_core: CacheLevelConfig,
    pub sc_l1: CacheLevelConfig,
    pub dram_latency: u64,
    pub coherence_latency: u64,
    /// Metadata ways reserved in every main-core L2; 0 disables partitioning.
    pub l2_partition_meta_ways: usize,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            l1: CacheLevelConfig::new(32 * 1024, 8, 4),
            l2: CacheLevelConfig::new(256 * 1024, 8, 12),
            llc_per_core: CacheLevelConfig::new(2 * 1024 * 1024, 16, 24),
            sc_l1: CacheLevelConfig::new(16 * 1024, 4, 2),
            dram_latency: 100,
            coherence_latency: 60,
            l2_partition_meta_ways: 0,
        }
    }
}

impl HwConfig {
    pub fn check(&self) -> Result<(), CacheError> {
        self.l1.check("l1")?;
        self.l2.check("l2")?;
        self.llc_per_core.check("llc")?;
        self.sc_l1.check("sc_l1")?;
        let lines = [self.l1, self.l2, self.llc_per_core, self.sc_l1].map(|c| c.line_bytes);
        if lines.iter().any(|&l| l != lines[0]) {
            return Err(CacheError::BadConfig("all levels must share one line size".into()));
        }
        if self.dram_latency == 0 || self.coherence_latency == 0 {
            return Err(CacheError::BadConfig("latencies must be > 0".into()));
        }
        if self.l2_partition_meta_ways >= self.l2.associativity {
            return Err(CacheError::PartitionOutOfRange {
                ways: self.l2_partition_meta_ways,
                assoc: self.l2.associativity,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelStats {
    pub hits: u64,
    pub misses: u64,
    /// Cycles charged below this level on its misses (coherence excluded).
    pub miss_cycles: u64,
}

impl LevelStats {
    fn add(&mut self, o: &LevelStats) {
        self.hits += o.hits;
        self.misses += o.misses;
        self.miss_cycles += o.miss_cycles;
    }

    pub fn accesses(&self) -> u64 {
        self.hits + self.misses
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoreCacheStats {
    /// Indexed `[level][stream]`.
    levels: [[LevelStats; 2]; 3],
    pub coherence_transfers: u64,
    pub coherence_cycles: u64,
}

impl CoreCacheStats {
    pub fn level(&self, level: Level, stream: Stream) -> LevelStats {
        self.levels[level.idx()][stream.idx()]
    }

    pub fn level_total(&self, level: Level) -> LevelStats {
        let mut s = self.levels[level.idx()][0];
        s.add(&self.levels[level.idx()][1]);
        s
    }

    /// Misses of a stream summed over all levels.
    pub fn misses(&self, stream: Stream) -> u64 {
        self.levels.iter().map(|l| l[stream.idx()].misses).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CacheStats {
    /// Main cores first, then the service core if one is modeled.
    pub cores: Vec<CoreCacheStats>,
    pub main_cores: usize,
}

impl CacheStats {
    pub fn main(&self) -> &[CoreCacheStats] {
        &self.cores[..self.main_cores]
    }

    pub fn service(&self) -> Option<&CoreCacheStats> {
        self.cores.get(self.main_cores)
    }

    pub fn main_total(&self, level: Level, stream: Option<Stream>) -> LevelStats {
        let mut s = LevelStats::default();
        for c in self.main() {
            match stream {
                Some(st) => s.add(&c.level(level, st)),
                None => s.add(&c.level_total(level)),
            }
        }
        s
    }

    pub fn main_misses(&self, stream: Stream) -> u64 {
        self.main().iter().map(|c| c.misses(stream)).sum()
    }

    pub fn coherence_transfers(&self) -> u64 {
        self.cores.iter().map(|c| c.coherence_transfers).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessResult {
    pub latency: u64,
    /// First level that hit; `None` means the access went to DRAM.
    pub hit: Option<Level>,
    pub coherence: bool,
}

const INVALID: u64 = u64::MAX;

#[derive(Debug, Clone)]
struct CacheArray {
    sets: usize,
    ways: usize,
    latency: u64,
    tags: Vec<u64>,
    stamps: Vec<u64>,
    streams: Vec<Stream>,
    meta_ways: usize,
    clock: u64,
}

impl CacheArray {
    fn new(cfg: &CacheLevelConfig, scale: u64) -> Self {
        let sets = cfg.sets() * scale as usize;
        let n = sets * cfg.associativity;
        CacheArray {
            sets,
            ways: cfg.associativity,
            latency: cfg.hit_latency,
            tags: vec![INVALID; n],
            stamps: vec![0; n],
            streams: vec![Stream::User; n],
            meta_ways: 0,
            clock: 0,
        }
    }

    fn set_range(&self, line: u64) -> std::ops::Range<usize> {
        let set = (line % self.sets as u64) as usize;
        set * self.ways..(set + 1) * self.ways
    }

    fn find(&self, line: u64) -> Option<usize> {
        let r = self.set_range(line);
        let base = r.start;
        self.tags[r].iter().position(|&t| t == line).map(|w| base + w)
    }

    fn lookup(&mut self, line: u64) -> bool {
        match self.find(line) {
            Some(slot) => {
                self.clock += 1;
                self.stamps[slot] = self.clock;
                true
            }
            None => false,
        }
    }

    fn allowed_ways(&self, stream: Stream) -> std::ops::Range<usize> {
        if self.meta_ways == 0 {
            0..self.ways
        } else {
            match stream {
                Stream::Metadata => 0..self.meta_ways,
                Stream::User => self.meta_ways..self.ways,
            }
        }
    }

    fn fill(&mut self, line: u64, stream: Stream) {
        let set = self.set_range(line).start;
        let ways = self.allowed_ways(stream);
        let mut victim = set + ways.start;
        let mut oldest = u64::MAX;
        for w in ways {
            let slot = set + w;
            if self.tags[slot] == INVALID {
                victim = slot;
                break;
            }
            if self.stamps[slot] < oldest {
                oldest = self.stamps[slot];
                victim = slot;
            }
        }
        self.clock += 1;
        self.tags[victim] = line;
        self.stamps[victim] = self.clock;
        self.streams[victim] = stream;
    }

    fn invalidate(&mut self, line: u64) {
        if let Some(slot) = self.find(line) {
            self.tags[slot] = INVALID;
        }
    }

    /// Reserves the low `meta_ways` ways for metadata and flushes lines that
    /// now sit in the wrong partition.
    fn partition(&mut self, meta_ways: usize) {
        self.meta_ways = meta_ways;
        if meta_ways == 0 {
            return;
        }
        for slot in 0..self.tags.len() {
            if self.tags[slot] == INVALID {
                continue;
            }
            let way = slot % self.ways;
            let in_meta = way < meta_ways;
            if in_meta != (self.streams[slot] == Stream::Metadata) {
                self.tags[slot] = INVALID;
            }
        }
    }

    #[cfg(test)]
    fn check_partition(&self) -> bool {
        self.meta_ways == 0
            || (0..self.tags.len()).all(|slot| {
                self.tags[slot] == INVALID
                    || ((slot % self.ways < self.meta_ways) == (self.streams[slot] == Stream::Metadata))
            })
    }
}

#[derive(Default)]
struct LineHasher(u64);

impl Hasher for LineHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ u64::from(b)).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, n: u64) {
        self.0 = (n ^ (n >> 29)).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
}

type LineMap<V> = HashMap<u64, V, BuildHasherDefault<LineHasher>>;

#[derive(Debug, Clone)]
struct CoreCaches {
    l1: CacheArray,
    l2: Option<CacheArray>,
}

#[derive(Debug, Clone)]
pub struct CacheState {
    cores: Vec<CoreCaches>,
    main_cores: usize,
    llc: CacheArray,
    line_bytes: u64,
    dram_latency: u64,
    coherence_latency: u64,
    last_writer: LineMap<u32>,
    stats: Vec<CoreCacheStats>,
}

impl CacheState {
    /// Builds `main_cores` main-core hierarchies plus an optional service core
    /// whose id is `main_cores`.
    pub fn new(cfg: &HwConfig, main_cores: usize, service: Option<ServiceCore>) -> Result<Self, CacheError> {
        cfg.check()?;
        if main_cores == 0 {
            return Err(CacheError::BadConfig("need at least one main core".into()));
        }
        let mut cores: Vec<CoreCaches> = (0..main_cores)
            .map(|_| CoreCaches {
                l1: CacheArray::new(&cfg.l1, 1),
                l2: Some(CacheArray::new(&cfg.l2, 1)),
            })
            .collect();
        match service {
            Some(ServiceCore::Support) => cores.push(CoreCaches {
                l1: CacheArray::new(&cfg.sc_l1, 1),
                l2: None,
            }),
            Some(ServiceCore::Full) => cores.push(CoreCaches {
                l1: CacheArray::new(&cfg.l1, 1),
                l2: Some(CacheArray::new(&cfg.l2, 1)),
            }),
            None => {}
        }
        let n = cores.len();
        let mut state = CacheState {
            cores,
            main_cores,
            llc: CacheArray::new(&cfg.llc_per_core, main_cores as u64),
            line_bytes: cfg.l1.line_bytes,
            dram_latency: cfg.dram_latency,
            coherence_latency: cfg.coherence_latency,
            last_writer: LineMap::default(),
            stats: vec![CoreCacheStats::default(); n],
        };
        if cfg.l2_partition_meta_ways > 0 {
            state.set_partition(Level::L2, cfg.l2_partition_meta_ways)?;
        }
        Ok(state)
    }

    pub fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn line_bytes(&self) -> u64 {
        self.line_bytes
    }

    /// Reserves `metadata_ways` ways of every main-core L2 for the metadata
    /// stream. Zero restores the unpartitioned cache.
    pub fn set_partition(&mut self, level: Level, metadata_ways: usize) -> Result<(), CacheError> {
        if level != Level::L2 {
            return Err(CacheError::UnsupportedLevel);
        }
        for core in &mut self.cores[..self.main_cores] {
            let l2 = core.l2.as_mut().expect("main cores have an L2");
            if metadata_ways >= l2.ways {
                return Err(CacheError::PartitionOutOfRange {
                    ways: metadata_ways,
                    assoc: l2.ways,
                });
            }
        }
        for core in &mut self.cores[..self.main_cores] {
            core.l2.as_mut().unwrap().partition(metadata_ways);
        }
        Ok(())
    }

    pub fn access(&mut self, core: usize, addr: u64, rw: Rw, stream: Stream) -> Result<AccessResult, CacheError> {
        if core >= self.cores.len() {
            return Err(CacheError::UnknownCore(core));
        }
        let line = addr / self.line_bytes;
        let mut latency = 0;

        let owner = self.last_writer.get(&line).copied();
        let coherence = matches!(owner, Some(o) if o as usize != core);
        if let Some(o) = owner.filter(|_| coherence) {
            let other = &mut self.cores[o as usize];
            other.l1.invalidate(line);
            if let Some(l2) = other.l2.as_mut() {
                l2.invalidate(line);
            }
            latency += self.coherence_latency;
            let st = &mut self.stats[core];
            st.coherence_transfers += 1;
            st.coherence_cycles += self.coherence_latency;
        }
        match rw {
            Rw::Write => {
                self.last_writer.insert(line, core as u32);
            }
            Rw::Read if coherence => {
                self.last_writer.remove(&line);
            }
            Rw::Read => {}
        }

        // Walk private levels then the LLC, remembering cumulative latency.
        let mut walked: [(Level, u64); 3] = [(Level::L1, 0); 3];
        let mut n = 0;
        let mut hit = None;
        let caches = &mut self.cores[core];
        for (level, arr) in [(Level::L1, Some(&mut caches.l1)), (Level::L2, caches.l2.as_mut())] {
            let Some(arr) = arr else { continue };
            latency += arr.latency;
            walked[n] = (level, latency);
            n += 1;
            if arr.lookup(line) {
                hit = Some(level);
                break;
            }
        }
        if hit.is_none() {
            latency += self.llc.latency;
            walked[n] = (Level::Llc, latency);
            n += 1;
            if self.llc.lookup(line) {
                hit = Some(Level::Llc);
            } else {
                latency += self.dram_latency;
            }
        }

        let st = &mut self.stats[core];
        for &(level, cum) in &walked[..n] {
            let s = &mut st.levels[level.idx()][stream.idx()];
            if Some(level) == hit {
                s.hits += 1;
            } else {
                s.misses += 1;
                s.miss_cycles += latency - cum;
                match level {
                    Level::L1 => self.cores[core].l1.fill(line, stream),
                    Level::L2 => self.cores[core].l2.as_mut().unwrap().fill(line, stream),
                    Level::Llc => self.llc.fill(line, stream),
                }
            }
        }

        Ok(AccessResult {
            latency,
            hit,
            coherence,
        })
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            cores: self.stats.clone(),
            main_cores: self.main_cores,
        }
    }

    /// Whether every resident line respects the L2 partition.
    #[cfg(test)]
    fn partition_respected(&self) -> bool {
        self.cores
            .iter()
            .filter_map(|c| c.l2.as_ref())
            .all(|l2| l2.check_partition())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HwConfig {
        HwConfig {
            l1: CacheLevelConfig::new(256, 2, 4),
            l2: CacheLevelConfig::new(1024, 4, 12),
            llc_per_core: CacheLevelConfig::new(2048, 4, 24),
            sc_l1: CacheLevelConfig::new(256, 2, 2),
            ..HwConfig::default()
        }
    }

    #[test]
    fn repeated_access_hits_l1() {
        let mut c = CacheState::new(&HwConfig::default(), 1, None).unwrap();
        let cold = c.access(0, 0x1000, Rw::Read, Stream::User).unwrap();
        assert_eq!(cold.latency, 4 + 12 + 24 + 100);
        assert_eq!(cold.hit, None);
        let warm = c.access(0, 0x1008, Rw::Read, Stream::User).unwrap();
        assert_eq!(warm.latency, 4);
        assert_eq!(warm.hit, Some(Level::L1));
    }

    #[test]
    fn support_core_skips_l2() {
        let mut c = CacheState::new(&HwConfig::default(), 2, Some(ServiceCore::Support)).unwrap();
        let cold = c.access(2, 0x40, Rw::Write, Stream::Metadata).unwrap();
        assert_eq!(cold.latency, 2 + 24 + 100);
        assert_eq!(c.access(2, 0x40, Rw::Read, Stream::Metadata).unwrap().latency, 2);
        assert_eq!(c.access(3, 0, Rw::Read, Stream::User), Err(CacheError::UnknownCore(3)));
    }

    #[test]
    fn lru_victim_is_least_recent() {
        let cfg = tiny();
        let mut c = CacheState::new(&cfg, 1, None).unwrap();
        let sets = cfg.l1.sets() as u64;
        let stride = sets * 64;
        // a, b fill both ways of set 0; touching a makes b the LRU line
        c.access(0, 0, Rw::Read, Stream::User).unwrap();
        c.access(0, stride, Rw::Read, Stream::User).unwrap();
        c.access(0, 0, Rw::Read, Stream::User).unwrap();
        c.access(0, 2 * stride, Rw::Read, Stream::User).unwrap();
        assert_eq!(c.access(0, 0, Rw::Read, Stream::User).unwrap().hit, Some(Level::L1));
        assert_ne!(c.access(0, stride, Rw::Read, Stream::User).unwrap().hit, Some(Level::L1));
    }

    #[test]
    fn coherence_transfer_on_foreign_write() {
        let mut c = CacheState::new(&HwConfig::default(), 2, None).unwrap();
        c.access(0, 0x80, Rw::Write, Stream::User).unwrap();
        let r = c.access(1, 0x80, Rw::Write, Stream::User).unwrap();
        assert!(r.coherence);
        // core 0's copy was invalidated: it now misses privately
        let back = c.access(0, 0x80, Rw::Read, Stream::User).unwrap();
        assert!(back.coherence);
        assert_eq!(back.hit, Some(Level::Llc));
        // the read downgraded the line; same core again is a plain hit
        let again = c.access(0, 0x80, Rw::Read, Stream::User).unwrap();
        assert!(!again.coherence);
        assert_eq!(again.latency, 4);
        let s = c.stats();
        assert_eq!(s.coherence_transfers(), 2);
    }

    #[test]
    fn stats_count_hits_and_misses() {
        let mut c = CacheState::new(&HwConfig::default(), 1, None).unwrap();
        let empty = c.stats();
        assert_eq!(empty.main_total(Level::L1, None), LevelStats::default());
        for _ in 0..10 {
            c.access(0, 0x2000, Rw::Read, Stream::User).unwrap();
        }
        let s = c.stats();
        let l1 = s.main_total(Level::L1, Some(Stream::User));
        assert_eq!((l1.hits, l1.misses), (9, 1));
        assert_eq!(l1.miss_cycles, 12 + 24 + 100);
        let l2 = s.main_total(Level::L2, None);
        assert_eq!((l2.hits, l2.misses, l2.miss_cycles), (0, 1, 124));
        let llc = s.main_total(Level::Llc, None);
        assert_eq!((llc.hits, llc.misses, llc.miss_cycles), (0, 1, 100));
    }

    #[test]
    fn partition_bounds() {
        let mut c = CacheState::new(&HwConfig::default(), 1, None).unwrap();
        assert_eq!(
            c.set_partition(Level::L2, 8),
            Err(CacheError::PartitionOutOfRange { ways: 8, assoc: 8 })
        );
        assert_eq!(c.set_partition(Level::L1, 1), Err(CacheError::UnsupportedLevel));
        c.set_partition(Level::L2, 1).unwrap();
    }

    #[test]
    fn partitioned_user_stream_sees_remaining_ways() {
        let cfg = tiny();
        let sets = cfg.l2.sets() as u64;
        let l1_sets = cfg.l1.sets() as u64;
        assert_eq!(sets % l1_sets, 0);
        let stride = sets * 64;
        let mut c = CacheState::new(&cfg, 1, None).unwrap();
        c.set_partition(Level::L2, 1).unwrap();
        // four user lines into one 4-way L2 set: only 3 user ways exist
        for k in 0..4 {
            c.access(0, k * stride, Rw::Read, Stream::User).unwrap();
        }
        // the first line was pushed out of L2 (and L1 holds only 2)
        let r = c.access(0, 0, Rw::Read, Stream::User).unwrap();
        assert_eq!(r.hit, Some(Level::Llc));
        assert!(c.partition_respected());

        let mut flat = CacheState::new(&cfg, 1, None).unwrap();
        for k in 0..4 {
            flat.access(0, k * stride, Rw::Read, Stream::User).unwrap();
        }
        assert_eq!(flat.access(0, 0, Rw::Read, Stream::User).unwrap().hit, Some(Level::L2));
    }

    #[test]
    fn partition_flushes_misplaced_lines() {
        let cfg = tiny();
        let mut c = CacheState::new(&cfg, 1, None).unwrap();
        for k in 0..64u64 {
            let stream = if k % 3 == 0 { Stream::Metadata } else { Stream::User };
            c.access(0, k * 64, Rw::Write, stream).unwrap();
        }
        c.set_partition(Level::L2, 2).unwrap();
        assert!(c.partition_respected());
        for k in 0..256u64 {
            let stream = if k % 2 == 0 { Stream::Metadata } else { Stream::User };
            c.access(0, k * 64 * 7, Rw::Read, stream).unwrap();
            assert!(c.partition_respected());
        }
    }

    #[test]
    fn zero_partition_is_identity() {
        let cfg = tiny();
        let mut a = CacheState::new(&cfg, 2, None).unwrap();
        let mut b = CacheState::new(&cfg, 2, None).unwrap();
        b.set_partition(Level::L2, 0).unwrap();
        let mut x = 12345u64;
        for i in 0..5000u64 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let addr = (x >> 33) % 8192 * 8;
            let core = (i % 2) as usize;
            let rw = if x & 1 == 0 { Rw::Read } else { Rw::Write };
            let stream = if x & 2 == 0 { Stream::User } else { Stream::Metadata };
            assert_eq!(a.access(core, addr, rw, stream), b.access(core, addr, rw, stream));
        }
        assert_eq!(a.stats(), b.stats());
    }

    #[test]
    fn bad_configs_rejected() {
        let mut cfg = HwConfig::default();
        cfg.l1.capacity_bytes = 1000;
        assert!(CacheState::new(&cfg, 1, None).is_err());
        let mut cfg = HwConfig::default();
        cfg.l2_partition_meta_ways = 8;
        assert!(CacheState::new(&cfg, 1, None).is_err());
        assert!(CacheState::new(&HwConfig::default(), 0, None).is_err());
    }
}
