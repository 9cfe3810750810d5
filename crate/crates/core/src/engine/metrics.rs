use thiserror::Error;

use crate::memsim::{CacheStats, Level};

use super::AllocatorKind;

/// Cycle breakdown of one main core. The categories partition the core's
/// timeline, so they sum to its completion time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreCycles {
    pub compute: u64,
    pub user_mem: u64,
    pub metadata_mem: u64,
    pub atomic_sync: u64,
    pub alloc_wait: u64,
    pub alloc_exec: u64,
    /// Time spent waiting for another thread's earlier operation on the same
    /// object to finish.
    pub dep_wait: u64,
    pub completion: u64,
}

impl CoreCycles {
    pub fn category_sum(&self) -> u64 {
        self.compute + self.user_mem + self.metadata_mem + self.atomic_sync + self.alloc_wait + self.alloc_exec + self.dep_wait
    }

    fn add(&mut self, o: &CoreCycles) {
        self.compute += o.compute;
        self.user_mem += o.user_mem;
        self.metadata_mem += o.metadata_mem;
        self.atomic_sync += o.atomic_sync;
        self.alloc_wait += o.alloc_wait;
        self.alloc_exec += o.alloc_exec;
        self.dep_wait += o.dep_wait;
        self.completion += o.completion;
    }
}

pub const LATENCY_BUCKETS: usize = 40;

/// Log2 histogram: bucket 0 holds latencies 0 and 1, bucket k holds
/// `[2^k, 2^(k+1))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatencyHistogram {
    pub buckets: [u64; LATENCY_BUCKETS],
    pub count: u64,
    pub sum: u64,
    pub max: u64,
}

impl Default for LatencyHistogram {
    fn default() -> Self {
        LatencyHistogram {
            buckets: [0; LATENCY_BUCKETS],
            count: 0,
            sum: 0,
            max: 0,
        }
    }
}

impl LatencyHistogram {
    pub fn bucket_of(latency: u64) -> usize {
        (63 - latency.max(1).leading_zeros() as usize).min(LATENCY_BUCKETS - 1)
    }

    pub fn record(&mut self, latency: u64) {
        self.buckets[Self::bucket_of(latency)] += 1;
        self.count += 1;
        self.sum += latency;
        self.max = self.max.max(latency);
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum as f64 / self.count as f64
        }
    }

    /// Lower bound of the bucket holding the `q` quantile.
    pub fn quantile_floor(&self, q: f64) -> u64 {
        if self.count == 0 {
            return 0;
        }
        let target = (q * self.count as f64).ceil().max(1.0) as u64;
        let mut seen = 0;
        for (k, &n) in self.buckets.iter().enumerate() {
            seen += n;
            if seen >= target {
                return if k == 0 { 0 } else { 1 << k };
            }
        }
        self.max
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub allocator: AllocatorKind,
    pub trace_hash: String,
    pub threads: u32,
    pub cores: Vec<CoreCycles>,
    pub total_cycles: u64,
    pub support_busy: u64,
    pub support_stall: u64,
    pub support_requests: u64,
    pub cache: CacheStats,
    pub mallocs: u64,
    pub frees: u64,
    pub oom_failures: u64,
    pub atomic_syncs: u64,
    pub ownership_transfers: u64,
    pub mmap_calls: u64,
    pub peak_committed_bytes: u64,
    pub live_bytes_at_end: u64,
    pub malloc_latency: LatencyHistogram,
}

impl Metrics {
    pub fn core_totals(&self) -> CoreCycles {
        let mut t = CoreCycles::default();
        for c in &self.cores {
            t.add(c);
        }
        t
    }

    /// Atomic cycles as a fraction of all main-core cycles.
    pub fn atomic_share(&self) -> f64 {
        let t = self.core_totals();
        ratio(t.atomic_sync, t.completion)
    }

    /// L2 miss cycles over every core that has an L2.
    pub fn l2_miss_cycles(&self) -> u64 {
        self.cache.cores.iter().map(|c| c.level_total(Level::L2).miss_cycles).sum()
    }

    pub fn main_metadata_misses(&self) -> u64 {
        self.cache.main_misses(crate::memsim::Stream::Metadata)
    }

    /// Metadata-stream share of all cache misses on the main cores.
    pub fn metadata_miss_share(&self) -> f64 {
        let meta = self.main_metadata_misses();
        let user = self.cache.main_misses(crate::memsim::Stream::User);
        ratio(meta, meta + user)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("metrics come from different traces ({a} vs {b})")]
pub struct TraceMismatch {
    pub a: String,
    pub b: String,
}

/// Relative view of run `a` against baseline `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub allocator_a: AllocatorKind,
    pub allocator_b: AllocatorKind,
    pub trace_hash: String,
    pub total_cycles_a: u64,
    pub total_cycles_b: u64,
    /// `total_cycles_b / total_cycles_a`: above 1 means `a` is faster.
    pub speedup: f64,
    /// Per-category `b - a` over all main cores.
    pub category_delta: Vec<(&'static str, i128)>,
    pub atomic_share_a: f64,
    pub atomic_share_b: f64,
    pub l2_miss_cycles_delta: i128,
    /// `peak_a / peak_b`.
    pub peak_memory_ratio: f64,
}

pub const CATEGORIES: [&str; 7] = [
    "compute",
    "user_mem",
    "metadata_mem",
    "atomic_sync",
    "alloc_wait",
    "alloc_exec",
    "dep_wait",
];

/// Per-category totals in `CATEGORIES` order.
pub fn categories(c: &CoreCycles) -> [u64; 7] {
    [
        c.compute,
        c.user_mem,
        c.metadata_mem,
        c.atomic_sync,
        c.alloc_wait,
        c.alloc_exec,
        c.dep_wait,
    ]
}

/// The fields of one run that a comparison needs.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSide {
    pub allocator: AllocatorKind,
    pub trace_hash: String,
    pub total_cycles: u64,
    pub categories: [u64; 7],
    pub atomic_share: f64,
    pub l2_miss_cycles: u64,
    pub peak_committed_bytes: u64,
}

impl From<&Metrics> for CompareSide {
    fn from(m: &Metrics) -> Self {
        CompareSide {
            allocator: m.allocator,
            trace_hash: m.trace_hash.clone(),
            total_cycles: m.total_cycles,
            categories: categories(&m.core_totals()),
            atomic_share: m.atomic_share(),
            l2_miss_cycles: m.l2_miss_cycles(),
            peak_committed_bytes: m.peak_committed_bytes,
        }
    }
}

pub fn compare(a: &Metrics, b: &Metrics) -> Result<ComparisonReport, TraceMismatch> {
    compare_sides(&a.into(), &b.into())
}

pub fn compare_sides(a: &CompareSide, b: &CompareSide) -> Result<ComparisonReport, TraceMismatch> {
    if a.trace_hash != b.trace_hash {
        return Err(TraceMismatch {
            a: a.trace_hash.clone(),
            b: b.trace_hash.clone(),
        });
    }
    let speedup = if a.total_cycles == 0 {
        if b.total_cycles == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        b.total_cycles as f64 / a.total_cycles as f64
    };
    Ok(ComparisonReport {
        allocator_a: a.allocator,
        allocator_b: b.allocator,
        trace_hash: a.trace_hash.clone(),
        total_cycles_a: a.total_cycles,
        total_cycles_b: b.total_cycles,
        speedup,
        category_delta: CATEGORIES
            .iter()
            .zip(a.categories.iter().zip(b.categories.iter()))
            .map(|(&n, (&x, &y))| (n, i128::from(y) - i128::from(x)))
            .collect(),
        atomic_share_a: a.atomic_share,
        atomic_share_b: b.atomic_share,
        l2_miss_cycles_delta: i128::from(b.l2_miss_cycles) - i128::from(a.l2_miss_cycles),
        peak_memory_ratio: if b.peak_committed_bytes == 0 {
            1.0
        } else {
            a.peak_committed_bytes as f64 / b.peak_committed_bytes as f64
        },
    })
}
