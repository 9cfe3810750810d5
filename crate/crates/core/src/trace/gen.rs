use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use super::{ObjectId, Rw, ThreadId, Trace, TraceError, TraceRecord, TRACE_LINE_BYTES};
use crate::rng::{SimRng, RNG_NAME};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WorkloadKind {
    /// Server-client churn: per-thread windows of live objects with random
    /// replacement, where a fraction of replacements hit another thread's window.
    Larson,
    /// Objects allocated by one thread and freed by another.
    Xmalloc,
    /// Passive false sharing: one thread hands out sub-line objects, the
    /// receivers write them, free them and allocate their own.
    Scratch,
    /// High-rate small-object allocation with a log-uniform size mix.
    ShBench,
    /// Objects with random lifetimes that migrate between threads.
    Mstress,
    /// Allocation-intensive with truncated Pareto sizes.
    AllocTest,
    /// One thread allocates a batch, another frees it; producers rotate.
    ProducerConsumer,
    /// Per-thread LIFO batches of uniform sizes.
    Uniform,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 8] = [
        WorkloadKind::Larson,
        WorkloadKind::Xmalloc,
        WorkloadKind::Scratch,
        WorkloadKind::ShBench,
        WorkloadKind::Mstress,
        WorkloadKind::AllocTest,
        WorkloadKind::ProducerConsumer,
        WorkloadKind::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WorkloadKind::Larson => "larson",
            WorkloadKind::Xmalloc => "xmalloc",
            WorkloadKind::Scratch => "scratch",
            WorkloadKind::ShBench => "shbench",
            WorkloadKind::Mstress => "mstress",
            WorkloadKind::AllocTest => "alloctest",
            WorkloadKind::ProducerConsumer => "producer-consumer",
            WorkloadKind::Uniform => "uniform",
        }
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WorkloadKind {
    type Err = TraceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "producerconsumer" && *k == WorkloadKind::ProducerConsumer))
            .ok_or_else(|| TraceError::InvalidSpec(format!("unknown workload `{s}`")))
    }
}

/// Parameters of a synthetic workload. Construct with [`WorkloadSpec::new`] to
/// get the per-kind defaults, then override fields as needed.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub threads: u32,
    /// Malloc plus Free records to emit (teardown included).
    pub total_ops: u64,
    pub seed: u64,
    pub min_size: u64,
    pub max_size: u64,
    /// Tail exponent of the AllocTest size distribution.
    pub pareto_shape: f64,
    /// Live objects per thread (Larson window, pool caps, batch size).
    pub window: usize,
    /// Fraction of frees issued by a thread other than the allocating one.
    pub cross_free_fraction: f64,
    /// Mean cycles of the Compute record emitted before each Malloc/Free.
    /// Zero disables compute records.
    pub compute_gap: u64,
    /// Extra accesses to the thread's own live objects after each operation.
    pub touches_per_op: u32,
    pub max_access_lines: u32,
    /// Write the new object after Malloc and read it before Free.
    pub init_access: bool,
    /// Fraction of Mstress allocations above the small-size range.
    pub large_fraction: f64,
    /// Free every remaining object at the end.
    pub teardown: bool,
}

impl WorkloadSpec {
    pub fn new(kind: WorkloadKind, threads: u32, total_ops: u64, seed: u64) -> Self {
        let mut spec = WorkloadSpec {
            kind,
            threads,
            total_ops,
            seed,
            min_size: 16,
            max_size: 256,
            pareto_shape: 1.5,
            window: 256,
            cross_free_fraction: 0.5,
            compute_gap: 1000,
            touches_per_op: 2,
            max_access_lines: 4,
            init_access: true,
            large_fraction: 0.0,
            teardown: true,
        };
        match kind {
            WorkloadKind::Larson => {
                spec.max_size = 512;
                spec.window = 1024;
                spec.compute_gap = 1500;
            }
            WorkloadKind::Xmalloc => {}
            WorkloadKind::Scratch => {
                spec.max_size = 48;
                spec.compute_gap = 500;
                spec.touches_per_op = 4;
                spec.init_access = false;
            }
            WorkloadKind::ShBench => {
                spec.max_size = 4096;
            }
            WorkloadKind::Mstress => {
                spec.max_size = 2048;
                spec.window = 512;
                spec.compute_gap = 1500;
                spec.large_fraction = 0.01;
            }
            WorkloadKind::AllocTest => {
                spec.max_size = 4096;
                spec.compute_gap = 800;
            }
            WorkloadKind::ProducerConsumer => {
                spec.min_size = 64;
                spec.max_size = 64;
                spec.window = 1024;
                spec.compute_gap = 200;
                spec.touches_per_op = 0;
            }
            WorkloadKind::Uniform => {
                spec.window = 64;
                spec.compute_gap = 500;
            }
        }
        spec
    }

    pub fn check(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidSpec(m));
        if self.threads < 1 {
            return bad("threads must be >= 1".into());
        }
        if self.total_ops < u64::from(self.threads) {
            return bad(format!(
                "total_ops {} must be >= threads {}",
                self.total_ops, self.threads
            ));
        }
        if self.min_size == 0 || self.min_size > self.max_size {
            return bad(format!(
                "size range [{}, {}] is empty or includes zero",
                self.min_size, self.max_size
            ));
        }
        if self.kind == WorkloadKind::AllocTest && (self.pareto_shape.is_nan() || self.pareto_shape <= 0.0) {
            return bad(format!("pareto shape {} must be > 0", self.pareto_shape));
        }
        if !(0.0..=1.0).contains(&self.cross_free_fraction) {
            return bad("cross_free_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.large_fraction) {
            return bad("large_fraction must lie in [0, 1]".into());
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if self.max_access_lines == 0 {
            return bad("max_access_lines must be >= 1".into());
        }
        Ok(())
    }
}

/// Generates the trace for `spec`. The output is a pure function of `spec`.
pub fn generate(spec: &WorkloadSpec) -> Result<Trace, TraceError> {
    spec.check()?;
    let mut em = Emitter::new(spec);
    match spec.kind {
        WorkloadKind::Larson => gen_larson(&mut em),
        WorkloadKind::Xmalloc => gen_xmalloc(&mut em),
        WorkloadKind::Scratch => gen_scratch(&mut em),
        WorkloadKind::ShBench | WorkloadKind::AllocTest => gen_pools(&mut em),
        WorkloadKind::Mstress => gen_mstress(&mut em),
        WorkloadKind::ProducerConsumer => gen_producer_consumer(&mut em),
        WorkloadKind::Uniform => gen_uniform(&mut em),
    }
    Ok(em.trace)
}

const LARGE_MIN: u64 = 32 * 1024 + 1;
const LARGE_MAX: u64 = 256 * 1024;

struct Emitter<'a> {
    spec: &'a WorkloadSpec,
    trace: Trace,
    /// Size by object id (ids are dense from 0).
    sizes: Vec<u64>,
    /// Owning thread and position in `owned[thread]`, by object id.
    owner: Vec<(ThreadId, usize)>,
    owned: Vec<Vec<ObjectId>>,
    sched: SimRng,
    thread_rng: Vec<SimRng>,
    ops: u64,
    live: u64,
    touches: u32,
}

impl<'a> Emitter<'a> {
    fn new(spec: &'a WorkloadSpec) -> Self {
        let t = spec.threads as usize;
        Emitter {
            spec,
            trace: Trace::new(spec.threads, spec.seed, RNG_NAME),
            sizes: Vec::new(),
            owner: Vec::new(),
            owned: vec![Vec::new(); t],
            sched: SimRng::stream(spec.seed, 0),
            thread_rng: (0..spec.threads)
                .map(|i| SimRng::stream(spec.seed, i + 1))
                .collect(),
            ops: 0,
            live: 0,
            touches: spec.touches_per_op,
        }
    }

    fn threads(&self) -> u32 {
        self.spec.threads
    }

    /// Whether `extra_ops` more alloc records changing the live count by
    /// `live_delta` still fit in the budget, counting teardown frees.
    fn room(&self, extra_ops: u64, live_delta: i64) -> bool {
        let tail = if self.spec.teardown {
            (self.live as i64 + live_delta).max(0) as u64
        } else {
            0
        };
        self.ops + extra_ops + tail <= self.spec.total_ops
    }

    fn gap(&mut self, t: ThreadId) {
        let g = self.spec.compute_gap;
        if g == 0 {
            return;
        }
        let cycles = (g / 2 + self.thread_rng[t as usize].below(g + 1)).max(1);
        self.trace
            .records
            .push(TraceRecord::Compute { thread: t, cycles });
    }

    fn span_lines(&self, object: ObjectId) -> u32 {
        let lines = self.sizes[object as usize].div_ceil(TRACE_LINE_BYTES);
        lines.min(u64::from(self.spec.max_access_lines)) as u32
    }

    fn access(&mut self, t: ThreadId, object: ObjectId, lines: u32, rw: Rw) {
        self.trace.records.push(TraceRecord::Access {
            thread: t,
            object,
            lines,
            rw,
        });
    }

    fn malloc(&mut self, t: ThreadId, size: u64) -> ObjectId {
        self.gap(t);
        let object = self.sizes.len() as ObjectId;
        self.sizes.push(size);
        let slot = self.owned[t as usize].len();
        self.owned[t as usize].push(object);
        self.owner.push((t, slot));
        self.trace.records.push(TraceRecord::Malloc {
            thread: t,
            object,
            size,
        });
        self.ops += 1;
        self.live += 1;
        if self.spec.init_access {
            let lines = self.span_lines(object);
            self.access(t, object, lines, Rw::Write);
        }
        self.touch(t);
        object
    }

    fn free(&mut self, t: ThreadId, object: ObjectId) {
        self.gap(t);
        if self.spec.init_access {
            let lines = self.span_lines(object);
            self.access(t, object, lines, Rw::Read);
        }
        let (owner, slot) = self.owner[object as usize];
        let list = &mut self.owned[owner as usize];
        list.swap_remove(slot);
        if let Some(&moved) = list.get(slot) {
            self.owner[moved as usize].1 = slot;
        }
        self.trace
            .records
            .push(TraceRecord::Free { thread: t, object });
        self.ops += 1;
        self.live -= 1;
        self.touch(t);
    }

    /// Moves a live object to `to`'s owned set; the previous owner no longer
    /// touches it.
    fn adopt(&mut self, object: ObjectId, to: ThreadId) {
        let (from, slot) = self.owner[object as usize];
        let list = &mut self.owned[from as usize];
        list.swap_remove(slot);
        if let Some(&moved) = list.get(slot) {
            self.owner[moved as usize].1 = slot;
        }
        self.owner[object as usize] = (to, self.owned[to as usize].len());
        self.owned[to as usize].push(object);
    }

    /// Accesses to random live objects owned by `t`.
    fn touch(&mut self, t: ThreadId) {
        for _ in 0..self.touches {
            let n = self.owned[t as usize].len();
            if n == 0 {
                return;
            }
            let rng = &mut self.thread_rng[t as usize];
            let object = self.owned[t as usize][rng.index(n)];
            let write = rng.chance(0.3);
            let span = self.span_lines(object);
            let lines = 1 + self.thread_rng[t as usize].below(u64::from(span)) as u32;
            let rw = if write { Rw::Write } else { Rw::Read };
            self.access(t, object, lines, rw);
        }
    }

    fn uniform_size(&mut self, t: ThreadId) -> u64 {
        let (lo, hi) = (self.spec.min_size, self.spec.max_size);
        self.thread_rng[t as usize].range_inclusive(lo, hi)
    }

    fn log_uniform_size(&mut self, t: ThreadId) -> u64 {
        let (lo, hi) = (self.spec.min_size as f64, self.spec.max_size as f64);
        let u = self.thread_rng[t as usize].unit();
        let x = (lo.ln() + u * (hi.ln() - lo.ln())).exp();
        (x as u64).clamp(self.spec.min_size, self.spec.max_size)
    }

    /// Inverse-CDF draw from a Pareto(min, shape) truncated to [min, max].
    fn pareto_size(&mut self, t: ThreadId) -> u64 {
        let u = self.thread_rng[t as usize].unit();
        truncated_pareto(
            u,
            self.spec.min_size as f64,
            self.spec.max_size as f64,
            self.spec.pareto_shape,
        )
        .clamp(self.spec.min_size, self.spec.max_size)
    }

    /// A thread other than `owner`, chosen by the scheduler stream.
    fn other_thread(&mut self, owner: ThreadId) -> ThreadId {
        let t = self.threads();
        debug_assert!(t > 1);
        let k = self.sched.below(u64::from(t - 1)) as ThreadId;
        if k >= owner {
            k + 1
        } else {
            k
        }
    }

    fn freer_for(&mut self, owner: ThreadId) -> ThreadId {
        if self.threads() > 1 && self.sched.chance(self.spec.cross_free_fraction) {
            self.other_thread(owner)
        } else {
            owner
        }
    }

    fn pick_thread(&mut self) -> ThreadId {
        self.sched.below(u64::from(self.threads())) as ThreadId
    }
}

pub(crate) fn truncated_pareto(u: f64, min: f64, max: f64, shape: f64) -> u64 {
    let tail = 1.0 - (min / max).powf(shape);
    let x = min * (1.0 - u * tail).powf(-1.0 / shape);
    x.floor() as u64
}

fn gen_uniform(em: &mut Emitter) {
    let t = em.threads() as usize;
    let window = em.spec.window;
    let mut stacks: Vec<Vec<ObjectId>> = vec![Vec::new(); t];
    let mut growing = vec![true; t];
    let mut idle = 0;
    let mut turn = 0usize;
    while idle < t {
        let tid = turn % t;
        turn += 1;
        if growing[tid] && stacks[tid].len() < window && em.room(1, 1) {
            let size = em.uniform_size(tid as ThreadId);
            let o = em.malloc(tid as ThreadId, size);
            stacks[tid].push(o);
            if stacks[tid].len() == window {
                growing[tid] = false;
            }
            idle = 0;
        } else if let Some(o) = stacks[tid].last().copied() {
            if !em.room(1, -1) {
                idle += 1;
                continue;
            }
            growing[tid] = false;
            stacks[tid].pop();
            em.free(tid as ThreadId, o);
            if stacks[tid].is_empty() {
                growing[tid] = true;
            }
            idle = 0;
        } else {
            idle += 1;
        }
    }
}

fn gen_larson(em: &mut Emitter) {
    let t = em.threads();
    let per_thread = (em.spec.total_ops / (4 * u64::from(t))).max(1) as usize;
    let fill = em.spec.window.min(per_thread);
    let mut windows: Vec<Vec<ObjectId>> = vec![Vec::new(); t as usize];
    // Objects handed to a thread by another one, freed on its next turn.
    let mut inbox: Vec<VecDeque<ObjectId>> = vec![VecDeque::new(); t as usize];
    for _ in 0..fill {
        for tid in 0..t {
            if em.room(1, 1) {
                let size = em.uniform_size(tid);
                let o = em.malloc(tid, size);
                windows[tid as usize].push(o);
            }
        }
    }
    loop {
        let tid = em.pick_thread();
        if !inbox[tid as usize].is_empty() {
            if !em.room(1, -1) {
                break;
            }
            let o = inbox[tid as usize].pop_front().unwrap();
            em.free(tid, o);
            continue;
        }
        let w = &windows[tid as usize];
        if w.is_empty() {
            break;
        }
        let slot = em.sched.index(w.len());
        let victim = w[slot];
        if t > 1 && em.sched.chance(em.spec.cross_free_fraction) {
            if !em.room(1, 1) {
                break;
            }
            let to = em.other_thread(tid);
            em.adopt(victim, to);
            inbox[to as usize].push_back(victim);
        } else {
            if !em.room(2, 0) {
                break;
            }
            em.free(tid, victim);
        }
        let size = em.uniform_size(tid);
        windows[tid as usize][slot] = em.malloc(tid, size);
    }
    if em.spec.teardown {
        for (tid, objs) in windows.into_iter().zip(inbox).enumerate() {
            for o in objs.0.into_iter().chain(objs.1) {
                em.free(tid as ThreadId, o);
            }
        }
    }
}

fn gen_xmalloc(em: &mut Emitter) {
    let cap = em.spec.window * em.threads() as usize;
    let mut pool: Vec<(ObjectId, ThreadId)> = Vec::new();
    loop {
        let tid = em.pick_thread();
        let want_malloc = pool.is_empty() || (pool.len() < cap && em.sched.chance(0.5));
        if want_malloc && em.room(1, 1) {
            let size = em.uniform_size(tid);
            let o = em.malloc(tid, size);
            pool.push((o, tid));
        } else if !pool.is_empty() && em.room(1, -1) {
            let idx = em.sched.index(pool.len());
            let (o, owner) = pool.swap_remove(idx);
            let freer = em.freer_for(owner);
            em.free(freer, o);
        } else {
            break;
        }
        if em.spec.teardown && !em.room(1, 1) {
            break;
        }
    }
    if em.spec.teardown {
        while let Some((o, owner)) = pool.pop() {
            let freer = em.freer_for(owner);
            em.free(freer, o);
        }
    }
}

fn gen_scratch(em: &mut Emitter) {
    let t = em.threads();
    let round_ops = 4 * u64::from(t);
    let writes = em.spec.touches_per_op.max(1);
    // writes are emitted explicitly below
    em.touches = 0;
    while em.room(round_ops, 0) {
        let handed: Vec<ObjectId> = (0..t)
            .map(|_| {
                let size = em.uniform_size(0);
                em.malloc(0, size)
            })
            .collect();
        for _ in 0..writes {
            for (i, &o) in handed.iter().enumerate() {
                em.access(i as ThreadId, o, 1, Rw::Write);
            }
        }
        for (i, &o) in handed.iter().enumerate() {
            em.free(i as ThreadId, o);
        }
        let own: Vec<ObjectId> = (0..t)
            .map(|i| {
                let size = em.uniform_size(i);
                em.malloc(i, size)
            })
            .collect();
        for _ in 0..writes {
            for (i, &o) in own.iter().enumerate() {
                em.access(i as ThreadId, o, 1, Rw::Write);
            }
        }
        for (i, &o) in own.iter().enumerate() {
            em.free(i as ThreadId, o);
        }
    }
}

/// ShBench and AllocTest: independent per-thread pools with same-thread frees.
fn gen_pools(em: &mut Emitter) {
    let t = em.threads() as usize;
    let cap = em.spec.window;
    let mut pools: Vec<Vec<ObjectId>> = vec![Vec::new(); t];
    while em.room(1, 1) {
        let tid = em.pick_thread();
        let pool_len = pools[tid as usize].len();
        let want_malloc = pool_len == 0 || (pool_len < cap && em.sched.chance(0.5));
        if want_malloc {
            let size = match em.spec.kind {
                WorkloadKind::AllocTest => em.pareto_size(tid),
                _ => em.log_uniform_size(tid),
            };
            let o = em.malloc(tid, size);
            pools[tid as usize].push(o);
        } else {
            let idx = em.sched.index(pool_len);
            let o = pools[tid as usize].swap_remove(idx);
            em.free(tid, o);
        }
    }
    if em.spec.teardown {
        for (tid, pool) in pools.into_iter().enumerate() {
            for o in pool.into_iter().rev() {
                em.free(tid as ThreadId, o);
            }
        }
    }
}

fn gen_mstress(em: &mut Emitter) {
    let mut expiring: BinaryHeap<Reverse<(u64, ObjectId)>> = BinaryHeap::new();
    let mut step = 0u64;
    let lifetime_span = 2 * em.spec.window as u64;
    while em.room(1, 1) {
        step += 1;
        let tid = em.pick_thread();
        match expiring.peek() {
            Some(&Reverse((due, o))) if due <= step => {
                expiring.pop();
                em.free(tid, o);
            }
            _ => {
                let size = if em.thread_rng[tid as usize].chance(em.spec.large_fraction) {
                    em.thread_rng[tid as usize].range_inclusive(LARGE_MIN, LARGE_MAX)
                } else {
                    em.log_uniform_size(tid)
                };
                let o = em.malloc(tid, size);
                let life = 1 + em.sched.below(lifetime_span);
                expiring.push(Reverse((step + life, o)));
            }
        }
    }
    if em.spec.teardown {
        while let Some(Reverse((_, o))) = expiring.pop() {
            let tid = em.pick_thread();
            em.free(tid, o);
        }
    }
}

/// Round k: producer `k mod T` allocates a batch of `window` objects, then a
/// consumer frees all of them. The consumer is the previous producer, except
/// in round 0 where the producer frees its own batch, so every thread meets
/// an empty private pool on its first production round.
fn gen_producer_consumer(em: &mut Emitter) {
    let t = em.threads();
    let batch = em.spec.window as u64;
    let mut round = 0u64;
    while em.room(2 * batch, 0) {
        let producer = (round % u64::from(t)) as ThreadId;
        let consumer = if round == 0 {
            producer
        } else {
            (producer + t - 1) % t
        };
        let objs: Vec<ObjectId> = (0..batch)
            .map(|_| {
                let size = em.uniform_size(producer);
                em.malloc(producer, size)
            })
            .collect();
        for o in objs {
            em.free(consumer, o);
        }
        round += 1;
    }
}
