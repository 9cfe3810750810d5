//! Discrete-event simulation of a trace under one allocator configuration.
//!
//! Each trace thread runs on its own main core and executes its records in
//! order. Compute records advance the core's clock; accesses drive the cache
//! model at the object's allocated address; allocation requests take the path
//! of the configured allocator:
//!
//! * `SpeedMalloc`: the request is sent to the support core, which serves
//!   the central heap behind the message queues. Mallocs block until the End
//!   signal returns; frees retire immediately and are applied when served.
//! * `Tiered` / `ThreadLocalOnly`: the issuing core runs the allocator
//!   itself, touching metadata in its own caches. Shared-tier operations hold
//!   one global resource for `atomic_cycles` each, in FIFO order.
//! * `IdleCore`: a harvested core serves the central heap from one shared
//!   request slot in FIFO order; each request pays two atomic handoffs.
//!
//! An operation on an object also waits for every earlier record (in trace
//! order) on that object, so a cross-thread free never overtakes the malloc
//! or accesses it follows. Events are ordered by time, then record index,
//! then core, which makes every run a pure function of its inputs.

mod metrics;

pub use metrics::{
    categories, compare, compare_sides, CompareSide, ComparisonReport, CoreCycles, LatencyHistogram, Metrics,
    TraceMismatch, CATEGORIES, LATENCY_BUCKETS,
};

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::heap::{AllocPath, HeapConfig, HeapError, HeapState, MetaTouch};
use crate::memsim::{CacheError, CacheState, HwConfig, ServiceCore, Stream};
use crate::protocol::{CoreProtocol, DataPacket, HmqState, OpKind, Payload, ProtocolConfig, ProtocolError, RegisterBuffer, SupportProtocol};
use crate::tiered::{TierMode, TieredConfig, TieredError, TieredState};
use crate::trace::{validate, ObjectId, Trace, TraceRecord, TRACE_LINE_BYTES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocatorKind {
    SpeedMalloc,
    Tiered,
    ThreadLocalOnly,
    IdleCore,
}

impl AllocatorKind {
    pub const ALL: [AllocatorKind; 4] = [
        AllocatorKind::SpeedMalloc,
        AllocatorKind::Tiered,
        AllocatorKind::ThreadLocalOnly,
        AllocatorKind::IdleCore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AllocatorKind::SpeedMalloc => "speedmalloc",
            AllocatorKind::Tiered => "tiered",
            AllocatorKind::ThreadLocalOnly => "threadlocal",
            AllocatorKind::IdleCore => "idlecore",
        }
    }
}

impl fmt::Display for AllocatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AllocatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AllocatorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown allocator `{s}` (expected speedmalloc, tiered, threadlocal or idlecore)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocatorConfig {
    pub kind: AllocatorKind,
    pub heap: HeapConfig,
    pub batch_size: usize,
    pub local_cap: usize,
    pub protocol: ProtocolConfig,
    pub atomic_cycles: u64,
    pub alloc_fast_instr_cycles: u64,
    pub alloc_generic_extra_cycles: u64,
}

impl AllocatorConfig {
    pub fn new(kind: AllocatorKind) -> Self {
        let tiered = TieredConfig::default();
        AllocatorConfig {
            kind,
            heap: HeapConfig::default(),
            batch_size: tiered.batch_size,
            local_cap: tiered.local_cap,
            protocol: ProtocolConfig::default(),
            atomic_cycles: 700,
            alloc_fast_instr_cycles: 50,
            alloc_generic_extra_cycles: 400,
        }
    }

    pub fn check(&self) -> Result<(), EngineError> {
        if self.atomic_cycles == 0 || self.alloc_fast_instr_cycles == 0 || self.alloc_generic_extra_cycles == 0 {
            return Err(EngineError::Config("allocator cycle constants must be > 0".into()));
        }
        self.heap.check()?;
        self.protocol.check()?;
        Ok(())
    }

    fn tiered(&self, mode: TierMode) -> TieredConfig {
        TieredConfig {
            batch_size: self.batch_size,
            local_cap: self.local_cap,
            mode,
            heap: self.heap.clone(),
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error(transparent)]
    Tiered(#[from] TieredError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// One change to the allocator's live set, in the order it was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocEvent {
    pub time: u64,
    pub thread: u32,
    pub object: ObjectId,
    pub op: AllocOp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocOp {
    /// `len` is the reserved block length.
    Malloc { addr: u64, len: u64 },
    Free { addr: u64 },
}

const PID: u32 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    CoreReady,
    /// Start packet reaches the support core.
    Arrive { packet: DataPacket, object: ObjectId, record: u32 },
    SupportSchedule,
    /// End packet reaches a waiting main core.
    Resume { packet: DataPacket },
}

#[derive(Debug, Clone, Copy)]
struct PendingMalloc {
    record: u32,
    issued: u64,
}

#[derive(Debug)]
struct Core {
    records: Vec<u32>,
    next: usize,
    blocked_since: Option<u64>,
    cycles: CoreCycles,
    proto: CoreProtocol,
    pending: Option<PendingMalloc>,
    done: bool,
}

enum Backend {
    Central(HeapState),
    Tiered(TieredState),
}

struct Support {
    hmq: HmqState,
    rb: RegisterBuffer,
    proto: SupportProtocol,
    busy: bool,
    intervals: Vec<(u64, u64)>,
    requests: u64,
    /// Object and record of each queued request, keyed by dispatch sequence.
    objects: HashMap<u64, (ObjectId, u32)>,
}

struct Sim<'a> {
    trace: &'a Trace,
    cfg: &'a AllocatorConfig,
    cache: CacheState,
    cores: Vec<Core>,
    backend: Backend,
    support: Option<Support>,
    events: BinaryHeap<Reverse<(u64, u64, u32, u64, Event)>>,
    seq: u64,
    pred: Vec<u32>,
    done_at: Vec<u64>,
    waiters: HashMap<u32, Vec<u32>>,
    addrs: HashMap<ObjectId, Option<u64>>,
    /// Shared-tier resource (tiered) or request slot (idle core) free time.
    resource_free: u64,
    /// Service intervals of the harvested idle core.
    idle_intervals: Vec<(u64, u64)>,
    log: Option<Vec<AllocEvent>>,
    mallocs: u64,
    frees: u64,
    oom: u64,
    atomic_syncs: u64,
    ownership_transfers: u64,
    latency: LatencyHistogram,
}

const NONE: u32 = u32::MAX;
const NOT_DONE: u64 = u64::MAX;

pub fn simulate(trace: &Trace, alloc: &AllocatorConfig, hw: &HwConfig) -> Result<Metrics, EngineError> {
    Ok(Sim::new(trace, alloc, hw, false)?.run()?.0)
}

/// Like [`simulate`], also returning every live-set change in applied order.
pub fn simulate_with_log(
    trace: &Trace,
    alloc: &AllocatorConfig,
    hw: &HwConfig,
) -> Result<(Metrics, Vec<AllocEvent>), EngineError> {
    let (m, log) = Sim::new(trace, alloc, hw, true)?.run()?;
    Ok((m, log.unwrap_or_default()))
}

impl<'a> Sim<'a> {
    fn new(trace: &'a Trace, cfg: &'a AllocatorConfig, hw: &HwConfig, log: bool) -> Result<Self, EngineError> {
        let report = validate(trace);
        if let Some(issue) = report.issues.first() {
            return Err(EngineError::InvalidTrace(format!(
                "{issue} ({} issue(s) total)",
                report.issues.len()
            )));
        }
        if trace.threads == 0 {
            return Err(EngineError::InvalidTrace("trace declares zero threads".into()));
        }
        if u32::try_from(trace.records.len()).map_or(true, |n| n == NONE) {
            return Err(EngineError::InvalidTrace("too many records".into()));
        }
        cfg.check()?;
        let threads = trace.threads as usize;
        let service = match cfg.kind {
            AllocatorKind::SpeedMalloc => Some(ServiceCore::Support),
            AllocatorKind::IdleCore => Some(ServiceCore::Full),
            _ => None,
        };
        let cache = CacheState::new(hw, threads, service)?;
        let backend = match cfg.kind {
            AllocatorKind::SpeedMalloc | AllocatorKind::IdleCore => Backend::Central(HeapState::new(cfg.heap.clone())?),
            AllocatorKind::Tiered => Backend::Tiered(TieredState::new(cfg.tiered(TierMode::Tiered), threads)?),
            AllocatorKind::ThreadLocalOnly => {
                Backend::Tiered(TieredState::new(cfg.tiered(TierMode::ThreadLocalOnly), threads)?)
            }
        };
        let support = (cfg.kind == AllocatorKind::SpeedMalloc).then(|| Support {
            hmq: HmqState::new(cfg.protocol.hmq_capacity),
            rb: RegisterBuffer::new(cfg.protocol.rb_entries, cfg.protocol.sysreg_install_cycles),
            proto: SupportProtocol::default(),
            busy: false,
            intervals: Vec::new(),
            requests: 0,
            objects: HashMap::new(),
        });

        let mut cores: Vec<Core> = (0..threads)
            .map(|i| Core {
                records: Vec::new(),
                next: 0,
                blocked_since: None,
                cycles: CoreCycles::default(),
                proto: CoreProtocol::new(i as u32),
                pending: None,
                done: false,
            })
            .collect();
        let mut pred = vec![NONE; trace.records.len()];
        let mut last: HashMap<ObjectId, u32> = HashMap::new();
        for (i, rec) in trace.records.iter().enumerate() {
            cores[rec.thread() as usize].records.push(i as u32);
            if let Some(o) = rec.object() {
                if let Some(p) = last.insert(o, i as u32) {
                    if trace.records[p as usize].thread() != rec.thread() {
                        pred[i] = p;
                    }
                }
            }
        }

        Ok(Sim {
            trace,
            cfg,
            cache,
            cores,
            backend,
            support,
            events: BinaryHeap::new(),
            seq: 0,
            pred,
            done_at: vec![NOT_DONE; trace.records.len()],
            waiters: HashMap::new(),
            addrs: HashMap::new(),
            resource_free: 0,
            idle_intervals: Vec::new(),
            log: log.then(Vec::new),
            mallocs: 0,
            frees: 0,
            oom: 0,
            atomic_syncs: 0,
            ownership_transfers: 0,
            latency: LatencyHistogram::default(),
        })
    }

    fn push(&mut self, time: u64, rank: u64, core: u32, ev: Event) {
        self.seq += 1;
        self.events.push(Reverse((time, rank, core, self.seq, ev)));
    }

    fn support_core(&self) -> usize {
        self.cores.len()
    }

    fn core_rank(&self, core: u32) -> u64 {
        let c = &self.cores[core as usize];
        c.records.get(c.next).map_or(u64::MAX, |&r| u64::from(r))
    }

    fn schedule_core(&mut self, core: u32, time: u64) {
        let rank = self.core_rank(core);
        self.push(time, rank, core, Event::CoreReady);
    }

    fn run(mut self) -> Result<(Metrics, Option<Vec<AllocEvent>>), EngineError> {
        for c in 0..self.cores.len() as u32 {
            self.schedule_core(c, 0);
        }
        while let Some(Reverse((time, _, core, _, ev))) = self.events.pop() {
            match ev {
                Event::CoreReady => self.core_ready(core, time)?,
                Event::Arrive { packet, object, record } => self.arrive(time, packet, object, record)?,
                Event::SupportSchedule => self.support_schedule(time)?,
                Event::Resume { packet } => self.resume(time, packet)?,
            }
        }
        if let Some(c) = self.cores.iter().position(|c| !c.done) {
            return Err(EngineError::InvalidTrace(format!("core {c} never finished")));
        }
        Ok(self.finish())
    }

    /// Marks a record complete at `time` and wakes cores waiting on it.
    fn complete(&mut self, record: u32, time: u64) {
        self.done_at[record as usize] = time;
        if let Some(ws) = self.waiters.remove(&record) {
            for c in ws {
                self.schedule_core(c, time);
            }
        }
    }

    fn core_ready(&mut self, core: u32, now: u64) -> Result<(), EngineError> {
        let c = core as usize;
        let Some(&record) = self.cores[c].records.get(self.cores[c].next) else {
            let core = &mut self.cores[c];
            core.done = true;
            core.cycles.completion = now;
            return Ok(());
        };

        let p = self.pred[record as usize];
        if p != NONE {
            let done = self.done_at[p as usize];
            if done == NOT_DONE || done > now {
                self.cores[c].blocked_since.get_or_insert(now);
                if done == NOT_DONE {
                    self.waiters.entry(p).or_default().push(core);
                } else {
                    self.schedule_core(core, done);
                }
                return Ok(());
            }
        }
        if let Some(since) = self.cores[c].blocked_since.take() {
            self.cores[c].cycles.dep_wait += now - since;
        }

        self.cores[c].next += 1;
        match self.trace.records[record as usize] {
            TraceRecord::Compute { cycles, .. } => {
                self.cores[c].cycles.compute += cycles;
                self.finish_record(core, record, now + cycles);
            }
            TraceRecord::Access { object, lines, rw, .. } => {
                let mut lat = 0;
                if let Some(Some(base)) = self.addrs.get(&object).copied() {
                    for k in 0..u64::from(lines) {
                        lat += self.cache.access(c, base + k * TRACE_LINE_BYTES, rw, Stream::User)?.latency;
                    }
                }
                self.cores[c].cycles.user_mem += lat;
                self.finish_record(core, record, now + lat);
            }
            TraceRecord::Malloc { object, size, .. } => {
                self.mallocs += 1;
                match self.cfg.kind {
                    AllocatorKind::SpeedMalloc => self.offload_malloc(core, record, object, size, now)?,
                    AllocatorKind::Tiered | AllocatorKind::ThreadLocalOnly => {
                        self.local_malloc(core, record, object, size, now)?
                    }
                    AllocatorKind::IdleCore => self.idle_malloc(core, record, object, size, now)?,
                }
            }
            TraceRecord::Free { object, .. } => {
                self.frees += 1;
                match self.addrs.remove(&object).flatten() {
                    None => self.finish_record(core, record, now),
                    Some(addr) => match self.cfg.kind {
                        AllocatorKind::SpeedMalloc => {
                            let packet = self.cores[c].proto.free_start(addr, PID)?;
                            let at = now + self.cfg.protocol.signal_lat;
                            self.push(at, u64::from(record), core, Event::Arrive { packet, object, record });
                            self.finish_record(core, record, now);
                        }
                        AllocatorKind::Tiered | AllocatorKind::ThreadLocalOnly => {
                            self.local_free(core, record, object, addr, now)?
                        }
                        AllocatorKind::IdleCore => self.idle_free(core, record, object, addr, now)?,
                    },
                }
            }
        }
        Ok(())
    }

    fn finish_record(&mut self, core: u32, record: u32, at: u64) {
        self.complete(record, at);
        self.schedule_core(core, at);
    }

    fn note(&mut self, time: u64, thread: u32, object: ObjectId, op: AllocOp) {
        if let Some(log) = self.log.as_mut() {
            log.push(AllocEvent {
                time,
                thread,
                object,
                op,
            });
        }
    }

    fn touch(&mut self, core: usize, touches: &[MetaTouch]) -> Result<u64, EngineError> {
        let mut lat = 0;
        for t in touches {
            lat += self.cache.access(core, t.addr, t.rw, Stream::Metadata)?.latency;
        }
        Ok(lat)
    }

    /// Runs a malloc on the central heap from the cache of `server`.
    /// Returns the address (`None` when out of memory) and service cycles.
    fn central_malloc(
        &mut self,
        server: usize,
        thread: u32,
        object: ObjectId,
        size: u64,
        now: u64,
    ) -> Result<(Option<u64>, u64), EngineError> {
        let Backend::Central(heap) = &mut self.backend else {
            unreachable!("central allocator without a central heap")
        };
        let mut cost = self.cfg.alloc_fast_instr_cycles;
        match heap.malloc(size) {
            Ok(a) => {
                if matches!(a.path, AllocPath::Generic | AllocPath::LargeNew) {
                    cost += self.cfg.alloc_generic_extra_cycles;
                }
                let (addr, len) = (a.addr, a.len);
                cost += self.touch(server, &a.touches)?;
                self.note(now, thread, object, AllocOp::Malloc { addr, len });
                Ok((Some(addr), cost))
            }
            Err(HeapError::OutOfMemory { .. }) => {
                self.oom += 1;
                Ok((None, cost))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn central_free(&mut self, server: usize, thread: u32, object: ObjectId, addr: u64, now: u64) -> Result<u64, EngineError> {
        let Backend::Central(heap) = &mut self.backend else {
            unreachable!("central allocator without a central heap")
        };
        let touches = heap.free_block(addr)?;
        let cost = self.cfg.alloc_fast_instr_cycles + self.touch(server, &touches)?;
        self.note(now, thread, object, AllocOp::Free { addr });
        Ok(cost)
    }

    // ---- offload to the support core ----

    fn offload_malloc(&mut self, core: u32, record: u32, object: ObjectId, size: u64, now: u64) -> Result<(), EngineError> {
        let c = &mut self.cores[core as usize];
        let packet = c.proto.malloc_start(size, PID)?;
        c.proto.begin_wait()?;
        c.pending = Some(PendingMalloc { record, issued: now });
        let at = now + self.cfg.protocol.signal_lat;
        self.push(at, u64::from(record), core, Event::Arrive { packet, object, record });
        Ok(())
    }

    fn arrive(&mut self, now: u64, packet: DataPacket, object: ObjectId, record: u32) -> Result<(), EngineError> {
        let sup = self.support.as_mut().expect("offload without a support core");
        let seq = sup.hmq.dispatch(packet)?;
        sup.objects.insert(seq, (object, record));
        if !sup.busy {
            sup.busy = true;
            let sc = self.support_core() as u32;
            self.push(now, u64::MAX, sc, Event::SupportSchedule);
        }
        Ok(())
    }

    fn support_schedule(&mut self, now: u64) -> Result<(), EngineError> {
        let server = self.support_core();
        let sup = self.support.as_mut().expect("offload without a support core");
        let Some(req) = sup.hmq.schedule_next() else {
            sup.busy = false;
            return Ok(());
        };
        sup.requests += 1;
        sup.proto.begin(req)?;
        let (object, record) = sup.objects.remove(&req.seq).expect("dispatched request is tracked");
        let (_, mut cost) = sup.rb.lookup(req.packet.process_id);
        let p = self.cfg.protocol;
        let thread = req.packet.core_id;
        match (req.packet.op, req.packet.payload) {
            (OpKind::Malloc, Payload::Size(size)) => {
                let (addr, exec) = self.central_malloc(server, thread, object, size, now)?;
                cost += exec;
                let sup = self.support.as_mut().unwrap();
                let end = sup.proto.malloc_end(addr.unwrap_or(0))?;
                sup.hmq.push_response(end);
                let end = sup.hmq.pop_response().expect("response just queued");
                let emit = now + cost;
                sup.intervals.push((now, emit + p.update_cycles));
                self.addrs.insert(object, addr);
                self.push(emit + p.signal_lat, u64::from(record), thread, Event::Resume { packet: end });
                self.push(emit + p.update_cycles, u64::MAX, server as u32, Event::SupportSchedule);
            }
            (OpKind::Free, Payload::Address(addr)) => {
                cost += self.central_free(server, thread, object, addr, now)?;
                let sup = self.support.as_mut().unwrap();
                sup.proto.free_end()?;
                sup.intervals.push((now, now + cost));
                self.push(now + cost, u64::MAX, server as u32, Event::SupportSchedule);
            }
            _ => return Err(ProtocolError::Malformed("request payload does not match op").into()),
        }
        Ok(())
    }

    fn resume(&mut self, now: u64, packet: DataPacket) -> Result<(), EngineError> {
        let core = packet.core_id;
        let c = &mut self.cores[core as usize];
        c.proto.receive_end(&packet)?;
        let pending = c.pending.take().ok_or(ProtocolError::UnmatchedEnd)?;
        let overlap = self.cfg.protocol.overlap_cycles;
        let resume = now.max(pending.issued + overlap);
        c.cycles.compute += overlap;
        c.cycles.alloc_wait += resume - pending.issued - overlap;
        self.latency.record(resume - pending.issued);
        self.finish_record(core, pending.record, resume);
        Ok(())
    }

    // ---- allocator running on the issuing core ----

    /// Holds the global shared-tier resource `n` times in a row starting no
    /// earlier than `now`; returns the time the last hold ends.
    fn hold_resource(&mut self, now: u64, n: u32) -> u64 {
        if n == 0 {
            return now;
        }
        let start = now.max(self.resource_free);
        self.resource_free = start + u64::from(n) * self.cfg.atomic_cycles;
        self.resource_free
    }

    fn local_malloc(&mut self, core: u32, record: u32, object: ObjectId, size: u64, now: u64) -> Result<(), EngineError> {
        let Backend::Tiered(state) = &mut self.backend else {
            unreachable!("tiered allocator without tiered state")
        };
        let (addr, ev) = match state.malloc(core, size) {
            Ok(r) => r,
            Err(TieredError::Heap(HeapError::OutOfMemory { .. })) => {
                self.oom += 1;
                self.addrs.insert(object, None);
                let exec = self.cfg.alloc_fast_instr_cycles;
                self.cores[core as usize].cycles.alloc_exec += exec;
                self.latency.record(exec);
                self.finish_record(core, record, now + exec);
                return Ok(());
            }
            Err(e) => return Err(e.into()),
        };
        let len = state.block_len(addr).expect("fresh block is live");
        self.atomic_syncs += u64::from(ev.atomic_syncs);
        self.ownership_transfers += u64::from(ev.ownership_transfers);
        let after_sync = self.hold_resource(now, ev.atomic_syncs);
        let meta = self.touch(core as usize, &ev.touches)?;
        let mut exec = self.cfg.alloc_fast_instr_cycles;
        if ev.chunk_acquired {
            exec += self.cfg.alloc_generic_extra_cycles;
        }
        let cyc = &mut self.cores[core as usize].cycles;
        cyc.atomic_sync += after_sync - now;
        cyc.metadata_mem += meta;
        cyc.alloc_exec += exec;
        let end = after_sync + meta + exec;
        self.addrs.insert(object, Some(addr));
        self.note(now, core, object, AllocOp::Malloc { addr, len });
        self.latency.record(end - now);
        self.finish_record(core, record, end);
        Ok(())
    }

    fn local_free(&mut self, core: u32, record: u32, object: ObjectId, addr: u64, now: u64) -> Result<(), EngineError> {
        let Backend::Tiered(state) = &mut self.backend else {
            unreachable!("tiered allocator without tiered state")
        };
        let ev = state.tiered_free(core, addr)?;
        self.atomic_syncs += u64::from(ev.atomic_syncs);
        self.ownership_transfers += u64::from(ev.ownership_transfers);
        let after_sync = self.hold_resource(now, ev.atomic_syncs);
        let meta = self.touch(core as usize, &ev.touches)?;
        let exec = self.cfg.alloc_fast_instr_cycles;
        let cyc = &mut self.cores[core as usize].cycles;
        cyc.atomic_sync += after_sync - now;
        cyc.metadata_mem += meta;
        cyc.alloc_exec += exec;
        self.note(now, core, object, AllocOp::Free { addr });
        self.finish_record(core, record, after_sync + meta + exec);
        Ok(())
    }

    // ---- offload to a harvested idle core ----

    fn idle_malloc(&mut self, core: u32, record: u32, object: ObjectId, size: u64, now: u64) -> Result<(), EngineError> {
        let a = self.cfg.atomic_cycles;
        let arrival = now + a;
        let start = arrival.max(self.resource_free);
        let server = self.support_core();
        let (addr, exec) = self.central_malloc(server, core, object, size, start)?;
        let done = start + exec;
        self.resource_free = done;
        self.idle_intervals.push((start, done));
        let resume = done + a;
        let cyc = &mut self.cores[core as usize].cycles;
        cyc.atomic_sync += 2 * a;
        cyc.alloc_wait += done - arrival;
        self.addrs.insert(object, addr);
        self.latency.record(resume - now);
        self.finish_record(core, record, resume);
        Ok(())
    }

    fn idle_free(&mut self, core: u32, record: u32, object: ObjectId, addr: u64, now: u64) -> Result<(), EngineError> {
        let a = self.cfg.atomic_cycles;
        let arrival = now + a;
        let start = arrival.max(self.resource_free);
        let server = self.support_core();
        let exec = self.central_free(server, core, object, addr, start)?;
        self.resource_free = start + exec;
        self.idle_intervals.push((start, start + exec));
        let cyc = &mut self.cores[core as usize].cycles;
        cyc.atomic_sync += 2 * a;
        cyc.alloc_wait += start - arrival;
        self.finish_record(core, record, start + a);
        Ok(())
    }

    fn finish(self) -> (Metrics, Option<Vec<AllocEvent>>) {
        let total = self.cores.iter().map(|c| c.cycles.completion).max().unwrap_or(0);
        let clipped = |iv: &[(u64, u64)]| -> u64 { iv.iter().map(|&(a, b)| b.min(total).saturating_sub(a)).sum() };
        let has_server = self.support.is_some() || self.cfg.kind == AllocatorKind::IdleCore;
        let (busy, requests) = match &self.support {
            Some(s) => (clipped(&s.intervals), s.requests),
            None => (clipped(&self.idle_intervals), self.idle_intervals.len() as u64),
        };
        let (mmap_calls, peak, live, transfers) = match &self.backend {
            Backend::Central(heap) => (heap.mmap_calls(), heap.peak_committed_bytes(), heap.live_bytes(), 0),
            Backend::Tiered(s) => (
                s.mmap_calls(),
                s.peak_committed_bytes(),
                s.live_bytes(),
                s.ownership_transfers(),
            ),
        };
        debug_assert_eq!(transfers, self.ownership_transfers);
        let metrics = Metrics {
            allocator: self.cfg.kind,
            trace_hash: self.trace.content_hash(),
            threads: self.trace.threads,
            cores: self.cores.iter().map(|c| c.cycles).collect(),
            total_cycles: total,
            support_busy: busy,
            support_stall: if has_server { total - busy } else { 0 },
            support_requests: requests,
            cache: self.cache.stats(),
            mallocs: self.mallocs,
            frees: self.frees,
            oom_failures: self.oom,
            atomic_syncs: self.atomic_syncs,
            ownership_transfers: self.ownership_transfers,
            mmap_calls,
            peak_committed_bytes: peak,
            live_bytes_at_end: live,
            malloc_latency: self.latency,
        };
        (metrics, self.log)
    }
}
