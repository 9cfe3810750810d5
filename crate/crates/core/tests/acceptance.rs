//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits nonzero if any fails.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use simalloc::engine::{simulate, simulate_with_log, AllocEvent, AllocOp, AllocatorConfig, AllocatorKind, Metrics};
use simalloc::harness::{EnergyInputs, PowerModel};
use simalloc::heap::{replay_peak, HeapConfig, HeapState};
use simalloc::memsim::{CacheLevelConfig, CacheState, HwConfig, Level, Stream};
use simalloc::protocol::{CoreProtocol, CoreStage, DataPacket, HmqState, OpKind, SupportProtocol};
use simalloc::tiered::{blowup_probe, TierMode, TieredConfig, TieredState};
use simalloc::trace::{generate, ObjectId, Rw, Trace, TraceRecord, WorkloadKind, WorkloadSpec};
use simalloc::PowerModel64;

type Outcome = Result<String, String>;

const SAFETY_TRACES: usize = 100;
const SAFETY_BUDGET: Duration = Duration::from_secs(60);
const CACHE_ACCESSES: usize = 10_000;
const HMQ_SCENARIOS: usize = 10_000;
const BLOWUP_TLO_MIN: f64 = 0.7;
const BLOWUP_CENTRAL_MAX: f64 = 2.0;
const LARSON_BUDGET: Duration = Duration::from_secs(30);
const ATOMIC_SHARE: (f64, f64) = (0.05, 0.40);
const ENERGY_EXAMPLE: f64 = 16337.2;
const ENERGY_TOL: f64 = 1e-9;
const SUPPORT_BOUND: f64 = 0.0225;

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("allocator safety", allocator_safety),
        ("cache oracle equivalence", cache_oracle),
        ("scheduler properties", scheduler_properties),
        ("blowup reproduction", blowup),
        ("pollution and atomic elimination", structural_zeros),
        ("directional performance", larson_direction),
        ("idle-core ordering", idle_core_ordering),
        ("way-partition direction", partition_direction),
        ("energy model", energy_model),
        ("end-to-end determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let outcome = f();
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn random_spec(rng: &mut StdRng) -> WorkloadSpec {
    let kind = WorkloadKind::ALL[rng.random_range(0..WorkloadKind::ALL.len())];
    let threads = rng.random_range(1..=16);
    // about five records per op, so 20k ops is about 1e5 records
    let mut spec = WorkloadSpec::new(kind, threads, 20_000, rng.random());
    spec.cross_free_fraction = rng.random_range(0.0..=1.0);
    spec.window = rng.random_range(16..=1024);
    if rng.random_bool(0.2) {
        spec.max_size = 65_536;
        spec.large_fraction = 0.02;
    }
    spec
}

fn expected_block(size: u64) -> Option<u64> {
    (size <= 32_768).then(|| size.max(16).next_power_of_two())
}

/// Independent interval-set check of an allocation log.
fn check_log(trace: &Trace, log: &[AllocEvent]) -> Result<(), String> {
    let sizes: HashMap<ObjectId, u64> = trace
        .records
        .iter()
        .filter_map(|r| match *r {
            TraceRecord::Malloc { object, size, .. } => Some((object, size)),
            _ => None,
        })
        .collect();
    let mut live: BTreeMap<u64, (u64, ObjectId)> = BTreeMap::new();
    let mut mallocs = 0;
    for ev in log {
        match ev.op {
            AllocOp::Malloc { addr, len } => {
                mallocs += 1;
                let size = sizes[&ev.object];
                match expected_block(size) {
                    Some(block) => {
                        ensure(len == block, || format!("object {} size {size} got block {len}", ev.object))?;
                        ensure(addr % block == 0, || format!("{addr:#x} not aligned to class {block}"))?;
                    }
                    None => {
                        ensure(len >= size, || format!("large block {len} < {size}"))?;
                        ensure(addr % 4096 == 0, || format!("large block {addr:#x} not page aligned"))?;
                    }
                }
                if let Some((&start, &(end, other))) = live.range(..addr + len).next_back() {
                    ensure(end <= addr, || {
                        format!("object {} at {addr:#x} overlaps object {other} at {start:#x}", ev.object)
                    })?;
                }
                live.insert(addr, (addr + len, ev.object));
            }
            AllocOp::Free { addr } => {
                let (_, obj) = live
                    .remove(&addr)
                    .ok_or_else(|| format!("free of non-live address {addr:#x}"))?;
                ensure(obj == ev.object, || format!("object {} freed block of {obj}", ev.object))?;
            }
        }
    }
    ensure(mallocs == trace.count_mallocs(), || {
        format!("{mallocs} mallocs logged, trace has {}", trace.count_mallocs())
    })
}

/// Replays the trace directly on the allocator state and re-frees every
/// block; each second free must be rejected.
fn double_frees_accepted(trace: &Trace) -> Result<u64, String> {
    let mut accepted = 0;
    let mut heap = HeapState::new(HeapConfig::default()).map_err(|e| e.to_string())?;
    let mut addrs = HashMap::new();
    for r in &trace.records {
        match *r {
            TraceRecord::Malloc { object, size, .. } => {
                addrs.insert(object, heap.malloc(size).map_err(|e| e.to_string())?.addr);
            }
            TraceRecord::Free { object, .. } => {
                let a = addrs[&object];
                heap.free_block(a).map_err(|e| e.to_string())?;
                accepted += u64::from(heap.free_block(a).is_ok());
            }
            _ => {}
        }
    }
    for mode in [TierMode::Tiered, TierMode::ThreadLocalOnly] {
        let cfg = TieredConfig {
            mode,
            ..TieredConfig::default()
        };
        let mut st = TieredState::new(cfg, trace.threads as usize).map_err(|e| e.to_string())?;
        addrs.clear();
        for r in &trace.records {
            match *r {
                TraceRecord::Malloc { thread, object, size } => {
                    addrs.insert(object, st.malloc(thread, size).map_err(|e| e.to_string())?.0);
                }
                TraceRecord::Free { thread, object } => {
                    let a = addrs[&object];
                    st.tiered_free(thread, a).map_err(|e| e.to_string())?;
                    accepted += u64::from(st.tiered_free(thread, a).is_ok());
                }
                _ => {}
            }
        }
        st.check_invariants()?;
    }
    Ok(accepted)
}

fn allocator_safety() -> Outcome {
    let t0 = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5afe);
    let hw = HwConfig::default();
    let (mut records, mut runs, mut double) = (0, 0, 0);
    for i in 0..SAFETY_TRACES {
        let spec = random_spec(&mut rng);
        let trace = generate(&spec).map_err(|e| format!("trace {i}: {e}"))?;
        records += trace.records.len();
        for kind in AllocatorKind::ALL {
            let (m, log) = simulate_with_log(&trace, &AllocatorConfig::new(kind), &hw)
                .map_err(|e| format!("trace {i} ({}) {kind}: {e}", spec.kind))?;
            ensure(m.oom_failures == 0, || format!("trace {i} {kind}: unexpected OOM"))?;
            check_log(&trace, &log).map_err(|e| format!("trace {i} ({}, T={}) {kind}: {e}", spec.kind, spec.threads))?;
            runs += 1;
        }
        double += double_frees_accepted(&trace).map_err(|e| format!("trace {i}: {e}"))?;
    }
    ensure(double == 0, || format!("{double} double frees accepted"))?;
    let elapsed = t0.elapsed();
    ensure(elapsed <= SAFETY_BUDGET, || format!("took {elapsed:?}, budget {SAFETY_BUDGET:?}"))?;
    Ok(format!(
        "{runs} runs over {SAFETY_TRACES} traces ({} records avg), 0 overlaps, 0 misaligned, 0 double frees accepted",
        records / SAFETY_TRACES
    ))
}

// ---------------------------------------------------------------- 2

/// Move-to-front LRU lists; a set holds separate metadata and user lists
/// when partitioned.
struct OracleLevel {
    sets: u64,
    ways: usize,
    meta_ways: usize,
    lists: Vec<[VecDeque<u64>; 2]>,
}

impl OracleLevel {
    fn new(cfg: &CacheLevelConfig, scale: u64, meta_ways: usize) -> Self {
        let sets = cfg.capacity_bytes / cfg.line_bytes / cfg.associativity as u64 * scale;
        OracleLevel {
            sets,
            ways: cfg.associativity,
            meta_ways,
            lists: (0..sets).map(|_| [VecDeque::new(), VecDeque::new()]).collect(),
        }
    }

    fn set(&mut self, line: u64) -> &mut [VecDeque<u64>; 2] {
        &mut self.lists[(line % self.sets) as usize]
    }

    fn lookup(&mut self, line: u64) -> bool {
        for list in self.set(line).iter_mut() {
            if let Some(p) = list.iter().position(|&l| l == line) {
                list.remove(p);
                list.push_front(line);
                return true;
            }
        }
        false
    }

    fn fill(&mut self, line: u64, meta: bool) {
        let (part, cap) = match (self.meta_ways, meta) {
            (0, _) => (1, self.ways),
            (m, true) => (0, m),
            (m, false) => (1, self.ways - m),
        };
        let list = &mut self.set(line)[part];
        list.push_front(line);
        list.truncate(cap);
    }

    fn invalidate(&mut self, line: u64) {
        for list in self.set(line).iter_mut() {
            list.retain(|&l| l != line);
        }
    }
}

struct Oracle {
    l1: Vec<OracleLevel>,
    l2: Vec<OracleLevel>,
    llc: OracleLevel,
    writer: HashMap<u64, usize>,
    hw: HwConfig,
}

impl Oracle {
    fn access(&mut self, core: usize, addr: u64, rw: Rw, meta: bool) -> (Option<Level>, u64, bool) {
        let line = addr / 64;
        let mut lat = 0;
        let owner = self.writer.get(&line).copied();
        let coherence = owner.is_some_and(|o| o != core);
        if coherence {
            let o = owner.unwrap();
            self.l1[o].invalidate(line);
            self.l2[o].invalidate(line);
            lat += self.hw.coherence_latency;
        }
        match rw {
            Rw::Write => {
                self.writer.insert(line, core);
            }
            Rw::Read if coherence => {
                self.writer.remove(&line);
            }
            Rw::Read => {}
        }
        lat += self.hw.l1.hit_latency;
        if self.l1[core].lookup(line) {
            return (Some(Level::L1), lat, coherence);
        }
        self.l1[core].fill(line, meta);
        lat += self.hw.l2.hit_latency;
        if self.l2[core].lookup(line) {
            return (Some(Level::L2), lat, coherence);
        }
        self.l2[core].fill(line, meta);
        lat += self.hw.llc_per_core.hit_latency;
        if self.llc.lookup(line) {
            return (Some(Level::Llc), lat, coherence);
        }
        self.llc.fill(line, meta);
        (None, lat + self.hw.dram_latency, coherence)
    }
}

fn cache_oracle() -> Outcome {
    let mut compared = 0;
    for meta_ways in [0, 1] {
        let hw = HwConfig {
            l1: CacheLevelConfig::new(256, 2, 4),
            l2: CacheLevelConfig::new(1024, 4, 12),
            llc_per_core: CacheLevelConfig::new(2048, 4, 24),
            l2_partition_meta_ways: meta_ways,
            ..HwConfig::default()
        };
        let mut sim = CacheState::new(&hw, 2, None).map_err(|e| e.to_string())?;
        let mut oracle = Oracle {
            l1: (0..2).map(|_| OracleLevel::new(&hw.l1, 1, 0)).collect(),
            l2: (0..2).map(|_| OracleLevel::new(&hw.l2, 1, meta_ways)).collect(),
            llc: OracleLevel::new(&hw.llc_per_core, 2, 0),
            writer: HashMap::new(),
            hw: hw.clone(),
        };
        let mut rng = StdRng::seed_from_u64(0xcac4e + meta_ways as u64);
        for i in 0..CACHE_ACCESSES {
            let core = rng.random_range(0..2);
            let addr = rng.random_range(0..160u64) * 64 + rng.random_range(0..64);
            let rw = if rng.random_bool(0.3) { Rw::Write } else { Rw::Read };
            let meta = rng.random_bool(0.3);
            let stream = if meta { Stream::Metadata } else { Stream::User };
            let got = sim.access(core, addr, rw, stream).map_err(|e| e.to_string())?;
            let want = oracle.access(core, addr, rw, meta);
            ensure((got.hit, got.latency, got.coherence) == want, || {
                format!(
                    "partition {meta_ways}, access {i}: simulator {:?}/{}/{} vs oracle {want:?}",
                    got.hit, got.latency, got.coherence
                )
            })?;
            compared += 1;
        }
    }
    Ok(format!("{compared} accesses identical to the move-to-front reference (with and without an L2 partition)"))
}

// ---------------------------------------------------------------- 3

fn hmq_scenario(rng: &mut StdRng) -> Result<(usize, usize), String> {
    let cores = rng.random_range(2..=6u32);
    let mut hmq = HmqState::new(rng.random_range(1..=4));
    let mut support = SupportProtocol::default();
    let mut cps: Vec<CoreProtocol> = (0..cores).map(CoreProtocol::new).collect();
    let mut mallocs = vec![0u32; cores as usize];
    let mut ends = vec![0u32; cores as usize];
    // waits[op][c][d]: services of d since c last got one, while c is queued
    let mut waits = vec![vec![vec![0u32; cores as usize]; cores as usize]; 2];
    let mut served = 0;
    let steps: usize = rng.random_range(10..80);
    let mut step = 0;
    let mut idle_rounds = 0;
    loop {
        let draining = step >= steps;
        let action = if draining { 1 + step % 2 } else { rng.random_range(0..4) };
        step += 1;
        if draining && hmq.is_empty() {
            idle_rounds += 1;
            if idle_rounds > 2 {
                break;
            }
        }
        match action {
            0 | 3 => {
                let c = rng.random_range(0..cores) as usize;
                let pid = rng.random_range(0..3);
                let p = &mut cps[c];
                let packet = match p.stage() {
                    CoreStage::Idle | CoreStage::Stage4Resumed if rng.random_bool(0.6) => {
                        let pk = p.malloc_start(rng.random_range(1..4096), pid).map_err(|e| e.to_string())?;
                        if rng.random_bool(0.5) {
                            p.begin_wait().map_err(|e| e.to_string())?;
                        }
                        mallocs[c] += 1;
                        pk
                    }
                    CoreStage::Idle | CoreStage::Stage4Resumed => {
                        p.free_start(0x1000 * rng.random_range(1..100u64), pid).map_err(|e| e.to_string())?
                    }
                    _ => continue,
                };
                hmq.dispatch(packet).map_err(|e| e.to_string())?;
            }
            1 => {
                let queued = [hmq.queued_cores(OpKind::Malloc), hmq.queued_cores(OpKind::Free)];
                let Some(r) = hmq.schedule_next() else { continue };
                served += 1;
                let op = r.packet.op;
                ensure(queued[0].is_empty() || op == OpKind::Malloc, || {
                    "free served while a malloc was queued".into()
                })?;
                let k = (op == OpKind::Free) as usize;
                let d = r.packet.core_id as usize;
                for c in 0..cores as usize {
                    if c == d || !queued[k].contains(&(c as u32)) {
                        waits[k][c].iter_mut().for_each(|w| *w = 0);
                        continue;
                    }
                    waits[k][c][d] += 1;
                    ensure(waits[k][c][d] <= 1, || {
                        format!("core {d} served twice while core {c} waited ({op:?})")
                    })?;
                }
                support.begin(r).map_err(|e| e.to_string())?;
                match op {
                    OpKind::Malloc => {
                        let end = support.malloc_end(0x4000 + served as u64).map_err(|e| e.to_string())?;
                        hmq.push_response(end);
                    }
                    OpKind::Free => support.free_end().map_err(|e| e.to_string())?,
                }
            }
            _ => {
                if let Some(pk) = hmq.pop_response() {
                    let c = pk.core_id as usize;
                    cps[c].receive_end(&pk).map_err(|e| format!("core {c}: {e}"))?;
                    ends[c] += 1;
                    ensure(ends[c] <= mallocs[c], || format!("core {c}: more Ends than mallocs"))?;
                }
            }
        }
    }
    while let Some(pk) = hmq.pop_response() {
        let c = pk.core_id as usize;
        cps[c].receive_end(&pk).map_err(|e| format!("core {c}: {e}"))?;
        ends[c] += 1;
    }
    ensure(ends == mallocs, || format!("ends {ends:?} vs mallocs {mallocs:?}"))?;
    // A stray End is refused.
    let stray = DataPacket::malloc_end(0, 0, 0);
    ensure(cps[0].receive_end(&stray).is_err(), || "stray End accepted".into())?;
    Ok((served, mallocs.iter().sum::<u32>() as usize))
}

fn scheduler_properties() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x4e9);
    let (mut served, mut mallocs) = (0, 0);
    for i in 0..HMQ_SCENARIOS {
        let (s, m) = hmq_scenario(&mut rng).map_err(|e| format!("scenario {i}: {e}"))?;
        served += s;
        mallocs += m;
    }
    Ok(format!(
        "{HMQ_SCENARIOS} interleavings, {served} services, {mallocs} mallocs each answered by exactly one End"
    ))
}

// ---------------------------------------------------------------- 4

/// Per-thread pool model of thread-local-only caching for a single class:
/// blocks freed by a thread stay with that thread, carving is in batches.
fn tlo_oracle(trace: &Trace, block: u64, batch: u64, chunk: u64) -> u64 {
    let per_chunk = chunk / block;
    let mut pool = vec![0u64; trace.threads as usize];
    let mut carved = vec![0u64; trace.threads as usize];
    for r in &trace.records {
        match *r {
            TraceRecord::Malloc { thread, .. } => {
                let t = thread as usize;
                if pool[t] == 0 {
                    carved[t] += batch;
                    pool[t] += batch;
                }
                pool[t] -= 1;
            }
            TraceRecord::Free { thread, .. } => pool[thread as usize] += 1,
            _ => {}
        }
    }
    carved.iter().map(|&c| c.div_ceil(per_chunk) * chunk).sum()
}

/// Peak live blocks of one class, rounded up to whole chunks.
fn central_oracle(trace: &Trace, block: u64, chunk: u64) -> u64 {
    let (mut live, mut peak) = (0u64, 0u64);
    for r in &trace.records {
        match r {
            TraceRecord::Malloc { .. } => {
                live += 1;
                peak = peak.max(live);
            }
            TraceRecord::Free { .. } => live -= 1,
            _ => {}
        }
    }
    (peak * block).div_ceil(chunk) * chunk
}

fn blowup() -> Outcome {
    let heap = HeapConfig::default();
    let tlo_cfg = TieredConfig {
        mode: TierMode::ThreadLocalOnly,
        ..TieredConfig::default()
    };
    let mut tlo = Vec::new();
    let mut central = Vec::new();
    for t in [1u32, 2, 4, 8] {
        let trace = generate(&WorkloadSpec::new(WorkloadKind::ProducerConsumer, t, 20_000, 7)).map_err(|e| e.to_string())?;
        let a = blowup_probe(&tlo_cfg, &trace).map_err(|e| e.to_string())?;
        let b = replay_peak(heap.clone(), &trace).map_err(|e| e.to_string())?;
        let oa = tlo_oracle(&trace, 64, tlo_cfg.batch_size as u64, heap.chunk_size);
        let ob = central_oracle(&trace, 64, heap.chunk_size);
        ensure(a == oa, || format!("T={t}: thread-local peak {a} but oracle {oa}"))?;
        ensure(b == ob, || format!("T={t}: central peak {b} but oracle {ob}"))?;
        tlo.push((t, a));
        central.push((t, b));
    }
    let base_tlo = tlo[0].1 as f64;
    let base_c = central[0].1 as f64;
    let mut detail = Vec::new();
    for (&(t, a), &(_, b)) in tlo.iter().zip(&central) {
        let (ra, rb) = (a as f64 / base_tlo, b as f64 / base_c);
        ensure(ra >= BLOWUP_TLO_MIN * t as f64, || format!("T={t}: thread-local ratio {ra}"))?;
        ensure(rb <= BLOWUP_CENTRAL_MAX, || format!("T={t}: centralized ratio {rb}"))?;
        detail.push(format!("T={t} {ra:.2}x/{rb:.2}x"));
    }
    Ok(format!("peak(T)/peak(1) thread-local/centralized: {}", detail.join(", ")))
}

// ---------------------------------------------------------------- 5

fn structural_zeros() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5afe);
    let mut traces: Vec<Trace> = WorkloadKind::ALL
        .iter()
        .map(|&k| generate(&WorkloadSpec::new(k, 16, 20_000, 11)).unwrap())
        .collect();
    for _ in 0..20 {
        traces.push(generate(&random_spec(&mut rng)).map_err(|e| e.to_string())?);
    }
    let cfg = AllocatorConfig::new(AllocatorKind::SpeedMalloc);
    for (i, t) in traces.iter().enumerate() {
        let m = simulate(t, &cfg, &HwConfig::default()).map_err(|e| e.to_string())?;
        let atomic = m.core_totals().atomic_sync;
        ensure(m.main_metadata_misses() == 0 && atomic == 0 && m.atomic_syncs == 0, || {
            format!(
                "trace {i}: {} main-core metadata misses, {atomic} atomic cycles",
                m.main_metadata_misses()
            )
        })?;
    }
    Ok(format!("{} traces: main-core metadata misses 0, atomic cycles 0", traces.len()))
}

// ---------------------------------------------------------------- 6, 7

fn larson() -> Trace {
    generate(&WorkloadSpec::new(WorkloadKind::Larson, 16, 100_000, 42)).expect("larson trace")
}

fn run(trace: &Trace, kind: AllocatorKind) -> Result<Metrics, String> {
    simulate(trace, &AllocatorConfig::new(kind), &HwConfig::default()).map_err(|e| e.to_string())
}

fn larson_direction() -> Outcome {
    let t0 = Instant::now();
    let trace = larson();
    let sm = run(&trace, AllocatorKind::SpeedMalloc)?;
    let ti = run(&trace, AllocatorKind::Tiered)?;
    let elapsed = t0.elapsed();
    let share = ti.atomic_share();
    ensure(sm.total_cycles < ti.total_cycles, || {
        format!("speedmalloc {} >= tiered {}", sm.total_cycles, ti.total_cycles)
    })?;
    ensure((ATOMIC_SHARE.0..=ATOMIC_SHARE.1).contains(&share), || {
        format!("tiered atomic share {share:.4} outside {ATOMIC_SHARE:?}")
    })?;
    ensure(elapsed <= LARSON_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!(
        "speedmalloc {} < tiered {} cycles ({:.3}x), tiered atomic share {:.1}%",
        sm.total_cycles,
        ti.total_cycles,
        ti.total_cycles as f64 / sm.total_cycles as f64,
        100.0 * share
    ))
}

fn idle_core_ordering() -> Outcome {
    let trace = larson();
    let sm = run(&trace, AllocatorKind::SpeedMalloc)?;
    let ic = run(&trace, AllocatorKind::IdleCore)?;
    ensure(sm.total_cycles < ic.total_cycles, || {
        format!("speedmalloc {} >= idlecore {}", sm.total_cycles, ic.total_cycles)
    })?;
    Ok(format!("speedmalloc {} < idlecore {} cycles", sm.total_cycles, ic.total_cycles))
}

// ---------------------------------------------------------------- 8

fn partition_direction() -> Outcome {
    let cfg = AllocatorConfig::new(AllocatorKind::Tiered);
    let plain = HwConfig::default();
    let parted = HwConfig {
        l2_partition_meta_ways: 1,
        ..HwConfig::default()
    };
    let (mut up, mut down_or_tie) = (Vec::new(), Vec::new());
    for kind in WorkloadKind::ALL {
        let trace = generate(&WorkloadSpec::new(kind, 16, 100_000, 42)).map_err(|e| e.to_string())?;
        let a = simulate(&trace, &cfg, &plain).map_err(|e| e.to_string())?.total_cycles;
        let b = simulate(&trace, &cfg, &parted).map_err(|e| e.to_string())?.total_cycles;
        let delta = format!("{kind} {:+.3}%", 100.0 * (b as f64 / a as f64 - 1.0));
        if b > a {
            up.push(delta);
        } else {
            down_or_tie.push(delta);
        }
    }
    let detail = format!("slower: [{}]; faster or tied: [{}]", up.join(", "), down_or_tie.join(", "));
    ensure(!up.is_empty() && !down_or_tie.is_empty(), || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn energy_model() -> Outcome {
    let p = PowerModel64::default();
    let example = p.energy_of(
        EnergyInputs {
            main_cycles: 16 * 1000,
            service_busy: 1000,
            service_stall: 0,
            total_cycles: 1000,
        },
        p.service_power(AllocatorKind::SpeedMalloc),
    );
    let rel = (example - ENERGY_EXAMPLE).abs() / ENERGY_EXAMPLE;
    ensure(rel <= ENERGY_TOL, || format!("example gave {example}"))?;
    ensure(p.energy_of(EnergyInputs::default(), 1.0) == 0.0, || "zero run not zero".into())?;

    // A 16-core run with a support core, at least 2.25% shorter than one without.
    let mut rng = StdRng::seed_from_u64(0xe7e7);
    let mut checked = 0;
    for _ in 0..10_000 {
        // every main core runs for the whole run, as in the worked example
        let cores = [rng.random_range(1_000..10_000_000u64); 16];
        let total = *cores.iter().max().unwrap();
        let base = p.energy_of(
            EnergyInputs {
                main_cycles: cores.iter().sum(),
                total_cycles: total,
                ..EnergyInputs::default()
            },
            0.0,
        );
        let keep = 1.0 - SUPPORT_BOUND - rng.random_range(0.0..0.5);
        let faster: Vec<u64> = cores.iter().map(|&c| (c as f64 * keep).floor() as u64).collect();
        let ftotal = *faster.iter().max().unwrap();
        let busy = rng.random_range(0..=ftotal);
        let e = p.energy_of(
            EnergyInputs {
                main_cycles: faster.iter().sum(),
                service_busy: busy,
                service_stall: ftotal - busy,
                total_cycles: ftotal,
            },
            p.service_power(AllocatorKind::SpeedMalloc),
        );
        ensure(e < base, || format!("energy {e} not below {base} at {keep:.4} of the cycles"))?;
        // energy grows with cycles
        let slower = p.energy_of(
            EnergyInputs {
                main_cycles: faster.iter().sum::<u64>() + 1,
                service_busy: busy,
                service_stall: ftotal - busy,
                total_cycles: ftotal,
            },
            p.service_power(AllocatorKind::SpeedMalloc),
        );
        ensure(slower > e, || "energy not monotone in cycles".into())?;
        checked += 1;
    }
    let f32_model = PowerModel::<f32>::default();
    let e32 = f32_model.energy_of(
        EnergyInputs {
            main_cycles: 16_000,
            service_busy: 1000,
            service_stall: 0,
            total_cycles: 1000,
        },
        f32_model.service_power(AllocatorKind::SpeedMalloc),
    );
    ensure((f64::from(e32) - ENERGY_EXAMPLE).abs() < 0.01, || format!("f32 model gave {e32}"))?;
    Ok(format!(
        "example {example} (rel err {rel:.1e}); {checked} randomized 16-core runs >= 2.25% shorter all use less energy"
    ))
}

// ---------------------------------------------------------------- 10

fn cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_simalloc"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("simalloc {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
        cli(&["gen", "--workload", "larson", "--threads", "16", "--seed", "42", "--out", "t.trace"], &dir)?;
        cli(&["run", "--trace", "t.trace", "--allocator", "speedmalloc", "--out", "out"], &dir)?;
        let read = |p: &str| std::fs::read(dir.join(p)).map_err(|e| e.to_string());
        outputs.push((read("t.trace")?, read("out/metrics.csv")?));
    }
    ensure(outputs[0].0 == outputs[1].0, || "trace files differ".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "metrics files differ".into())?;
    Ok(format!(
        "trace ({} bytes) and metrics.csv ({} bytes) byte-identical across reruns",
        outputs[0].0.len(),
        outputs[0].1.len()
    ))
}
