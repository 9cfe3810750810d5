//! Offload protocol between main cores and the allocator support core.
//!
//! A main core starts a request by sending a Start packet. For a malloc it
//! then waits for the End packet that carries the returned address; a free is
//! fire-and-forget. Packets land in hardware message queues (malloc, free and
//! response), overflowing into an unbounded spill buffer kept in reserved
//! memory. The support core always serves pending mallocs before frees and
//! picks among requesting cores round-robin. Per-process translation
//! registers travel with a core's first request and are cached on the support
//! core in a small direct-mapped register buffer.

use std::collections::{HashSet, VecDeque};

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Signal {
    Start,
    End,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Malloc,
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Payload {
    Size(u64),
    Address(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DataPacket {
    pub signal: Signal,
    pub op: OpKind,
    pub core_id: u32,
    pub process_id: u32,
    pub payload: Payload,
    pub includes_sysregs: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("core {core} cannot {action} in stage {stage:?}")]
    BadStage {
        core: u32,
        stage: CoreStage,
        action: &'static str,
    },
    #[error("malformed packet: {0}")]
    Malformed(&'static str),
    #[error("end signal without a malloc in service")]
    UnmatchedEnd,
    #[error("end packet dispatched to a request queue")]
    EndDispatched,
    #[error("invalid protocol configuration: {0}")]
    BadConfig(String),
}

const F_END: u64 = 1;
const F_FREE: u64 = 1 << 1;
const F_SYSREGS: u64 = 1 << 2;
const F_ADDRESS: u64 = 1 << 3;

impl DataPacket {
    pub fn malloc_end(core_id: u32, process_id: u32, addr: u64) -> Self {
        DataPacket {
            signal: Signal::End,
            op: OpKind::Malloc,
            core_id,
            process_id,
            payload: Payload::Address(addr),
            includes_sysregs: false,
        }
    }

    /// End packets exist only for mallocs, and the payload kind follows from
    /// the signal and the operation.
    pub fn is_well_formed(&self) -> bool {
        match (self.signal, self.op, self.payload) {
            (Signal::Start, OpKind::Malloc, Payload::Size(_)) => true,
            (Signal::Start, OpKind::Free, Payload::Address(_)) => true,
            (Signal::End, OpKind::Malloc, Payload::Address(_)) => !self.includes_sysregs,
            _ => false,
        }
    }

    /// Record-level encoding as three words: flags and core id, process id,
    /// payload.
    pub fn to_words(&self) -> [u64; 3] {
        let mut flags = 0;
        if self.signal == Signal::End {
            flags |= F_END;
        }
        if self.op == OpKind::Free {
            flags |= F_FREE;
        }
        if self.includes_sysregs {
            flags |= F_SYSREGS;
        }
        let value = match self.payload {
            Payload::Size(v) => v,
            Payload::Address(v) => {
                flags |= F_ADDRESS;
                v
            }
        };
        [flags | u64::from(self.core_id) << 32, u64::from(self.process_id), value]
    }

    pub fn from_words(words: [u64; 3]) -> Result<Self, ProtocolError> {
        let [w0, w1, value] = words;
        if w0 & 0xffff_fff0 != 0 {
            return Err(ProtocolError::Malformed("unknown flag bits"));
        }
        let process_id = u32::try_from(w1).map_err(|_| ProtocolError::Malformed("process id overflow"))?;
        let p = DataPacket {
            signal: if w0 & F_END != 0 { Signal::End } else { Signal::Start },
            op: if w0 & F_FREE != 0 { OpKind::Free } else { OpKind::Malloc },
            core_id: (w0 >> 32) as u32,
            process_id,
            payload: if w0 & F_ADDRESS != 0 {
                Payload::Address(value)
            } else {
                Payload::Size(value)
            },
            includes_sysregs: w0 & F_SYSREGS != 0,
        };
        if p.is_well_formed() {
            Ok(p)
        } else {
            Err(ProtocolError::Malformed("payload does not match signal and op"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolConfig {
    /// One-way main/support signal latency, charged on Start and End.
    pub signal_lat: u64,
    /// Independent work a main core does between sending a malloc Start and
    /// blocking on its End.
    pub overlap_cycles: u64,
    /// Asynchronous metadata update after an End is emitted.
    pub update_cycles: u64,
    pub hmq_capacity: usize,
    pub rb_entries: usize,
    pub sysreg_install_cycles: u64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            signal_lat: 8,
            overlap_cycles: 0,
            update_cycles: 10,
            hmq_capacity: 128,
            rb_entries: 16,
            sysreg_install_cycles: 20,
        }
    }
}

impl ProtocolConfig {
    pub fn check(&self) -> Result<(), ProtocolError> {
        if self.hmq_capacity == 0 || self.rb_entries == 0 {
            return Err(ProtocolError::BadConfig("hmq_capacity and rb_entries must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreStage {
    Idle,
    Stage1Sent,
    Stage3Waiting,
    Stage4Resumed,
}

/// Main-core side of the protocol.
#[derive(Debug, Clone)]
pub struct CoreProtocol {
    core_id: u32,
    stage: CoreStage,
    sysregs_sent: HashSet<u32>,
}

impl CoreProtocol {
    pub fn new(core_id: u32) -> Self {
        CoreProtocol {
            core_id,
            stage: CoreStage::Idle,
            sysregs_sent: HashSet::new(),
        }
    }

    pub fn stage(&self) -> CoreStage {
        self.stage
    }

    fn bad(&self, action: &'static str) -> ProtocolError {
        ProtocolError::BadStage {
            core: self.core_id,
            stage: self.stage,
            action,
        }
    }

    fn first_request(&mut self, pid: u32) -> bool {
        self.sysregs_sent.insert(pid)
    }

    pub fn malloc_start(&mut self, size: u64, process_id: u32) -> Result<DataPacket, ProtocolError> {
        if !matches!(self.stage, CoreStage::Idle | CoreStage::Stage4Resumed) {
            return Err(self.bad("start a malloc"));
        }
        self.stage = CoreStage::Stage1Sent;
        Ok(DataPacket {
            signal: Signal::Start,
            op: OpKind::Malloc,
            core_id: self.core_id,
            process_id,
            payload: Payload::Size(size),
            includes_sysregs: self.first_request(process_id),
        })
    }

    /// Overlapped work is done; the core blocks on the End signal.
    pub fn begin_wait(&mut self) -> Result<(), ProtocolError> {
        if self.stage != CoreStage::Stage1Sent {
            return Err(self.bad("wait"));
        }
        self.stage = CoreStage::Stage3Waiting;
        Ok(())
    }

    pub fn free_start(&mut self, addr: u64, process_id: u32) -> Result<DataPacket, ProtocolError> {
        if matches!(self.stage, CoreStage::Stage1Sent | CoreStage::Stage3Waiting) {
            return Err(self.bad("start a free"));
        }
        Ok(DataPacket {
            signal: Signal::Start,
            op: OpKind::Free,
            core_id: self.core_id,
            process_id,
            payload: Payload::Address(addr),
            includes_sysregs: self.first_request(process_id),
        })
    }

    /// Delivers an End packet; returns the allocated address.
    pub fn receive_end(&mut self, packet: &DataPacket) -> Result<u64, ProtocolError> {
        if packet.signal != Signal::End || packet.core_id != self.core_id {
            return Err(ProtocolError::UnmatchedEnd);
        }
        if !matches!(self.stage, CoreStage::Stage1Sent | CoreStage::Stage3Waiting) {
            return Err(ProtocolError::UnmatchedEnd);
        }
        self.stage = CoreStage::Stage4Resumed;
        match packet.payload {
            Payload::Address(a) => Ok(a),
            Payload::Size(_) => Err(ProtocolError::Malformed("end packet without an address")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub packet: DataPacket,
    /// Global dispatch order.
    pub seq: u64,
}

#[derive(Debug, Clone)]
struct BoundedQueue {
    queue: VecDeque<Request>,
    spill: VecDeque<Request>,
    /// Core served last from this queue.
    cursor: Option<u32>,
}

impl BoundedQueue {
    fn new() -> Self {
        BoundedQueue {
            queue: VecDeque::new(),
            spill: VecDeque::new(),
            cursor: None,
        }
    }

    fn push(&mut self, r: Request, cap: usize) {
        if self.queue.len() < cap && self.spill.is_empty() {
            self.queue.push_back(r);
        } else {
            self.spill.push_back(r);
        }
    }

    fn refill(&mut self, cap: usize) {
        while self.queue.len() < cap {
            match self.spill.pop_front() {
                Some(r) => self.queue.push_back(r),
                None => break,
            }
        }
    }
}

/// Hardware message queues and the support-core scheduler.
#[derive(Debug, Clone)]
pub struct HmqState {
    capacity: usize,
    malloc: BoundedQueue,
    free: BoundedQueue,
    responses: VecDeque<DataPacket>,
    response_spill: VecDeque<DataPacket>,
    next_seq: u64,
}

impl HmqState {
    pub fn new(capacity: usize) -> Self {
        HmqState {
            capacity,
            malloc: BoundedQueue::new(),
            free: BoundedQueue::new(),
            responses: VecDeque::new(),
            response_spill: VecDeque::new(),
            next_seq: 0,
        }
    }

    /// Queues a Start packet and returns its dispatch sequence number.
    pub fn dispatch(&mut self, packet: DataPacket) -> Result<u64, ProtocolError> {
        if packet.signal != Signal::Start {
            return Err(ProtocolError::EndDispatched);
        }
        let r = Request {
            packet,
            seq: self.next_seq,
        };
        self.next_seq += 1;
        match packet.op {
            OpKind::Malloc => self.malloc.push(r, self.capacity),
            OpKind::Free => self.free.push(r, self.capacity),
        }
        Ok(r.seq)
    }

    fn side(&self, op: OpKind) -> &BoundedQueue {
        match op {
            OpKind::Malloc => &self.malloc,
            OpKind::Free => &self.free,
        }
    }

    pub fn queue_len(&self, op: OpKind) -> usize {
        self.side(op).queue.len()
    }

    pub fn spill_len(&self, op: OpKind) -> usize {
        self.side(op).spill.len()
    }

    pub fn pending(&self, op: OpKind) -> usize {
        self.queue_len(op) + self.spill_len(op)
    }

    pub fn is_empty(&self) -> bool {
        self.pending(OpKind::Malloc) == 0 && self.pending(OpKind::Free) == 0
    }

    /// Cores with a request of kind `op` in the hardware queue.
    pub fn queued_cores(&self, op: OpKind) -> Vec<u32> {
        let mut v: Vec<u32> = self.side(op).queue.iter().map(|r| r.packet.core_id).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Core served last from the `op` queue.
    pub fn rr_cursor(&self, op: OpKind) -> Option<u32> {
        self.side(op).cursor
    }

    /// Picks the next request: mallocs before frees, and within a queue the
    /// oldest request of the first core after that queue's cursor.
    pub fn schedule_next(&mut self) -> Option<Request> {
        let cap = self.capacity;
        let side = if !self.malloc.queue.is_empty() {
            &mut self.malloc
        } else if !self.free.queue.is_empty() {
            &mut self.free
        } else {
            return None;
        };
        let cursor = side.cursor;
        let after = |c: u32| match cursor {
            Some(k) if c <= k => (1u64 << 32) + u64::from(c),
            _ => u64::from(c),
        };
        let core = side
            .queue
            .iter()
            .map(|r| r.packet.core_id)
            .min_by_key(|&c| after(c))
            .expect("queue is nonempty");
        let pos = side
            .queue
            .iter()
            .position(|r| r.packet.core_id == core)
            .expect("core has an entry");
        let r = side.queue.remove(pos).expect("position is valid");
        side.refill(cap);
        side.cursor = Some(core);
        Some(r)
    }

    pub fn push_response(&mut self, packet: DataPacket) {
        if self.responses.len() < self.capacity && self.response_spill.is_empty() {
            self.responses.push_back(packet);
        } else {
            self.response_spill.push_back(packet);
        }
    }

    pub fn pop_response(&mut self) -> Option<DataPacket> {
        let p = self.responses.pop_front();
        if let Some(s) = self.response_spill.pop_front() {
            self.responses.push_back(s);
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RbOutcome {
    Hit,
    Miss,
}

/// Direct-mapped cache of per-process translation registers.
#[derive(Debug, Clone)]
pub struct RegisterBuffer {
    tags: Vec<Option<u32>>,
    install_cycles: u64,
}

impl RegisterBuffer {
    pub fn new(entries: usize, install_cycles: u64) -> Self {
        RegisterBuffer {
            tags: vec![None; entries],
            install_cycles,
        }
    }

    /// Looks up `pid`, installing it on a miss. Returns the outcome and the
    /// cycles charged.
    pub fn lookup(&mut self, pid: u32) -> (RbOutcome, u64) {
        let slot = pid as usize % self.tags.len();
        if self.tags[slot] == Some(pid) {
            (RbOutcome::Hit, 0)
        } else {
            self.tags[slot] = Some(pid);
            (RbOutcome::Miss, self.install_cycles)
        }
    }
}

/// Support-core side: tracks the request in service.
#[derive(Debug, Clone, Default)]
pub struct SupportProtocol {
    current: Option<Request>,
}

impl SupportProtocol {
    pub fn begin(&mut self, r: Request) -> Result<(), ProtocolError> {
        if self.current.is_some() {
            return Err(ProtocolError::BadConfig("support core already busy".into()));
        }
        self.current = Some(r);
        Ok(())
    }

    pub fn current(&self) -> Option<&Request> {
        self.current.as_ref()
    }

    /// Completes the malloc in service and returns its End packet.
    pub fn malloc_end(&mut self, addr: u64) -> Result<DataPacket, ProtocolError> {
        match self.current.take() {
            Some(r) if r.packet.op == OpKind::Malloc => {
                Ok(DataPacket::malloc_end(r.packet.core_id, r.packet.process_id, addr))
            }
            other => {
                self.current = other;
                Err(ProtocolError::UnmatchedEnd)
            }
        }
    }

    /// Retires the free in service; no packet is sent back.
    pub fn free_end(&mut self) -> Result<(), ProtocolError> {
        match self.current.take() {
            Some(r) if r.packet.op == OpKind::Free => Ok(()),
            other => {
                self.current = other;
                Err(ProtocolError::UnmatchedEnd)
            }
        }
    }
}
