//! Workload traces: timed malloc/free/access/compute events per logical thread.
//!
//! A [`Trace`] is an ordered list of [`TraceRecord`]s. The global order is the
//! program order the generator intended; the simulator lets threads run
//! concurrently and only synchronizes on records that touch the same object.

mod format;
mod gen;
mod validate;

pub use format::{read_trace, write_trace, TRACE_VERSION};
pub use gen::{generate, WorkloadKind, WorkloadSpec};
pub use validate::{validate, ValidationIssue, ValidationReport};

use thiserror::Error;

/// Cache line size used for the `lines <= ceil(size / line)` access bound.
pub const TRACE_LINE_BYTES: u64 = 64;

pub type ThreadId = u32;
pub type ObjectId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rw {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TraceRecord {
    Malloc {
        thread: ThreadId,
        object: ObjectId,
        size: u64,
    },
    Free {
        thread: ThreadId,
        object: ObjectId,
    },
    Access {
        thread: ThreadId,
        object: ObjectId,
        lines: u32,
        rw: Rw,
    },
    Compute {
        thread: ThreadId,
        cycles: u64,
    },
}

impl TraceRecord {
    pub fn thread(&self) -> ThreadId {
        match *self {
            TraceRecord::Malloc { thread, .. }
            | TraceRecord::Free { thread, .. }
            | TraceRecord::Access { thread, .. }
            | TraceRecord::Compute { thread, .. } => thread,
        }
    }

    pub fn object(&self) -> Option<ObjectId> {
        match *self {
            TraceRecord::Malloc { object, .. }
            | TraceRecord::Free { object, .. }
            | TraceRecord::Access { object, .. } => Some(object),
            TraceRecord::Compute { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub threads: u32,
    pub seed: u64,
    /// Identifier of the random generator that produced the trace.
    pub rng: String,
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn new(threads: u32, seed: u64, rng: impl Into<String>) -> Self {
        Trace {
            threads,
            seed,
            rng: rng.into(),
            records: Vec::new(),
        }
    }

    pub fn count_mallocs(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Malloc { .. }))
            .count()
    }

    pub fn count_frees(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, TraceRecord::Free { .. }))
            .count()
    }

    /// Hex SHA-256 of the canonical text encoding; used to tie metrics to a trace.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut buf = Vec::new();
        write_trace(self, &mut buf).expect("writing to a Vec cannot fail");
        let digest = Sha256::digest(&buf);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unsupported trace version {0} (expected v{TRACE_VERSION})")]
    UnsupportedVersion(String),
    #[error("missing trace header")]
    MissingHeader,
    #[error("invalid workload spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
