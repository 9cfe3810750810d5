use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;

use super::{ObjectId, Trace, TraceRecord, TRACE_LINE_BYTES};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationIssue {
    UnknownThread { index: usize, thread: u32 },
    FreeBeforeMalloc { index: usize, object: ObjectId },
    DoubleFree { index: usize, object: ObjectId },
    AccessBeforeMalloc { index: usize, object: ObjectId },
    AccessAfterFree { index: usize, object: ObjectId },
    /// Object ids are single-use: a Malloc may not reuse any earlier id.
    ObjectReused { index: usize, object: ObjectId },
    ZeroSize { index: usize },
    ZeroLines { index: usize },
    TooManyLines { index: usize, lines: u32, max: u64 },
    ZeroCycles { index: usize },
}

impl ValidationIssue {
    pub fn index(&self) -> usize {
        use ValidationIssue::*;
        match *self {
            UnknownThread { index, .. }
            | FreeBeforeMalloc { index, .. }
            | DoubleFree { index, .. }
            | AccessBeforeMalloc { index, .. }
            | AccessAfterFree { index, .. }
            | ObjectReused { index, .. }
            | ZeroSize { index }
            | ZeroLines { index }
            | TooManyLines { index, .. }
            | ZeroCycles { index } => index,
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use ValidationIssue::*;
        match self {
            UnknownThread { index, thread } => write!(f, "record {index}: unknown thread {thread}"),
            FreeBeforeMalloc { index, object } => {
                write!(f, "record {index}: free-before-malloc of object {object}")
            }
            DoubleFree { index, object } => write!(f, "record {index}: double free of object {object}"),
            AccessBeforeMalloc { index, object } => {
                write!(f, "record {index}: access-before-malloc of object {object}")
            }
            AccessAfterFree { index, object } => {
                write!(f, "record {index}: access-after-free of object {object}")
            }
            ObjectReused { index, object } => write!(f, "record {index}: object id {object} reused"),
            ZeroSize { index } => write!(f, "record {index}: zero-size malloc"),
            ZeroLines { index } => write!(f, "record {index}: access of zero lines"),
            TooManyLines { index, lines, max } => {
                write!(f, "record {index}: access of {lines} lines exceeds object span {max}")
            }
            ZeroCycles { index } => write!(f, "record {index}: zero-cycle compute"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

#[derive(Clone, Copy)]
enum ObjState {
    Live { size: u64 },
    Freed,
}

pub fn validate(trace: &Trace) -> ValidationReport {
    let mut issues = Vec::new();
    let mut objects: HashMap<ObjectId, ObjState> = HashMap::new();

    for (index, rec) in trace.records.iter().enumerate() {
        let thread = rec.thread();
        if thread >= trace.threads {
            issues.push(ValidationIssue::UnknownThread { index, thread });
        }
        match *rec {
            TraceRecord::Malloc { object, size, .. } => {
                if size == 0 {
                    issues.push(ValidationIssue::ZeroSize { index });
                }
                match objects.entry(object) {
                    Entry::Occupied(_) => issues.push(ValidationIssue::ObjectReused { index, object }),
                    Entry::Vacant(v) => {
                        v.insert(ObjState::Live { size });
                    }
                }
            }
            TraceRecord::Free { object, .. } => match objects.get(&object).copied() {
                None => issues.push(ValidationIssue::FreeBeforeMalloc { index, object }),
                Some(ObjState::Freed) => issues.push(ValidationIssue::DoubleFree { index, object }),
                Some(ObjState::Live { .. }) => {
                    objects.insert(object, ObjState::Freed);
                }
            },
            TraceRecord::Access { object, lines, .. } => {
                if lines == 0 {
                    issues.push(ValidationIssue::ZeroLines { index });
                }
                match objects.get(&object).copied() {
                    None => issues.push(ValidationIssue::AccessBeforeMalloc { index, object }),
                    Some(ObjState::Freed) => {
                        issues.push(ValidationIssue::AccessAfterFree { index, object })
                    }
                    Some(ObjState::Live { size }) => {
                        let max = size.div_ceil(TRACE_LINE_BYTES);
                        if u64::from(lines) > max {
                            issues.push(ValidationIssue::TooManyLines { index, lines, max });
                        }
                    }
                }
            }
            TraceRecord::Compute { cycles, .. } => {
                if cycles == 0 {
                    issues.push(ValidationIssue::ZeroCycles { index });
                }
            }
        }
    }
    ValidationReport { issues }
}
