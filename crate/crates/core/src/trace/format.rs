use std::io::{BufRead, Write};

use super::{Rw, Trace, TraceError, TraceRecord};

pub const TRACE_VERSION: u32 = 1;

const MAGIC: &str = "#SIMALLOC-TRACE";

/// Writes `#SIMALLOC-TRACE v1 threads=<T> seed=<S> rng=<name>` followed by one
/// record per line, LF terminated.
pub fn write_trace<W: Write>(trace: &Trace, mut sink: W) -> std::io::Result<()> {
    writeln!(
        sink,
        "{MAGIC} v{TRACE_VERSION} threads={} seed={} rng={}",
        trace.threads, trace.seed, trace.rng
    )?;
    for rec in &trace.records {
        match *rec {
            TraceRecord::Malloc {
                thread,
                object,
                size,
            } => writeln!(sink, "M {thread} {object} {size}")?,
            TraceRecord::Free { thread, object } => writeln!(sink, "F {thread} {object}")?,
            TraceRecord::Access {
                thread,
                object,
                lines,
                rw,
            } => {
                let flag = match rw {
                    Rw::Read => 'R',
                    Rw::Write => 'W',
                };
                writeln!(sink, "A {thread} {object} {lines} {flag}")?
            }
            TraceRecord::Compute { thread, cycles } => writeln!(sink, "C {thread} {cycles}")?,
        }
    }
    sink.flush()
}

pub fn read_trace<R: BufRead>(source: R) -> Result<Trace, TraceError> {
    let mut lines = source.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(TraceError::MissingHeader),
    };
    let mut trace = parse_header(&header)?;

    for (idx, line) in lines.enumerate() {
        let line = line?;
        let lineno = idx + 2;
        if line.is_empty() {
            return Err(malformed(lineno, "empty line"));
        }
        trace.records.push(parse_record(&line, lineno)?);
    }
    Ok(trace)
}

fn malformed(line: usize, msg: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<Trace, TraceError> {
    let mut fields = line.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(TraceError::MissingHeader);
    }
    let version = fields.next().ok_or_else(|| malformed(1, "missing version"))?;
    if version != format!("v{TRACE_VERSION}") {
        return Err(TraceError::UnsupportedVersion(version.to_string()));
    }

    let mut threads = None;
    let mut seed = None;
    let mut rng = None;
    for field in fields {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| malformed(1, format!("bad header field `{field}`")))?;
        match key {
            "threads" => threads = Some(parse_num::<u32>(value, 1)?),
            "seed" => seed = Some(parse_num::<u64>(value, 1)?),
            "rng" => rng = Some(value.to_string()),
            _ => return Err(malformed(1, format!("unknown header key `{key}`"))),
        }
    }
    match (threads, seed, rng) {
        (Some(threads), Some(seed), Some(rng)) => Ok(Trace::new(threads, seed, rng)),
        _ => Err(malformed(1, "header needs threads, seed and rng")),
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T, TraceError> {
    s.parse()
        .map_err(|_| malformed(line, format!("invalid number `{s}`")))
}

fn parse_record(line: &str, lineno: usize) -> Result<TraceRecord, TraceError> {
    let fields: Vec<&str> = line.split(' ').collect();
    let want = |n: usize| {
        if fields.len() == n {
            Ok(())
        } else {
            Err(malformed(
                lineno,
                format!("expected {n} fields, found {}", fields.len()),
            ))
        }
    };
    let rec = match fields[0] {
        "M" => {
            want(4)?;
            TraceRecord::Malloc {
                thread: parse_num(fields[1], lineno)?,
                object: parse_num(fields[2], lineno)?,
                size: parse_num(fields[3], lineno)?,
            }
        }
        "F" => {
            want(3)?;
            TraceRecord::Free {
                thread: parse_num(fields[1], lineno)?,
                object: parse_num(fields[2], lineno)?,
            }
        }
        "A" => {
            want(5)?;
            let rw = match fields[4] {
                "R" => Rw::Read,
                "W" => Rw::Write,
                other => return Err(malformed(lineno, format!("bad access flag `{other}`"))),
            };
            TraceRecord::Access {
                thread: parse_num(fields[1], lineno)?,
                object: parse_num(fields[2], lineno)?,
                lines: parse_num(fields[3], lineno)?,
                rw,
            }
        }
        "C" => {
            want(3)?;
            TraceRecord::Compute {
                thread: parse_num(fields[1], lineno)?,
                cycles: parse_num(fields[2], lineno)?,
            }
        }
        other => return Err(malformed(lineno, format!("unknown record kind `{other}`"))),
    };
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(trace: &Trace) -> Trace {
        let mut buf = Vec::new();
        write_trace(trace, &mut buf).unwrap();
        read_trace(buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_trace_is_header_only() {
        let t = Trace::new(4, 9, "xoshiro256pp");
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "#SIMALLOC-TRACE v1 threads=4 seed=9 rng=xoshiro256pp\n"
        );
        assert_eq!(roundtrip(&t), t);
    }

    #[test]
    fn three_records_roundtrip() {
        let mut t = Trace::new(2, 1, "xoshiro256pp");
        t.records = vec![
            TraceRecord::Malloc {
                thread: 0,
                object: 1,
                size: 64,
            },
            TraceRecord::Access {
                thread: 1,
                object: 1,
                lines: 1,
                rw: Rw::Write,
            },
            TraceRecord::Free {
                thread: 1,
                object: 1,
            },
        ];
        let mut buf = Vec::new();
        write_trace(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.ends_with("M 0 1 64\nA 1 1 1 W\nF 1 1\n"));
        assert_eq!(roundtrip(&t), t);
    }

    #[test]
    fn version_two_rejected() {
        let err = read_trace("#SIMALLOC-TRACE v2 threads=1 seed=0 rng=x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, TraceError::UnsupportedVersion(v) if v == "v2"));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "#SIMALLOC-TRACE v1 threads=1 seed=0 rng=x\nM 0 1 64\nF 0\n";
        match read_trace(text.as_bytes()).unwrap_err() {
            TraceError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let text = "#SIMALLOC-TRACE v1 threads=1 seed=0 rng=x\nA 0 1 1 X\n";
        assert!(matches!(
            read_trace(text.as_bytes()),
            Err(TraceError::Malformed { line: 2, .. })
        ));
    }

    #[test]
    fn missing_header_rejected() {
        assert!(matches!(
            read_trace("".as_bytes()),
            Err(TraceError::MissingHeader)
        ));
        assert!(matches!(
            read_trace("M 0 1 64\n".as_bytes()),
            Err(TraceError::MissingHeader)
        ));
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        prop_oneof![
            (0u32..64, any::<u64>(), 1u64..1 << 40).prop_map(|(thread, object, size)| {
                TraceRecord::Malloc {
                    thread,
                    object,
                    size,
                }
            }),
            (0u32..64, any::<u64>())
                .prop_map(|(thread, object)| TraceRecord::Free { thread, object }),
            (0u32..64, any::<u64>(), 1u32..1000, any::<bool>()).prop_map(
                |(thread, object, lines, w)| TraceRecord::Access {
                    thread,
                    object,
                    lines,
                    rw: if w { Rw::Write } else { Rw::Read },
                }
            ),
            (0u32..64, 1u64..u64::MAX)
                .prop_map(|(thread, cycles)| TraceRecord::Compute { thread, cycles }),
        ]
    }

    proptest! {
        #[test]
        fn text_format_roundtrips(records in proptest::collection::vec(arb_record(), 0..64),
                                  threads in 1u32..64, seed in any::<u64>()) {
            let mut t = Trace::new(threads, seed, "xoshiro256pp");
            t.records = records;
            prop_assert_eq!(roundtrip(&t), t);
        }
    }
}
