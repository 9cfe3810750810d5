//! CSV and markdown output.
//!
//! Metrics CSV columns, in order: `schema`, `allocator`, `trace_hash`,
//! `threads`, `total_cycles`, the seven cycle categories, `atomic_share`,
//! `support_busy`, `support_stall`, `support_requests`, `energy`, allocation
//! counters, memory footprint, cache misses per level, metadata miss data,
//! coherence transfers and malloc latency statistics. See [`METRIC_COLUMNS`].
//! Sweep files prefix every row with `sweep_index,sweep_key,sweep_value`.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{categories, AllocatorKind, CompareSide, ComparisonReport, Metrics, CATEGORIES};
use crate::memsim::{Level, Stream};
use crate::PowerModel64;

pub const METRICS_SCHEMA: &str = "simalloc-metrics-v1";
pub const COMPARE_SCHEMA: &str = "simalloc-compare-v1";

pub const METRIC_COLUMNS: &[&str] = &[
    "schema",
    "allocator",
    "trace_hash",
    "threads",
    "total_cycles",
    "compute",
    "user_mem",
    "metadata_mem",
    "atomic_sync",
    "alloc_wait",
    "alloc_exec",
    "dep_wait",
    "atomic_share",
    "support_busy",
    "support_stall",
    "support_requests",
    "energy",
    "mallocs",
    "frees",
    "oom_failures",
    "atomic_syncs",
    "ownership_transfers",
    "mmap_calls",
    "peak_committed_bytes",
    "live_bytes_at_end",
    "l1_misses",
    "l2_misses",
    "llc_misses",
    "main_metadata_misses",
    "main_user_misses",
    "metadata_miss_share",
    "l2_miss_cycles",
    "support_metadata_miss_cycles",
    "coherence_transfers",
    "malloc_latency_mean",
    "malloc_latency_p50",
    "malloc_latency_p99",
    "malloc_latency_max",
];

pub const SWEEP_COLUMNS: &[&str] = &["sweep_index", "sweep_key", "sweep_value"];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CsvError {
    #[error("empty CSV file")]
    Empty,
    #[error("unsupported schema `{0}` (expected {METRICS_SCHEMA})")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(&'static str),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
}

/// Formats like C's `%g`: six significant digits, trailing zeros removed.
pub fn fmt_g(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let prec = (5 - exp) as usize;
        trim_zeros(&format!("{x:.prec$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One run, flattened to what the CSV holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub allocator: AllocatorKind,
    pub trace_hash: String,
    pub threads: u32,
    pub total_cycles: u64,
    pub categories: [u64; 7],
    pub atomic_share: f64,
    pub support_busy: u64,
    pub support_stall: u64,
    pub support_requests: u64,
    pub energy: f64,
    pub mallocs: u64,
    pub frees: u64,
    pub oom_failures: u64,
    pub atomic_syncs: u64,
    pub ownership_transfers: u64,
    pub mmap_calls: u64,
    pub peak_committed_bytes: u64,
    pub live_bytes_at_end: u64,
    pub l1_misses: u64,
    pub l2_misses: u64,
    pub llc_misses: u64,
    pub main_metadata_misses: u64,
    pub main_user_misses: u64,
    pub metadata_miss_share: f64,
    pub l2_miss_cycles: u64,
    /// Metadata miss cycles seen from the service core's L1.
    pub support_metadata_miss_cycles: u64,
    pub coherence_transfers: u64,
    pub malloc_latency_mean: f64,
    pub malloc_latency_p50: u64,
    pub malloc_latency_p99: u64,
    pub malloc_latency_max: u64,
}

impl Summary {
    pub fn new(m: &Metrics, power: &PowerModel64) -> Self {
        let misses = |l: Level| m.cache.main_total(l, None).misses;
        Summary {
            allocator: m.allocator,
            trace_hash: m.trace_hash.clone(),
            threads: m.threads,
            total_cycles: m.total_cycles,
            categories: categories(&m.core_totals()),
            atomic_share: m.atomic_share(),
            support_busy: m.support_busy,
            support_stall: m.support_stall,
            support_requests: m.support_requests,
            energy: power.energy(m),
            mallocs: m.mallocs,
            frees: m.frees,
            oom_failures: m.oom_failures,
            atomic_syncs: m.atomic_syncs,
            ownership_transfers: m.ownership_transfers,
            mmap_calls: m.mmap_calls,
            peak_committed_bytes: m.peak_committed_bytes,
            live_bytes_at_end: m.live_bytes_at_end,
            l1_misses: misses(Level::L1),
            l2_misses: misses(Level::L2),
            llc_misses: misses(Level::Llc),
            main_metadata_misses: m.main_metadata_misses(),
            main_user_misses: m.cache.main_misses(Stream::User),
            metadata_miss_share: m.metadata_miss_share(),
            l2_miss_cycles: m.l2_miss_cycles(),
            support_metadata_miss_cycles: m
                .cache
                .service()
                .map_or(0, |s| s.level(Level::L1, Stream::Metadata).miss_cycles),
            coherence_transfers: m.cache.coherence_transfers(),
            malloc_latency_mean: m.malloc_latency.mean(),
            malloc_latency_p50: m.malloc_latency.quantile_floor(0.5),
            malloc_latency_p99: m.malloc_latency.quantile_floor(0.99),
            malloc_latency_max: m.malloc_latency.max,
        }
    }

    pub fn side(&self) -> CompareSide {
        CompareSide {
            allocator: self.allocator,
            trace_hash: self.trace_hash.clone(),
            total_cycles: self.total_cycles,
            categories: self.categories,
            atomic_share: self.atomic_share,
            l2_miss_cycles: self.l2_miss_cycles,
            peak_committed_bytes: self.peak_committed_bytes,
        }
    }

    /// Field values in `METRIC_COLUMNS` order.
    pub fn values(&self) -> Vec<String> {
        let mut v = vec![
            METRICS_SCHEMA.to_string(),
            self.allocator.to_string(),
            self.trace_hash.clone(),
            self.threads.to_string(),
            self.total_cycles.to_string(),
        ];
        v.extend(self.categories.iter().map(u64::to_string));
        v.push(fmt_g(self.atomic_share));
        v.extend([self.support_busy, self.support_stall, self.support_requests].map(|n| n.to_string()));
        v.push(fmt_g(self.energy));
        v.extend(
            [
                self.mallocs,
                self.frees,
                self.oom_failures,
                self.atomic_syncs,
                self.ownership_transfers,
                self.mmap_calls,
                self.peak_committed_bytes,
                self.live_bytes_at_end,
                self.l1_misses,
                self.l2_misses,
                self.llc_misses,
                self.main_metadata_misses,
                self.main_user_misses,
            ]
            .map(|n| n.to_string()),
        );
        v.push(fmt_g(self.metadata_miss_share));
        v.extend(
            [self.l2_miss_cycles, self.support_metadata_miss_cycles, self.coherence_transfers].map(|n| n.to_string()),
        );
        v.push(fmt_g(self.malloc_latency_mean));
        v.extend([self.malloc_latency_p50, self.malloc_latency_p99, self.malloc_latency_max].map(|n| n.to_string()));
        debug_assert_eq!(v.len(), METRIC_COLUMNS.len());
        v
    }

    fn from_row(row: &HashMap<&'static str, &str>) -> Result<Self, String> {
        let get = |c: &'static str| -> Result<&str, String> { row.get(c).copied().ok_or_else(|| format!("missing {c}")) };
        let int = |c: &'static str| -> Result<u64, String> { get(c)?.parse().map_err(|e| format!("{c}: {e}")) };
        let float = |c: &'static str| -> Result<f64, String> { get(c)?.parse().map_err(|e| format!("{c}: {e}")) };
        let schema = get("schema")?;
        if schema != METRICS_SCHEMA {
            return Err(format!("unsupported schema `{schema}`"));
        }
        let mut cats = [0; 7];
        for (slot, name) in cats.iter_mut().zip(CATEGORIES) {
            *slot = int(name)?;
        }
        Ok(Summary {
            allocator: get("allocator")?.parse()?,
            trace_hash: get("trace_hash")?.to_string(),
            threads: u32::try_from(int("threads")?).map_err(|e| e.to_string())?,
            total_cycles: int("total_cycles")?,
            categories: cats,
            atomic_share: float("atomic_share")?,
            support_busy: int("support_busy")?,
            support_stall: int("support_stall")?,
            support_requests: int("support_requests")?,
            energy: float("energy")?,
            mallocs: int("mallocs")?,
            frees: int("frees")?,
            oom_failures: int("oom_failures")?,
            atomic_syncs: int("atomic_syncs")?,
            ownership_transfers: int("ownership_transfers")?,
            mmap_calls: int("mmap_calls")?,
            peak_committed_bytes: int("peak_committed_bytes")?,
            live_bytes_at_end: int("live_bytes_at_end")?,
            l1_misses: int("l1_misses")?,
            l2_misses: int("l2_misses")?,
            llc_misses: int("llc_misses")?,
            main_metadata_misses: int("main_metadata_misses")?,
            main_user_misses: int("main_user_misses")?,
            metadata_miss_share: float("metadata_miss_share")?,
            l2_miss_cycles: int("l2_miss_cycles")?,
            support_metadata_miss_cycles: int("support_metadata_miss_cycles")?,
            coherence_transfers: int("coherence_transfers")?,
            malloc_latency_mean: float("malloc_latency_mean")?,
            malloc_latency_p50: int("malloc_latency_p50")?,
            malloc_latency_p99: int("malloc_latency_p99")?,
            malloc_latency_max: int("malloc_latency_max")?,
        })
    }
}

fn csv_line(out: &mut String, fields: impl IntoIterator<Item = impl AsRef<str>>) {
    let mut first = true;
    for f in fields {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(f.as_ref());
    }
    out.push('\n');
}

pub fn metrics_csv(s: &Summary) -> String {
    let mut out = String::new();
    csv_line(&mut out, METRIC_COLUMNS);
    csv_line(&mut out, s.values());
    out
}

/// One sweep point: the swept value and its result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub key: String,
    pub value: String,
    pub summary: Summary,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    csv_line(&mut out, SWEEP_COLUMNS.iter().chain(METRIC_COLUMNS));
    for r in rows {
        let mut v = vec![r.index.to_string(), r.key.clone(), r.value.clone()];
        v.extend(r.summary.values());
        csv_line(&mut out, v);
    }
    out
}

/// Parses every data row of a metrics or sweep CSV.
pub fn parse_summaries(text: &str) -> Result<Vec<Summary>, CsvError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or(CsvError::Empty)?.split(',').collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (*h, i)).collect();
    for &c in METRIC_COLUMNS {
        if !index.contains_key(c) {
            return Err(CsvError::MissingColumn(c));
        }
    }
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(CsvError::Row {
                row: row + 1,
                msg: format!("expected {} fields, found {}", header.len(), fields.len()),
            });
        }
        if fields[index["schema"]] != METRICS_SCHEMA {
            return Err(CsvError::Schema(fields[index["schema"]].to_string()));
        }
        let values: HashMap<&'static str, &str> = METRIC_COLUMNS.iter().map(|&c| (c, fields[index[c]])).collect();
        out.push(Summary::from_row(&values).map_err(|msg| CsvError::Row { row: row + 1, msg })?);
    }
    Ok(out)
}

pub fn parse_summary(text: &str) -> Result<Summary, CsvError> {
    let mut rows = parse_summaries(text)?;
    match rows.len() {
        1 => Ok(rows.remove(0)),
        n => Err(CsvError::Row {
            row: n,
            msg: format!("expected exactly one data row, found {n}"),
        }),
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

pub fn compare_csv(r: &ComparisonReport, a: &Summary, b: &Summary) -> String {
    let mut out = String::new();
    let mut header: Vec<String> = [
        "schema",
        "allocator_a",
        "allocator_b",
        "trace_hash",
        "total_cycles_a",
        "total_cycles_b",
        "speedup",
        "atomic_share_a",
        "atomic_share_b",
        "l2_miss_cycles_delta",
        "peak_memory_ratio",
        "energy_ratio",
    ]
    .map(String::from)
    .to_vec();
    header.extend(r.category_delta.iter().map(|(n, _)| format!("delta_{n}")));
    csv_line(&mut out, &header);
    let mut v = vec![
        COMPARE_SCHEMA.to_string(),
        r.allocator_a.to_string(),
        r.allocator_b.to_string(),
        r.trace_hash.clone(),
        r.total_cycles_a.to_string(),
        r.total_cycles_b.to_string(),
        fmt_g(r.speedup),
        fmt_g(r.atomic_share_a),
        fmt_g(r.atomic_share_b),
        r.l2_miss_cycles_delta.to_string(),
        fmt_g(r.peak_memory_ratio),
        fmt_g(ratio(a.energy, b.energy)),
    ];
    v.extend(r.category_delta.iter().map(|(_, d)| d.to_string()));
    csv_line(&mut out, v);
    out
}

fn pct(x: f64) -> String {
    format!("{}%", fmt_g(100.0 * x))
}

pub fn run_markdown(s: &Summary) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "# Run: {}\n", s.allocator);
    let _ = writeln!(o, "Trace `{}`, {} threads.\n", s.trace_hash, s.threads);
    let _ = writeln!(o, "| metric | value |\n|---|---|");
    let rows: [(&str, String); 13] = [
        ("total cycles", s.total_cycles.to_string()),
        ("energy", fmt_g(s.energy)),
        ("atomic share", pct(s.atomic_share)),
        ("mallocs / frees", format!("{} / {}", s.mallocs, s.frees)),
        ("OOM failures", s.oom_failures.to_string()),
        ("peak committed bytes", s.peak_committed_bytes.to_string()),
        ("mmap calls", s.mmap_calls.to_string()),
        ("L2 miss cycles", s.l2_miss_cycles.to_string()),
        ("main-core metadata misses", s.main_metadata_misses.to_string()),
        ("support metadata miss cycles", s.support_metadata_miss_cycles.to_string()),
        ("support busy / stall", format!("{} / {}", s.support_busy, s.support_stall)),
        ("coherence transfers", s.coherence_transfers.to_string()),
        (
            "malloc latency mean / p50 / p99 / max",
            format!(
                "{} / {} / {} / {}",
                fmt_g(s.malloc_latency_mean),
                s.malloc_latency_p50,
                s.malloc_latency_p99,
                s.malloc_latency_max
            ),
        ),
    ];
    for (k, v) in rows {
        let _ = writeln!(o, "| {k} | {v} |");
    }
    let total: u64 = s.categories.iter().sum();
    let _ = writeln!(o, "\n## Main-core cycles\n\n| category | cycles | share |\n|---|---|---|");
    for (name, c) in CATEGORIES.iter().zip(s.categories) {
        let _ = writeln!(o, "| {name} | {c} | {} |", pct(ratio(c as f64, total as f64).min(1.0)));
    }
    o
}

pub fn compare_markdown(r: &ComparisonReport, a: &Summary, b: &Summary) -> String {
    let mut o = String::new();
    let _ = writeln!(o, "# {} vs {}\n", r.allocator_a, r.allocator_b);
    let _ = writeln!(o, "Trace `{}`. Ratios are relative to {}.\n", r.trace_hash, r.allocator_b);
    let _ = writeln!(o, "| metric | {} | {} | relative |\n|---|---|---|---|", r.allocator_a, r.allocator_b);
    let _ = writeln!(
        o,
        "| total cycles | {} | {} | speedup {} |",
        r.total_cycles_a,
        r.total_cycles_b,
        fmt_g(r.speedup)
    );
    let _ = writeln!(
        o,
        "| atomic share | {} | {} | |",
        pct(r.atomic_share_a),
        pct(r.atomic_share_b)
    );
    let _ = writeln!(
        o,
        "| L2 miss cycles | {} | {} | delta {} |",
        a.l2_miss_cycles, b.l2_miss_cycles, r.l2_miss_cycles_delta
    );
    let _ = writeln!(
        o,
        "| peak committed bytes | {} | {} | ratio {} |",
        a.peak_committed_bytes,
        b.peak_committed_bytes,
        fmt_g(r.peak_memory_ratio)
    );
    let _ = writeln!(
        o,
        "| energy | {} | {} | ratio {} |",
        fmt_g(a.energy),
        fmt_g(b.energy),
        fmt_g(ratio(a.energy, b.energy))
    );
    let _ = writeln!(o, "\n## Cycle deltas ({} minus {})\n\n| category | delta |\n|---|---|", r.allocator_b, r.allocator_a);
    for (name, d) in &r.category_delta {
        let _ = writeln!(o, "| {name} | {d} |");
    }
    o
}

pub fn sweep_markdown(rows: &[SweepRow]) -> String {
    let mut o = String::new();
    let Some(first) = rows.first() else {
        return "# Sweep\n\nNo points.\n".into();
    };
    let _ = writeln!(o, "# Sweep over `{}`\n", first.key);
    let _ = writeln!(
        o,
        "| value | total cycles | relative | support metadata miss cycles | L2 miss cycles | energy |\n|---|---|---|---|---|---|"
    );
    let base = first.summary.total_cycles as f64;
    for r in rows {
        let s = &r.summary;
        let _ = writeln!(
            o,
            "| {} | {} | {} | {} | {} | {} |",
            r.value,
            s.total_cycles,
            fmt_g(ratio(s.total_cycles as f64, base)),
            s.support_metadata_miss_cycles,
            s.l2_miss_cycles,
            fmt_g(s.energy)
        );
    }
    o
}
