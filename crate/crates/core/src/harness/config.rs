//! Flat `section.key = value` experiment configuration.
//!
//! Lines are `key = value`; `#` starts a comment. Every key is fully
//! qualified (`hw.l2_size`); unknown or repeated keys are errors. Integer
//! values accept binary `K`, `M` and `G` suffixes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::engine::{AllocatorConfig, AllocatorKind};
use crate::heap::SizeClassTable;
use crate::memsim::{CacheLevelConfig, HwConfig};
use crate::trace::{WorkloadKind, WorkloadSpec};
use crate::PowerModel64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{0}` is ambiguous; qualify it with its section")]
    AmbiguousKey(String),
    #[error("config key `{0}` set twice")]
    Duplicate(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "hw.l1_size",
    "hw.l1_ways",
    "hw.l1_lat",
    "hw.l2_size",
    "hw.l2_ways",
    "hw.l2_lat",
    "hw.llc_size",
    "hw.llc_ways",
    "hw.llc_lat",
    "hw.sc_l1_size",
    "hw.sc_l1_ways",
    "hw.sc_l1_lat",
    "hw.dram_lat",
    "hw.coherence_lat",
    "hw.l2_partition_meta_ways",
    "alloc.class_table",
    "alloc.chunk_size",
    "alloc.large_threshold",
    "alloc.meta_lines_fast",
    "alloc.meta_lines_generic",
    "alloc.chunk_budget",
    "tiered.batch_size",
    "tiered.local_cap",
    "tiered.mode",
    "protocol.signal_lat",
    "protocol.overlap_cycles",
    "protocol.update_cycles",
    "protocol.hmq_capacity",
    "protocol.rb_entries",
    "protocol.sysreg_install_cycles",
    "engine.allocator",
    "engine.atomic_cycles",
    "engine.alloc_fast_instr_cycles",
    "engine.alloc_generic_extra_cycles",
    "power.main_core_power",
    "power.support_core_power_ratio",
    "power.idle_power_fraction",
    "power.uncore_power_ratio",
    "power.support_area_ratio",
    "workload.kind",
    "workload.threads",
    "workload.total_ops",
    "workload.seed",
    "workload.min_size",
    "workload.max_size",
    "workload.pareto_shape",
    "workload.window",
    "workload.cross_free_fraction",
    "workload.compute_gap",
    "workload.touches_per_op",
    "workload.max_access_lines",
    "workload.init_access",
    "workload.large_fraction",
    "workload.teardown",
];

/// Resolves a possibly unqualified key (`sc_l1_size`) to its full name.
pub fn resolve_key(key: &str) -> Result<&'static str, ConfigError> {
    if let Some(k) = KEYS.iter().find(|&&k| k == key) {
        return Ok(k);
    }
    let mut hits = KEYS
        .iter()
        .filter(|k| k.split_once('.').is_some_and(|(_, name)| name == key));
    match (hits.next(), hits.next()) {
        (Some(k), None) => Ok(k),
        (Some(_), Some(_)) => Err(ConfigError::AmbiguousKey(key.into())),
        _ => Err(ConfigError::UnknownKey(key.into())),
    }
}

pub fn parse_u64(s: &str) -> Result<u64, String> {
    let s = s.trim();
    let (digits, mult) = match s.as_bytes().last() {
        Some(b'K' | b'k') => (&s[..s.len() - 1], 1u64 << 10),
        Some(b'M' | b'm') => (&s[..s.len() - 1], 1 << 20),
        Some(b'G' | b'g') => (&s[..s.len() - 1], 1 << 30),
        _ => (s, 1),
    };
    let n: u64 = digits.parse().map_err(|e| format!("{e}"))?;
    n.checked_mul(mult).ok_or_else(|| "value overflows".to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub hw: HwConfig,
    pub alloc: AllocatorConfig,
    pub power: PowerModel64,
    pub workload: WorkloadSpec,
    classes: Option<Vec<u64>>,
    large_threshold: Option<u64>,
    /// Workload overrides, reapplied whenever `workload.kind` resets defaults.
    workload_overrides: Vec<(&'static str, String)>,
    explicit: Vec<&'static str>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            hw: HwConfig::default(),
            alloc: AllocatorConfig::new(AllocatorKind::SpeedMalloc),
            power: PowerModel64::default(),
            workload: WorkloadSpec::new(WorkloadKind::Larson, 16, 100_000, 42),
            classes: None,
            large_threshold: None,
            workload_overrides: Vec::new(),
            explicit: Vec::new(),
        }
    }
}

impl FromStr for Config {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = Config::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            let key = k.trim();
            if !key.contains('.') {
                return Err(ConfigError::UnknownKey(key.into()));
            }
            let key = resolve_key(key)?;
            if seen.contains(&key) {
                return Err(ConfigError::Duplicate(key.into()));
            }
            seen.push(key);
            cfg.set(key, v.trim())?;
        }
        cfg.check()?;
        Ok(cfg)
    }
}

impl Config {
    /// Sets one key. `key` may be unqualified if it is unique.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = resolve_key(key)?;
        if !self.explicit.contains(&key) {
            self.explicit.push(key);
        }
        let bad = |reason: String| ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason,
        };
        let int = || parse_u64(value).map_err(bad);
        let size = || int().and_then(|n| usize::try_from(n).map_err(|e| bad(e.to_string())));
        let float = || value.parse::<f64>().map_err(|e| bad(e.to_string()));
        let hw = &mut self.hw;
        match key {
            "hw.dram_lat" => hw.dram_latency = int()?,
            "hw.coherence_lat" => hw.coherence_latency = int()?,
            "hw.l2_partition_meta_ways" => hw.l2_partition_meta_ways = size()?,
            k if k.starts_with("hw.") => {
                let name = &k[3..];
                let (lvl, field) = name.rsplit_once('_').expect("hw keys are level_field");
                match field {
                    "size" => Self::level(hw, lvl).capacity_bytes = int()?,
                    "ways" => Self::level(hw, lvl).associativity = size()?,
                    _ => Self::level(hw, lvl).hit_latency = int()?,
                }
            }
            "alloc.class_table" => {
                let sizes = value
                    .split(',')
                    .map(|s| parse_u64(s).map_err(bad))
                    .collect::<Result<Vec<_>, _>>()?;
                self.classes = Some(sizes);
            }
            "alloc.chunk_size" => self.alloc.heap.chunk_size = int()?,
            "alloc.large_threshold" => self.large_threshold = Some(int()?),
            "alloc.meta_lines_fast" => self.alloc.heap.meta_lines_fast = size()?,
            "alloc.meta_lines_generic" => self.alloc.heap.meta_lines_generic = size()?,
            "alloc.chunk_budget" => {
                let n = int()?;
                self.alloc.heap.chunk_budget = (n > 0).then_some(n);
            }
            "tiered.batch_size" => self.alloc.batch_size = size()?,
            "tiered.local_cap" => self.alloc.local_cap = size()?,
            "tiered.mode" | "engine.allocator" => {
                let kind: AllocatorKind = value.parse().map_err(bad)?;
                if key == "tiered.mode" && !matches!(kind, AllocatorKind::Tiered | AllocatorKind::ThreadLocalOnly) {
                    return Err(bad("expected tiered or threadlocal".into()));
                }
                self.alloc.kind = kind;
            }
            "protocol.signal_lat" => self.alloc.protocol.signal_lat = int()?,
            "protocol.overlap_cycles" => self.alloc.protocol.overlap_cycles = int()?,
            "protocol.update_cycles" => self.alloc.protocol.update_cycles = int()?,
            "protocol.hmq_capacity" => self.alloc.protocol.hmq_capacity = size()?,
            "protocol.rb_entries" => self.alloc.protocol.rb_entries = size()?,
            "protocol.sysreg_install_cycles" => self.alloc.protocol.sysreg_install_cycles = int()?,
            "engine.atomic_cycles" => self.alloc.atomic_cycles = int()?,
            "engine.alloc_fast_instr_cycles" => self.alloc.alloc_fast_instr_cycles = int()?,
            "engine.alloc_generic_extra_cycles" => self.alloc.alloc_generic_extra_cycles = int()?,
            "power.main_core_power" => self.power.main_core_power = float()?,
            "power.support_core_power_ratio" => self.power.support_core_power_ratio = float()?,
            "power.idle_power_fraction" => self.power.idle_power_fraction = float()?,
            "power.uncore_power_ratio" => self.power.uncore_power_ratio = float()?,
            "power.support_area_ratio" => self.power.support_area_ratio = float()?,
            "workload.kind" => {
                let kind: WorkloadKind = value.parse().map_err(|e| bad(format!("{e}")))?;
                let w = &self.workload;
                self.workload = WorkloadSpec::new(kind, w.threads, w.total_ops, w.seed);
                for (k, v) in std::mem::take(&mut self.workload_overrides) {
                    self.set(k, &v)?;
                }
            }
            k if k.starts_with("workload.") => {
                self.set_workload(k, value).map_err(bad)?;
                self.workload_overrides.retain(|(o, _)| *o != key);
                self.workload_overrides.push((key, value.to_string()));
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    fn level<'a>(hw: &'a mut HwConfig, name: &str) -> &'a mut CacheLevelConfig {
        match name {
            "l1" => &mut hw.l1,
            "l2" => &mut hw.l2,
            "llc" => &mut hw.llc_per_core,
            _ => &mut hw.sc_l1,
        }
    }

    fn set_workload(&mut self, key: &str, value: &str) -> Result<(), String> {
        let w = &mut self.workload;
        let int = || parse_u64(value);
        let float = || value.parse::<f64>().map_err(|e| e.to_string());
        let boolean = || value.parse::<bool>().map_err(|e| e.to_string());
        let narrow = |n: u64| u32::try_from(n).map_err(|e| e.to_string());
        match key {
            "workload.threads" => w.threads = narrow(int()?)?,
            "workload.total_ops" => w.total_ops = int()?,
            "workload.seed" => w.seed = int()?,
            "workload.min_size" => w.min_size = int()?,
            "workload.max_size" => w.max_size = int()?,
            "workload.pareto_shape" => w.pareto_shape = float()?,
            "workload.window" => w.window = int()? as usize,
            "workload.cross_free_fraction" => w.cross_free_fraction = float()?,
            "workload.compute_gap" => w.compute_gap = int()?,
            "workload.touches_per_op" => w.touches_per_op = narrow(int()?)?,
            "workload.max_access_lines" => w.max_access_lines = narrow(int()?)?,
            "workload.init_access" => w.init_access = boolean()?,
            "workload.large_fraction" => w.large_fraction = float()?,
            "workload.teardown" => w.teardown = boolean()?,
            _ => unreachable!("workload keys are listed in KEYS"),
        }
        Ok(())
    }

    /// Whether `key` was given explicitly rather than left at its default.
    pub fn is_explicit(&self, key: &str) -> bool {
        resolve_key(key).is_ok_and(|k| self.explicit.contains(&k))
    }

    /// Applies pending class-table changes and validates every section.
    pub fn check(&mut self) -> Result<(), ConfigError> {
        let inconsistent = |e: &dyn fmt::Display| ConfigError::Inconsistent(e.to_string());
        if self.classes.is_some() || self.large_threshold.is_some() {
            let sizes = self
                .classes
                .clone()
                .unwrap_or_else(|| self.alloc.heap.class_table.sizes().to_vec());
            let threshold = self.large_threshold.unwrap_or(*sizes.last().unwrap_or(&0));
            self.alloc.heap.class_table = SizeClassTable::new(sizes, threshold).map_err(|e| inconsistent(&e))?;
        }
        self.hw.check().map_err(|e| inconsistent(&e))?;
        self.alloc.check().map_err(|e| inconsistent(&e))?;
        self.power.check().map_err(|e| inconsistent(&e))?;
        self.workload.check().map_err(|e| inconsistent(&e))?;
        Ok(())
    }

    /// Same configuration with one key replaced.
    pub fn with(&self, key: &str, value: &str) -> Result<Config, ConfigError> {
        let mut c = self.clone();
        c.set(key, value)?;
        c.check()?;
        Ok(c)
    }
}
