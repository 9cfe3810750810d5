//! Experiment plumbing: configuration, energy, single runs, comparisons and
//! parameter sweeps.

pub mod config;
pub mod energy;
pub mod report;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::engine::{compare_sides, simulate, ComparisonReport, EngineError, Metrics, TraceMismatch};
use crate::trace::{generate, Trace, TraceError};

pub use config::{Config, ConfigError};
pub use energy::{EnergyInputs, PowerModel, PowerModelError};
pub use report::{Summary, SweepRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Mismatch(#[from] TraceMismatch),
    #[error("{0}")]
    Sweep(String),
}

/// Simulates `trace` under `cfg` and summarizes the result.
pub fn run(cfg: &Config, trace: &Trace) -> Result<(Metrics, Summary), HarnessError> {
    let m = simulate(trace, &cfg.alloc, &cfg.hw)?;
    let s = Summary::new(&m, &cfg.power);
    Ok((m, s))
}

/// Generates the trace that `cfg` describes.
pub fn workload_trace(cfg: &Config) -> Result<Trace, HarnessError> {
    Ok(generate(&cfg.workload)?)
}

pub fn compare_summaries(a: &Summary, b: &Summary) -> Result<ComparisonReport, HarnessError> {
    Ok(compare_sides(&a.side(), &b.side())?)
}

/// Runs one simulation per value of `key`. With `trace` given every point
/// replays it; otherwise each point generates its own workload. Points run
/// on worker threads; rows come back in `values` order.
pub fn sweep(base: &Config, trace: Option<&Trace>, key: &str, values: &[String]) -> Result<Vec<SweepRow>, HarnessError> {
    let key = config::resolve_key(key)?;
    if values.is_empty() {
        return Err(HarnessError::Sweep("sweep needs at least one value".into()));
    }
    if trace.is_some() && key.starts_with("workload.") {
        return Err(HarnessError::Sweep(format!(
            "cannot sweep `{key}` over a fixed trace file"
        )));
    }
    let points = values
        .iter()
        .map(|v| base.with(key, v))
        .collect::<Result<Vec<_>, _>>()?;
    let shared = match trace {
        Some(_) => None,
        None if !key.starts_with("workload.") => Some(workload_trace(base)?),
        None => None,
    };
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(points.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Summary, HarnessError>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cfg) = points.get(i) else { break };
                let result = match trace.or(shared.as_ref()) {
                    Some(t) => run(cfg, t).map(|(_, s)| s),
                    None => workload_trace(cfg).and_then(|t| run(cfg, &t).map(|(_, s)| s)),
                };
                slots.lock().expect("sweep slots")[i] = Some(result);
            });
        }
    });
    let slots = slots.into_inner().expect("sweep slots");
    slots
        .into_iter()
        .zip(values)
        .enumerate()
        .map(|(index, (slot, value))| {
            Ok(SweepRow {
                index,
                key: key.to_string(),
                value: value.clone(),
                summary: slot.expect("every point ran")?,
            })
        })
        .collect()
}
