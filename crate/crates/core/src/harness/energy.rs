use num_traits::Float;
use thiserror::Error;

use crate::engine::{AllocatorKind, Metrics};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid power model: {0}")]
pub struct PowerModelError(String);

/// Relative power of the chip's components, normalized to one main core.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel<F: Float> {
    pub main_core_power: F,
    /// Support-core power as a fraction of a main core.
    pub support_core_power_ratio: F,
    /// Power drawn by a stalled service core, as a fraction of its active power.
    pub idle_power_fraction: F,
    /// Uncore power relative to one main core, charged for the whole run.
    pub uncore_power_ratio: F,
    /// Support-core area relative to a main core. Reported only.
    pub support_area_ratio: F,
}

impl<F: Float> Default for PowerModel<F> {
    fn default() -> Self {
        let c = |x: f64| F::from(x).expect("float constant");
        PowerModel {
            main_core_power: F::one(),
            support_core_power_ratio: c(0.3372),
            idle_power_fraction: c(0.3),
            uncore_power_ratio: F::zero(),
            support_area_ratio: c(0.2443),
        }
    }
}

/// Cycle totals the energy model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EnergyInputs {
    pub main_cycles: u64,
    pub service_busy: u64,
    pub service_stall: u64,
    pub total_cycles: u64,
}

impl EnergyInputs {
    pub fn from_metrics(m: &Metrics) -> Self {
        EnergyInputs {
            main_cycles: m.cores.iter().map(|c| c.completion).sum(),
            service_busy: m.support_busy,
            service_stall: m.support_stall,
            total_cycles: m.total_cycles,
        }
    }
}

impl<F: Float> PowerModel<F> {
    pub fn check(&self) -> Result<(), PowerModelError> {
        let open = |x: F| x > F::zero() && x < F::one();
        if !(self.main_core_power > F::zero() && self.main_core_power.is_finite()) {
            return Err(PowerModelError("main_core_power must be positive".into()));
        }
        if !open(self.support_core_power_ratio) || !open(self.idle_power_fraction) || !open(self.support_area_ratio) {
            return Err(PowerModelError(
                "support power, idle fraction and area ratios must lie in (0, 1)".into(),
            ));
        }
        if !(self.uncore_power_ratio >= F::zero() && self.uncore_power_ratio.is_finite()) {
            return Err(PowerModelError("uncore_power_ratio must be >= 0".into()));
        }
        Ok(())
    }

    /// Active power of the core that serves allocation requests, if any.
    pub fn service_power(&self, kind: AllocatorKind) -> F {
        match kind {
            AllocatorKind::SpeedMalloc => self.main_core_power * self.support_core_power_ratio,
            AllocatorKind::IdleCore => self.main_core_power,
            AllocatorKind::Tiered | AllocatorKind::ThreadLocalOnly => F::zero(),
        }
    }

    pub fn energy_of(&self, inputs: EnergyInputs, service_power: F) -> F {
        let f = |n: u64| F::from(n).expect("u64 converts to float");
        self.main_core_power * f(inputs.main_cycles)
            + service_power * f(inputs.service_busy)
            + self.idle_power_fraction * service_power * f(inputs.service_stall)
            + self.uncore_power_ratio * self.main_core_power * f(inputs.total_cycles)
    }

    pub fn energy(&self, m: &Metrics) -> F {
        self.energy_of(EnergyInputs::from_metrics(m), self.service_power(m.allocator))
    }

    /// Share of chip power taken by a busy support core next to `cores` main cores.
    pub fn support_power_share(&self, cores: u32) -> F {
        let n = F::from(cores).expect("u32 converts to float");
        let s = self.support_core_power_ratio;
        s / (n + s + self.uncore_power_ratio)
    }
}
