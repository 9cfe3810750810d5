pub mod engine;
pub mod harness;
pub mod heap;
pub mod memsim;
pub mod protocol;
pub mod rng;
pub mod tiered;
pub mod trace;

pub type PowerModel64 = harness::PowerModel<f64>;
pub type PowerModel32 = harness::PowerModel<f32>;
