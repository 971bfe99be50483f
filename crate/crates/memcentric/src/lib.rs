//! Command-level DRAM simulator and library for memory-centric mechanisms:
//!
//! - [`dram`]/[`device`]: geometry, timing, row state, and the ACT/PRE/RD/WR/
//!   REF protocol with reject (NACK) and ALERT responses;
//! - [`disturbance`]: read-disturbance fault injection — activation-count
//!   thresholds, open-time amplification, per-window threshold jitter;
//! - [`mitigation`]: PARA, a TRR-style sampler baseline, per-row activation
//!   counters with ALERT back-off, and the periodic refresh scheduler;
//! - [`smd`]: chip-autonomous maintenance over lockable regions with a
//!   reject/retry controller interface;
//! - [`pud`]: in-DRAM copy, majority/NOT bulk-bitwise logic, a gate-circuit
//!   compiler, vertical data layout, and multi-row-activation TRNG;
//! - [`pnm`]: roofline offload model, greedy kernel placement, scaling curves;
//! - [`config`]/[`trace`]/[`attack`]/[`metrics`]/[`runner`]: the experiment
//!   harness behind the `memcentric` CLI.

pub mod attack;
pub mod bits;
pub mod config;
pub mod device;
pub mod disturbance;
pub mod dram;
pub mod metrics;
pub mod mitigation;
pub mod pnm;
pub mod pud;
pub mod runner;
pub mod smd;
pub mod trace;

pub use bits::BitRow;
pub use config::ExperimentConfig;
pub use device::{DeviceState, DeviceStats};
pub use disturbance::{
    measure_acmin, press_weight, sample_acmin, AccessRecipe, AcminMeasurement, BitflipEvent,
    DisturbanceProfile, FlipCause,
};
pub use dram::{
    Command, CommandKind, DramGeometry, ProtocolError, Response, ResponseKind, RowAddress,
    TimingParams,
};
pub use metrics::{MetricsReport, OutputFormat};
pub use mitigation::{MitigationConfig, RefreshScheduler};
pub use pnm::{papi_schedule, roofline_time, scaling_curve, KernelDescriptor, UnitSpec};
pub use pud::{
    compile_circuit, quac_trng, GateCircuit, MicroOp, NoiseModel, PudEngine, SubarrayId,
};
pub use runner::{run, run_sweep, Subcommand};
pub use smd::{MaintenanceTask, Region, RegionScope, SmdConfig, SmdEngine, TaskKind};
