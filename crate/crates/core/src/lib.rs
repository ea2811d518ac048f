//! Coverage-guided fuzzing for firmware running on a small emulated
//! microcontroller.
//!
//! Peripheral reads are answered from the fuzz input through
//! [`mmio::MmioManager`], interrupts are injected by [`irq::IrqController`],
//! and [`coverage`] records block transitions in either the baseline or the
//! interrupt-aware mode. [`engine`] ties these together into executions and
//! campaigns.

pub mod coverage;
pub mod engine;
pub mod firmware;
pub mod irq;
pub mod mmio;
pub mod vm;

pub use coverage::{CoverageMode, EdgeMap, Novelty, VirginMap};
pub use engine::{
    Campaign, CampaignStats, CrashKey, CrashReport, ExecConfig, ExecOutcome, ExecResult, Executor,
    FuzzConfig, QueueEntry, Snapshot, StatsClock, StatsRow,
};
pub use firmware::{assemble, corpus, corpus_entry, Firmware};
pub use irq::IrqController;
pub use mmio::MmioManager;
pub use vm::{FaultKind, Machine, MemoryMap};
