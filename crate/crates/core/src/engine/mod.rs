//! Execution, mutation, queueing and the campaign loop.

pub mod campaign;
pub mod executor;
pub mod mutator;
pub mod queue;
pub mod triage;

pub use campaign::{fuzz_loop, Campaign, CampaignStats, FuzzConfig, StatsClock, StatsRow};
pub use executor::{
    BoundaryView, CrashSite, ExecConfig, ExecOutcome, ExecResult, Executor, IrqTrigger, Observer,
    Snapshot, TraceEvent,
};
pub use queue::{Discovery, QueueEntry};
pub use triage::{CrashKey, CrashReport, CrashTriage};
