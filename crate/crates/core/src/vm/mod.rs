//! Deterministic interpreter for the miniature ISA.

pub mod isa;
mod machine;

pub use isa::{AluOp, Cond, Flags, Instr, Reg, Width};
pub use machine::{
    is_mmio, Bus, FaultKind, LoadError, Machine, MemoryMap, StepOutcome, VmState,
    DEFAULT_FLASH_BASE, DEFAULT_FLASH_SIZE, DEFAULT_IRQ_ENABLE_ADDR, DEFAULT_RAM_BASE,
    DEFAULT_RAM_SIZE, MMIO_BASE, MMIO_LIMIT, NUM_VECTORS, VECTOR_TABLE_BYTES,
};
