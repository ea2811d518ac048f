//! Round-robin interrupt injection.
//!
//! Firmware enables vectors by writing a bit mask to the controller's MMIO
//! register. An enabled vector fires every `interval` block boundaries, and
//! immediately whenever the core goes to sleep, cycling through the enabled
//! set. Vector 0 is the reset vector and never fires.

use crate::vm::NUM_VECTORS;

pub const DEFAULT_IRQ_INTERVAL: u64 = 1000;

const RESET_VECTOR_BIT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IrqController {
    pub enable_mask: u32,
    /// Counts every block boundary, including ones inside handlers.
    pub blocks_since_irq: u64,
    pub interval: u64,
    /// Last vector fired; the next fire picks the first enabled vector after it.
    pub rr_cursor: u8,
    /// Total boundaries seen this run, used by `fire_at`.
    pub blocks_total: u64,
    /// Replaces periodic delivery with a single fire at this boundary index.
    pub fire_at: Option<u64>,
}

impl IrqController {
    pub fn new(interval: u64) -> Self {
        IrqController {
            enable_mask: 0,
            blocks_since_irq: 0,
            interval: interval.max(1),
            rr_cursor: 0,
            blocks_total: 0,
            fire_at: None,
        }
    }

    /// A controller that fires once, at the `index`-th boundary (0-based),
    /// if a vector is enabled and no handler is running.
    pub fn one_shot(index: u64) -> Self {
        IrqController {
            fire_at: Some(index),
            ..Self::new(u64::MAX)
        }
    }

    fn eligible_mask(&self) -> u32 {
        self.enable_mask & !RESET_VECTOR_BIT
    }

    /// Next enabled vector strictly after `rr_cursor`, wrapping around.
    fn next_vector(&self) -> Option<usize> {
        let mask = self.eligible_mask();
        if mask == 0 {
            return None;
        }
        (1..=NUM_VECTORS)
            .map(|step| (self.rr_cursor as usize + step) % NUM_VECTORS)
            .find(|&v| mask & (1 << v) != 0)
    }

    fn fire(&mut self) -> Option<usize> {
        let v = self.next_vector()?;
        self.rr_cursor = v as u8;
        self.blocks_since_irq = 0;
        Some(v)
    }

    /// Called once per block boundary.
    pub fn on_block(&mut self, in_interrupt: bool) -> Option<usize> {
        let index = self.blocks_total;
        self.blocks_total += 1;
        self.blocks_since_irq = self.blocks_since_irq.saturating_add(1);
        if in_interrupt {
            return None;
        }
        match self.fire_at {
            Some(at) if at == index => self.fire(),
            Some(_) => None,
            None if self.blocks_since_irq >= self.interval => self.fire(),
            None => None,
        }
    }

    /// Called when the core has just executed `WFI`. `None` means nothing
    /// can wake it.
    pub fn on_sleep(&mut self, in_interrupt: bool) -> Option<usize> {
        if in_interrupt {
            return None;
        }
        self.fire()
    }

    pub fn route_enable_write(&mut self, value: u32) {
        self.enable_mask = value;
    }
}
