//! Peripheral input playback.
//!
//! Every MMIO read is answered from the fuzz input. Before a register read,
//! a two-bit field decides whether the register replays its previous value
//! (field == [`REPEAT_CONST`]) or takes a fresh value from the input. Fields
//! are delivered in 32-bit control words, one word per 16 reads of the same
//! register, least-significant pair first.
//!
//! The repeated value is whichever came last: the value returned by the
//! previous read or the value the firmware last wrote. A register that has
//! never been touched repeats 0.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::vm::Width;

pub const REPEAT_CONST: u32 = 0b11;
pub const FIELDS_PER_WORD: u8 = 16;
pub const CONTROL_WORD_BYTES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("fuzz input exhausted")]
pub struct InputExhausted;

/// Read position in one test case.
#[derive(Debug, Clone, Copy)]
pub struct InputCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> InputCursor<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        InputCursor { bytes, offset: 0 }
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn remaining(&self) -> usize {
        self.bytes.len() - self.offset
    }

    /// Consumes `n` bytes as a little-endian integer. Nothing is consumed
    /// when fewer than `n` bytes remain.
    #[inline]
    pub fn take_le(&mut self, n: usize) -> Result<u32, InputExhausted> {
        debug_assert!(n <= 4);
        let end = self.offset + n;
        let src = self.bytes.get(self.offset..end).ok_or(InputExhausted)?;
        let mut buf = [0u8; 4];
        buf[..n].copy_from_slice(src);
        self.offset = end;
        Ok(u32::from_le_bytes(buf))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RegisterState {
    pub last_value: u32,
    pub batch_bits: u32,
    /// Two-bit fields left in `batch_bits`; 0 means the next read refills.
    pub batch_remaining: u8,
}

#[inline]
fn register_key(addr: u32) -> u32 {
    addr & !3
}

/// Per-test-case register memory. Lookups are linear: firmware touches a
/// handful of registers per run and the order of first access stays
/// deterministic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PeripheralStore {
    regs: Vec<(u32, RegisterState)>,
    passthrough: BTreeSet<u32>,
    cells: Vec<(u32, u32)>,
}

impl PeripheralStore {
    pub fn new(passthrough: impl IntoIterator<Item = u32>) -> Self {
        PeripheralStore {
            passthrough: passthrough.into_iter().map(register_key).collect(),
            ..Self::default()
        }
    }

    pub fn is_passthrough(&self, addr: u32) -> bool {
        !self.passthrough.is_empty() && self.passthrough.contains(&register_key(addr))
    }

    pub fn passthrough(&self) -> &BTreeSet<u32> {
        &self.passthrough
    }

    pub fn register(&self, addr: u32) -> Option<&RegisterState> {
        let key = register_key(addr);
        self.regs.iter().find(|(k, _)| *k == key).map(|(_, r)| r)
    }

    pub fn len(&self) -> usize {
        self.regs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regs.is_empty() && self.cells.is_empty()
    }

    /// Forgets all register state. Passthrough membership is configuration
    /// and survives.
    pub fn reset(&mut self) {
        self.regs.clear();
        self.cells.clear();
    }

    #[inline]
    fn register_mut(&mut self, addr: u32) -> &mut RegisterState {
        let key = register_key(addr);
        let pos = match self.regs.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                self.regs.push((key, RegisterState::default()));
                self.regs.len() - 1
            }
        };
        &mut self.regs[pos].1
    }

    fn cell_mut(&mut self, addr: u32) -> &mut u32 {
        let key = register_key(addr);
        let pos = match self.cells.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                self.cells.push((key, 0));
                self.cells.len() - 1
            }
        };
        &mut self.cells[pos].1
    }

    fn cell(&self, addr: u32) -> u32 {
        let key = register_key(addr);
        self.cells
            .iter()
            .find(|(k, _)| *k == key)
            .map_or(0, |(_, v)| *v)
    }
}

/// Replaces the bytes of `word` that a `width`-sized access at `addr` covers.
#[inline]
pub fn patch_bytes(word: u32, addr: u32, width: Width, value: u32) -> u32 {
    let shift = (addr & 3) * 8;
    let mask = ((width.mask() as u64) << shift) as u32;
    (word & !mask) | ((value << shift) & mask)
}

#[inline]
fn extract_bytes(word: u32, addr: u32, width: Width) -> u32 {
    (word >> ((addr & 3) * 8)) & width.mask()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MmioManager {
    pub store: PeripheralStore,
    /// Off: every read consumes `width` raw bytes and no control words.
    pub playback: bool,
}

impl MmioManager {
    pub fn new(playback: bool, passthrough: impl IntoIterator<Item = u32>) -> Self {
        MmioManager {
            store: PeripheralStore::new(passthrough),
            playback,
        }
    }

    pub fn read(
        &mut self,
        cursor: &mut InputCursor<'_>,
        addr: u32,
        width: Width,
    ) -> Result<u32, InputExhausted> {
        if self.store.is_passthrough(addr) {
            return Ok(extract_bytes(self.store.cell(addr), addr, width));
        }
        let n = width.bytes() as usize;
        if !self.playback {
            return cursor.take_le(n);
        }
        let reg = self.store.register_mut(addr);
        if reg.batch_remaining == 0 {
            reg.batch_bits = cursor.take_le(CONTROL_WORD_BYTES)?;
            reg.batch_remaining = FIELDS_PER_WORD;
        }
        let field = reg.batch_bits & 0b11;
        reg.batch_bits >>= 2;
        reg.batch_remaining -= 1;
        let value = if field == REPEAT_CONST {
            reg.last_value & width.mask()
        } else {
            cursor.take_le(n)?
        };
        reg.last_value = value;
        Ok(value)
    }

    pub fn write(&mut self, addr: u32, width: Width, value: u32) {
        if self.store.is_passthrough(addr) {
            let cell = self.store.cell_mut(addr);
            *cell = patch_bytes(*cell, addr, width, value);
            return;
        }
        let reg = self.store.register_mut(addr);
        reg.last_value = patch_bytes(reg.last_value, addr, width, value);
    }

    pub fn reset(&mut self) {
        self.store.reset();
    }
}

/// Builds an input that makes a single register return `values` in order
/// under playback: every control word is zero, so each read takes a fresh
/// value.
pub fn encode_fresh(values: &[u32], width: Width) -> Vec<u8> {
    let n = width.bytes() as usize;
    let mut out = Vec::new();
    for (i, v) in values.iter().enumerate() {
        if i % FIELDS_PER_WORD as usize == 0 {
            out.extend_from_slice(&[0; CONTROL_WORD_BYTES]);
        }
        out.extend_from_slice(&v.to_le_bytes()[..n]);
    }
    out
}
