use std::sync::Arc;

use thiserror::Error;

use super::isa::{Flags, Instr, Reg, Width, INSTR_BYTES, LINK_REG, NUM_GPRS};

/// Peripheral window. Loads and stores here never touch RAM or flash.
pub const MMIO_BASE: u32 = 0x4000_0000;
pub const MMIO_LIMIT: u32 = 0x5FFF_FFFF;

pub const NUM_VECTORS: usize = 32;
pub const VECTOR_TABLE_BYTES: u32 = (NUM_VECTORS as u32) * 4;

pub const DEFAULT_FLASH_BASE: u32 = 0x0000_0000;
pub const DEFAULT_FLASH_SIZE: u32 = 0x1_0000;
pub const DEFAULT_RAM_BASE: u32 = 0x2000_0000;
pub const DEFAULT_RAM_SIZE: u32 = 0x4000;
/// Writes here configure the interrupt controller's enable mask.
pub const DEFAULT_IRQ_ENABLE_ADDR: u32 = 0x4FFF_0000;

#[inline]
pub fn is_mmio(addr: u32) -> bool {
    (MMIO_BASE..=MMIO_LIMIT).contains(&addr)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryMap {
    pub flash_base: u32,
    pub flash_size: u32,
    pub ram_base: u32,
    pub ram_size: u32,
    /// Lets firmware store into flash instead of faulting.
    pub flash_writable: bool,
    pub irq_enable_addr: u32,
}

impl Default for MemoryMap {
    fn default() -> Self {
        MemoryMap {
            flash_base: DEFAULT_FLASH_BASE,
            flash_size: DEFAULT_FLASH_SIZE,
            ram_base: DEFAULT_RAM_BASE,
            ram_size: DEFAULT_RAM_SIZE,
            flash_writable: false,
            irq_enable_addr: DEFAULT_IRQ_ENABLE_ADDR,
        }
    }
}

impl MemoryMap {
    #[inline]
    pub fn in_flash(&self, addr: u32, len: u32) -> bool {
        in_region(addr, len, self.flash_base, self.flash_size)
    }

    #[inline]
    pub fn in_ram(&self, addr: u32, len: u32) -> bool {
        in_region(addr, len, self.ram_base, self.ram_size)
    }

    fn validate(&self) -> Result<(), LoadError> {
        let overlaps = |a: u32, asz: u32, b: u32, bsz: u32| {
            let (a, asz, b, bsz) = (a as u64, asz as u64, b as u64, bsz as u64);
            a < b + bsz && b < a + asz
        };
        let mmio_size = (MMIO_LIMIT - MMIO_BASE) + 1;
        let bad = self.flash_size < VECTOR_TABLE_BYTES
            || self.ram_size == 0
            || self.flash_base as u64 + self.flash_size as u64 > 1 << 32
            || self.ram_base as u64 + self.ram_size as u64 > 1 << 32
            || overlaps(
                self.flash_base,
                self.flash_size,
                self.ram_base,
                self.ram_size,
            )
            || overlaps(self.flash_base, self.flash_size, MMIO_BASE, mmio_size)
            || overlaps(self.ram_base, self.ram_size, MMIO_BASE, mmio_size)
            || !is_mmio(self.irq_enable_addr);
        if bad {
            Err(LoadError::BadMemoryMap)
        } else {
            Ok(())
        }
    }
}

#[inline]
fn in_region(addr: u32, len: u32, base: u32, size: u32) -> bool {
    addr >= base && (addr - base) as u64 + len as u64 <= size as u64
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LoadError {
    #[error("image is {len} bytes but flash holds {flash_size}")]
    ImageTooLarge { len: usize, flash_size: u32 },
    #[error("image is shorter than the {VECTOR_TABLE_BYTES}-byte vector table")]
    MissingVectorTable,
    #[error("reset vector {0:#010x} is outside flash")]
    BadResetVector(u32),
    #[error("memory regions overlap or leave the address space")]
    BadMemoryMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FaultKind {
    Unmapped,
    Permission,
    IllegalInstr,
}

impl FaultKind {
    pub fn name(self) -> &'static str {
        match self {
            FaultKind::Unmapped => "unmapped",
            FaultKind::Permission => "permission",
            FaultKind::IllegalInstr => "illegal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continue,
    /// A control transfer finished; the next block starts at `new_pc`.
    BlockBoundary(u32),
    /// `WFI` retired; the core is now sleeping.
    Sleep,
    /// A jump whose target is its own address. It retires with `pc`
    /// unchanged, so resuming simply spins.
    SelfJump,
    /// The faulting instruction is not retired and `pc` still points at it.
    MemFault {
        addr: u32,
        kind: FaultKind,
    },
    MmioRead {
        addr: u32,
        width: Width,
        value: u32,
    },
    MmioWrite {
        addr: u32,
        width: Width,
        value: u32,
    },
    /// The bus had no input left to answer an MMIO read. Not retired.
    InputExhausted {
        addr: u32,
    },
}

/// Receives every access that falls in the MMIO window.
pub trait Bus {
    /// `None` means the read cannot be answered (fuzz input exhausted).
    fn mmio_read(&mut self, addr: u32, width: Width) -> Option<u32>;
    fn mmio_write(&mut self, addr: u32, width: Width, value: u32);
}

/// Architectural state plus memory contents. Cloning it is a snapshot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmState {
    pub gpr: [u32; NUM_GPRS],
    pub flags: Flags,
    pub pc: u32,
    pub in_interrupt: bool,
    /// Return address while `in_interrupt`.
    pub saved_pc: u32,
    /// Registers and flags banked on interrupt entry, restored by `IRET`.
    pub saved_gpr: [u32; NUM_GPRS],
    pub saved_flags: Flags,
    pub sleeping: bool,
    pub instr_count: u64,
    pub ram: Vec<u8>,
    /// Shared with snapshots until the first permitted flash store.
    pub flash: Arc<Vec<u8>>,
}

impl VmState {
    /// Overwrites `self` with `other` without reallocating RAM.
    pub fn restore_from(&mut self, other: &VmState) {
        self.gpr = other.gpr;
        self.flags = other.flags;
        self.pc = other.pc;
        self.in_interrupt = other.in_interrupt;
        self.saved_pc = other.saved_pc;
        self.saved_gpr = other.saved_gpr;
        self.saved_flags = other.saved_flags;
        self.sleeping = other.sleeping;
        self.instr_count = other.instr_count;
        self.ram.copy_from_slice(&other.ram);
        if !Arc::ptr_eq(&self.flash, &other.flash) {
            self.flash = Arc::clone(&other.flash);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Machine {
    map: MemoryMap,
    /// When false, stores to read-only flash are dropped and RAM may be
    /// executed instead of faulting.
    permission_faults: bool,
    pub state: VmState,
}

impl Machine {
    pub fn load_image(flash_bytes: &[u8], map: MemoryMap) -> Result<Machine, LoadError> {
        map.validate()?;
        if flash_bytes.len() as u64 > map.flash_size as u64 {
            return Err(LoadError::ImageTooLarge {
                len: flash_bytes.len(),
                flash_size: map.flash_size,
            });
        }
        if flash_bytes.len() < VECTOR_TABLE_BYTES as usize {
            return Err(LoadError::MissingVectorTable);
        }
        let mut flash = vec![0u8; map.flash_size as usize];
        flash[..flash_bytes.len()].copy_from_slice(flash_bytes);
        let reset = u32::from_le_bytes(flash[0..4].try_into().unwrap());
        if !map.in_flash(reset, INSTR_BYTES) {
            return Err(LoadError::BadResetVector(reset));
        }
        Ok(Machine {
            map,
            permission_faults: true,
            state: VmState {
                gpr: [0; NUM_GPRS],
                flags: Flags::default(),
                pc: reset,
                in_interrupt: false,
                saved_pc: 0,
                saved_gpr: [0; NUM_GPRS],
                saved_flags: Flags::default(),
                sleeping: false,
                instr_count: 0,
                ram: vec![0; map.ram_size as usize],
                flash: Arc::new(flash),
            },
        })
    }

    pub fn map(&self) -> &MemoryMap {
        &self.map
    }

    pub fn set_permission_faults(&mut self, on: bool) {
        self.permission_faults = on;
    }

    pub fn permission_faults(&self) -> bool {
        self.permission_faults
    }

    /// Handler address for `vector`, read from the flash vector table.
    pub fn vector(&self, vector: usize) -> u32 {
        let off = vector * 4;
        u32::from_le_bytes(self.state.flash[off..off + 4].try_into().unwrap())
    }

    /// Jumps to the handler for `vector`. Returns false and leaves the state
    /// untouched when the vector has no handler or an interrupt is already
    /// active.
    pub fn enter_interrupt(&mut self, vector: usize) -> bool {
        debug_assert!(vector < NUM_VECTORS);
        let handler = self.vector(vector);
        let s = &mut self.state;
        if handler == 0 || s.in_interrupt {
            return false;
        }
        s.saved_pc = s.pc;
        s.saved_gpr = s.gpr;
        s.saved_flags = s.flags;
        s.pc = handler;
        s.in_interrupt = true;
        s.sleeping = false;
        true
    }

    fn return_from_interrupt(&mut self) -> bool {
        let s = &mut self.state;
        if !s.in_interrupt {
            return false;
        }
        s.pc = s.saved_pc;
        s.gpr = s.saved_gpr;
        s.flags = s.saved_flags;
        s.in_interrupt = false;
        true
    }

    fn fetch(&self) -> Result<[u8; 4], FaultKind> {
        let pc = self.state.pc;
        if self.map.in_flash(pc, INSTR_BYTES) {
            let off = (pc - self.map.flash_base) as usize;
            return Ok(self.state.flash[off..off + 4].try_into().unwrap());
        }
        if self.map.in_ram(pc, INSTR_BYTES) {
            if self.permission_faults {
                return Err(FaultKind::Permission);
            }
            let off = (pc - self.map.ram_base) as usize;
            return Ok(self.state.ram[off..off + 4].try_into().unwrap());
        }
        if is_mmio(pc) {
            return Err(FaultKind::Permission);
        }
        Err(FaultKind::Unmapped)
    }

    fn load<B: Bus>(&self, bus: &mut B, addr: u32, width: Width) -> Result<Loaded, FaultKind> {
        let len = width.bytes();
        let slice = if self.map.in_ram(addr, len) {
            let off = (addr - self.map.ram_base) as usize;
            &self.state.ram[off..off + len as usize]
        } else if self.map.in_flash(addr, len) {
            let off = (addr - self.map.flash_base) as usize;
            &self.state.flash[off..off + len as usize]
        } else if is_mmio(addr) {
            return Ok(match bus.mmio_read(addr, width) {
                Some(v) => Loaded::Mmio(v & width.mask()),
                None => Loaded::Exhausted,
            });
        } else {
            return Err(FaultKind::Unmapped);
        };
        let mut buf = [0u8; 4];
        buf[..slice.len()].copy_from_slice(slice);
        Ok(Loaded::Memory(u32::from_le_bytes(buf)))
    }

    fn store<B: Bus>(
        &mut self,
        bus: &mut B,
        addr: u32,
        width: Width,
        value: u32,
    ) -> Result<bool, FaultKind> {
        let len = width.bytes() as usize;
        let bytes = value.to_le_bytes();
        if self.map.in_ram(addr, len as u32) {
            let off = (addr - self.map.ram_base) as usize;
            self.state.ram[off..off + len].copy_from_slice(&bytes[..len]);
            Ok(false)
        } else if self.map.in_flash(addr, len as u32) {
            if self.map.flash_writable {
                let off = (addr - self.map.flash_base) as usize;
                Arc::make_mut(&mut self.state.flash)[off..off + len].copy_from_slice(&bytes[..len]);
                Ok(false)
            } else if self.permission_faults {
                Err(FaultKind::Permission)
            } else {
                Ok(false)
            }
        } else if is_mmio(addr) {
            bus.mmio_write(addr, width, value & width.mask());
            Ok(true)
        } else {
            Err(FaultKind::Unmapped)
        }
    }

    /// Executes one instruction.
    pub fn step<B: Bus>(&mut self, bus: &mut B) -> StepOutcome {
        let pc = self.state.pc;
        let word = match self.fetch() {
            Ok(w) => w,
            Err(kind) => return StepOutcome::MemFault { addr: pc, kind },
        };
        let Some(instr) = Instr::decode(word) else {
            return StepOutcome::MemFault {
                addr: pc,
                kind: FaultKind::IllegalInstr,
            };
        };
        let next = pc.wrapping_add(INSTR_BYTES);
        let rel = |r: i16| pc.wrapping_add(r as i32 as u32);
        let mut outcome = StepOutcome::Continue;
        let mut new_pc = next;

        match instr {
            Instr::Nop => {}
            Instr::Movi { rd, imm } => self.set(rd, imm as u32),
            Instr::Movhi { rd, imm } => {
                let v = (self.get(rd) & 0xFFFF) | ((imm as u32) << 16);
                self.set(rd, v)
            }
            Instr::Mov { rd, rs } => self.set(rd, self.get(rs)),
            Instr::Alu { op, rd, ra, rb } => self.set(rd, op.apply(self.get(ra), self.get(rb))),
            Instr::Addi { rd, ra, imm } => {
                self.set(rd, self.get(ra).wrapping_add(imm as i32 as u32))
            }
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => {
                let addr = self.get(base).wrapping_add(offset as i32 as u32);
                match self.load(bus, addr, width) {
                    Ok(Loaded::Memory(v)) => self.set(rd, v),
                    Ok(Loaded::Mmio(v)) => {
                        self.set(rd, v);
                        outcome = StepOutcome::MmioRead {
                            addr,
                            width,
                            value: v,
                        };
                    }
                    Ok(Loaded::Exhausted) => return StepOutcome::InputExhausted { addr },
                    Err(kind) => return StepOutcome::MemFault { addr, kind },
                }
            }
            Instr::Store {
                width,
                rs,
                base,
                offset,
            } => {
                let addr = self.get(base).wrapping_add(offset as i32 as u32);
                let value = self.get(rs) & width.mask();
                match self.store(bus, addr, width, value) {
                    Ok(true) => outcome = StepOutcome::MmioWrite { addr, width, value },
                    Ok(false) => {}
                    Err(kind) => return StepOutcome::MemFault { addr, kind },
                }
            }
            Instr::Cmp { ra, rb } => {
                let (a, b) = (self.get(ra), self.get(rb));
                self.state.flags = Flags {
                    eq: a == b,
                    lt: a < b,
                };
            }
            Instr::Branch { cond, rel: r } => {
                if cond.holds(self.state.flags) {
                    new_pc = rel(r);
                }
            }
            Instr::Jmp { rel: r } => new_pc = rel(r),
            Instr::JmpAbs { rs } => new_pc = self.get(rs),
            Instr::Call { rel: r } => {
                self.set(LINK_REG, next);
                new_pc = rel(r);
            }
            Instr::Ret => new_pc = self.get(LINK_REG),
            Instr::Iret => {
                if !self.return_from_interrupt() {
                    return StepOutcome::MemFault {
                        addr: pc,
                        kind: FaultKind::IllegalInstr,
                    };
                }
                new_pc = self.state.pc;
            }
            Instr::Wfi => {
                self.state.sleeping = true;
                outcome = StepOutcome::Sleep;
            }
        }

        self.state.pc = new_pc;
        self.state.instr_count += 1;
        if new_pc == pc && matches!(instr, Instr::Jmp { .. } | Instr::JmpAbs { .. }) {
            StepOutcome::SelfJump
        } else if instr.ends_block() {
            StepOutcome::BlockBoundary(new_pc)
        } else {
            outcome
        }
    }

    #[inline]
    fn get(&self, r: Reg) -> u32 {
        self.state.gpr[r.idx()]
    }

    #[inline]
    fn set(&mut self, r: Reg, v: u32) {
        self.state.gpr[r.idx()] = v;
    }
}

enum Loaded {
    Memory(u32),
    Mmio(u32),
    Exhausted,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::isa::{AluOp, Cond};

    /// MMIO reads return a fixed value; writes are recorded.
    #[derive(Default)]
    struct TestBus {
        read_value: Option<u32>,
        writes: Vec<(u32, Width, u32)>,
    }

    impl Bus for TestBus {
        fn mmio_read(&mut self, _addr: u32, _width: Width) -> Option<u32> {
            self.read_value
        }
        fn mmio_write(&mut self, addr: u32, width: Width, value: u32) {
            self.writes.push((addr, width, value));
        }
    }

    fn image(code: &[Instr], vectors: &[(usize, u32)]) -> Vec<u8> {
        let mut img = vec![0u8; VECTOR_TABLE_BYTES as usize];
        img[0..4].copy_from_slice(&VECTOR_TABLE_BYTES.to_le_bytes());
        for &(v, addr) in vectors {
            img[v * 4..v * 4 + 4].copy_from_slice(&addr.to_le_bytes());
        }
        for i in code {
            img.extend_from_slice(&i.encode());
        }
        img
    }

    fn machine(code: &[Instr]) -> Machine {
        Machine::load_image(&image(code, &[]), MemoryMap::default()).unwrap()
    }

    fn r(i: u8) -> Reg {
        Reg(i)
    }

    #[test]
    fn load_sets_reset_state() {
        let m = machine(&[Instr::Nop]);
        assert_eq!(m.state.pc, 0x80);
        assert_eq!(m.state.gpr, [0; 8]);
        assert!(m.state.ram.iter().all(|&b| b == 0));
        assert!(!m.state.in_interrupt);
    }

    #[test]
    fn load_rejects_oversized_and_bad_reset() {
        let map = MemoryMap {
            flash_size: 0x100,
            ..MemoryMap::default()
        };
        let big = vec![0u8; 0x101];
        assert!(matches!(
            Machine::load_image(&big, map),
            Err(LoadError::ImageTooLarge { .. })
        ));
        let mut img = image(&[Instr::Nop], &[]);
        img[0..4].copy_from_slice(&0x2000_0000u32.to_le_bytes());
        assert_eq!(
            Machine::load_image(&img, MemoryMap::default()).unwrap_err(),
            LoadError::BadResetVector(0x2000_0000)
        );
    }

    #[test]
    fn movi_and_alu() {
        let mut m = machine(&[
            Instr::Movi { rd: r(0), imm: 5 },
            Instr::Movhi { rd: r(0), imm: 1 },
            Instr::Addi {
                rd: r(1),
                ra: r(0),
                imm: -6,
            },
            Instr::Alu {
                op: AluOp::Shr,
                rd: r(2),
                ra: r(1),
                rb: r(0),
            },
        ]);
        let mut bus = TestBus::default();
        assert_eq!(m.step(&mut bus), StepOutcome::Continue);
        assert_eq!(m.state.gpr[0], 5);
        m.step(&mut bus);
        assert_eq!(m.state.gpr[0], 0x1_0005);
        m.step(&mut bus);
        assert_eq!(m.state.gpr[1], 0xFFFF);
        m.step(&mut bus);
        assert_eq!(m.state.gpr[2], 0xFFFF >> 5);
        assert_eq!(m.state.instr_count, 4);
    }

    #[test]
    fn flash_store_is_a_permission_fault() {
        let code = [
            Instr::Movi {
                rd: r(1),
                imm: 0x10,
            },
            Instr::Store {
                width: Width::Word,
                rs: r(0),
                base: r(1),
                offset: 0,
            },
        ];
        let mut m = machine(&code);
        let mut bus = TestBus::default();
        m.step(&mut bus);
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MemFault {
                addr: 0x10,
                kind: FaultKind::Permission
            }
        );
        assert_eq!(m.state.pc, 0x84, "faulting instruction is not retired");

        let mut relaxed = Machine::load_image(
            &image(&code, &[]),
            MemoryMap {
                flash_writable: true,
                ..MemoryMap::default()
            },
        )
        .unwrap();
        relaxed.state.gpr[0] = 0xAABBCCDD;
        relaxed.step(&mut bus);
        assert_eq!(relaxed.step(&mut bus), StepOutcome::Continue);
        assert_eq!(&relaxed.state.flash[0x10..0x14], &[0xDD, 0xCC, 0xBB, 0xAA]);

        let mut dropped = machine(&code);
        dropped.set_permission_faults(false);
        dropped.step(&mut bus);
        assert_eq!(dropped.step(&mut bus), StepOutcome::Continue);
        assert_eq!(&dropped.state.flash[0x10..0x14], &[0; 4]);
    }

    #[test]
    fn unmapped_access_and_ram_fetch() {
        let mut m = machine(&[
            Instr::Movhi {
                rd: r(1),
                imm: 0x3000,
            },
            Instr::Load {
                width: Width::Byte,
                rd: r(0),
                base: r(1),
                offset: 0,
            },
        ]);
        let mut bus = TestBus::default();
        m.step(&mut bus);
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MemFault {
                addr: 0x3000_0000,
                kind: FaultKind::Unmapped
            }
        );

        let mut m = machine(&[]);
        m.state.pc = DEFAULT_RAM_BASE;
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MemFault {
                addr: DEFAULT_RAM_BASE,
                kind: FaultKind::Permission
            }
        );
        m.state.pc = 0x1000_0000;
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MemFault {
                addr: 0x1000_0000,
                kind: FaultKind::Unmapped
            }
        );
    }

    #[test]
    fn word_straddling_ram_end_is_unmapped() {
        let mut m = machine(&[Instr::Load {
            width: Width::Word,
            rd: r(0),
            base: r(1),
            offset: 0,
        }]);
        m.state.gpr[1] = DEFAULT_RAM_BASE + DEFAULT_RAM_SIZE - 2;
        assert!(matches!(
            m.step(&mut TestBus::default()),
            StepOutcome::MemFault {
                kind: FaultKind::Unmapped,
                ..
            }
        ));
    }

    #[test]
    fn self_jump_and_branches() {
        let mut m = machine(&[Instr::Jmp { rel: 0 }]);
        assert_eq!(m.step(&mut TestBus::default()), StepOutcome::SelfJump);
        assert_eq!(m.state.pc, 0x80);

        let mut m = machine(&[
            Instr::Cmp { ra: r(0), rb: r(1) },
            Instr::Branch {
                cond: Cond::Ne,
                rel: 8,
            },
            Instr::Branch {
                cond: Cond::Eq,
                rel: 8,
            },
        ]);
        let mut bus = TestBus::default();
        m.step(&mut bus);
        assert_eq!(m.step(&mut bus), StepOutcome::BlockBoundary(0x88));
        assert_eq!(m.step(&mut bus), StepOutcome::BlockBoundary(0x90));
    }

    #[test]
    fn call_and_ret_use_link_register() {
        let mut m = machine(&[Instr::Call { rel: 8 }, Instr::Nop, Instr::Ret]);
        let mut bus = TestBus::default();
        assert_eq!(m.step(&mut bus), StepOutcome::BlockBoundary(0x88));
        assert_eq!(m.state.gpr[7], 0x84);
        assert_eq!(m.step(&mut bus), StepOutcome::BlockBoundary(0x84));
    }

    #[test]
    fn mmio_goes_to_bus() {
        let mut m = machine(&[
            Instr::Movhi {
                rd: r(1),
                imm: 0x4000,
            },
            Instr::Load {
                width: Width::Half,
                rd: r(0),
                base: r(1),
                offset: 4,
            },
            Instr::Store {
                width: Width::Byte,
                rs: r(0),
                base: r(1),
                offset: 8,
            },
            Instr::Load {
                width: Width::Word,
                rd: r(0),
                base: r(1),
                offset: 4,
            },
        ]);
        let mut bus = TestBus {
            read_value: Some(0x1234_5678),
            ..TestBus::default()
        };
        m.step(&mut bus);
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MmioRead {
                addr: 0x4000_0004,
                width: Width::Half,
                value: 0x5678
            }
        );
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::MmioWrite {
                addr: 0x4000_0008,
                width: Width::Byte,
                value: 0x78
            }
        );
        assert!(m.state.ram.iter().all(|&b| b == 0));
        bus.read_value = None;
        let before = m.state.clone();
        assert_eq!(
            m.step(&mut bus),
            StepOutcome::InputExhausted { addr: 0x4000_0004 }
        );
        assert_eq!(m.state, before);
    }

    #[test]
    fn interrupt_entry_and_return() {
        let mut img = image(&[Instr::Nop, Instr::Nop], &[(3, 0x88)]);
        img.extend_from_slice(&Instr::Iret.encode());
        let mut m = Machine::load_image(&img, MemoryMap::default()).unwrap();
        m.state.gpr[2] = 7;
        m.state.sleeping = true;
        assert!(!m.enter_interrupt(5), "null handler skips the interrupt");
        assert!(!m.state.in_interrupt);
        assert!(m.enter_interrupt(3));
        assert_eq!(m.state.pc, 0x88);
        assert_eq!(m.state.saved_pc, 0x80);
        assert!(m.state.in_interrupt && !m.state.sleeping);
        assert!(!m.enter_interrupt(3), "no nesting");
        m.state.gpr[2] = 99;
        assert_eq!(
            m.step(&mut TestBus::default()),
            StepOutcome::BlockBoundary(0x80)
        );
        assert!(!m.state.in_interrupt);
        assert_eq!(m.state.gpr[2], 7);
    }

    #[test]
    fn iret_outside_interrupt_is_illegal() {
        let mut m = machine(&[Instr::Iret]);
        assert_eq!(
            m.step(&mut TestBus::default()),
            StepOutcome::MemFault {
                addr: 0x80,
                kind: FaultKind::IllegalInstr
            }
        );
    }

    #[test]
    fn restore_is_exact() {
        let mut m = machine(&[Instr::Movi { rd: r(0), imm: 1 }]);
        let snap = m.state.clone();
        m.step(&mut TestBus::default());
        m.state.ram[3] = 9;
        m.state.restore_from(&snap);
        assert_eq!(m.state, snap);
    }
}
