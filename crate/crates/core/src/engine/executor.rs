use std::fmt;

use crate::coverage::{CoverageContext, CoverageMode, EdgeMap, DEFAULT_MAP_SIZE};
use crate::irq::{IrqController, DEFAULT_IRQ_INTERVAL};
use crate::mmio::{patch_bytes, InputCursor, MmioManager, PeripheralStore};
use crate::vm::{Bus, FaultKind, LoadError, Machine, MemoryMap, StepOutcome, VmState, Width};

pub const DEFAULT_INSTR_BUDGET: u64 = 5_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecConfig {
    /// Peripheral Input Playback. Off means every MMIO read takes raw bytes.
    pub playback: bool,
    pub coverage: CoverageMode,
    pub irq_interval: u64,
    pub instr_budget: u64,
    /// Faults on stores to read-only flash and on fetches from RAM.
    pub permission_faults: bool,
    /// Ends the run when firmware jumps to itself.
    pub self_jump_exit: bool,
    pub map: MemoryMap,
    pub passthrough: Vec<u32>,
    pub map_size: usize,
}

impl Default for ExecConfig {
    fn default() -> Self {
        ExecConfig {
            playback: true,
            coverage: CoverageMode::Fec,
            irq_interval: DEFAULT_IRQ_INTERVAL,
            instr_budget: DEFAULT_INSTR_BUDGET,
            permission_faults: true,
            self_jump_exit: true,
            map: MemoryMap::default(),
            passthrough: Vec::new(),
            map_size: DEFAULT_MAP_SIZE,
        }
    }
}

/// Everything needed to resume execution at a block boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Snapshot {
    pub vm: VmState,
    pub peripheral_store: PeripheralStore,
    /// Input bytes the calibration run had consumed when the snapshot was taken.
    pub input_offset: usize,
    pub irq_state: IrqController,
}

impl Snapshot {
    pub fn pc(&self) -> u32 {
        self.vm.pc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CrashSite {
    pub kind: FaultKind,
    pub pc: u32,
    pub addr: u32,
    pub in_interrupt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecOutcome {
    InputExhausted,
    Crash(CrashSite),
    SelfJumpExit,
    /// Instruction budget spent, or the core slept with nothing to wake it.
    BudgetExceeded,
}

impl ExecOutcome {
    pub fn name(&self) -> &'static str {
        match self {
            ExecOutcome::InputExhausted => "input-exhausted",
            ExecOutcome::Crash(_) => "crash",
            ExecOutcome::SelfJumpExit => "self-jump",
            ExecOutcome::BudgetExceeded => "hang",
        }
    }
}

impl fmt::Display for ExecOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExecOutcome::Crash(c) => write!(
                f,
                "crash ({}) at pc {:#010x}, address {:#010x}{}",
                c.kind.name(),
                c.pc,
                c.addr,
                if c.in_interrupt { ", in interrupt" } else { "" }
            ),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecResult {
    pub outcome: ExecOutcome,
    pub blocks: u64,
    pub instructions: u64,
    pub bytes_consumed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Block {
        pc: u32,
        in_interrupt: bool,
    },
    Interrupt {
        vector: usize,
        handler: u32,
        return_pc: u32,
    },
    Sleep {
        pc: u32,
    },
    MmioRead {
        pc: u32,
        addr: u32,
        width: Width,
        value: u32,
    },
    MmioWrite {
        pc: u32,
        addr: u32,
        width: Width,
        value: u32,
    },
}

/// Read-only view of the executor at a block boundary, before interrupt
/// delivery or coverage recording.
pub struct BoundaryView<'a> {
    pub pc: u32,
    pub vm: &'a VmState,
    pub store: &'a PeripheralStore,
    pub irq: &'a IrqController,
    pub input_offset: usize,
}

pub trait Observer {
    fn boundary(&mut self, _view: &BoundaryView<'_>) {}
    fn event(&mut self, _event: TraceEvent) {}
}

impl Observer for () {}

impl Observer for Vec<TraceEvent> {
    fn event(&mut self, event: TraceEvent) {
        self.push(event);
    }
}

/// How interrupts are scheduled after each snapshot restore.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IrqTrigger {
    Periodic(u64),
    /// Fire once at the given boundary index of the run.
    OneShot(u64),
}

struct ExecBus<'a, 'b> {
    mmio: &'a mut MmioManager,
    irq: &'a mut IrqController,
    cursor: &'a mut InputCursor<'b>,
    irq_enable_addr: u32,
}

impl Bus for ExecBus<'_, '_> {
    #[inline]
    fn mmio_read(&mut self, addr: u32, width: Width) -> Option<u32> {
        if addr & !3 == self.irq_enable_addr {
            let shift = (addr & 3) * 8;
            return Some((self.irq.enable_mask >> shift) & width.mask());
        }
        self.mmio.read(self.cursor, addr, width).ok()
    }

    #[inline]
    fn mmio_write(&mut self, addr: u32, width: Width, value: u32) {
        if addr & !3 == self.irq_enable_addr {
            let mask = patch_bytes(self.irq.enable_mask, addr, width, value);
            self.irq.route_enable_write(mask);
        } else {
            self.mmio.write(addr, width, value);
        }
    }
}

/// Runs inputs against a firmware image from a set of snapshots, recording
/// edge coverage into a reusable map.
#[derive(Debug, Clone)]
pub struct Executor {
    cfg: ExecConfig,
    machine: Machine,
    mmio: MmioManager,
    irq: IrqController,
    ctx: CoverageContext,
    map: EdgeMap,
    snapshots: Vec<Snapshot>,
    trigger: IrqTrigger,
    /// One bit per flash word ever executed as a block start.
    blocks_seen: Vec<u64>,
    blocks_covered: usize,
}

impl Executor {
    pub fn new(image: &[u8], cfg: ExecConfig) -> Result<Executor, LoadError> {
        let mut machine = Machine::load_image(image, cfg.map)?;
        machine.set_permission_faults(cfg.permission_faults);
        let mmio = MmioManager::new(cfg.playback, cfg.passthrough.iter().copied());
        let irq = IrqController::new(cfg.irq_interval);
        let boot = Snapshot {
            vm: machine.state.clone(),
            peripheral_store: mmio.store.clone(),
            input_offset: 0,
            irq_state: irq,
        };
        let words = (cfg.map.flash_size as usize / 4).div_ceil(64);
        Ok(Executor {
            ctx: CoverageContext::new(cfg.coverage),
            map: EdgeMap::new(cfg.map_size),
            trigger: IrqTrigger::Periodic(cfg.irq_interval),
            snapshots: vec![boot],
            blocks_seen: vec![0; words],
            blocks_covered: 0,
            machine,
            mmio,
            irq,
            cfg,
        })
    }

    pub fn config(&self) -> &ExecConfig {
        &self.cfg
    }

    pub fn map(&self) -> &EdgeMap {
        &self.map
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    /// Replaces every snapshot after the boot state.
    pub fn set_snapshots(&mut self, extra: Vec<Snapshot>) {
        self.snapshots.truncate(1);
        self.snapshots.extend(extra);
    }

    pub fn set_trigger(&mut self, trigger: IrqTrigger) {
        self.trigger = trigger;
    }

    /// Distinct block start addresses executed since creation.
    pub fn blocks_covered(&self) -> usize {
        self.blocks_covered
    }

    pub fn block_seen(&self, pc: u32) -> bool {
        match self.block_bit(pc) {
            Some((w, b)) => self.blocks_seen[w] & b != 0,
            None => false,
        }
    }

    /// Sorted start addresses of every block executed so far.
    pub fn seen_blocks(&self) -> Vec<u32> {
        let base = self.cfg.map.flash_base;
        let mut out = Vec::new();
        for (w, &bits) in self.blocks_seen.iter().enumerate() {
            let mut bits = bits;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(base + ((w * 64 + b) * 4) as u32);
                bits &= bits - 1;
            }
        }
        out
    }

    #[inline]
    fn block_bit(&self, pc: u32) -> Option<(usize, u64)> {
        let off = pc.wrapping_sub(self.cfg.map.flash_base);
        if off >= self.cfg.map.flash_size || off & 3 != 0 {
            return None;
        }
        let word = (off / 4) as usize;
        Some((word / 64, 1 << (word % 64)))
    }

    pub fn execute(&mut self, input: &[u8], snapshot: usize) -> ExecResult {
        self.run(input, snapshot, &mut ())
    }

    pub fn execute_traced(
        &mut self,
        input: &[u8],
        snapshot: usize,
    ) -> (ExecResult, Vec<TraceEvent>) {
        let mut events = Vec::new();
        let r = self.run(input, snapshot, &mut events);
        (r, events)
    }

    fn restore(&mut self, id: usize) {
        let snap = &self.snapshots[id];
        self.machine.state.restore_from(&snap.vm);
        self.mmio.store.clone_from(&snap.peripheral_store);
        self.irq = snap.irq_state;
        self.irq.blocks_total = 0;
        match self.trigger {
            IrqTrigger::Periodic(n) => {
                self.irq.interval = n.max(1);
                self.irq.fire_at = None;
            }
            IrqTrigger::OneShot(at) => {
                self.irq.interval = u64::MAX;
                self.irq.fire_at = Some(at);
            }
        }
        self.ctx.reset();
        self.map.clear();
    }

    /// Executes `input` from snapshot `snapshot`, reporting to `obs`.
    pub fn run<O: Observer>(&mut self, input: &[u8], snapshot: usize, obs: &mut O) -> ExecResult {
        self.restore(snapshot);
        let mut cursor = InputCursor::new(input);
        let start_instr = self.machine.state.instr_count;
        let budget = self.cfg.instr_budget;
        let enable_addr = self.cfg.map.irq_enable_addr;
        let mut blocks = 0u64;

        let entry = self.machine.state.pc;
        self.boundary(entry, &mut blocks, cursor.offset(), obs);

        let outcome = loop {
            if self.machine.state.instr_count - start_instr >= budget {
                break ExecOutcome::BudgetExceeded;
            }
            let pc = self.machine.state.pc;
            let step = {
                let mut bus = ExecBus {
                    mmio: &mut self.mmio,
                    irq: &mut self.irq,
                    cursor: &mut cursor,
                    irq_enable_addr: enable_addr,
                };
                self.machine.step(&mut bus)
            };
            match step {
                StepOutcome::Continue => {}
                StepOutcome::BlockBoundary(next) => {
                    self.boundary(next, &mut blocks, cursor.offset(), obs)
                }
                StepOutcome::MmioRead { addr, width, value } => obs.event(TraceEvent::MmioRead {
                    pc,
                    addr,
                    width,
                    value,
                }),
                StepOutcome::MmioWrite { addr, width, value } => obs.event(TraceEvent::MmioWrite {
                    pc,
                    addr,
                    width,
                    value,
                }),
                StepOutcome::Sleep => {
                    obs.event(TraceEvent::Sleep { pc });
                    let in_int = self.machine.state.in_interrupt;
                    let woke = match self.irq.on_sleep(in_int) {
                        Some(v) => self.deliver(v, obs),
                        None => false,
                    };
                    if !woke {
                        break ExecOutcome::BudgetExceeded;
                    }
                    let handler = self.machine.state.pc;
                    self.record(handler, true, &mut blocks, obs);
                }
                StepOutcome::SelfJump => {
                    if self.cfg.self_jump_exit {
                        break ExecOutcome::SelfJumpExit;
                    }
                    self.boundary(pc, &mut blocks, cursor.offset(), obs);
                }
                StepOutcome::MemFault { addr, kind } => {
                    break ExecOutcome::Crash(CrashSite {
                        kind,
                        pc,
                        addr,
                        in_interrupt: self.machine.state.in_interrupt,
                    })
                }
                StepOutcome::InputExhausted { .. } => break ExecOutcome::InputExhausted,
            }
        };
        ExecResult {
            outcome,
            blocks,
            instructions: self.machine.state.instr_count - start_instr,
            bytes_consumed: cursor.offset(),
        }
    }

    #[inline]
    fn boundary<O: Observer>(&mut self, pc: u32, blocks: &mut u64, offset: usize, obs: &mut O) {
        obs.boundary(&BoundaryView {
            pc,
            vm: &self.machine.state,
            store: &self.mmio.store,
            irq: &self.irq,
            input_offset: offset,
        });
        let in_int = self.machine.state.in_interrupt;
        let fired = match self.irq.on_block(in_int) {
            Some(v) => self.deliver(v, obs),
            None => false,
        };
        if fired {
            let handler = self.machine.state.pc;
            self.record(handler, true, blocks, obs);
        } else {
            self.record(pc, in_int, blocks, obs);
        }
    }

    fn deliver<O: Observer>(&mut self, vector: usize, obs: &mut O) -> bool {
        let return_pc = self.machine.state.pc;
        if !self.machine.enter_interrupt(vector) {
            return false;
        }
        obs.event(TraceEvent::Interrupt {
            vector,
            handler: self.machine.state.pc,
            return_pc,
        });
        true
    }

    #[inline]
    fn record<O: Observer>(&mut self, pc: u32, in_interrupt: bool, blocks: &mut u64, obs: &mut O) {
        self.ctx.record_block(&mut self.map, pc, in_interrupt);
        *blocks += 1;
        if let Some((w, b)) = self.block_bit(pc) {
            if self.blocks_seen[w] & b == 0 {
                self.blocks_seen[w] |= b;
                self.blocks_covered += 1;
            }
        }
        obs.event(TraceEvent::Block { pc, in_interrupt });
    }

    /// Runs `seed` from the boot state and captures a snapshot the first
    /// time execution reaches each address in `targets`. Returns the number
    /// of targets reached. Unreached targets get no snapshot.
    pub fn calibrate_snapshots(&mut self, seed: &[u8], targets: &[u32]) -> usize {
        struct Capture<'t> {
            targets: &'t [u32],
            found: Vec<Option<Snapshot>>,
        }
        impl Observer for Capture<'_> {
            fn boundary(&mut self, view: &BoundaryView<'_>) {
                for (i, &t) in self.targets.iter().enumerate() {
                    if t == view.pc && self.found[i].is_none() {
                        let mut vm = view.vm.clone();
                        vm.pc = view.pc;
                        self.found[i] = Some(Snapshot {
                            vm,
                            peripheral_store: view.store.clone(),
                            input_offset: view.input_offset,
                            irq_state: *view.irq,
                        });
                    }
                }
            }
        }
        self.snapshots.truncate(1);
        let mut cap = Capture {
            targets,
            found: vec![None; targets.len()],
        };
        self.run(seed, 0, &mut cap);
        self.map.clear();
        let found: Vec<Snapshot> = cap.found.into_iter().flatten().collect();
        let n = found.len();
        self.snapshots.extend(found);
        n
    }
}
