use std::collections::{BTreeMap, BTreeSet};

use mmiofuzz_core::coverage::{edge_index, CoverageContext, INT_ENTRY_BLOCK, START_BLOCK};
use mmiofuzz_core::engine::{IrqTrigger, TraceEvent};
use mmiofuzz_core::mmio::encode_fresh;
use mmiofuzz_core::vm::Width;
use mmiofuzz_core::{
    assemble, corpus_entry, CoverageMode, EdgeMap, ExecConfig, Executor, IrqController,
};

fn samples(n: u32) -> Vec<u8> {
    let values: Vec<u32> = (0..n).map(|i| (i * 37 + 5) & 0x7F).collect();
    encode_fresh(&values, Width::Word)
}

/// Boundary index at which each interrupt was taken.
fn interrupt_positions(events: &[TraceEvent]) -> Vec<(u64, usize)> {
    let mut blocks = 0u64;
    let mut out = Vec::new();
    for e in events {
        match e {
            TraceEvent::Block { .. } => blocks += 1,
            TraceEvent::Interrupt { vector, .. } => out.push((blocks, *vector)),
            _ => {}
        }
    }
    out
}

#[test]
fn periodic_interrupts_fire_every_interval_boundaries() {
    let fw = corpus_entry("irq_counter").unwrap().firmware();
    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();
    let (r, events) = ex.execute_traced(&samples(400), 0);
    assert!(r.blocks > 3000, "only {} blocks", r.blocks);
    let got = interrupt_positions(&events);
    let want: Vec<(u64, usize)> = (1..=r.blocks / 1000).map(|k| (k * 1000 - 1, 1)).collect();
    assert_eq!(got, want);
}

#[test]
fn interval_is_configurable() {
    let fw = corpus_entry("irq_counter").unwrap().firmware();
    let cfg = ExecConfig {
        irq_interval: 47,
        ..ExecConfig::default()
    };
    let mut ex = Executor::new(&fw.image, cfg).unwrap();
    let (r, events) = ex.execute_traced(&samples(40), 0);
    let got: Vec<u64> = interrupt_positions(&events).iter().map(|p| p.0).collect();
    let want: Vec<u64> = (1..=r.blocks / 47).map(|k| k * 47 - 1).collect();
    assert_eq!(got, want);
}

const THREE_VECTORS: &str = "
        .vector 1, isr
        .vector 2, isr
        .vector 3, isr
        LI r2, 0x4FFF0000
        MOVI r0, 0xF
        STORE32 r0, [r2+0]
        LI r1, 0x40000000
loop:   LOAD8 r0, [r1+0]
        JMP loop
isr:    IRET
";

#[test]
fn enabled_vectors_are_served_round_robin() {
    let asm = assemble(THREE_VECTORS).unwrap();
    let cfg = ExecConfig {
        irq_interval: 10,
        playback: false,
        ..ExecConfig::default()
    };
    let mut ex = Executor::new(&asm.image, cfg).unwrap();
    let (_, events) = ex.execute_traced(&[0; 300], 0);
    let vectors: Vec<usize> = interrupt_positions(&events).iter().map(|p| p.1).collect();
    assert!(vectors.len() >= 30);
    // Vector 0 is enabled too but never taken.
    for (i, v) in vectors.iter().enumerate() {
        assert_eq!(*v, 1 + i % 3);
    }
    let mut counts = BTreeMap::new();
    for v in &vectors {
        *counts.entry(*v).or_insert(0usize) += 1;
    }
    let (lo, hi) = (
        counts.values().min().unwrap(),
        counts.values().max().unwrap(),
    );
    assert!(hi - lo <= 1);
}

#[test]
fn controller_never_fires_inside_a_handler() {
    let mut irq = IrqController::new(3);
    irq.route_enable_write(0b10);
    assert_eq!(irq.on_block(false), None);
    assert_eq!(irq.on_block(false), None);
    assert_eq!(irq.on_block(true), None);
    assert_eq!(irq.on_block(true), None);
    // Overdue, so it fires at the first boundary back in thread mode.
    assert_eq!(irq.on_block(false), Some(1));
    assert_eq!(irq.blocks_since_irq, 0);
}

#[test]
fn vector_zero_alone_never_fires() {
    let mut irq = IrqController::new(1);
    irq.route_enable_write(1);
    for _ in 0..100 {
        assert_eq!(irq.on_block(false), None);
    }
    assert_eq!(irq.on_sleep(false), None);
}

#[test]
fn one_shot_fires_exactly_once() {
    let mut irq = IrqController::one_shot(5);
    irq.route_enable_write(0b100);
    let fired: Vec<u64> = (0..50u64)
        .filter(|_| irq.on_block(false).is_some())
        .collect();
    assert_eq!(fired, vec![5]);
}

fn maps_over_every_trigger(mode: CoverageMode) -> BTreeSet<Vec<(u32, u8)>> {
    let fw = corpus_entry("irq_counter_neutral").unwrap().firmware();
    let cfg = ExecConfig {
        coverage: mode,
        ..ExecConfig::default()
    };
    let mut ex = Executor::new(&fw.image, cfg).unwrap();
    let input = samples(12);
    ex.set_trigger(IrqTrigger::OneShot(u64::MAX));
    let quiet = ex.execute(&input, 0);

    let mut maps = BTreeSet::new();
    // Index 0 is the reset block, before any vector is enabled.
    for k in 1..quiet.blocks {
        ex.set_trigger(IrqTrigger::OneShot(k));
        let (_, events) = ex.execute_traced(&input, 0);
        assert_eq!(interrupt_positions(&events).len(), 1, "trigger {k}");
        maps.insert(ex.map().sparse());
    }
    maps
}

#[test]
fn fec_map_ignores_when_a_neutral_interrupt_lands() {
    let fec = maps_over_every_trigger(CoverageMode::Fec);
    assert_eq!(fec.len(), 1);
}

#[test]
fn baseline_map_depends_on_when_an_interrupt_lands() {
    let baseline = maps_over_every_trigger(CoverageMode::Baseline);
    assert!(baseline.len() >= 3, "only {} distinct maps", baseline.len());
}

fn hits(map: &EdgeMap, from: u32, to: u32) -> u8 {
    map.count(edge_index(from, to) as usize % map.len())
}

fn record_trace(mode: CoverageMode) -> EdgeMap {
    let (a, b, c) = (0x100, 0x110, 0x120);
    let (h1, h2) = (0x400, 0x410);
    let mut map = EdgeMap::new(1 << 16);
    let mut ctx = CoverageContext::new(mode);
    for (pc, int) in [(a, false), (b, false), (h1, true), (h2, true), (c, false)] {
        ctx.record_block(&mut map, pc, int);
    }
    map
}

#[test]
fn fec_keeps_program_and_handler_edges_apart() {
    let map = record_trace(CoverageMode::Fec);
    assert_eq!(hits(&map, START_BLOCK, 0x100), 1);
    assert_eq!(hits(&map, 0x100, 0x110), 1);
    assert_eq!(hits(&map, 0x110, 0x120), 1);
    assert_eq!(hits(&map, INT_ENTRY_BLOCK, 0x400), 1);
    assert_eq!(hits(&map, 0x400, 0x410), 1);
    // Neither the preemption nor the return is an edge.
    assert_eq!(hits(&map, 0x110, 0x400), 0);
    assert_eq!(hits(&map, 0x410, 0x120), 0);
    assert_eq!(map.total_hits(), 5);
}

#[test]
fn baseline_records_the_interleaving() {
    let map = record_trace(CoverageMode::Baseline);
    assert_eq!(hits(&map, 0x110, 0x400), 1);
    assert_eq!(hits(&map, 0x410, 0x120), 1);
    assert_eq!(hits(&map, 0x110, 0x120), 0);
    assert_eq!(map.total_hits(), 5);
}
