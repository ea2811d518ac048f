use mmiofuzz_core::engine::{ExecOutcome, TraceEvent};
use mmiofuzz_core::mmio::encode_fresh;
use mmiofuzz_core::vm::Width;
use mmiofuzz_core::{
    assemble, corpus_entry, Campaign, ExecConfig, Executor, FaultKind, FuzzConfig, StatsClock,
};

/// Gets i2c_init through all 24 configuration writes. Status polls see the
/// byte transferred and every data register readback repeats the value the
/// firmware just wrote.
fn i2c_init_prefix() -> Vec<u8> {
    let mut v = Vec::new();
    v.extend(0xFFFF_FFFCu32.to_le_bytes()); // SR1: one fresh value, then repeats
    v.extend(0x84u32.to_le_bytes());
    v.extend(0xFFFF_FFFFu32.to_le_bytes()); // DR: repeats only
    v.extend(0xFFFF_FFFFu32.to_le_bytes()); // SR1, 17th poll
    v.extend(0xFFFF_FFFFu32.to_le_bytes()); // DR, 17th readback
    v
}

fn i2c_sensor_tail() -> Vec<u8> {
    encode_fresh(&[100, 2000, 40000, 7], Width::Half)
}

#[test]
fn playback_input_passes_i2c_init() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();
    let (r, events) = ex.execute_traced(&i2c_init_prefix(), 0);
    let post = fw.symbol("post_init").unwrap();
    assert!(events
        .iter()
        .any(|e| matches!(e, TraceEvent::Block { pc, .. } if *pc == post)));
    assert_eq!(r.outcome, ExecOutcome::InputExhausted);
    assert_eq!(r.bytes_consumed, 20);
}

#[test]
fn calibration_without_targets_keeps_only_boot() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();
    assert_eq!(ex.calibrate_snapshots(&i2c_init_prefix(), &[]), 0);
    assert_eq!(ex.snapshots().len(), 1);
}

#[test]
fn calibration_snapshots_only_reached_targets() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let post = fw.symbol("post_init").unwrap();
    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();

    assert_eq!(ex.calibrate_snapshots(&[0; 64], &[post]), 0);
    assert_eq!(ex.snapshots().len(), 1);

    assert_eq!(ex.calibrate_snapshots(&i2c_init_prefix(), &[post]), 1);
    let snaps = ex.snapshots();
    assert_eq!(snaps.len(), 2);
    assert_eq!(snaps[1].pc(), post);
    assert_eq!(snaps[1].input_offset, 20);
}

#[test]
fn snapshot_run_matches_the_tail_of_a_boot_run() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let post = fw.symbol("post_init").unwrap();
    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();
    ex.calibrate_snapshots(&i2c_init_prefix(), &[post]);

    let mut full = i2c_init_prefix();
    full.extend(i2c_sensor_tail());
    let (boot, boot_events) = ex.execute_traced(&full, 0);
    let boot_ram = ex.machine().state.ram.clone();
    let (snap, snap_events) = ex.execute_traced(&i2c_sensor_tail(), 1);

    assert_eq!(boot.outcome, snap.outcome);
    assert_eq!(boot.bytes_consumed, 20 + snap.bytes_consumed);
    assert_eq!(boot_ram, ex.machine().state.ram);
    let start = boot_events
        .iter()
        .position(|e| matches!(e, TraceEvent::Block { pc, .. } if *pc == post))
        .unwrap();
    assert_eq!(&boot_events[start..], &snap_events[..]);
}

fn short_campaign(seed: u64) -> FuzzConfig {
    FuzzConfig {
        seed,
        exec_budget: Some(20_000),
        stats_interval: 2_000,
        clock: StatsClock::Logical,
        seed_len: 64,
        max_input_len: 256,
        ..FuzzConfig::default()
    }
}

#[test]
fn campaigns_are_deterministic_per_seed() {
    let fw = corpus_entry("uart_poll").unwrap().firmware();
    let run = |seed| {
        let mut c = Campaign::new(&fw.image, short_campaign(seed)).unwrap();
        let st = c.run(|_| {});
        let inputs: Vec<Vec<u8>> = c.queue().iter().map(|e| e.input.clone()).collect();
        (st.rows, inputs)
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_ne!(a.1, run(2).1);
    assert_eq!(a.0.len(), 10);
    assert!(a
        .0
        .iter()
        .enumerate()
        .all(|(i, r)| r.unix_time == i as u64 + 1));
}

const TRAPDOOR: &str = "
        LI r1, 0x40000000
loop:   LOAD8 r0, [r1+0]
        MOVI r2, 0x41
        CMP r0, r2
        BNE loop
        LI r3, 0x30000000
        LOAD32 r4, [r3+0]
        JMP loop
";

#[test]
fn crashes_are_deduplicated_and_kept_out_of_the_queue() {
    let asm = assemble(TRAPDOOR).unwrap();
    let cfg = FuzzConfig {
        seeds: vec![vec![0; 16]],
        exec_budget: Some(5_000),
        ..short_campaign(3)
    };
    let mut c = Campaign::new(&asm.image, cfg).unwrap();
    let st = c.run(|_| {});
    assert_eq!(st.crashes_unique, 1);
    let report = c.triage().reports().next().unwrap();
    assert_eq!(report.key.kind, FaultKind::Unmapped);
    assert!(report.hits > 1);

    let mut ex = Executor::new(&asm.image, ExecConfig::default()).unwrap();
    assert!(matches!(
        ex.execute(&report.input, 0).outcome,
        ExecOutcome::Crash(_)
    ));
    for e in c.queue() {
        assert!(!matches!(
            ex.execute(&e.input, 0).outcome,
            ExecOutcome::Crash(_)
        ));
    }
}

#[test]
fn snapshot_inputs_replay_from_boot() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let post = fw.symbol("post_init").unwrap();
    let mut seed = i2c_init_prefix();
    seed.extend(i2c_sensor_tail());
    let cfg = FuzzConfig {
        seeds: vec![seed.clone()],
        snapshot_pcs: vec![post],
        exec_budget: Some(5_000),
        ..short_campaign(4)
    };
    let mut c = Campaign::new(&fw.image, cfg).unwrap();
    c.run(|_| {});
    assert_eq!(c.executor().snapshots().len(), 2);

    let mut ex = Executor::new(&fw.image, ExecConfig::default()).unwrap();
    ex.calibrate_snapshots(&seed, &[post]);
    let mut checked = 0;
    for e in c.queue().iter().filter(|e| e.snapshot_id == 1) {
        let from_snap = ex.execute(&e.input, 1);
        let snap_map = ex.map().sparse();
        let from_boot = ex.execute(&c.input_from_boot(1, &e.input), 0);
        assert_eq!(from_snap.outcome, from_boot.outcome);
        assert_eq!(from_boot.bytes_consumed, 20 + from_snap.bytes_consumed);
        // The boot run adds the init path on top of the snapshot run.
        assert!(snap_map.len() <= ex.map().sparse().len());
        checked += 1;
    }
    assert!(checked >= 2, "only {checked} snapshot entries");
}

#[test]
fn goal_can_stop_a_campaign() {
    let fw = corpus_entry("i2c_init").unwrap().firmware();
    let mut seed = i2c_init_prefix();
    seed.extend(i2c_sensor_tail());
    let cfg = FuzzConfig {
        seeds: vec![seed],
        goal_pc: fw.symbol("post_init"),
        stop_on_goal: true,
        ..short_campaign(5)
    };
    let mut c = Campaign::new(&fw.image, cfg).unwrap();
    let st = c.run(|_| {});
    assert_eq!(st.goal_reached_at, Some(0));
    assert!(st.execs <= 1);
}
