use std::path::Path;
use std::process::{Command, Output};

use mmiofuzz_cli::{cmd_stats, OUTPUT_DIR_ENV};

fn mmiofuzz(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmiofuzz"))
        .args(args)
        .current_dir(cwd)
        .env_remove(OUTPUT_DIR_ENV)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = "
        .equ DEV, 0x40000000
reset:  LI r1, DEV
post_init:
loop:   LOAD8 r0, [r1+0]
        MOVI r2, 0x51
        CMP r0, r2
        BNE loop
        JMP .
";

#[test]
fn assemble_then_run_an_image() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.s"), TINY).unwrap();
    let o = mmiofuzz(&["assemble", "tiny.s", "-o", "tiny.bin"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(dir.path().join("tiny.bin").exists());
    let sym = std::fs::read_to_string(dir.path().join("tiny.sym")).unwrap();
    assert!(sym.contains("post_init"));

    // A control word asking for a fresh value, then 'Q'.
    std::fs::write(dir.path().join("in.bin"), [0, 0, 0, 0, 0x51]).unwrap();
    let o = mmiofuzz(&["run", "tiny.bin", "in.bin", "--trace"], dir.path());
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    assert!(out.contains("<reset>"), "{out}");
    assert!(out.contains("read8 0x40000000 -> 0x51"), "{out}");
    assert!(out.contains("result: self-jump"), "{out}");
}

#[test]
fn run_accepts_corpus_names() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.bin"), []).unwrap();
    let o = mmiofuzz(&["run", "corpus:uart_poll", "empty.bin"], dir.path());
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("result: input-exhausted"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mmiofuzz(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(mmiofuzz(&["run"], dir.path()).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        mmiofuzz(&["fuzz", "missing.conf"], p).status.code(),
        Some(3)
    );

    std::fs::write(
        p.join("bad.conf"),
        "firmware = corpus:uart_poll\nbogus = 1\n",
    )
    .unwrap();
    let o = mmiofuzz(&["fuzz", "bad.conf"], p);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    std::fs::write(p.join("nofw.conf"), "firmware = corpus:nothing\n").unwrap();
    assert_eq!(mmiofuzz(&["fuzz", "nofw.conf"], p).status.code(), Some(3));

    std::fs::write(p.join("ok.conf"), "firmware = corpus:uart_poll\n").unwrap();
    let o = mmiofuzz(&["ablate", "ok.conf", "--trials", "4"], p);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn runtime_errors_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = mmiofuzz(&["stats", "no-such-dir"], dir.path());
    assert_eq!(o.status.code(), Some(4));
    let o = mmiofuzz(&["run", "corpus:uart_poll", "no-such-input"], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fuzz_writes_a_campaign_directory_that_stats_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("c.conf"),
        "firmware = corpus:overflow_bug\nexec_budget = 30000\nstats_interval = 5000\noutput_dir = out\n",
    )
    .unwrap();
    let o = mmiofuzz(&["fuzz", "c.conf"], p);
    assert!(o.status.success(), "{o:?}");
    let out = p.join("out");
    for f in ["stats.csv", "summary.txt", "coverage.txt", "config.txt"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let report = cmd_stats(&out).unwrap();
    assert!(report.issues.is_empty(), "{:?}", report.issues);
    let last = *report.rows.last().unwrap();
    assert!(report.rows.len() >= 6);
    // A novel input costs a second, confirming run, which may overshoot by one.
    assert!((30_000..=30_001).contains(&last.execs));
    assert_eq!(report.queue_files, last.queue_len);

    // Every input the fuzzer queued replays from boot without crashing.
    // Seeds are queued whatever they do.
    for entry in std::fs::read_dir(out.join("queue")).unwrap() {
        let path = entry.unwrap().path();
        if path.to_string_lossy().contains("-seed-") {
            continue;
        }
        let o = mmiofuzz(&["run", "corpus:overflow_bug", path.to_str().unwrap()], p);
        assert!(o.status.success());
        assert!(!stdout(&o).contains("result: crash"), "{}", path.display());
    }

    let o = mmiofuzz(&["stats", "out"], p);
    assert!(o.status.success());
    assert!(stdout(&o).contains(&format!("execs           {}", last.execs)));
}

#[test]
fn output_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(
        p.join("c.conf"),
        "firmware = corpus:sleepy\nexec_budget = 2000\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_mmiofuzz"))
        .args(["fuzz", "c.conf"])
        .current_dir(p)
        .env(OUTPUT_DIR_ENV, p.join("elsewhere"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(p.join("elsewhere/stats.csv").exists());
    assert!(!p.join("mmiofuzz-out").exists());
}
