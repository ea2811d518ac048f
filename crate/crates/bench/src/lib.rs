//! Shared workloads for the throughput benchmarks.

use mmiofuzz_core::coverage::CoverageMode;
use mmiofuzz_core::engine::{ExecConfig, Executor};
use mmiofuzz_core::firmware::corpus_entry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An executor for a corpus firmware with the given playback and coverage
/// settings.
pub fn corpus_executor(name: &str, playback: bool, coverage: CoverageMode) -> Executor {
    let fw = corpus_entry(name)
        .unwrap_or_else(|| panic!("no corpus firmware named {name}"))
        .firmware();
    let cfg = ExecConfig {
        playback,
        coverage,
        ..ExecConfig::default()
    };
    Executor::new(&fw.image, cfg).expect("corpus image loads")
}

/// Reproducible random input bytes.
pub fn noise(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random()).collect()
}
