//! Subcommand implementations for the `mmiofuzz` binary.
//!
//! Each `cmd_*` function does the work of one subcommand and returns a
//! value the tests can inspect. Human-readable output goes to the writer
//! passed in.

pub mod ablate;
pub mod config;
pub mod error;
pub mod fuzz;
pub mod stats;

use std::io::Write;
use std::path::{Path, PathBuf};

use mmiofuzz_core::engine::{ExecResult, Executor, TraceEvent};
use mmiofuzz_core::firmware::{assemble, corpus_entry, parse_symbol_file, CORPUS_NAMES};
use mmiofuzz_core::{ExecConfig, Firmware};

pub use ablate::{cmd_ablate, AblationReport, ArmSummary};
pub use config::{CampaignConfig, Location, OUTPUT_DIR_ENV};
pub use error::{CliError, EXIT_CAMPAIGN, EXIT_CONFIG};
pub use fuzz::{cmd_fuzz, FuzzSummary};
pub use stats::{cmd_stats, StatsReport};

const CORPUS_PREFIX: &str = "corpus:";

/// Loads firmware named by `location`: `corpus:<name>`, a `.s` source file, or
/// a raw image with an optional `.sym` file next to it.
pub fn load_firmware(location: &str, base_dir: &Path) -> Result<Firmware, CliError> {
    if let Some(name) = location.strip_prefix(CORPUS_PREFIX) {
        return corpus_entry(name).map(|e| e.firmware()).ok_or_else(|| {
            CliError::Firmware(format!(
                "no corpus firmware `{name}` (have: {})",
                CORPUS_NAMES.join(", ")
            ))
        });
    }
    let path = base_dir.join(location);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| location.to_string());
    let bytes = std::fs::read(&path)
        .map_err(|e| CliError::Firmware(format!("cannot read {}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "s") {
        let source = String::from_utf8(bytes)
            .map_err(|_| CliError::Firmware(format!("{} is not UTF-8", path.display())))?;
        return Firmware::from_source(&name, &source)
            .map_err(|e| CliError::Firmware(format!("{}: {e}", path.display())));
    }
    let sym_path = path.with_extension("sym");
    let symbols = match std::fs::read_to_string(&sym_path) {
        Ok(text) => parse_symbol_file(&text)
            .map_err(|e| CliError::Firmware(format!("{}: {e}", sym_path.display())))?,
        Err(_) => Default::default(),
    };
    Ok(Firmware {
        name,
        image: bytes,
        symbols,
    })
}

/// Paths written by [`cmd_assemble`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssembleOutput {
    pub image: PathBuf,
    pub symbols: PathBuf,
    pub image_len: usize,
}

/// Assembles `src` into `out` and writes the symbol table beside it.
pub fn cmd_assemble(src: &Path, out: &Path) -> Result<AssembleOutput, CliError> {
    let source = std::fs::read_to_string(src).map_err(|e| CliError::io(src, e))?;
    let asm =
        assemble(&source).map_err(|e| CliError::Firmware(format!("{}: {e}", src.display())))?;
    let sym_path = out.with_extension("sym");
    std::fs::write(out, &asm.image).map_err(|e| CliError::io(out, e))?;
    std::fs::write(&sym_path, asm.symbol_file()).map_err(|e| CliError::io(&sym_path, e))?;
    Ok(AssembleOutput {
        image: out.to_path_buf(),
        symbols: sym_path,
        image_len: asm.image.len(),
    })
}

fn symbol_at(fw: &Firmware, pc: u32) -> Option<&str> {
    fw.symbols
        .iter()
        .find(|&(_, &a)| a == pc)
        .map(|(k, _)| k.as_str())
}

fn write_event(out: &mut dyn Write, fw: &Firmware, ev: &TraceEvent) -> std::io::Result<()> {
    match *ev {
        TraceEvent::Block { pc, in_interrupt } => {
            let ctx = if in_interrupt { "irq " } else { "" };
            match symbol_at(fw, pc) {
                Some(s) => writeln!(out, "block {ctx}{pc:#010x} <{s}>"),
                None => writeln!(out, "block {ctx}{pc:#010x}"),
            }
        }
        TraceEvent::Interrupt {
            vector,
            handler,
            return_pc,
        } => writeln!(
            out,
            "interrupt vector {vector} handler {handler:#010x} return {return_pc:#010x}"
        ),
        TraceEvent::Sleep { pc } => writeln!(out, "sleep {pc:#010x}"),
        TraceEvent::MmioRead {
            pc,
            addr,
            width,
            value,
        } => writeln!(
            out,
            "  read{} {addr:#010x} -> {value:#x} (pc {pc:#010x})",
            width.bytes() * 8
        ),
        TraceEvent::MmioWrite {
            pc,
            addr,
            width,
            value,
        } => writeln!(
            out,
            "  write{} {addr:#010x} <- {value:#x} (pc {pc:#010x})",
            width.bytes() * 8
        ),
    }
}

/// Runs one input from boot, optionally printing the block trace.
pub fn cmd_run(
    fw: &Firmware,
    input: &[u8],
    exec: ExecConfig,
    trace: bool,
    out: &mut dyn Write,
) -> Result<ExecResult, CliError> {
    let mut ex = Executor::new(&fw.image, exec).map_err(|e| CliError::Firmware(e.to_string()))?;
    let io_err = |e| CliError::io("<output>", e);
    let result = if trace {
        let (r, events) = ex.execute_traced(input, 0);
        for ev in &events {
            write_event(out, fw, ev).map_err(io_err)?;
        }
        r
    } else {
        ex.execute(input, 0)
    };
    writeln!(
        out,
        "result: {} blocks={} instructions={} consumed={}/{}",
        result.outcome,
        result.blocks,
        result.instructions,
        result.bytes_consumed,
        input.len()
    )
    .map_err(io_err)?;
    Ok(result)
}
