use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mmiofuzz_core::engine::{Campaign, CampaignStats, CrashReport, StatsRow};
use mmiofuzz_core::Firmware;

use crate::config::CampaignConfig;
use crate::error::CliError;

pub const STATS_FILE: &str = "stats.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const COVERAGE_FILE: &str = "coverage.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const QUEUE_DIR: &str = "queue";
pub const CRASH_DIR: &str = "crashes";

/// What a finished campaign left behind.
#[derive(Debug, Clone)]
pub struct FuzzSummary {
    pub out_dir: PathBuf,
    pub stats: CampaignStats,
    /// Reproducer path for each unique crash, replayable from boot.
    pub crashes: Vec<(PathBuf, CrashReport)>,
}

fn write_file(path: &Path, data: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, data).map_err(|e| CliError::io(path, e))
}

fn fresh_dir(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(|e| CliError::io(path, e))?;
    }
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Runs a campaign and writes stats, queue, crashes and a summary into the
/// output directory. Progress rows go to `log`.
pub fn cmd_fuzz(cfg: &CampaignConfig, log: &mut dyn Write) -> Result<FuzzSummary, CliError> {
    let fw = cfg.load_firmware()?;
    let fcfg = cfg.fuzz_config(&fw)?;
    let out_dir = cfg.resolved_output_dir();
    fs::create_dir_all(&out_dir).map_err(|e| CliError::io(&out_dir, e))?;
    let queue_dir = out_dir.join(QUEUE_DIR);
    let crash_dir = out_dir.join(CRASH_DIR);
    fresh_dir(&queue_dir)?;
    fresh_dir(&crash_dir)?;
    write_file(&out_dir.join(CONFIG_FILE), cfg.to_text())?;

    let stats_path = out_dir.join(STATS_FILE);
    let file = fs::File::create(&stats_path).map_err(|e| CliError::io(&stats_path, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{}", StatsRow::HEADER).map_err(|e| CliError::io(&stats_path, e))?;

    let mut campaign =
        Campaign::new(&fw.image, fcfg).map_err(|e| CliError::Campaign(e.to_string()))?;
    let mut write_err = None;
    let stats = campaign.run(|row| {
        if write_err.is_none() {
            if let Err(e) = writeln!(csv, "{}", row.csv()) {
                write_err = Some(e);
            }
        }
        let _ = writeln!(
            log,
            "execs {:>10}  blocks {:>4}  edges {:>5}  queue {:>5}  crashes {:>3}",
            row.execs, row.blocks_covered, row.edges_covered, row.queue_len, row.crashes_unique
        );
    });
    if let Some(e) = write_err {
        return Err(CliError::io(&stats_path, e));
    }
    csv.flush().map_err(|e| CliError::io(&stats_path, e))?;

    for (i, e) in campaign.queue().iter().enumerate() {
        let name = format!(
            "{i:06}-snap{}-{}-{}.bin",
            e.snapshot_id,
            e.reason.name(),
            e.found_at
        );
        write_file(
            &queue_dir.join(name),
            campaign.input_from_boot(e.snapshot_id, &e.input),
        )?;
    }
    let mut crashes = Vec::new();
    for r in campaign.triage().reports() {
        let path = crash_dir.join(r.file_name());
        write_file(&path, campaign.input_from_boot(r.snapshot_id, &r.input))?;
        crashes.push((path, r.clone()));
    }
    write_file(
        &out_dir.join(COVERAGE_FILE),
        coverage_listing(&fw, &campaign),
    )?;
    write_file(&out_dir.join(SUMMARY_FILE), summary_text(cfg, &fw, &stats))?;
    Ok(FuzzSummary {
        out_dir,
        stats,
        crashes,
    })
}

fn coverage_listing(fw: &Firmware, c: &Campaign) -> String {
    let mut s = String::new();
    for pc in c.executor().seen_blocks() {
        let names: Vec<&str> = fw
            .symbols
            .iter()
            .filter(|&(_, &a)| a == pc)
            .map(|(k, _)| k.as_str())
            .collect();
        let _ = writeln!(s, "{pc:#010x} {}", names.join(" "));
    }
    s
}

fn summary_text(cfg: &CampaignConfig, fw: &Firmware, st: &CampaignStats) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "firmware = {}", fw.name);
    let _ = writeln!(s, "pip = {}", cfg.pip);
    let _ = writeln!(s, "fec = {}", cfg.fec);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "execs = {}", st.execs);
    let _ = writeln!(s, "blocks_covered = {}", st.blocks_covered);
    let _ = writeln!(s, "edges_covered = {}", st.edges_covered);
    let _ = writeln!(s, "queue_len = {}", st.queue_len);
    let _ = writeln!(s, "crashes_unique = {}", st.crashes_unique);
    let _ = writeln!(s, "hangs = {}", st.hangs);
    let _ = writeln!(s, "unstable = {}", st.unstable);
    match st.goal_reached_at {
        Some(n) => {
            let _ = writeln!(s, "goal_reached_at = {n}");
        }
        None => {
            let _ = writeln!(s, "goal_reached_at = never");
        }
    }
    let _ = writeln!(s, "elapsed_secs = {:.3}", st.elapsed.as_secs_f64());
    s
}
