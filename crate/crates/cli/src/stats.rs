use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use mmiofuzz_core::engine::StatsRow;

use crate::error::CliError;
use crate::fuzz::{CRASH_DIR, QUEUE_DIR, STATS_FILE, SUMMARY_FILE};

/// Digest of a campaign directory written by `cmd_fuzz`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StatsReport {
    pub rows: Vec<StatsRow>,
    pub summary: BTreeMap<String, String>,
    pub queue_files: usize,
    pub crash_files: usize,
    /// Problems found while cross-checking the files.
    pub issues: Vec<String>,
}

fn parse_row(line: &str) -> Option<StatsRow> {
    let f: Vec<u64> = line
        .split(',')
        .map(|x| x.trim().parse().ok())
        .collect::<Option<_>>()?;
    if f.len() != 6 {
        return None;
    }
    Some(StatsRow {
        unix_time: f[0],
        execs: f[1],
        blocks_covered: f[2] as usize,
        edges_covered: f[3] as usize,
        queue_len: f[4] as usize,
        crashes_unique: f[5] as usize,
    })
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map_or(0, |d| d.flatten().count())
}

pub fn cmd_stats(dir: &Path) -> Result<StatsReport, CliError> {
    let stats_path = dir.join(STATS_FILE);
    let text = std::fs::read_to_string(&stats_path).map_err(|e| CliError::io(&stats_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(StatsRow::HEADER) {
        return Err(CliError::Campaign(format!(
            "{} does not start with the stats header",
            stats_path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = parse_row(line).ok_or_else(|| {
            CliError::Campaign(format!("{} row {}: malformed", stats_path.display(), i + 1))
        })?;
        rows.push(row);
    }

    let summary_path = dir.join(SUMMARY_FILE);
    let summary: BTreeMap<String, String> = std::fs::read_to_string(&summary_path)
        .map_err(|e| CliError::io(&summary_path, e))?
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect();

    let mut issues = Vec::new();
    if rows.windows(2).any(|w| w[1].execs <= w[0].execs) {
        issues.push("execs column is not strictly increasing".to_string());
    }
    if let Some(last) = rows.last() {
        let checks = [
            ("execs", last.execs.to_string()),
            ("blocks_covered", last.blocks_covered.to_string()),
            ("edges_covered", last.edges_covered.to_string()),
            ("queue_len", last.queue_len.to_string()),
            ("crashes_unique", last.crashes_unique.to_string()),
        ];
        for (key, want) in checks {
            if summary.get(key) != Some(&want) {
                issues.push(format!(
                    "final row {key} = {want} disagrees with the summary"
                ));
            }
        }
    } else {
        issues.push("no stats rows".to_string());
    }
    Ok(StatsReport {
        rows,
        summary,
        queue_files: count_files(&dir.join(QUEUE_DIR)),
        crash_files: count_files(&dir.join(CRASH_DIR)),
        issues,
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let get = |k: &str| self.summary.get(k).map_or("?", String::as_str);
        writeln!(f, "firmware        {}", get("firmware"))?;
        writeln!(f, "techniques      pip={} fec={}", get("pip"), get("fec"))?;
        writeln!(f, "execs           {}", get("execs"))?;
        writeln!(f, "blocks covered  {}", get("blocks_covered"))?;
        writeln!(f, "edges covered   {}", get("edges_covered"))?;
        writeln!(
            f,
            "queue           {} ({} files)",
            get("queue_len"),
            self.queue_files
        )?;
        writeln!(
            f,
            "unique crashes  {} ({} files)",
            get("crashes_unique"),
            self.crash_files
        )?;
        writeln!(f, "hangs           {}", get("hangs"))?;
        writeln!(f, "goal reached at {}", get("goal_reached_at"))?;
        writeln!(f, "stats rows      {}", self.rows.len())?;
        if let Some(secs) = self
            .summary
            .get("elapsed_secs")
            .and_then(|s| s.parse::<f64>().ok())
        {
            if let (Some(last), true) = (self.rows.last(), secs > 0.0) {
                writeln!(f, "execs/sec       {:.0}", last.execs as f64 / secs)?;
            }
        }
        for issue in &self.issues {
            writeln!(f, "warning: {issue}")?;
        }
        Ok(())
    }
}
