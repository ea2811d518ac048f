use std::fmt;
use std::io::Write;

use mmiofuzz_core::engine::Campaign;

use crate::config::CampaignConfig;
use crate::error::CliError;

/// Technique sets compared by an ablation, introduced one at a time.
pub const ARMS: [(&str, bool, bool); 3] = [
    ("Baseline", false, false),
    ("+PIP", true, false),
    ("+PIP+FEC", true, true),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialResult {
    pub seed: u64,
    pub execs: u64,
    pub blocks: usize,
    pub queue_len: usize,
    pub crashes: usize,
    pub goal_reached_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArmSummary {
    pub name: &'static str,
    pub pip: bool,
    pub fec: bool,
    pub trials: Vec<TrialResult>,
    pub median_blocks: usize,
    pub median_queue: usize,
    pub goal_reached: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationReport {
    pub firmware: String,
    pub trials: usize,
    pub has_goal: bool,
    pub arms: Vec<ArmSummary>,
}

/// Middle element of an odd-length sample.
pub fn median(values: &[usize]) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[v.len() / 2]
}

impl AblationReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.name == name)
    }

    /// Percentage by which the +PIP+FEC median queue is shorter than the
    /// +PIP one.
    pub fn queue_reduction(&self) -> f64 {
        let (Some(pip), Some(fec)) = (self.arm("+PIP"), self.arm("+PIP+FEC")) else {
            return 0.0;
        };
        if pip.median_queue == 0 {
            return 0.0;
        }
        100.0 * (1.0 - fec.median_queue as f64 / pip.median_queue as f64)
    }

    pub fn blocks_non_decreasing(&self) -> bool {
        self.arms
            .windows(2)
            .all(|w| w[0].median_blocks <= w[1].median_blocks)
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "ablation on {} ({} trials per arm)",
            self.firmware, self.trials
        )?;
        writeln!(f)?;
        write!(
            f,
            "{:<10} {:>14} {:>13}",
            "arm", "median blocks", "median queue"
        )?;
        if self.has_goal {
            write!(f, " {:>12}", "reached goal")?;
        }
        writeln!(f)?;
        for a in &self.arms {
            write!(
                f,
                "{:<10} {:>14} {:>13}",
                a.name, a.median_blocks, a.median_queue
            )?;
            if self.has_goal {
                write!(
                    f,
                    " {:>12}",
                    format!("{}/{}", a.goal_reached, a.trials.len())
                )?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(
            f,
            "queue reduction +PIP -> +PIP+FEC: {:.1}%",
            self.queue_reduction()
        )?;
        writeln!(
            f,
            "medians only; {} trials per arm is too few for a meaningful significance test",
            self.trials
        )
    }
}

/// Runs every arm `trials` times, seeding trial `i` with `cfg.seed + i`.
/// Everything else, including the exec budget, is shared by all arms.
pub fn cmd_ablate(
    cfg: &CampaignConfig,
    trials: usize,
    log: &mut dyn Write,
) -> Result<AblationReport, CliError> {
    if trials < 3 || trials.is_multiple_of(2) {
        return Err(CliError::Config(format!(
            "trials must be odd and at least 3, got {trials}"
        )));
    }
    let fw = cfg.load_firmware()?;
    let mut arms = Vec::new();
    let mut has_goal = false;
    for (name, pip, fec) in ARMS {
        let arm_cfg = CampaignConfig {
            pip,
            fec,
            ..cfg.clone()
        };
        let mut results = Vec::new();
        for t in 0..trials {
            let mut fcfg = arm_cfg.fuzz_config(&fw)?;
            fcfg.seed = cfg.seed.wrapping_add(t as u64);
            has_goal |= fcfg.goal_pc.is_some();
            let seed = fcfg.seed;
            let mut c =
                Campaign::new(&fw.image, fcfg).map_err(|e| CliError::Campaign(e.to_string()))?;
            let st = c.run(|_| {});
            let r = TrialResult {
                seed,
                execs: st.execs,
                blocks: st.blocks_covered,
                queue_len: st.queue_len,
                crashes: st.crashes_unique,
                goal_reached_at: st.goal_reached_at,
            };
            let _ = writeln!(
                log,
                "{name:<10} trial {t}: blocks {} queue {} crashes {} goal {} ({:.1}s)",
                r.blocks,
                r.queue_len,
                r.crashes,
                r.goal_reached_at
                    .map_or_else(|| "-".to_string(), |n| n.to_string()),
                st.elapsed.as_secs_f64()
            );
            results.push(r);
        }
        let blocks: Vec<usize> = results.iter().map(|r| r.blocks).collect();
        let queues: Vec<usize> = results.iter().map(|r| r.queue_len).collect();
        arms.push(ArmSummary {
            name,
            pip,
            fec,
            median_blocks: median(&blocks),
            median_queue: median(&queues),
            goal_reached: results
                .iter()
                .filter(|r| r.goal_reached_at.is_some())
                .count(),
            trials: results,
        });
    }
    Ok(AblationReport {
        firmware: fw.name,
        trials,
        has_goal,
        arms,
    })
}
