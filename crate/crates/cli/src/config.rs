use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use mmiofuzz_core::coverage::CoverageMode;
use mmiofuzz_core::engine::campaign::{
    DEFAULT_EXEC_BUDGET, DEFAULT_MAX_INPUT_LEN, DEFAULT_SEED_LEN, DEFAULT_STATS_INTERVAL,
};
use mmiofuzz_core::engine::executor::DEFAULT_INSTR_BUDGET;
use mmiofuzz_core::engine::{ExecConfig, FuzzConfig, StatsClock};
use mmiofuzz_core::irq::DEFAULT_IRQ_INTERVAL;
use mmiofuzz_core::vm::{MemoryMap, DEFAULT_IRQ_ENABLE_ADDR};
use mmiofuzz_core::Firmware;

use crate::error::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MMIOFUZZ_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "mmiofuzz-out";
pub const DEFAULT_GOAL: &str = "post_init";

/// A block address given either numerically or as a symbol name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Addr(u32),
    Symbol(String),
}

impl Location {
    fn parse(s: &str) -> Location {
        match parse_u64(s) {
            Some(v) if v <= u32::MAX as u64 => Location::Addr(v as u32),
            _ => Location::Symbol(s.to_string()),
        }
    }

    pub fn resolve(&self, fw: &Firmware) -> Result<u32, CliError> {
        match self {
            Location::Addr(a) => Ok(*a),
            Location::Symbol(s) => fw
                .symbol(s)
                .ok_or_else(|| CliError::Config(format!("symbol `{s}` not found in firmware"))),
        }
    }
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Addr(a) => write!(f, "{a:#x}"),
            Location::Symbol(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignConfig {
    /// Path to a `.s` source or binary image, or `corpus:<name>`.
    pub firmware: String,
    pub pip: bool,
    pub fec: bool,
    pub irq_interval: u64,
    pub irq_enable_addr: u32,
    pub instr_budget: u64,
    pub exec_budget: Option<u64>,
    pub time_budget: Option<u64>,
    pub snapshot_pcs: Vec<Location>,
    pub passthrough: Vec<u32>,
    pub seed: u64,
    pub disable_cond3: bool,
    pub disable_cond4: bool,
    pub flash_writable: bool,
    pub stats_interval: u64,
    pub seed_len: usize,
    pub max_input_len: usize,
    pub deterministic: bool,
    pub clock: StatsClock,
    /// `None` uses `post_init` when the firmware defines it.
    pub goal: Option<Location>,
    pub stop_on_goal: bool,
    pub output_dir: Option<PathBuf>,
    /// Directory relative firmware paths are resolved against.
    pub base_dir: PathBuf,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        CampaignConfig {
            firmware: String::new(),
            pip: true,
            fec: true,
            irq_interval: DEFAULT_IRQ_INTERVAL,
            irq_enable_addr: DEFAULT_IRQ_ENABLE_ADDR,
            instr_budget: DEFAULT_INSTR_BUDGET,
            exec_budget: None,
            time_budget: None,
            snapshot_pcs: Vec::new(),
            passthrough: Vec::new(),
            seed: 0,
            disable_cond3: false,
            disable_cond4: false,
            flash_writable: false,
            stats_interval: DEFAULT_STATS_INTERVAL,
            seed_len: DEFAULT_SEED_LEN,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            deterministic: true,
            clock: StatsClock::Wall,
            goal: None,
            stop_on_goal: false,
            output_dir: None,
            base_dir: PathBuf::from("."),
        }
    }
}

fn parse_u64(s: &str) -> Option<u64> {
    let s = s.replace('_', "");
    if let Some(h) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        u64::from_str_radix(h, 16).ok()
    } else {
        s.parse().ok()
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

fn list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty())
}

fn onoff(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

impl CampaignConfig {
    /// Parses `key = value` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<CampaignConfig, CliError> {
        let mut cfg = CampaignConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let bad = |msg: String| CliError::ConfigLine { line: lineno, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || parse_u64(value).ok_or_else(|| bad(format!("`{value}` is not a number")));
            let addr = || {
                num().and_then(|v| {
                    u32::try_from(v).map_err(|_| bad(format!("`{value}` is not a 32-bit address")))
                })
            };
            let flag = || parse_bool(value).ok_or_else(|| bad(format!("`{value}` is not on/off")));
            match key {
                "firmware" => cfg.firmware = value.to_string(),
                "pip" => cfg.pip = flag()?,
                "fec" => cfg.fec = flag()?,
                "irq_interval" => cfg.irq_interval = num()?.max(1),
                "irq_enable_addr" => cfg.irq_enable_addr = addr()?,
                "instr_budget" => cfg.instr_budget = num()?,
                "exec_budget" => cfg.exec_budget = Some(num()?),
                "time_budget" => cfg.time_budget = Some(num()?),
                "snapshot_pcs" => cfg.snapshot_pcs = list(value).map(Location::parse).collect(),
                "passthrough" => {
                    cfg.passthrough = list(value)
                        .map(|v| {
                            parse_u64(v)
                                .and_then(|n| u32::try_from(n).ok())
                                .ok_or_else(|| bad(format!("`{v}` is not a 32-bit address")))
                        })
                        .collect::<Result<_, _>>()?
                }
                "seed" => cfg.seed = num()?,
                "disable_cond3" => cfg.disable_cond3 = flag()?,
                "disable_cond4" => cfg.disable_cond4 = flag()?,
                "flash_writable" => cfg.flash_writable = flag()?,
                "stats_interval" => cfg.stats_interval = num()?.max(1),
                "seed_len" => cfg.seed_len = num()? as usize,
                "max_input_len" => cfg.max_input_len = num()? as usize,
                "deterministic" => cfg.deterministic = flag()?,
                "clock" => {
                    cfg.clock = match value {
                        "wall" => StatsClock::Wall,
                        "logical" => StatsClock::Logical,
                        _ => {
                            return Err(bad(format!(
                                "clock must be wall or logical, not `{value}`"
                            )))
                        }
                    }
                }
                "goal" => cfg.goal = Some(Location::parse(value)),
                "stop_on_goal" => cfg.stop_on_goal = flag()?,
                "output_dir" => cfg.output_dir = Some(PathBuf::from(value)),
                _ => return Err(bad(format!("unknown key `{key}`"))),
            }
        }
        if cfg.firmware.is_empty() {
            return Err(CliError::Config("`firmware` is required".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<CampaignConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Renders the configuration in the file format; parsing the result
    /// gives back an equal configuration (apart from `base_dir`).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "firmware = {}", self.firmware);
        let _ = writeln!(s, "pip = {}", onoff(self.pip));
        let _ = writeln!(s, "fec = {}", onoff(self.fec));
        let _ = writeln!(s, "irq_interval = {}", self.irq_interval);
        let _ = writeln!(s, "irq_enable_addr = {:#x}", self.irq_enable_addr);
        let _ = writeln!(s, "instr_budget = {}", self.instr_budget);
        if let Some(b) = self.exec_budget {
            let _ = writeln!(s, "exec_budget = {b}");
        }
        if let Some(t) = self.time_budget {
            let _ = writeln!(s, "time_budget = {t}");
        }
        if !self.snapshot_pcs.is_empty() {
            let pcs: Vec<String> = self.snapshot_pcs.iter().map(|p| p.to_string()).collect();
            let _ = writeln!(s, "snapshot_pcs = {}", pcs.join(", "));
        }
        if !self.passthrough.is_empty() {
            let pt: Vec<String> = self.passthrough.iter().map(|a| format!("{a:#x}")).collect();
            let _ = writeln!(s, "passthrough = {}", pt.join(", "));
        }
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "disable_cond3 = {}", onoff(self.disable_cond3));
        let _ = writeln!(s, "disable_cond4 = {}", onoff(self.disable_cond4));
        let _ = writeln!(s, "flash_writable = {}", onoff(self.flash_writable));
        let _ = writeln!(s, "stats_interval = {}", self.stats_interval);
        let _ = writeln!(s, "seed_len = {}", self.seed_len);
        let _ = writeln!(s, "max_input_len = {}", self.max_input_len);
        let _ = writeln!(s, "deterministic = {}", onoff(self.deterministic));
        let clock = match self.clock {
            StatsClock::Wall => "wall",
            StatsClock::Logical => "logical",
        };
        let _ = writeln!(s, "clock = {clock}");
        if let Some(g) = &self.goal {
            let _ = writeln!(s, "goal = {g}");
        }
        let _ = writeln!(s, "stop_on_goal = {}", onoff(self.stop_on_goal));
        if let Some(d) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", d.display());
        }
        s
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn resolved_output_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            return PathBuf::from(dir);
        }
        match &self.output_dir {
            Some(d) if d.is_relative() => self.base_dir.join(d),
            Some(d) => d.clone(),
            None => PathBuf::from(DEFAULT_OUTPUT_DIR),
        }
    }

    pub fn load_firmware(&self) -> Result<Firmware, CliError> {
        crate::load_firmware(&self.firmware, &self.base_dir)
    }

    pub fn exec_config(&self) -> ExecConfig {
        ExecConfig {
            playback: self.pip,
            coverage: if self.fec {
                CoverageMode::Fec
            } else {
                CoverageMode::Baseline
            },
            irq_interval: self.irq_interval,
            instr_budget: self.instr_budget,
            permission_faults: !self.disable_cond3,
            self_jump_exit: !self.disable_cond4,
            map: MemoryMap {
                flash_writable: self.flash_writable,
                irq_enable_addr: self.irq_enable_addr,
                ..MemoryMap::default()
            },
            passthrough: self.passthrough.clone(),
            ..ExecConfig::default()
        }
    }

    pub fn goal_pc(&self, fw: &Firmware) -> Result<Option<u32>, CliError> {
        match &self.goal {
            Some(g) => g.resolve(fw).map(Some),
            None => Ok(fw.symbol(DEFAULT_GOAL)),
        }
    }

    pub fn fuzz_config(&self, fw: &Firmware) -> Result<FuzzConfig, CliError> {
        let snapshot_pcs = self
            .snapshot_pcs
            .iter()
            .map(|p| p.resolve(fw))
            .collect::<Result<_, _>>()?;
        let exec_budget = match (self.exec_budget, self.time_budget) {
            (None, None) => Some(DEFAULT_EXEC_BUDGET),
            (b, _) => b,
        };
        Ok(FuzzConfig {
            exec: self.exec_config(),
            seed: self.seed,
            exec_budget,
            time_budget: self.time_budget.map(Duration::from_secs),
            snapshot_pcs,
            seed_len: self.seed_len,
            max_input_len: self.max_input_len,
            stats_interval: self.stats_interval,
            deterministic: self.deterministic,
            clock: self.clock,
            goal_pc: self.goal_pc(fw)?,
            stop_on_goal: self.stop_on_goal,
            seeds: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_hex_lists_and_flags() {
        let cfg = CampaignConfig::parse(
            "firmware = corpus:i2c_init\n\
             pip = off   # baseline\n\
             fec = off\n\
             irq_interval = 0x40\n\
             passthrough = 0x40005400, 0x4000_5404\n\
             snapshot_pcs = post_init, 0x100\n\
             exec_budget = 1_000_000\n\
             clock = logical\n",
        )
        .unwrap();
        assert!(!cfg.pip && !cfg.fec);
        assert_eq!(cfg.irq_interval, 64);
        assert_eq!(cfg.passthrough, vec![0x4000_5400, 0x4000_5404]);
        assert_eq!(
            cfg.snapshot_pcs,
            vec![Location::Symbol("post_init".into()), Location::Addr(0x100)]
        );
        assert_eq!(cfg.exec_budget, Some(1_000_000));
        assert_eq!(cfg.clock, StatsClock::Logical);
    }

    #[test]
    fn round_trips_through_text() {
        let cfg = CampaignConfig {
            firmware: "fw.s".into(),
            pip: false,
            fec: false,
            irq_interval: 77,
            irq_enable_addr: 0x4000_0100,
            instr_budget: 1234,
            exec_budget: Some(99),
            time_budget: Some(5),
            snapshot_pcs: vec![Location::Symbol("main".into()), Location::Addr(0x84)],
            passthrough: vec![0x4000_0000],
            seed: 42,
            disable_cond3: true,
            disable_cond4: true,
            flash_writable: true,
            stats_interval: 10,
            seed_len: 64,
            max_input_len: 128,
            deterministic: false,
            clock: StatsClock::Logical,
            goal: Some(Location::Symbol("done".into())),
            stop_on_goal: true,
            output_dir: Some(PathBuf::from("out")),
            base_dir: PathBuf::from("."),
        };
        assert_eq!(CampaignConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = CampaignConfig::parse("firmware = x\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, CliError::ConfigLine { line: 2, .. }));
        let e = CampaignConfig::parse("firmware = x\npip = maybe\n").unwrap_err();
        assert!(matches!(e, CliError::ConfigLine { line: 2, .. }));
        assert!(matches!(
            CampaignConfig::parse("pip = on\n").unwrap_err(),
            CliError::Config(_)
        ));
    }
}
