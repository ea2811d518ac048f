use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coverage::{Novelty, VirginMap};
use crate::vm::LoadError;

use super::executor::{ExecConfig, ExecOutcome, ExecResult, Executor};
use super::mutator::{deterministic_stages, mutate, Stage};
use super::queue::{Discovery, Queue, QueueEntry};
use super::triage::CrashTriage;

pub const DEFAULT_SEED_LEN: usize = 512;
pub const DEFAULT_MAX_INPUT_LEN: usize = 4096;
pub const DEFAULT_STATS_INTERVAL: u64 = 10_000;
pub const DEFAULT_EXEC_BUDGET: u64 = 1_000_000;
const HAVOC_FAVORED: u32 = 128;
const HAVOC_OTHER: u32 = 32;
const SPLICE_ONE_IN: u32 = 8;
const TIME_CHECK_EVERY: u64 = 64;
/// Havoc may touch this many bytes past an entry's consumed prefix.
const FOCUS_SLACK: usize = 32;
/// One havoc round in this many ignores the focus and edits anywhere.
const UNFOCUSED_ONE_IN: u32 = 8;

/// Source of the `unix_time` column in stats rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsClock {
    Wall,
    /// Row `i` is stamped `i + 1`, making stats reproducible.
    Logical,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FuzzConfig {
    pub exec: ExecConfig,
    pub seed: u64,
    pub exec_budget: Option<u64>,
    pub time_budget: Option<Duration>,
    /// Block addresses to snapshot during calibration, besides boot.
    pub snapshot_pcs: Vec<u32>,
    pub seed_len: usize,
    pub max_input_len: usize,
    pub stats_interval: u64,
    pub deterministic: bool,
    pub clock: StatsClock,
    /// Block address whose first execution is reported.
    pub goal_pc: Option<u32>,
    /// End the campaign as soon as the goal block runs.
    pub stop_on_goal: bool,
    /// Initial inputs for the boot lane. Empty means one random seed.
    pub seeds: Vec<Vec<u8>>,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        FuzzConfig {
            exec: ExecConfig::default(),
            seed: 0,
            exec_budget: Some(DEFAULT_EXEC_BUDGET),
            time_budget: None,
            snapshot_pcs: Vec::new(),
            seed_len: DEFAULT_SEED_LEN,
            max_input_len: DEFAULT_MAX_INPUT_LEN,
            stats_interval: DEFAULT_STATS_INTERVAL,
            deterministic: true,
            clock: StatsClock::Wall,
            goal_pc: None,
            stop_on_goal: false,
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatsRow {
    pub unix_time: u64,
    pub execs: u64,
    pub blocks_covered: usize,
    pub edges_covered: usize,
    pub queue_len: usize,
    pub crashes_unique: usize,
}

impl StatsRow {
    pub const HEADER: &'static str =
        "unix_time,execs,blocks_covered,edges_covered,queue_len,crashes_unique";

    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.unix_time,
            self.execs,
            self.blocks_covered,
            self.edges_covered,
            self.queue_len,
            self.crashes_unique
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CampaignStats {
    pub execs: u64,
    pub blocks_covered: usize,
    pub edges_covered: usize,
    pub queue_len: usize,
    pub crashes_unique: usize,
    pub hangs: u64,
    /// Inputs whose re-execution disagreed with the first run.
    pub unstable: u64,
    pub goal_reached_at: Option<u64>,
    pub elapsed: Duration,
    pub rows: Vec<StatsRow>,
}

struct Round {
    entry: usize,
    det: Option<Box<dyn Iterator<Item = Stage> + Send>>,
    havoc_left: u32,
}

struct Lane {
    snapshot: usize,
    members: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    round: Option<Round>,
}

/// Energy multiplier for entries found deep in a chain of discoveries.
fn depth_bonus(depth: u32) -> u32 {
    match depth {
        0..=3 => 1,
        4..=7 => 2,
        8..=13 => 3,
        14..=25 => 4,
        _ => 5,
    }
}

/// A fuzzing campaign against one firmware image.
pub struct Campaign {
    cfg: FuzzConfig,
    executor: Executor,
    virgin: VirginMap,
    queue: Queue,
    triage: CrashTriage,
    lanes: Vec<Lane>,
    rng: ChaCha8Rng,
    execs: u64,
    hangs: u64,
    unstable: u64,
    goal_reached_at: Option<u64>,
    rows: Vec<StatsRow>,
    started: Instant,
    calibration_input: Vec<u8>,
}

impl Campaign {
    pub fn new(image: &[u8], cfg: FuzzConfig) -> Result<Campaign, LoadError> {
        let executor = Executor::new(image, cfg.exec.clone())?;
        let map_size = cfg.exec.map_size;
        let mut c = Campaign {
            virgin: VirginMap::new(map_size),
            queue: Queue::new(map_size),
            triage: CrashTriage::new(),
            lanes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            execs: 0,
            hangs: 0,
            unstable: 0,
            goal_reached_at: None,
            rows: Vec::new(),
            started: Instant::now(),
            calibration_input: Vec::new(),
            executor,
            cfg,
        };
        c.seed_queue();
        Ok(c)
    }

    fn seed_queue(&mut self) {
        let mut seeds = self.cfg.seeds.clone();
        if seeds.is_empty() {
            let n = self.cfg.seed_len.max(1);
            seeds.push((0..n).map(|_| self.rng.random::<u8>()).collect());
        }
        for s in &mut seeds {
            s.truncate(self.cfg.max_input_len.max(1));
        }
        if !self.cfg.snapshot_pcs.is_empty() {
            let pcs = self.cfg.snapshot_pcs.clone();
            self.executor.calibrate_snapshots(&seeds[0], &pcs);
        }
        self.calibration_input = seeds[0].clone();
        let offsets: Vec<usize> = self
            .executor
            .snapshots()
            .iter()
            .map(|s| s.input_offset)
            .collect();
        for (id, &offset) in offsets.iter().enumerate() {
            self.lanes.push(Lane {
                snapshot: id,
                members: Vec::new(),
                order: Vec::new(),
                cursor: 0,
                round: None,
            });
            if id == 0 {
                for s in &seeds {
                    self.add_seed(s.clone(), 0);
                }
            } else {
                let s = &seeds[0];
                let tail = s[offset.min(s.len())..].to_vec();
                self.add_seed(tail, id);
            }
        }
        self.check_goal();
    }

    fn add_seed(&mut self, input: Vec<u8>, snapshot: usize) {
        let r = self.executor.execute(&input, snapshot);
        if let ExecOutcome::Crash(site) = &r.outcome {
            self.triage.record(site, &input, snapshot, 0);
        }
        self.virgin.classify(self.executor.map());
        self.push_entry(input, snapshot, Discovery::Seed, 0, &r);
    }

    fn push_entry(
        &mut self,
        input: Vec<u8>,
        snapshot: usize,
        reason: Discovery,
        depth: u32,
        r: &ExecResult,
    ) {
        let entry = QueueEntry {
            depth,
            consumed: r.bytes_consumed.min(input.len()),
            input,
            snapshot_id: snapshot,
            reason,
            found_at: self.execs,
            exec_count: 0,
            favored: false,
            map_digest: self.executor.map().digest(),
            deterministic_done: false,
        };
        let idx = self.queue.push(entry, self.executor.map().touched());
        self.lanes[snapshot].members.push(idx);
    }

    pub fn config(&self) -> &FuzzConfig {
        &self.cfg
    }

    pub fn executor(&self) -> &Executor {
        &self.executor
    }

    pub fn queue(&self) -> &[QueueEntry] {
        self.queue.entries()
    }

    pub fn triage(&self) -> &CrashTriage {
        &self.triage
    }

    pub fn virgin(&self) -> &VirginMap {
        &self.virgin
    }

    pub fn execs(&self) -> u64 {
        self.execs
    }

    /// Rewrites an input meant for `snapshot` into one that reaches the
    /// same state from boot, by prefixing the calibration bytes consumed
    /// before that snapshot was taken.
    pub fn input_from_boot(&self, snapshot: usize, input: &[u8]) -> Vec<u8> {
        let offset = self
            .executor
            .snapshots()
            .get(snapshot)
            .map_or(0, |s| s.input_offset);
        let mut out = self.calibration_input[..offset.min(self.calibration_input.len())].to_vec();
        out.extend_from_slice(input);
        out
    }

    fn next_candidate(&mut self, lane_id: usize) -> (Vec<u8>, usize) {
        loop {
            if self.lanes[lane_id].round.is_none() {
                self.start_round(lane_id);
            }
            let lane = &mut self.lanes[lane_id];
            let round = lane.round.as_mut().expect("round just started");
            let entry = round.entry;
            let stage = match round.det.as_mut().and_then(|d| d.next()) {
                Some(s) => s,
                None if round.havoc_left > 0 => {
                    round.det = None;
                    round.havoc_left -= 1;
                    if lane.members.len() > 1 && self.rng.random_range(0..SPLICE_ONE_IN) == 0 {
                        Stage::Splice
                    } else {
                        Stage::Havoc
                    }
                }
                None => {
                    lane.round = None;
                    continue;
                }
            };
            let partner = if stage == Stage::Splice {
                let m = &lane.members;
                let mut p = m[self.rng.random_range(0..m.len())];
                if p == entry {
                    p = m[(m.iter().position(|&x| x == entry).unwrap_or(0) + 1) % m.len()];
                }
                Some(p)
            } else {
                None
            };
            let e = self.queue.get(entry);
            let focus = if self.rng.random_range(0..UNFOCUSED_ONE_IN) == 0 {
                e.input.len()
            } else {
                e.consumed + FOCUS_SLACK
            };
            let partner = partner.map(|p| self.queue.get(p).input.as_slice());
            let out = mutate(
                &e.input,
                stage,
                partner,
                focus,
                self.cfg.max_input_len,
                &mut self.rng,
            );
            return (out, entry);
        }
    }

    fn start_round(&mut self, lane_id: usize) {
        let lane = &mut self.lanes[lane_id];
        if lane.cursor >= lane.order.len() {
            self.queue.refresh_favored();
            let q = &self.queue;
            let mut order = lane.members.clone();
            order.sort_by_key(|&i| !q.get(i).favored);
            lane.order = order;
            lane.cursor = 0;
        }
        let entry = lane.order[lane.cursor];
        lane.cursor += 1;
        let e = self.queue.get_mut(entry);
        let det: Option<Box<dyn Iterator<Item = Stage> + Send>> =
            if self.cfg.deterministic && !e.deterministic_done {
                e.deterministic_done = true;
                Some(Box::new(deterministic_stages(
                    e.consumed.min(e.input.len()),
                )))
            } else {
                None
            };
        let base = if e.favored {
            HAVOC_FAVORED
        } else {
            HAVOC_OTHER
        };
        let havoc_left = base * depth_bonus(e.depth);
        lane.round = Some(Round {
            entry,
            det,
            havoc_left,
        });
    }

    /// One mutation and execution.
    pub fn step(&mut self) {
        let lane_id = self.rng.random_range(0..self.lanes.len());
        let (input, parent) = self.next_candidate(lane_id);
        let snapshot = self.lanes[lane_id].snapshot;
        let p = self.queue.get_mut(parent);
        p.exec_count += 1;
        let depth = p.depth + 1;
        self.evaluate(input, snapshot, depth);
    }

    fn evaluate(&mut self, input: Vec<u8>, snapshot: usize, depth: u32) {
        self.execs += 1;
        let r = self.executor.execute(&input, snapshot);
        match r.outcome {
            ExecOutcome::Crash(site) => {
                self.triage.record(&site, &input, snapshot, self.execs);
            }
            ExecOutcome::BudgetExceeded => self.hangs += 1,
            ExecOutcome::InputExhausted | ExecOutcome::SelfJumpExit => {
                if self.virgin.peek(self.executor.map()) != Novelty::None {
                    self.admit(input, snapshot, depth, r);
                }
            }
        }
        self.check_goal();
    }

    /// Re-executes a novel input and queues it if both runs agree.
    fn admit(&mut self, input: Vec<u8>, snapshot: usize, depth: u32, first: ExecResult) {
        let digest = self.executor.map().digest();
        self.execs += 1;
        let again = self.executor.execute(&input, snapshot);
        if again.outcome != first.outcome || self.executor.map().digest() != digest {
            self.unstable += 1;
            return;
        }
        let novelty = self.virgin.classify(self.executor.map());
        if let Some(reason) = Discovery::from_novelty(novelty) {
            self.push_entry(input, snapshot, reason, depth, &again);
        }
    }

    fn check_goal(&mut self) {
        if self.goal_reached_at.is_none() {
            if let Some(g) = self.cfg.goal_pc {
                if self.executor.block_seen(g) {
                    self.goal_reached_at = Some(self.execs);
                }
            }
        }
    }

    fn row(&self) -> StatsRow {
        let unix_time = match self.cfg.clock {
            StatsClock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            StatsClock::Logical => self.rows.len() as u64 + 1,
        };
        StatsRow {
            unix_time,
            execs: self.execs,
            blocks_covered: self.executor.blocks_covered(),
            edges_covered: self.virgin.edges_seen(),
            queue_len: self.queue.len(),
            crashes_unique: self.triage.unique(),
        }
    }

    fn budget_left(&self) -> bool {
        if self.cfg.stop_on_goal && self.goal_reached_at.is_some() {
            return false;
        }
        if let Some(b) = self.cfg.exec_budget {
            if self.execs >= b {
                return false;
            }
        }
        true
    }

    /// Fuzzes until a budget runs out, passing each stats row to `on_row`.
    pub fn run(&mut self, mut on_row: impl FnMut(&StatsRow)) -> CampaignStats {
        self.started = Instant::now();
        let interval = self.cfg.stats_interval.max(1);
        let mut next_row = (self.execs / interval + 1) * interval;
        let mut next_time_check = self.execs + TIME_CHECK_EVERY;
        while self.budget_left() {
            self.step();
            if self.execs >= next_row {
                let row = self.row();
                on_row(&row);
                self.rows.push(row);
                next_row = (self.execs / interval + 1) * interval;
            }
            if self.execs >= next_time_check {
                next_time_check = self.execs + TIME_CHECK_EVERY;
                if let Some(t) = self.cfg.time_budget {
                    if self.started.elapsed() >= t {
                        break;
                    }
                }
            }
        }
        if self.rows.last().map(|r| r.execs) != Some(self.execs) {
            let row = self.row();
            on_row(&row);
            self.rows.push(row);
        }
        self.stats()
    }

    pub fn stats(&self) -> CampaignStats {
        CampaignStats {
            execs: self.execs,
            blocks_covered: self.executor.blocks_covered(),
            edges_covered: self.virgin.edges_seen(),
            queue_len: self.queue.len(),
            crashes_unique: self.triage.unique(),
            hangs: self.hangs,
            unstable: self.unstable,
            goal_reached_at: self.goal_reached_at,
            elapsed: self.started.elapsed(),
            rows: self.rows.clone(),
        }
    }
}

/// Builds a campaign and runs it to completion.
pub fn fuzz_loop(image: &[u8], cfg: FuzzConfig) -> Result<(Campaign, CampaignStats), LoadError> {
    let mut c = Campaign::new(image, cfg)?;
    let stats = c.run(|_| {});
    Ok((c, stats))
}
