//! Edge coverage with AFL-style hit counts.
//!
//! Two instrumentation modes share the same map:
//!
//! * `Baseline` tracks a single previous block, so entering and leaving an
//!   interrupt handler mints edges that depend on where the interrupt hit.
//! * `Fec` keeps separate previous-block trackers for program and interrupt
//!   context. Handler entry always originates from [`INT_ENTRY_BLOCK`], the
//!   return jump records nothing, and program edges continue across the
//!   interrupt as if it never happened.

pub const DEFAULT_MAP_SIZE: usize = 1 << 16;

/// Origin of the first program edge in a run. Block ids are flash
/// addresses, so the top of the address space is free for sentinels.
pub const START_BLOCK: u32 = 0xFFFF_FFFE;
/// Origin of every handler-entry edge in `Fec` mode.
pub const INT_ENTRY_BLOCK: u32 = 0xFFFF_FFFF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CoverageMode {
    Baseline,
    Fec,
}

#[inline]
pub fn edge_hash(prev: u32, cur: u32) -> u32 {
    prev.wrapping_mul(2_654_435_761) ^ cur.wrapping_mul(40_503)
}

/// Index of the edge `prev -> cur` in a 64 KiB map.
#[inline]
pub fn edge_index(prev: u32, cur: u32) -> u32 {
    edge_hash(prev, cur) & 0xFFFF
}

/// Bucket bit for a hit count: 1, 2, 3, 4-7, 8-15, 16-31, 32-127, 128-255.
#[inline]
pub fn bucket(count: u8) -> u8 {
    match count {
        0 => 0,
        1 => 1,
        2 => 2,
        3 => 4,
        4..=7 => 8,
        8..=15 => 16,
        16..=31 => 32,
        32..=127 => 64,
        128..=255 => 128,
    }
}

/// Per-execution hit counts. Tracks which slots were touched so clearing
/// and scanning cost is proportional to the edges a run actually hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    counts: Vec<u8>,
    touched: Vec<u32>,
    mask: u32,
}

impl Default for EdgeMap {
    fn default() -> Self {
        Self::new(DEFAULT_MAP_SIZE)
    }
}

impl EdgeMap {
    /// `size` must be a power of two.
    pub fn new(size: usize) -> Self {
        assert!(
            size.is_power_of_two() && size <= 1 << 32,
            "map size must be a power of two"
        );
        EdgeMap {
            counts: vec![0; size],
            touched: Vec::new(),
            mask: (size - 1) as u32,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.touched.is_empty()
    }

    #[inline]
    pub fn add_edge(&mut self, prev: u32, cur: u32) {
        let i = edge_hash(prev, cur) & self.mask;
        let c = &mut self.counts[i as usize];
        if *c == 0 {
            self.touched.push(i);
        }
        *c = c.saturating_add(1);
    }

    pub fn count(&self, index: usize) -> u8 {
        self.counts[index]
    }

    pub fn counts(&self) -> &[u8] {
        &self.counts
    }

    /// Non-zero slots, in first-hit order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &i in &self.touched {
            self.counts[i as usize] = 0;
        }
        self.touched.clear();
    }

    /// Sum of all counters.
    pub fn total_hits(&self) -> u64 {
        self.touched
            .iter()
            .map(|&i| self.counts[i as usize] as u64)
            .sum()
    }

    /// Sorted `(index, count)` pairs; equal maps give equal vectors.
    pub fn sparse(&self) -> Vec<(u32, u8)> {
        let mut v: Vec<_> = self
            .touched
            .iter()
            .map(|&i| (i, self.counts[i as usize]))
            .collect();
        v.sort_unstable();
        v
    }

    /// Order-independent digest of the map contents.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the sorted sparse form.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (i, c) in self.sparse() {
            for b in i.to_le_bytes().into_iter().chain([c]) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Last-block trackers for one execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoverageContext {
    pub mode: CoverageMode,
    /// In `Baseline` mode this is the single last-block tracker.
    pub last_program_block: u32,
    pub last_int_block: Option<u32>,
}

impl CoverageContext {
    pub fn new(mode: CoverageMode) -> Self {
        CoverageContext {
            mode,
            last_program_block: START_BLOCK,
            last_int_block: None,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.mode);
    }

    #[inline]
    pub fn record_block(&mut self, map: &mut EdgeMap, current_block: u32, in_interrupt: bool) {
        match self.mode {
            CoverageMode::Baseline => {
                map.add_edge(self.last_program_block, current_block);
                self.last_program_block = current_block;
            }
            CoverageMode::Fec if in_interrupt => {
                let origin = self.last_int_block.unwrap_or(INT_ENTRY_BLOCK);
                map.add_edge(origin, current_block);
                self.last_int_block = Some(current_block);
            }
            CoverageMode::Fec => {
                map.add_edge(self.last_program_block, current_block);
                self.last_program_block = current_block;
                self.last_int_block = None;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Novelty {
    None,
    NewBucket,
    NewEdge,
}

/// Campaign-wide record of which buckets each slot has reached.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VirginMap {
    seen: Vec<u8>,
    edges: usize,
}

impl VirginMap {
    pub fn new(size: usize) -> Self {
        VirginMap {
            seen: vec![0; size],
            edges: 0,
        }
    }

    /// Number of slots ever hit.
    pub fn edges_seen(&self) -> usize {
        self.edges
    }

    pub fn bits(&self) -> &[u8] {
        &self.seen
    }

    /// Compares without updating.
    pub fn peek(&self, map: &EdgeMap) -> Novelty {
        let mut best = Novelty::None;
        for &i in map.touched() {
            let seen = self.seen[i as usize];
            if seen == 0 {
                return Novelty::NewEdge;
            }
            if seen & bucket(map.count(i as usize)) == 0 {
                best = Novelty::NewBucket;
            }
        }
        best
    }

    /// Classifies `map` against everything seen so far, then folds it in.
    pub fn classify(&mut self, map: &EdgeMap) -> Novelty {
        let mut best = Novelty::None;
        for &i in map.touched() {
            let bit = bucket(map.count(i as usize));
            let seen = &mut self.seen[i as usize];
            if *seen == 0 {
                self.edges += 1;
                best = Novelty::NewEdge;
            } else if *seen & bit == 0 && best == Novelty::None {
                best = Novelty::NewBucket;
            }
            *seen |= bit;
        }
        best
    }
}
