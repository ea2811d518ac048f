use crate::coverage::Novelty;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Discovery {
    Seed,
    NewEdge,
    NewBucket,
}

impl Discovery {
    pub fn from_novelty(n: Novelty) -> Option<Discovery> {
        match n {
            Novelty::NewEdge => Some(Discovery::NewEdge),
            Novelty::NewBucket => Some(Discovery::NewBucket),
            Novelty::None => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Discovery::Seed => "seed",
            Discovery::NewEdge => "edge",
            Discovery::NewBucket => "bucket",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueueEntry {
    pub input: Vec<u8>,
    pub snapshot_id: usize,
    pub reason: Discovery,
    /// Campaign execution count at which the entry was found.
    pub found_at: u64,
    /// Executions spent mutating this entry.
    pub exec_count: u64,
    pub favored: bool,
    /// Number of discoveries between this entry and its seed.
    pub depth: u32,
    /// Input bytes the entry's own execution consumed.
    pub consumed: usize,
    pub map_digest: u64,
    pub deterministic_done: bool,
}

/// Corpus of interesting inputs with favored-entry bookkeeping: for every
/// map slot the smallest entry that hits it is favored.
#[derive(Debug, Clone)]
pub struct Queue {
    entries: Vec<QueueEntry>,
    top_rated: Vec<Option<u32>>,
    dirty: bool,
}

impl Queue {
    pub fn new(map_size: usize) -> Self {
        Queue {
            entries: Vec::new(),
            top_rated: vec![None; map_size],
            dirty: false,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[QueueEntry] {
        &self.entries
    }

    pub fn get(&self, i: usize) -> &QueueEntry {
        &self.entries[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut QueueEntry {
        &mut self.entries[i]
    }

    /// Adds an entry whose execution touched `slots`; returns its index.
    pub fn push(&mut self, entry: QueueEntry, slots: &[u32]) -> usize {
        let idx = self.entries.len();
        let len = entry.input.len();
        self.entries.push(entry);
        for &s in slots {
            let slot = &mut self.top_rated[s as usize];
            let better = match *slot {
                None => true,
                Some(cur) => len < self.entries[cur as usize].input.len(),
            };
            if better {
                *slot = Some(idx as u32);
                self.dirty = true;
            }
        }
        idx
    }

    /// Recomputes favored flags if any slot changed owner.
    pub fn refresh_favored(&mut self) {
        if !self.dirty {
            return;
        }
        for e in &mut self.entries {
            e.favored = false;
        }
        for &i in self.top_rated.iter().flatten() {
            self.entries[i as usize].favored = true;
        }
        self.dirty = false;
    }
}
