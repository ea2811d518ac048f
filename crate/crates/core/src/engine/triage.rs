use std::collections::BTreeMap;

use crate::vm::FaultKind;

use super::executor::CrashSite;

/// Crashes are deduplicated on the fault kind, faulting pc and whether a
/// handler was running.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CrashKey {
    pub kind: FaultKind,
    pub pc: u32,
    pub in_interrupt: bool,
}

impl From<&CrashSite> for CrashKey {
    fn from(c: &CrashSite) -> Self {
        CrashKey {
            kind: c.kind,
            pc: c.pc,
            in_interrupt: c.in_interrupt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrashReport {
    pub key: CrashKey,
    pub addr: u32,
    pub input: Vec<u8>,
    pub snapshot_id: usize,
    pub found_at: u64,
    pub hits: u64,
}

impl CrashReport {
    /// File name for the reproducer, e.g. `unmapped-00000234-prog.bin`.
    pub fn file_name(&self) -> String {
        format!(
            "{}-{:08x}-{}.bin",
            self.key.kind.name(),
            self.key.pc,
            if self.key.in_interrupt { "irq" } else { "prog" }
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct CrashTriage {
    reports: BTreeMap<CrashKey, CrashReport>,
}

impl CrashTriage {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a crash; returns true when its key is new.
    pub fn record(
        &mut self,
        site: &CrashSite,
        input: &[u8],
        snapshot_id: usize,
        exec: u64,
    ) -> bool {
        let key = CrashKey::from(site);
        if let Some(r) = self.reports.get_mut(&key) {
            r.hits += 1;
            if input.len() < r.input.len() {
                r.input = input.to_vec();
                r.snapshot_id = snapshot_id;
                r.addr = site.addr;
            }
            return false;
        }
        self.reports.insert(
            key,
            CrashReport {
                key,
                addr: site.addr,
                input: input.to_vec(),
                snapshot_id,
                found_at: exec,
                hits: 1,
            },
        );
        true
    }

    pub fn unique(&self) -> usize {
        self.reports.len()
    }

    pub fn reports(&self) -> impl Iterator<Item = &CrashReport> {
        self.reports.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn site(pc: u32, addr: u32) -> CrashSite {
        CrashSite {
            kind: FaultKind::Unmapped,
            pc,
            addr,
            in_interrupt: false,
        }
    }

    #[test]
    fn dedup_on_pc_not_address() {
        let mut t = CrashTriage::new();
        assert!(t.record(&site(0x234, 0x9000_0000), &[1, 2, 3], 0, 1));
        assert!(!t.record(&site(0x234, 0x9000_0004), &[1], 0, 2));
        assert!(t.record(&site(0x238, 0x9000_0000), &[1], 0, 3));
        assert_eq!(t.unique(), 2);
        let first = t.reports().next().unwrap();
        assert_eq!(first.hits, 2);
        assert_eq!(first.input, vec![1]);
        assert_eq!(first.file_name(), "unmapped-00000234-prog.bin");
    }
}
