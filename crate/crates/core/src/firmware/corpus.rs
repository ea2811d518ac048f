use super::{AsmError, Firmware};

#[derive(Debug, Clone, Copy)]
pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub summary: &'static str,
}

impl CorpusEntry {
    pub fn assemble(&self) -> Result<Firmware, AsmError> {
        Firmware::from_source(self.name, self.source)
    }

    /// Assembles an entry that is known to be valid.
    pub fn firmware(&self) -> Firmware {
        self.assemble()
            .unwrap_or_else(|e| panic!("corpus firmware {} does not assemble: {e}", self.name))
    }
}

macro_rules! entry {
    ($name:literal, $summary:literal) => {
        CorpusEntry {
            name: $name,
            source: include_str!(concat!("../../firmware/", $name, ".s")),
            summary: $summary,
        }
    };
}

const ENTRIES: [CorpusEntry; 7] = [
    entry!("uart_poll", "polled UART command monitor"),
    entry!(
        "i2c_init",
        "I2C bring-up with 24 waits behind one call site"
    ),
    entry!(
        "serial_reset",
        "console that drains its receive buffer at boot"
    ),
    entry!(
        "irq_counter",
        "main loop reading a counter kept by a tick interrupt"
    ),
    entry!(
        "irq_counter_neutral",
        "irq_counter with a handler that touches nothing the loop reads"
    ),
    entry!("overflow_bug", "line receiver that overflows its buffer"),
    entry!("sleepy", "main loop that sleeps until an interrupt"),
];

pub const CORPUS_NAMES: [&str; 7] = [
    "uart_poll",
    "i2c_init",
    "serial_reset",
    "irq_counter",
    "irq_counter_neutral",
    "overflow_bug",
    "sleepy",
];

pub fn corpus() -> &'static [CorpusEntry] {
    &ENTRIES
}

pub fn corpus_entry(name: &str) -> Option<&'static CorpusEntry> {
    ENTRIES.iter().find(|e| e.name == name)
}
