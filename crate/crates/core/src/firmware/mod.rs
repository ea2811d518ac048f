//! Firmware images: the assembler and the built-in corpus.

pub mod asm;
mod corpus;

use std::collections::BTreeMap;

pub use asm::{assemble, disassemble, parse_symbol_file, AsmError, AsmErrorKind, Assembly};
pub use corpus::{corpus, corpus_entry, CorpusEntry, CORPUS_NAMES};

/// A loadable image with its symbol table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Firmware {
    pub name: String,
    pub image: Vec<u8>,
    pub symbols: BTreeMap<String, u32>,
}

impl Firmware {
    pub fn from_source(name: &str, source: &str) -> Result<Firmware, AsmError> {
        let Assembly { image, symbols } = assemble(source)?;
        Ok(Firmware {
            name: name.to_string(),
            image,
            symbols,
        })
    }

    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }
}
