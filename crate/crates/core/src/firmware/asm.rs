//! Two-pass assembler.
//!
//! Syntax, one statement per line:
//!
//! ```text
//! ; comment
//! .equ  UART_SR, 0x40001000     ; named constant
//! .vector 3, uart_isr           ; vector table entry
//! loop:  LOAD32 r0, [r1+4]      ; a label may share a line
//!        BNE loop
//!        LI r2, UART_SR         ; MOVI + MOVHI, always 8 bytes
//!        .word 0xdeadbeef, loop
//!        JMP .
//! ```
//!
//! Expressions are sums and differences of numbers (`12`, `0x1f`, `0b101`,
//! `'A'`), symbols and `.` (the current statement's address). Code is laid
//! out after the 128-byte vector table. Without a `.vector 0` directive the
//! reset vector points at the first statement.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::vm::isa::{AluOp, Cond, Instr, Reg, Width};
use crate::vm::VECTOR_TABLE_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {kind}")]
pub struct AsmError {
    pub line: usize,
    pub kind: AsmErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AsmErrorKind {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown mnemonic `{0}`")]
    UnknownMnemonic(String),
    #[error("undefined symbol `{0}`")]
    UndefinedSymbol(String),
    #[error("symbol `{0}` defined twice")]
    DuplicateSymbol(String),
    #[error("vector {0} assigned twice")]
    DuplicateVector(u32),
    #[error("vector {0} out of range")]
    VectorOutOfRange(i64),
    #[error("value {value} out of range for {what}")]
    OutOfRange { value: i64, what: &'static str },
    #[error("bad register `{0}`")]
    BadRegister(String),
    #[error("symbol `{0}` is defined in terms of itself")]
    Recursive(String),
}

/// Assembled image plus the label table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assembly {
    pub image: Vec<u8>,
    pub symbols: BTreeMap<String, u32>,
}

impl Assembly {
    pub fn symbol(&self, name: &str) -> Option<u32> {
        self.symbols.get(name).copied()
    }

    /// `name 0xaddr` per line, sorted by name.
    pub fn symbol_file(&self) -> String {
        self.symbols
            .iter()
            .map(|(k, v)| format!("{k} {v:#010x}\n"))
            .collect()
    }
}

pub fn parse_symbol_file(text: &str) -> Result<BTreeMap<String, u32>, String> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(addr), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!(
                "symbol file line {}: expected `name address`",
                n + 1
            ));
        };
        let addr = parse_number(addr)
            .filter(|v| (0..=u32::MAX as i64).contains(v))
            .ok_or_else(|| format!("symbol file line {}: bad address `{addr}`", n + 1))?;
        out.insert(name.to_string(), addr as u32);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Stmt {
    Instr {
        mnemonic: String,
        operands: Vec<String>,
    },
    Word(Vec<String>),
}

#[derive(Debug, Clone)]
struct Placed {
    line: usize,
    addr: u32,
    stmt: Stmt,
}

fn err(line: usize, kind: AsmErrorKind) -> AsmError {
    AsmError { line, kind }
}

fn syntax(line: usize, msg: impl Into<String>) -> AsmError {
    err(line, AsmErrorKind::Syntax(msg.into()))
}

fn strip_comment(line: &str) -> &str {
    // `;` inside a character literal is not a comment.
    let mut in_char = false;
    for (i, c) in line.char_indices() {
        match c {
            '\'' => in_char = !in_char,
            ';' if !in_char => return &line[..i],
            _ => {}
        }
    }
    line
}

fn split_operands(s: &str) -> Vec<String> {
    let s = s.trim();
    if s.is_empty() {
        return Vec::new();
    }
    s.split(',').map(|p| p.trim().to_string()).collect()
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn instr_size(mnemonic: &str) -> u32 {
    if mnemonic == "LI" {
        8
    } else {
        4
    }
}

fn parse_number(tok: &str) -> Option<i64> {
    let t = tok.replace('_', "");
    let (neg, t) = match t.strip_prefix('-') {
        Some(rest) => (true, rest.to_string()),
        None => (false, t),
    };
    let v = if let Some(h) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else if let Some(b) = t.strip_prefix("0b").or_else(|| t.strip_prefix("0B")) {
        i64::from_str_radix(b, 2).ok()?
    } else if t.len() == 3 && t.starts_with('\'') && t.ends_with('\'') {
        t.as_bytes()[1] as i64
    } else {
        t.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

struct Symbols<'a> {
    labels: &'a BTreeMap<String, u32>,
    equs: &'a BTreeMap<String, (usize, String)>,
}

impl Symbols<'_> {
    fn eval(&self, expr: &str, here: u32, line: usize) -> Result<i64, AsmError> {
        self.eval_depth(expr, here, line, 0)
    }

    fn eval_depth(
        &self,
        expr: &str,
        here: u32,
        line: usize,
        depth: usize,
    ) -> Result<i64, AsmError> {
        let expr = expr.trim();
        if expr.is_empty() {
            return Err(syntax(line, "missing expression"));
        }
        // Split into signed terms, keeping char literals intact.
        let mut terms: Vec<(bool, String)> = Vec::new();
        let mut cur = String::new();
        let mut neg = false;
        let mut in_char = false;
        for c in expr.chars() {
            match c {
                '\'' => {
                    in_char = !in_char;
                    cur.push(c);
                }
                '+' | '-' if !in_char => {
                    if cur.trim().is_empty() {
                        if c == '-' {
                            neg = !neg;
                        }
                    } else {
                        terms.push((neg, std::mem::take(&mut cur)));
                        neg = c == '-';
                    }
                }
                _ => cur.push(c),
            }
        }
        if cur.trim().is_empty() {
            return Err(syntax(line, format!("dangling operator in `{expr}`")));
        }
        terms.push((neg, cur));

        let mut total: i64 = 0;
        for (neg, term) in terms {
            let term = term.trim();
            let v = if term == "." {
                here as i64
            } else if let Some(v) = parse_number(term) {
                v
            } else if is_ident(term) {
                if let Some(&addr) = self.labels.get(term) {
                    addr as i64
                } else if let Some((eq_line, body)) = self.equs.get(term) {
                    if depth > 32 {
                        return Err(err(line, AsmErrorKind::Recursive(term.to_string())));
                    }
                    self.eval_depth(body, here, *eq_line, depth + 1)?
                } else {
                    return Err(err(line, AsmErrorKind::UndefinedSymbol(term.to_string())));
                }
            } else {
                return Err(syntax(line, format!("bad term `{term}`")));
            };
            total = if neg { total - v } else { total + v };
        }
        Ok(total)
    }
}

fn parse_reg(line: usize, s: &str) -> Result<Reg, AsmError> {
    let s = s.trim();
    s.strip_prefix('r')
        .or_else(|| s.strip_prefix('R'))
        .and_then(|n| n.parse::<u8>().ok())
        .and_then(Reg::new)
        .ok_or_else(|| err(line, AsmErrorKind::BadRegister(s.to_string())))
}

fn ranged(line: usize, v: i64, lo: i64, hi: i64, what: &'static str) -> Result<i64, AsmError> {
    if (lo..=hi).contains(&v) {
        Ok(v)
    } else {
        Err(err(line, AsmErrorKind::OutOfRange { value: v, what }))
    }
}

fn expect_operands(line: usize, ops: &[String], n: usize, mnemonic: &str) -> Result<(), AsmError> {
    if ops.len() == n {
        Ok(())
    } else {
        Err(syntax(
            line,
            format!("{mnemonic} takes {n} operand(s), got {}", ops.len()),
        ))
    }
}

/// `[rN]`, `[rN+expr]` or `[rN-expr]`.
fn parse_mem(line: usize, s: &str, syms: &Symbols, here: u32) -> Result<(Reg, i8), AsmError> {
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|t| t.strip_suffix(']'))
        .ok_or_else(|| syntax(line, format!("expected memory operand, got `{s}`")))?;
    let split = inner.find(['+', '-']);
    let (reg, off) = match split {
        Some(i) => (&inner[..i], syms.eval(&inner[i..], here, line)?),
        None => (inner, 0),
    };
    let off = ranged(line, off, -128, 127, "memory offset")?;
    Ok((parse_reg(line, reg)?, off as i8))
}

fn relative(line: usize, target: i64, pc: u32) -> Result<i16, AsmError> {
    let rel = target - pc as i64;
    Ok(ranged(
        line,
        rel,
        i16::MIN as i64,
        i16::MAX as i64,
        "branch displacement",
    )? as i16)
}

fn width_of(suffix: &str) -> Option<Width> {
    match suffix {
        "8" => Some(Width::Byte),
        "16" => Some(Width::Half),
        "32" => Some(Width::Word),
        _ => None,
    }
}

fn encode_stmt(p: &Placed, syms: &Symbols, out: &mut Vec<u8>) -> Result<(), AsmError> {
    let line = p.line;
    let here = p.addr;
    let (mnemonic, ops) = match &p.stmt {
        Stmt::Word(exprs) => {
            for e in exprs {
                let v = syms.eval(e, here, line)?;
                let v = ranged(line, v, i32::MIN as i64, u32::MAX as i64, ".word")?;
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
            return Ok(());
        }
        Stmt::Instr { mnemonic, operands } => (mnemonic.as_str(), operands.as_slice()),
    };
    let imm16 = |e: &str| -> Result<u16, AsmError> {
        let v = syms.eval(e, here, line)?;
        Ok(ranged(
            line,
            v,
            i16::MIN as i64,
            u16::MAX as i64,
            "16-bit immediate",
        )? as u16)
    };
    let target = |e: &str| {
        syms.eval(e, here, line)
            .and_then(|t| relative(line, t, here))
    };

    let alu = AluOp::ALL
        .iter()
        .find(|op| format!("{op:?}").to_ascii_uppercase() == mnemonic);
    let cond = Cond::ALL
        .iter()
        .find(|c| format!("B{:?}", c).to_ascii_uppercase() == mnemonic);

    let instr = if let Some(&op) = alu {
        expect_operands(line, ops, 3, mnemonic)?;
        Instr::Alu {
            op,
            rd: parse_reg(line, &ops[0])?,
            ra: parse_reg(line, &ops[1])?,
            rb: parse_reg(line, &ops[2])?,
        }
    } else if let Some(&cond) = cond {
        expect_operands(line, ops, 1, mnemonic)?;
        Instr::Branch {
            cond,
            rel: target(&ops[0])?,
        }
    } else if let Some(w) = mnemonic.strip_prefix("LOAD").and_then(width_of) {
        expect_operands(line, ops, 2, mnemonic)?;
        let (base, offset) = parse_mem(line, &ops[1], syms, here)?;
        Instr::Load {
            width: w,
            rd: parse_reg(line, &ops[0])?,
            base,
            offset,
        }
    } else if let Some(w) = mnemonic.strip_prefix("STORE").and_then(width_of) {
        expect_operands(line, ops, 2, mnemonic)?;
        let (base, offset) = parse_mem(line, &ops[1], syms, here)?;
        Instr::Store {
            width: w,
            rs: parse_reg(line, &ops[0])?,
            base,
            offset,
        }
    } else {
        match mnemonic {
            "NOP" | "RET" | "IRET" | "WFI" => {
                expect_operands(line, ops, 0, mnemonic)?;
                match mnemonic {
                    "NOP" => Instr::Nop,
                    "RET" => Instr::Ret,
                    "IRET" => Instr::Iret,
                    _ => Instr::Wfi,
                }
            }
            "MOVI" | "MOVHI" => {
                expect_operands(line, ops, 2, mnemonic)?;
                let rd = parse_reg(line, &ops[0])?;
                let imm = imm16(&ops[1])?;
                if mnemonic == "MOVI" {
                    Instr::Movi { rd, imm }
                } else {
                    Instr::Movhi { rd, imm }
                }
            }
            "LI" => {
                expect_operands(line, ops, 2, mnemonic)?;
                let rd = parse_reg(line, &ops[0])?;
                let v = syms.eval(&ops[1], here, line)?;
                let v = ranged(
                    line,
                    v,
                    i32::MIN as i64,
                    u32::MAX as i64,
                    "32-bit immediate",
                )? as u32;
                out.extend_from_slice(&Instr::Movi { rd, imm: v as u16 }.encode());
                Instr::Movhi {
                    rd,
                    imm: (v >> 16) as u16,
                }
            }
            "MOV" => {
                expect_operands(line, ops, 2, mnemonic)?;
                Instr::Mov {
                    rd: parse_reg(line, &ops[0])?,
                    rs: parse_reg(line, &ops[1])?,
                }
            }
            "ADDI" => {
                expect_operands(line, ops, 3, mnemonic)?;
                let v = syms.eval(&ops[2], here, line)?;
                Instr::Addi {
                    rd: parse_reg(line, &ops[0])?,
                    ra: parse_reg(line, &ops[1])?,
                    imm: ranged(line, v, -128, 127, "8-bit immediate")? as i8,
                }
            }
            "CMP" => {
                expect_operands(line, ops, 2, mnemonic)?;
                Instr::Cmp {
                    ra: parse_reg(line, &ops[0])?,
                    rb: parse_reg(line, &ops[1])?,
                }
            }
            "JMP" | "CALL" => {
                expect_operands(line, ops, 1, mnemonic)?;
                let rel = target(&ops[0])?;
                if mnemonic == "JMP" {
                    Instr::Jmp { rel }
                } else {
                    Instr::Call { rel }
                }
            }
            "JMPABS" => {
                expect_operands(line, ops, 1, mnemonic)?;
                Instr::JmpAbs {
                    rs: parse_reg(line, &ops[0])?,
                }
            }
            other => return Err(err(line, AsmErrorKind::UnknownMnemonic(other.to_string()))),
        }
    };
    out.extend_from_slice(&instr.encode());
    Ok(())
}

pub fn assemble(source: &str) -> Result<Assembly, AsmError> {
    // Pass 1: layout and symbol collection.
    let mut labels: BTreeMap<String, u32> = BTreeMap::new();
    let mut equs: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut vectors: BTreeMap<u32, (usize, String)> = BTreeMap::new();
    let mut placed = Vec::new();
    let mut addr = VECTOR_TABLE_BYTES;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut rest = strip_comment(raw).trim();
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if !is_ident(name) {
                break;
            }
            if labels.contains_key(name) || equs.contains_key(name) {
                return Err(err(line, AsmErrorKind::DuplicateSymbol(name.to_string())));
            }
            labels.insert(name.to_string(), addr);
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let (head, tail) = match rest.find(char::is_whitespace) {
            Some(i) => (&rest[..i], rest[i..].trim()),
            None => (rest, ""),
        };
        let operands = split_operands(tail);
        match head.to_ascii_lowercase().as_str() {
            ".equ" => {
                let [name, value] = operands.as_slice() else {
                    return Err(syntax(line, ".equ takes a name and a value"));
                };
                if !is_ident(name) {
                    return Err(syntax(line, format!("bad symbol name `{name}`")));
                }
                if labels.contains_key(name.as_str()) || equs.contains_key(name.as_str()) {
                    return Err(err(line, AsmErrorKind::DuplicateSymbol(name.clone())));
                }
                equs.insert(name.clone(), (line, value.clone()));
            }
            ".vector" => {
                let [n, target] = operands.as_slice() else {
                    return Err(syntax(line, ".vector takes an index and a target"));
                };
                let n = parse_number(n).ok_or_else(|| syntax(line, "bad vector index"))?;
                if !(0..32).contains(&n) {
                    return Err(err(line, AsmErrorKind::VectorOutOfRange(n)));
                }
                if vectors.insert(n as u32, (line, target.clone())).is_some() {
                    return Err(err(line, AsmErrorKind::DuplicateVector(n as u32)));
                }
            }
            ".word" => {
                if operands.is_empty() {
                    return Err(syntax(line, ".word needs a value"));
                }
                let size = 4 * operands.len() as u32;
                placed.push(Placed {
                    line,
                    addr,
                    stmt: Stmt::Word(operands),
                });
                addr += size;
            }
            d if d.starts_with('.') => {
                return Err(syntax(line, format!("unknown directive `{head}`")));
            }
            _ => {
                let mnemonic = head.to_ascii_uppercase();
                let size = instr_size(&mnemonic);
                placed.push(Placed {
                    line,
                    addr,
                    stmt: Stmt::Instr { mnemonic, operands },
                });
                addr += size;
            }
        }
    }

    // Pass 2: encode with every symbol known.
    let syms = Symbols {
        labels: &labels,
        equs: &equs,
    };
    let mut image = vec![0u8; VECTOR_TABLE_BYTES as usize];
    for p in &placed {
        encode_stmt(p, &syms, &mut image)?;
        debug_assert_eq!(image.len() as u32, p.addr + stmt_size(&p.stmt));
    }
    if !vectors.contains_key(&0) {
        image[0..4].copy_from_slice(&VECTOR_TABLE_BYTES.to_le_bytes());
    }
    for (n, (line, target)) in &vectors {
        let v = syms.eval(target, 0, *line)?;
        let v = ranged(*line, v, 0, u32::MAX as i64, "vector target")? as u32;
        let off = *n as usize * 4;
        image[off..off + 4].copy_from_slice(&v.to_le_bytes());
    }
    Ok(Assembly {
        image,
        symbols: labels,
    })
}

fn stmt_size(s: &Stmt) -> u32 {
    match s {
        Stmt::Word(v) => 4 * v.len() as u32,
        Stmt::Instr { mnemonic, .. } => instr_size(mnemonic),
    }
}

/// Decodes every word after the vector table. Undecodable words (data) come
/// back as `None`.
pub fn disassemble(image: &[u8]) -> Vec<(u32, Option<Instr>)> {
    image
        .get(VECTOR_TABLE_BYTES as usize..)
        .unwrap_or(&[])
        .chunks_exact(4)
        .enumerate()
        .map(|(i, w)| {
            (
                VECTOR_TABLE_BYTES + 4 * i as u32,
                Instr::decode(w.try_into().unwrap()),
            )
        })
        .collect()
}
