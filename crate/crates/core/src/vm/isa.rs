//! Instruction encoding for the miniature load/store ISA.
//!
//! Every instruction is four bytes: an opcode byte followed by three operand
//! bytes. Wider immediates are little-endian. Operand bytes that an
//! instruction does not use must be zero, otherwise the word does not decode.
//!
//! | mnemonic            | bytes                    |
//! |---------------------|--------------------------|
//! | `NOP`               | `01 00 00 00`            |
//! | `MOVI rd, imm16`    | `02 rd lo hi`            |
//! | `MOVHI rd, imm16`   | `03 rd lo hi`            |
//! | `MOV rd, rs`        | `04 rd rs 00`            |
//! | `ADD..SHR rd,ra,rb` | `10..16 rd ra rb`        |
//! | `ADDI rd, ra, imm8` | `17 rd ra imm8`          |
//! | `LOADn rd,[ra+off]` | `20/21/22 rd ra off`     |
//! | `STOREn rs,[ra+off]`| `24/25/26 rs ra off`     |
//! | `CMP ra, rb`        | `30 ra rb 00`            |
//! | `Bcc rel16`         | `31..34 00 lo hi`        |
//! | `JMP rel16`         | `35 00 lo hi`            |
//! | `JMPABS rs`         | `36 rs 00 00`            |
//! | `CALL rel16`        | `37 00 lo hi`            |
//! | `RET` `IRET` `WFI`  | `38`/`39`/`3A 00 00 00`  |
//!
//! Relative targets are byte offsets from the address of the branch itself,
//! so `JMP .` encodes `rel16 = 0`. `CMP` compares unsigned.

use std::fmt;

pub const INSTR_BYTES: u32 = 4;
pub const NUM_GPRS: usize = 8;
/// `CALL` writes the return address here; `RET` jumps through it.
pub const LINK_REG: Reg = Reg(7);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Reg(pub u8);

impl Reg {
    pub fn new(index: u8) -> Option<Reg> {
        ((index as usize) < NUM_GPRS).then_some(Reg(index))
    }

    #[inline]
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Reg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

/// Access width of a load, store or MMIO transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Width {
    Byte,
    Half,
    Word,
}

impl Width {
    #[inline]
    pub const fn bytes(self) -> u32 {
        match self {
            Width::Byte => 1,
            Width::Half => 2,
            Width::Word => 4,
        }
    }

    #[inline]
    pub const fn mask(self) -> u32 {
        match self {
            Width::Byte => 0xFF,
            Width::Half => 0xFFFF,
            Width::Word => 0xFFFF_FFFF,
        }
    }

    pub fn from_bytes(n: u32) -> Option<Width> {
        match n {
            1 => Some(Width::Byte),
            2 => Some(Width::Half),
            4 => Some(Width::Word),
            _ => None,
        }
    }

    fn suffix(self) -> u32 {
        self.bytes() * 8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AluOp {
    Add,
    Sub,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AluOp {
    pub const ALL: [AluOp; 7] = [
        AluOp::Add,
        AluOp::Sub,
        AluOp::And,
        AluOp::Or,
        AluOp::Xor,
        AluOp::Shl,
        AluOp::Shr,
    ];

    #[inline]
    pub fn apply(self, a: u32, b: u32) -> u32 {
        match self {
            AluOp::Add => a.wrapping_add(b),
            AluOp::Sub => a.wrapping_sub(b),
            AluOp::And => a & b,
            AluOp::Or => a | b,
            AluOp::Xor => a ^ b,
            AluOp::Shl => a << (b & 31),
            AluOp::Shr => a >> (b & 31),
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            AluOp::Add => "ADD",
            AluOp::Sub => "SUB",
            AluOp::And => "AND",
            AluOp::Or => "OR",
            AluOp::Xor => "XOR",
            AluOp::Shl => "SHL",
            AluOp::Shr => "SHR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cond {
    Eq,
    Ne,
    Lt,
    Ge,
}

impl Cond {
    pub const ALL: [Cond; 4] = [Cond::Eq, Cond::Ne, Cond::Lt, Cond::Ge];

    #[inline]
    pub fn holds(self, flags: Flags) -> bool {
        match self {
            Cond::Eq => flags.eq,
            Cond::Ne => !flags.eq,
            Cond::Lt => flags.lt,
            Cond::Ge => !flags.lt,
        }
    }

    fn mnemonic(self) -> &'static str {
        match self {
            Cond::Eq => "BEQ",
            Cond::Ne => "BNE",
            Cond::Lt => "BLT",
            Cond::Ge => "BGE",
        }
    }
}

/// Condition flags set by `CMP`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Flags {
    pub eq: bool,
    pub lt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    Nop,
    Movi {
        rd: Reg,
        imm: u16,
    },
    Movhi {
        rd: Reg,
        imm: u16,
    },
    Mov {
        rd: Reg,
        rs: Reg,
    },
    Alu {
        op: AluOp,
        rd: Reg,
        ra: Reg,
        rb: Reg,
    },
    Addi {
        rd: Reg,
        ra: Reg,
        imm: i8,
    },
    Load {
        width: Width,
        rd: Reg,
        base: Reg,
        offset: i8,
    },
    Store {
        width: Width,
        rs: Reg,
        base: Reg,
        offset: i8,
    },
    Cmp {
        ra: Reg,
        rb: Reg,
    },
    Branch {
        cond: Cond,
        rel: i16,
    },
    Jmp {
        rel: i16,
    },
    JmpAbs {
        rs: Reg,
    },
    Call {
        rel: i16,
    },
    Ret,
    Iret,
    Wfi,
}

pub mod opcode {
    pub const NOP: u8 = 0x01;
    pub const MOVI: u8 = 0x02;
    pub const MOVHI: u8 = 0x03;
    pub const MOV: u8 = 0x04;
    pub const ADD: u8 = 0x10;
    pub const SHR: u8 = 0x16;
    pub const ADDI: u8 = 0x17;
    pub const LOAD8: u8 = 0x20;
    pub const LOAD16: u8 = 0x21;
    pub const LOAD32: u8 = 0x22;
    pub const STORE8: u8 = 0x24;
    pub const STORE16: u8 = 0x25;
    pub const STORE32: u8 = 0x26;
    pub const CMP: u8 = 0x30;
    pub const BEQ: u8 = 0x31;
    pub const BGE: u8 = 0x34;
    pub const JMP: u8 = 0x35;
    pub const JMPABS: u8 = 0x36;
    pub const CALL: u8 = 0x37;
    pub const RET: u8 = 0x38;
    pub const IRET: u8 = 0x39;
    pub const WFI: u8 = 0x3A;
}

fn width_from_offset(n: u8) -> Option<Width> {
    match n {
        0 => Some(Width::Byte),
        1 => Some(Width::Half),
        2 => Some(Width::Word),
        _ => None,
    }
}

fn width_offset(w: Width) -> u8 {
    match w {
        Width::Byte => 0,
        Width::Half => 1,
        Width::Word => 2,
    }
}

impl Instr {
    /// Control transfers end a basic block whether or not they are taken.
    #[inline]
    pub fn ends_block(&self) -> bool {
        matches!(
            self,
            Instr::Branch { .. }
                | Instr::Jmp { .. }
                | Instr::JmpAbs { .. }
                | Instr::Call { .. }
                | Instr::Ret
                | Instr::Iret
        )
    }

    pub fn encode(&self) -> [u8; 4] {
        use opcode::*;
        let rel = |op: u8, rel: i16| {
            let [lo, hi] = rel.to_le_bytes();
            [op, 0, lo, hi]
        };
        match *self {
            Instr::Nop => [NOP, 0, 0, 0],
            Instr::Movi { rd, imm } => {
                let [lo, hi] = imm.to_le_bytes();
                [MOVI, rd.0, lo, hi]
            }
            Instr::Movhi { rd, imm } => {
                let [lo, hi] = imm.to_le_bytes();
                [MOVHI, rd.0, lo, hi]
            }
            Instr::Mov { rd, rs } => [MOV, rd.0, rs.0, 0],
            Instr::Alu { op, rd, ra, rb } => {
                let idx = AluOp::ALL.iter().position(|o| *o == op).unwrap() as u8;
                [ADD + idx, rd.0, ra.0, rb.0]
            }
            Instr::Addi { rd, ra, imm } => [ADDI, rd.0, ra.0, imm as u8],
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => [LOAD8 + width_offset(width), rd.0, base.0, offset as u8],
            Instr::Store {
                width,
                rs,
                base,
                offset,
            } => [STORE8 + width_offset(width), rs.0, base.0, offset as u8],
            Instr::Cmp { ra, rb } => [CMP, ra.0, rb.0, 0],
            Instr::Branch { cond, rel: r } => {
                let idx = Cond::ALL.iter().position(|c| *c == cond).unwrap() as u8;
                rel(BEQ + idx, r)
            }
            Instr::Jmp { rel: r } => rel(JMP, r),
            Instr::JmpAbs { rs } => [JMPABS, rs.0, 0, 0],
            Instr::Call { rel: r } => rel(CALL, r),
            Instr::Ret => [RET, 0, 0, 0],
            Instr::Iret => [IRET, 0, 0, 0],
            Instr::Wfi => [WFI, 0, 0, 0],
        }
    }

    /// Decodes one instruction word. Returns `None` for undefined opcodes,
    /// out-of-range register numbers and non-zero unused operand bytes.
    #[inline]
    pub fn decode(bytes: [u8; 4]) -> Option<Instr> {
        use opcode::*;
        let [op, a, b, c] = bytes;
        let reg = Reg::new;
        let imm16 = u16::from_le_bytes([b, c]);
        let rel16 = imm16 as i16;
        let instr = match op {
            NOP if a | b | c == 0 => Instr::Nop,
            MOVI => Instr::Movi {
                rd: reg(a)?,
                imm: imm16,
            },
            MOVHI => Instr::Movhi {
                rd: reg(a)?,
                imm: imm16,
            },
            MOV if c == 0 => Instr::Mov {
                rd: reg(a)?,
                rs: reg(b)?,
            },
            ADD..=SHR => Instr::Alu {
                op: AluOp::ALL[(op - ADD) as usize],
                rd: reg(a)?,
                ra: reg(b)?,
                rb: reg(c)?,
            },
            ADDI => Instr::Addi {
                rd: reg(a)?,
                ra: reg(b)?,
                imm: c as i8,
            },
            LOAD8..=LOAD32 => Instr::Load {
                width: width_from_offset(op - LOAD8)?,
                rd: reg(a)?,
                base: reg(b)?,
                offset: c as i8,
            },
            STORE8..=STORE32 => Instr::Store {
                width: width_from_offset(op - STORE8)?,
                rs: reg(a)?,
                base: reg(b)?,
                offset: c as i8,
            },
            CMP if c == 0 => Instr::Cmp {
                ra: reg(a)?,
                rb: reg(b)?,
            },
            BEQ..=BGE if a == 0 => Instr::Branch {
                cond: Cond::ALL[(op - BEQ) as usize],
                rel: rel16,
            },
            JMP if a == 0 => Instr::Jmp { rel: rel16 },
            JMPABS if b | c == 0 => Instr::JmpAbs { rs: reg(a)? },
            CALL if a == 0 => Instr::Call { rel: rel16 },
            RET if a | b | c == 0 => Instr::Ret,
            IRET if a | b | c == 0 => Instr::Iret,
            WFI if a | b | c == 0 => Instr::Wfi,
            _ => return None,
        };
        Some(instr)
    }
}

fn signed_offset(f: &mut fmt::Formatter<'_>, base: Reg, offset: i8) -> fmt::Result {
    match offset {
        0 => write!(f, "[{base}]"),
        o if o < 0 => write!(f, "[{base}-{}]", -(o as i16)),
        o => write!(f, "[{base}+{o}]"),
    }
}

fn rel_target(f: &mut fmt::Formatter<'_>, rel: i16) -> fmt::Result {
    match rel {
        0 => write!(f, "."),
        r if r < 0 => write!(f, ".-{}", -(r as i32)),
        r => write!(f, ".+{r}"),
    }
}

/// Formats instructions in assembler syntax. Relative targets print as
/// offsets from `.`, which the assembler accepts back.
impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Instr::Nop => write!(f, "NOP"),
            Instr::Movi { rd, imm } => write!(f, "MOVI {rd}, 0x{imm:x}"),
            Instr::Movhi { rd, imm } => write!(f, "MOVHI {rd}, 0x{imm:x}"),
            Instr::Mov { rd, rs } => write!(f, "MOV {rd}, {rs}"),
            Instr::Alu { op, rd, ra, rb } => write!(f, "{} {rd}, {ra}, {rb}", op.mnemonic()),
            Instr::Addi { rd, ra, imm } => write!(f, "ADDI {rd}, {ra}, {imm}"),
            Instr::Load {
                width,
                rd,
                base,
                offset,
            } => {
                write!(f, "LOAD{} {rd}, ", width.suffix())?;
                signed_offset(f, base, offset)
            }
            Instr::Store {
                width,
                rs,
                base,
                offset,
            } => {
                write!(f, "STORE{} {rs}, ", width.suffix())?;
                signed_offset(f, base, offset)
            }
            Instr::Cmp { ra, rb } => write!(f, "CMP {ra}, {rb}"),
            Instr::Branch { cond, rel } => {
                write!(f, "{} ", cond.mnemonic())?;
                rel_target(f, rel)
            }
            Instr::Jmp { rel } => {
                write!(f, "JMP ")?;
                rel_target(f, rel)
            }
            Instr::JmpAbs { rs } => write!(f, "JMPABS {rs}"),
            Instr::Call { rel } => {
                write!(f, "CALL ")?;
                rel_target(f, rel)
            }
            Instr::Ret => write!(f, "RET"),
            Instr::Iret => write!(f, "IRET"),
            Instr::Wfi => write!(f, "WFI"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_reg() -> impl Strategy<Value = Reg> {
        (0u8..8).prop_map(Reg)
    }

    fn arb_width() -> impl Strategy<Value = Width> {
        prop_oneof![Just(Width::Byte), Just(Width::Half), Just(Width::Word)]
    }

    pub(crate) fn arb_instr() -> impl Strategy<Value = Instr> {
        prop_oneof![
            Just(Instr::Nop),
            (arb_reg(), any::<u16>()).prop_map(|(rd, imm)| Instr::Movi { rd, imm }),
            (arb_reg(), any::<u16>()).prop_map(|(rd, imm)| Instr::Movhi { rd, imm }),
            (arb_reg(), arb_reg()).prop_map(|(rd, rs)| Instr::Mov { rd, rs }),
            (0usize..7, arb_reg(), arb_reg(), arb_reg()).prop_map(|(o, rd, ra, rb)| Instr::Alu {
                op: AluOp::ALL[o],
                rd,
                ra,
                rb
            }),
            (arb_reg(), arb_reg(), any::<i8>()).prop_map(|(rd, ra, imm)| Instr::Addi {
                rd,
                ra,
                imm
            }),
            (arb_width(), arb_reg(), arb_reg(), any::<i8>()).prop_map(
                |(width, rd, base, offset)| {
                    Instr::Load {
                        width,
                        rd,
                        base,
                        offset,
                    }
                }
            ),
            (arb_width(), arb_reg(), arb_reg(), any::<i8>()).prop_map(
                |(width, rs, base, offset)| {
                    Instr::Store {
                        width,
                        rs,
                        base,
                        offset,
                    }
                }
            ),
            (arb_reg(), arb_reg()).prop_map(|(ra, rb)| Instr::Cmp { ra, rb }),
            (0usize..4, any::<i16>()).prop_map(|(c, rel)| Instr::Branch {
                cond: Cond::ALL[c],
                rel
            }),
            any::<i16>().prop_map(|rel| Instr::Jmp { rel }),
            arb_reg().prop_map(|rs| Instr::JmpAbs { rs }),
            any::<i16>().prop_map(|rel| Instr::Call { rel }),
            Just(Instr::Ret),
            Just(Instr::Iret),
            Just(Instr::Wfi),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(i in arb_instr()) {
            prop_assert_eq!(Instr::decode(i.encode()), Some(i));
        }

        #[test]
        fn decoded_words_reencode_identically(word in any::<[u8; 4]>()) {
            if let Some(i) = Instr::decode(word) {
                prop_assert_eq!(i.encode(), word);
            }
        }
    }

    #[test]
    fn fixed_encodings() {
        assert_eq!(Instr::Movi { rd: Reg(0), imm: 5 }.encode(), [0x02, 0, 5, 0]);
        assert_eq!(Instr::Jmp { rel: 0 }.encode(), [0x35, 0, 0, 0]);
        assert_eq!(Instr::decode([0, 0, 0, 0]), None);
        assert_eq!(Instr::decode([0x04, 9, 0, 0]), None);
        assert_eq!(Instr::decode([0x01, 0, 0, 1]), None);
    }

    #[test]
    fn only_control_transfers_end_blocks() {
        assert!(Instr::Ret.ends_block());
        assert!(Instr::Branch {
            cond: Cond::Eq,
            rel: 8
        }
        .ends_block());
        assert!(!Instr::Wfi.ends_block());
        assert!(!Instr::Nop.ends_block());
    }
}
