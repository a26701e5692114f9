//! The instruction set: sixteen Wasm-flavored opcodes over 64-bit signed integers.

use std::fmt;

/// Opcode bytes used by the canonical module encoding.
pub mod opcode {
    pub const CONST_I64: u8 = 0x01;
    pub const LOCAL_GET: u8 = 0x02;
    pub const LOCAL_SET: u8 = 0x03;
    pub const I64_ADD: u8 = 0x10;
    pub const I64_SUB: u8 = 0x11;
    pub const I64_MUL: u8 = 0x12;
    pub const I64_EQ: u8 = 0x13;
    pub const I64_LT_S: u8 = 0x14;
    pub const MEM_LOAD64: u8 = 0x20;
    pub const MEM_STORE64: u8 = 0x21;
    pub const BR: u8 = 0x30;
    pub const BR_IF: u8 = 0x31;
    pub const CALL: u8 = 0x32;
    pub const RETURN: u8 = 0x33;
    pub const HALT: u8 = 0x34;
    pub const CHECKPOINT: u8 = 0x40;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Instr {
    /// Push an immediate.
    Const(i64),
    LocalGet(u32),
    LocalSet(u32),
    Add,
    Sub,
    Mul,
    /// Push 1 if the two top values are equal, else 0.
    Eq,
    /// Push 1 if `a < b` (signed) where `b` is the top value, else 0.
    LtS,
    /// Pop an address, push the little-endian i64 stored there.
    Load,
    /// Pop a value, then an address, and store the value.
    Store,
    /// Jump to an absolute instruction offset within the current function.
    Br(u32),
    /// Pop a condition; jump when it is non-zero.
    BrIf(u32),
    Call(u32),
    Return,
    Halt,
    /// Explicit stable-point marker; a no-op when executed.
    Checkpoint,
}

impl Instr {
    pub fn opcode(&self) -> u8 {
        use opcode::*;
        match self {
            Instr::Const(_) => CONST_I64,
            Instr::LocalGet(_) => LOCAL_GET,
            Instr::LocalSet(_) => LOCAL_SET,
            Instr::Add => I64_ADD,
            Instr::Sub => I64_SUB,
            Instr::Mul => I64_MUL,
            Instr::Eq => I64_EQ,
            Instr::LtS => I64_LT_S,
            Instr::Load => MEM_LOAD64,
            Instr::Store => MEM_STORE64,
            Instr::Br(_) => BR,
            Instr::BrIf(_) => BR_IF,
            Instr::Call(_) => CALL,
            Instr::Return => RETURN,
            Instr::Halt => HALT,
            Instr::Checkpoint => CHECKPOINT,
        }
    }

    pub fn mnemonic(&self) -> &'static str {
        match self {
            Instr::Const(_) => "const.i64",
            Instr::LocalGet(_) => "local.get",
            Instr::LocalSet(_) => "local.set",
            Instr::Add => "i64.add",
            Instr::Sub => "i64.sub",
            Instr::Mul => "i64.mul",
            Instr::Eq => "i64.eq",
            Instr::LtS => "i64.lt_s",
            Instr::Load => "mem.load64",
            Instr::Store => "mem.store64",
            Instr::Br(_) => "br",
            Instr::BrIf(_) => "br_if",
            Instr::Call(_) => "call",
            Instr::Return => "return",
            Instr::Halt => "halt",
            Instr::Checkpoint => "checkpoint",
        }
    }

    /// Branch target, if this is a branch.
    pub fn branch_target(&self) -> Option<u32> {
        match self {
            Instr::Br(t) | Instr::BrIf(t) => Some(*t),
            _ => None,
        }
    }

    pub fn is_terminator(&self) -> bool {
        matches!(self, Instr::Return | Instr::Halt)
    }

    /// Append the canonical encoding: opcode byte followed by little-endian immediates.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode());
        match self {
            Instr::Const(v) => out.extend_from_slice(&v.to_le_bytes()),
            Instr::LocalGet(i)
            | Instr::LocalSet(i)
            | Instr::Br(i)
            | Instr::BrIf(i)
            | Instr::Call(i) => out.extend_from_slice(&i.to_le_bytes()),
            _ => {}
        }
    }

    /// Decode one instruction from the front of `bytes`, returning it and the bytes consumed.
    pub fn decode(bytes: &[u8]) -> Option<(Instr, usize)> {
        use opcode::*;
        let (&op, rest) = bytes.split_first()?;
        let u32_imm = || -> Option<u32> { Some(u32::from_le_bytes(rest.get(..4)?.try_into().ok()?)) };
        let instr = match op {
            CONST_I64 => {
                let v = i64::from_le_bytes(rest.get(..8)?.try_into().ok()?);
                return Some((Instr::Const(v), 9));
            }
            LOCAL_GET => Instr::LocalGet(u32_imm()?),
            LOCAL_SET => Instr::LocalSet(u32_imm()?),
            BR => Instr::Br(u32_imm()?),
            BR_IF => Instr::BrIf(u32_imm()?),
            CALL => Instr::Call(u32_imm()?),
            I64_ADD => return Some((Instr::Add, 1)),
            I64_SUB => return Some((Instr::Sub, 1)),
            I64_MUL => return Some((Instr::Mul, 1)),
            I64_EQ => return Some((Instr::Eq, 1)),
            I64_LT_S => return Some((Instr::LtS, 1)),
            MEM_LOAD64 => return Some((Instr::Load, 1)),
            MEM_STORE64 => return Some((Instr::Store, 1)),
            RETURN => return Some((Instr::Return, 1)),
            HALT => return Some((Instr::Halt, 1)),
            CHECKPOINT => return Some((Instr::Checkpoint, 1)),
            _ => return None,
        };
        Some((instr, 5))
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Const(v) => write!(f, "{} {}", self.mnemonic(), v),
            Instr::LocalGet(i)
            | Instr::LocalSet(i)
            | Instr::Br(i)
            | Instr::BrIf(i)
            | Instr::Call(i) => write!(f, "{} {}", self.mnemonic(), i),
            _ => f.write_str(self.mnemonic()),
        }
    }
}
