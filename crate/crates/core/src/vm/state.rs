//! Captured execution state and its canonical little-endian encoding.

use crate::bytes::{Reader, Truncated};
use crate::digest::Digest;

use super::module::{Module, PAGE_SIZE};

const STATE_MAGIC: &[u8; 4] = b"PVMS";
const STATE_VERSION: u16 = 1;

/// A position in the program: function index and instruction offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Position {
    pub function: u32,
    pub offset: u32,
}

impl Position {
    pub fn new(function: u32, offset: u32) -> Self {
        Position { function, offset }
    }
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}@{}", self.function, self.offset)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub function: u32,
    /// Where the caller resumes; `None` only for the bottom (entry) frame.
    pub return_position: Option<Position>,
    pub locals: Vec<i64>,
    pub operands: Vec<i64>,
}

/// Complete, self-contained VM state at a stable point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionState {
    pub module_measurement: Digest,
    pub frames: Vec<Frame>,
    pub memory: Vec<u8>,
    /// Next instruction of the top frame.
    pub position: Position,
    pub steps_executed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateDecodeError {
    #[error("bad state magic")]
    BadMagic,
    #[error("unsupported state version {0}")]
    UnsupportedVersion(u16),
    #[error(transparent)]
    Truncated(#[from] Truncated),
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("{0} trailing bytes after state")]
    TrailingBytes(usize),
}

impl ExecutionState {
    /// SHA-256 over the canonical encoding.
    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }

    pub fn page_count(&self) -> usize {
        self.memory.len() / PAGE_SIZE
    }

    /// Everything except linear memory: steps, position, and frames.
    pub fn control_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.steps_executed.to_le_bytes());
        out.extend_from_slice(&self.position.function.to_le_bytes());
        out.extend_from_slice(&self.position.offset.to_le_bytes());
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for fr in &self.frames {
            out.extend_from_slice(&fr.function.to_le_bytes());
            match fr.return_position {
                None => out.push(0),
                Some(p) => {
                    out.push(1);
                    out.extend_from_slice(&p.function.to_le_bytes());
                    out.extend_from_slice(&p.offset.to_le_bytes());
                }
            }
            out.extend_from_slice(&(fr.locals.len() as u32).to_le_bytes());
            for v in &fr.locals {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(fr.operands.len() as u32).to_le_bytes());
            for v in &fr.operands {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parse the output of [`control_bytes`](Self::control_bytes) and return
    /// `(steps, position, frames)`.
    pub fn parse_control(bytes: &[u8]) -> Result<(u64, Position, Vec<Frame>), StateDecodeError> {
        let mut r = Reader::new(bytes);
        let out = read_control(&mut r)?;
        if !r.is_empty() {
            return Err(StateDecodeError::TrailingBytes(r.remaining()));
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let control = self.control_bytes();
        let mut out = Vec::with_capacity(4 + 2 + 32 + control.len() + 8 + self.memory.len());
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(self.module_measurement.as_bytes());
        out.extend_from_slice(&control);
        out.extend_from_slice(&(self.memory.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.memory);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StateDecodeError> {
        let mut r = Reader::new(bytes);
        if &r.array::<4>()? != STATE_MAGIC {
            return Err(StateDecodeError::BadMagic);
        }
        let version = r.u16()?;
        if version != STATE_VERSION {
            return Err(StateDecodeError::UnsupportedVersion(version));
        }
        let module_measurement = Digest(r.array()?);
        let (steps_executed, position, frames) = read_control(&mut r)?;
        let mem_len = r.u64()?;
        if mem_len % PAGE_SIZE as u64 != 0 {
            return Err(StateDecodeError::Invalid("memory length not a page multiple"));
        }
        let mem_len = usize::try_from(mem_len).map_err(|_| StateDecodeError::Invalid("memory length"))?;
        let memory = r.take(mem_len)?.to_vec();
        if !r.is_empty() {
            return Err(StateDecodeError::TrailingBytes(r.remaining()));
        }
        Ok(ExecutionState {
            module_measurement,
            frames,
            memory,
            position,
            steps_executed,
        })
    }

    /// Structural check against the module the state claims to belong to.
    /// Does not compare measurements.
    pub fn check_against(&self, module: &Module) -> Result<(), String> {
        if self.memory.len() != module.memory_bytes() {
            return Err(format!(
                "memory is {} bytes, module declares {}",
                self.memory.len(),
                module.memory_bytes()
            ));
        }
        let top = self.frames.last().ok_or("no frames")?;
        if top.function != self.position.function {
            return Err("position function differs from top frame".into());
        }
        for (i, fr) in self.frames.iter().enumerate() {
            let f = module
                .function(fr.function)
                .ok_or_else(|| format!("frame {i} references function {}", fr.function))?;
            if fr.locals.len() != f.frame_size() {
                return Err(format!(
                    "frame {i} has {} locals, function declares {}",
                    fr.locals.len(),
                    f.frame_size()
                ));
            }
            match (i, fr.return_position) {
                (0, None) => {}
                (0, Some(_)) => return Err("entry frame has a return position".into()),
                (_, None) => return Err(format!("frame {i} lacks a return position")),
                (_, Some(rp)) => {
                    let caller = &self.frames[i - 1];
                    if rp.function != caller.function {
                        return Err(format!("frame {i} returns into a different function"));
                    }
                    let caller_len = module.function(caller.function).map_or(0, |f| f.code.len());
                    if rp.offset as usize >= caller_len {
                        return Err(format!("frame {i} return offset out of range"));
                    }
                }
            }
        }
        let top_len = module.function(top.function).map_or(0, |f| f.code.len());
        if self.position.offset as usize >= top_len {
            return Err("position offset out of range".into());
        }
        Ok(())
    }
}

fn read_values(r: &mut Reader<'_>) -> Result<Vec<i64>, StateDecodeError> {
    let n = r.u32()? as usize;
    if n > r.remaining() / 8 {
        return Err(Truncated {
            offset: r.position(),
            wanted: n * 8 - r.remaining(),
        }
        .into());
    }
    (0..n).map(|_| Ok(r.i64()?)).collect()
}

fn read_control(r: &mut Reader<'_>) -> Result<(u64, Position, Vec<Frame>), StateDecodeError> {
    let steps = r.u64()?;
    let position = Position::new(r.u32()?, r.u32()?);
    let nframes = r.u32()? as usize;
    let mut frames = Vec::with_capacity(nframes.min(1024));
    for _ in 0..nframes {
        let function = r.u32()?;
        let return_position = match r.u8()? {
            0 => None,
            1 => Some(Position::new(r.u32()?, r.u32()?)),
            _ => return Err(StateDecodeError::Invalid("return position flag")),
        };
        let locals = read_values(r)?;
        let operands = read_values(r)?;
        frames.push(Frame {
            function,
            return_position,
            locals,
            operands,
        });
    }
    Ok((steps, position, frames))
}
