use crate::bytes::Reader;
use crate::digest::Digest;

use super::isa::Instr;

/// Linear memory page size in bytes.
pub const PAGE_SIZE: usize = 64 * 1024;
/// Upper bound on `memory_pages_initial` (256 MiB).
pub const MAX_PAGES: u32 = 4096;

const MODULE_MAGIC: &[u8; 4] = b"PVMM";
const MODULE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Function {
    /// Debug name; part of the encoded binary and therefore of the measurement.
    pub name: String,
    pub param_count: u32,
    pub local_count: u32,
    pub code: Vec<Instr>,
}

impl Function {
    /// Total number of local slots (parameters first).
    pub fn frame_size(&self) -> usize {
        self.param_count as usize + self.local_count as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ValidationError {
    #[error("module has no functions")]
    NoFunctions,
    #[error("entry function {0} does not exist")]
    MissingEntry(u32),
    #[error("entry function {0} takes {1} parameters; expected 0")]
    EntryHasParams(u32, u32),
    #[error("memory_pages_initial {0} exceeds limit {MAX_PAGES}")]
    TooManyPages(u32),
    #[error("function {0} has empty code")]
    EmptyFunction(u32),
    #[error("function {0} does not end with return or halt")]
    MissingTerminator(u32),
    #[error("function {func} offset {offset}: local {local} out of range (frame size {frame})")]
    LocalOutOfRange {
        func: u32,
        offset: u32,
        local: u32,
        frame: usize,
    },
    #[error("function {func} offset {offset}: call target {target} out of range ({count} functions)")]
    CallOutOfRange {
        func: u32,
        offset: u32,
        target: u32,
        count: usize,
    },
    #[error("function {func} offset {offset}: branch target {target} outside code of length {len}")]
    BranchOutOfRange {
        func: u32,
        offset: u32,
        target: u32,
        len: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeModuleError {
    #[error("bad module magic")]
    BadMagic,
    #[error("unsupported module version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated module: {0}")]
    Truncated(#[from] crate::bytes::Truncated),
    #[error("invalid opcode at byte {0}")]
    BadOpcode(usize),
    #[error("function name is not utf-8")]
    BadName,
    #[error("{0} trailing bytes after module")]
    TrailingBytes(usize),
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

/// A validated program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Module {
    functions: Vec<Function>,
    memory_pages_initial: u32,
    entry_function: u32,
}

impl Module {
    pub fn new(
        functions: Vec<Function>,
        memory_pages_initial: u32,
        entry_function: u32,
    ) -> Result<Self, ValidationError> {
        let m = Module {
            functions,
            memory_pages_initial,
            entry_function,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn functions(&self) -> &[Function] {
        &self.functions
    }

    pub fn function(&self, index: u32) -> Option<&Function> {
        self.functions.get(index as usize)
    }

    pub fn memory_pages_initial(&self) -> u32 {
        self.memory_pages_initial
    }

    pub fn memory_bytes(&self) -> usize {
        self.memory_pages_initial as usize * PAGE_SIZE
    }

    pub fn entry_function(&self) -> u32 {
        self.entry_function
    }

    pub fn function_index(&self, name: &str) -> Option<u32> {
        self.functions
            .iter()
            .position(|f| f.name == name)
            .map(|i| i as u32)
    }

    fn validate(&self) -> Result<(), ValidationError> {
        if self.functions.is_empty() {
            return Err(ValidationError::NoFunctions);
        }
        if self.memory_pages_initial > MAX_PAGES {
            return Err(ValidationError::TooManyPages(self.memory_pages_initial));
        }
        let entry = self
            .function(self.entry_function)
            .ok_or(ValidationError::MissingEntry(self.entry_function))?;
        if entry.param_count != 0 {
            return Err(ValidationError::EntryHasParams(
                self.entry_function,
                entry.param_count,
            ));
        }
        let count = self.functions.len();
        for (fi, f) in self.functions.iter().enumerate() {
            let func = fi as u32;
            match f.code.last() {
                None => return Err(ValidationError::EmptyFunction(func)),
                Some(last) if !last.is_terminator() => {
                    return Err(ValidationError::MissingTerminator(func))
                }
                _ => {}
            }
            for (oi, instr) in f.code.iter().enumerate() {
                let offset = oi as u32;
                match *instr {
                    Instr::LocalGet(l) | Instr::LocalSet(l) if l as usize >= f.frame_size() => {
                        return Err(ValidationError::LocalOutOfRange {
                            func,
                            offset,
                            local: l,
                            frame: f.frame_size(),
                        })
                    }
                    Instr::Call(t) if t as usize >= count => {
                        return Err(ValidationError::CallOutOfRange {
                            func,
                            offset,
                            target: t,
                            count,
                        })
                    }
                    Instr::Br(t) | Instr::BrIf(t) if t as usize >= f.code.len() => {
                        return Err(ValidationError::BranchOutOfRange {
                            func,
                            offset,
                            target: t,
                            len: f.code.len(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Canonical binary encoding. This is the byte string that gets measured.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODULE_MAGIC);
        out.extend_from_slice(&MODULE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.memory_pages_initial.to_le_bytes());
        out.extend_from_slice(&self.entry_function.to_le_bytes());
        out.extend_from_slice(&(self.functions.len() as u32).to_le_bytes());
        for f in &self.functions {
            let name = f.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.extend_from_slice(&f.param_count.to_le_bytes());
            out.extend_from_slice(&f.local_count.to_le_bytes());
            out.extend_from_slice(&(f.code.len() as u32).to_le_bytes());
            for i in &f.code {
                i.encode_into(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DecodeModuleError> {
        let mut r = Reader::new(bytes);
        if &r.array::<4>()? != MODULE_MAGIC {
            return Err(DecodeModuleError::BadMagic);
        }
        let version = r.u16()?;
        if version != MODULE_VERSION {
            return Err(DecodeModuleError::UnsupportedVersion(version));
        }
        let memory_pages_initial = r.u32()?;
        let entry_function = r.u32()?;
        let nfuncs = r.u32()?;
        let mut functions = Vec::new();
        for _ in 0..nfuncs {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| DecodeModuleError::BadName)?
                .to_owned();
            let param_count = r.u32()?;
            let local_count = r.u32()?;
            let ninstr = r.u32()?;
            let mut code = Vec::new();
            for _ in 0..ninstr {
                let at = r.position();
                let (instr, used) = Instr::decode(&bytes[at..]).ok_or(DecodeModuleError::BadOpcode(at))?;
                r.take(used)?;
                code.push(instr);
            }
            functions.push(Function {
                name,
                param_count,
                local_count,
                code,
            });
        }
        if !r.is_empty() {
            return Err(DecodeModuleError::TrailingBytes(r.remaining()));
        }
        Ok(Module::new(functions, memory_pages_initial, entry_function)?)
    }

    /// SHA-256 of the canonical encoding.
    pub fn measure(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}
