//! Line-oriented assembly text.
//!
//! ```text
//! .memory 1                ; optional, pages of 64 KiB (default 1)
//! .entry main              ; optional, defaults to `main` or the first function
//! .func main 0 2           ; name, parameter count, extra local count
//!     const.i64 0
//!     local.set 0
//! loop:                    ; label, usable as a branch operand
//!     ...
//!     br_if loop
//!     local.get 0
//!     halt
//! .end
//! ```
//!
//! Comments start with `;` or `#`. Branch operands are labels or absolute
//! instruction offsets; call operands are function names or indices.
//! The full grammar is documented in `docs/assembly.md`.

use std::collections::HashMap;

use super::isa::Instr;
use super::module::{Function, Module, ValidationError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AsmError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("validation failed: {0}")]
    Validation(#[from] ValidationError),
}

fn parse_err(line: usize, reason: impl Into<String>) -> AsmError {
    AsmError::Parse {
        line,
        reason: reason.into(),
    }
}

enum Operand {
    None,
    Int(i64),
    Name(String),
}

struct PendingInstr {
    line: usize,
    mnemonic: String,
    operand: Operand,
}

struct PendingFunc {
    line: usize,
    name: String,
    params: u32,
    locals: u32,
    labels: HashMap<String, u32>,
    body: Vec<PendingInstr>,
}

fn parse_int(tok: &str) -> Option<i64> {
    let (neg, digits) = match tok.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, tok),
    };
    let mag = if let Some(hex) = digits.strip_prefix("0x") {
        u64::from_str_radix(hex, 16).ok()? as i64
    } else {
        digits.parse::<u64>().ok()? as i64
    };
    Some(if neg { mag.wrapping_neg() } else { mag })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_' || c == '$')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$' || c == '.')
}

fn strip_comment(line: &str) -> &str {
    let cut = line.find([';', '#']).unwrap_or(line.len());
    line[..cut].trim()
}

/// Assemble source text into a validated [`Module`].
pub fn assemble(source: &str) -> Result<Module, AsmError> {
    let mut memory_pages: u32 = 1;
    let mut entry_name: Option<(usize, String)> = None;
    let mut funcs: Vec<PendingFunc> = Vec::new();
    let mut current: Option<PendingFunc> = None;

    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = strip_comment(raw);
        if text.is_empty() {
            continue;
        }
        if let Some(directive) = text.strip_prefix('.') {
            let toks: Vec<&str> = directive.split_whitespace().collect();
            match toks.as_slice() {
                ["memory", n] => {
                    if current.is_some() {
                        return Err(parse_err(line, ".memory inside a function"));
                    }
                    memory_pages = n
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad page count `{n}`")))?;
                }
                ["entry", name] => entry_name = Some((line, name.to_string())),
                ["func", name, params, locals] => {
                    if current.is_some() {
                        return Err(parse_err(line, "nested .func (missing .end)"));
                    }
                    if !is_ident(name) {
                        return Err(parse_err(line, format!("bad function name `{name}`")));
                    }
                    if funcs.iter().any(|f| f.name == *name) {
                        return Err(parse_err(line, format!("duplicate function `{name}`")));
                    }
                    let params = params
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad parameter count `{params}`")))?;
                    let locals = locals
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad local count `{locals}`")))?;
                    current = Some(PendingFunc {
                        line,
                        name: name.to_string(),
                        params,
                        locals,
                        labels: HashMap::new(),
                        body: Vec::new(),
                    });
                }
                ["end"] => match current.take() {
                    Some(f) => funcs.push(f),
                    None => return Err(parse_err(line, ".end without .func")),
                },
                _ => return Err(parse_err(line, format!("unknown directive `.{directive}`"))),
            }
            continue;
        }

        let func = current
            .as_mut()
            .ok_or_else(|| parse_err(line, "instruction outside .func"))?;

        // Optional `label:` prefix, possibly followed by an instruction.
        if let Some(colon) = text.find(':') {
            let label = text[..colon].trim();
            if !is_ident(label) {
                return Err(parse_err(line, format!("bad label `{label}`")));
            }
            let offset = func.body.len() as u32;
            if func.labels.insert(label.to_string(), offset).is_some() {
                return Err(parse_err(line, format!("duplicate label `{label}`")));
            }
            text = text[colon + 1..].trim();
            if text.is_empty() {
                continue;
            }
        }

        let mut toks = text.split_whitespace();
        let mnemonic = toks.next().expect("non-empty line").to_string();
        let operand = match toks.next() {
            None => Operand::None,
            Some(t) => match parse_int(t) {
                Some(v) => Operand::Int(v),
                None if is_ident(t) => Operand::Name(t.to_string()),
                None => return Err(parse_err(line, format!("bad operand `{t}`"))),
            },
        };
        if let Some(extra) = toks.next() {
            return Err(parse_err(line, format!("unexpected token `{extra}`")));
        }
        func.body.push(PendingInstr {
            line,
            mnemonic,
            operand,
        });
    }

    if let Some(f) = current {
        return Err(parse_err(f.line, format!("function `{}` missing .end", f.name)));
    }
    if funcs.is_empty() {
        return Err(parse_err(source.lines().count().max(1), "no functions"));
    }

    let func_index: HashMap<&str, u32> = funcs
        .iter()
        .enumerate()
        .map(|(i, f)| (f.name.as_str(), i as u32))
        .collect();

    let entry = match &entry_name {
        Some((line, name)) => *func_index
            .get(name.as_str())
            .ok_or_else(|| parse_err(*line, format!("unknown entry function `{name}`")))?,
        None => func_index.get("main").copied().unwrap_or(0),
    };

    let mut functions = Vec::with_capacity(funcs.len());
    for f in &funcs {
        let mut code = Vec::with_capacity(f.body.len());
        for p in &f.body {
            code.push(lower(p, f, &func_index)?);
        }
        functions.push(Function {
            name: f.name.clone(),
            param_count: f.params,
            local_count: f.locals,
            code,
        });
    }
    Ok(Module::new(functions, memory_pages, entry)?)
}

fn u32_operand(p: &PendingInstr, v: i64) -> Result<u32, AsmError> {
    u32::try_from(v).map_err(|_| parse_err(p.line, format!("operand {v} out of range")))
}

fn lower(
    p: &PendingInstr,
    f: &PendingFunc,
    funcs: &HashMap<&str, u32>,
) -> Result<Instr, AsmError> {
    let need_none = |instr: Instr| match p.operand {
        Operand::None => Ok(instr),
        _ => Err(parse_err(p.line, format!("`{}` takes no operand", p.mnemonic))),
    };
    let int = || match &p.operand {
        Operand::Int(v) => Ok(*v),
        _ => Err(parse_err(p.line, format!("`{}` needs an integer operand", p.mnemonic))),
    };
    let target = || match &p.operand {
        Operand::Int(v) => u32_operand(p, *v),
        Operand::Name(l) => f
            .labels
            .get(l)
            .copied()
            .ok_or_else(|| parse_err(p.line, format!("unknown label `{l}`"))),
        Operand::None => Err(parse_err(p.line, "branch needs a target")),
    };
    Ok(match p.mnemonic.as_str() {
        "const.i64" => Instr::Const(int()?),
        "local.get" => Instr::LocalGet(u32_operand(p, int()?)?),
        "local.set" => Instr::LocalSet(u32_operand(p, int()?)?),
        "i64.add" => need_none(Instr::Add)?,
        "i64.sub" => need_none(Instr::Sub)?,
        "i64.mul" => need_none(Instr::Mul)?,
        "i64.eq" => need_none(Instr::Eq)?,
        "i64.lt_s" => need_none(Instr::LtS)?,
        "mem.load64" => need_none(Instr::Load)?,
        "mem.store64" => need_none(Instr::Store)?,
        "br" => Instr::Br(target()?),
        "br_if" => Instr::BrIf(target()?),
        "call" => Instr::Call(match &p.operand {
            Operand::Int(v) => u32_operand(p, *v)?,
            Operand::Name(n) => *funcs
                .get(n.as_str())
                .ok_or_else(|| parse_err(p.line, format!("unknown function `{n}`")))?,
            Operand::None => return Err(parse_err(p.line, "call needs a target")),
        }),
        "return" => need_none(Instr::Return)?,
        "halt" => need_none(Instr::Halt)?,
        "checkpoint" => need_none(Instr::Checkpoint)?,
        other => return Err(parse_err(p.line, format!("unknown mnemonic `{other}`"))),
    })
}

/// Render a module back to assembly text that re-assembles to the same module.
pub fn disassemble(module: &Module) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, ".memory {}", module.memory_pages_initial());
    let _ = writeln!(
        out,
        ".entry {}",
        module.functions()[module.entry_function() as usize].name
    );
    for f in module.functions() {
        let _ = writeln!(out, ".func {} {} {}", f.name, f.param_count, f.local_count);
        for (i, instr) in f.code.iter().enumerate() {
            let _ = writeln!(out, "    {instr:<20} ; {i}");
        }
        let _ = writeln!(out, ".end");
    }
    out
}
