//! Reference interpreter used as an oracle. It shares nothing with the
//! production interpreter beyond the instruction enum: recursive calls, a
//! sparse memory map, and no notion of frames, positions, or stable points.

use std::collections::HashMap;

use portvm_core::vm::{Instr, Module, PAGE_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefOutcome {
    Halted(i64),
    Trapped,
}

pub struct RefMachine<'m> {
    module: &'m Module,
    memory_len: i64,
    memory: HashMap<i64, i64>,
    depth: usize,
}

enum Flow {
    Return(i64),
    Halt(i64),
}

impl<'m> RefMachine<'m> {
    pub fn new(module: &'m Module) -> Self {
        RefMachine {
            module,
            memory_len: module.memory_pages_initial() as i64 * PAGE_SIZE as i64,
            memory: HashMap::new(),
            depth: 0,
        }
    }

    pub fn run(mut self) -> (RefOutcome, Vec<u8>) {
        let outcome = match self.call(self.module.entry_function(), Vec::new()) {
            Ok(Flow::Return(v)) | Ok(Flow::Halt(v)) => RefOutcome::Halted(v),
            Err(()) => RefOutcome::Trapped,
        };
        let mut mem = vec![0u8; self.memory_len as usize];
        for (addr, v) in &self.memory {
            let a = *addr as usize;
            mem[a..a + 8].copy_from_slice(&v.to_le_bytes());
        }
        (outcome, mem)
    }

    fn check(&self, addr: i64) -> Result<i64, ()> {
        if addr < 0 || addr + 8 > self.memory_len || addr % 8 != 0 {
            Err(())
        } else {
            Ok(addr)
        }
    }

    fn call(&mut self, func: u32, args: Vec<i64>) -> Result<Flow, ()> {
        self.depth += 1;
        if self.depth > 1024 {
            return Err(());
        }
        let f = &self.module.functions()[func as usize];
        let mut locals = args;
        locals.resize(f.param_count as usize + f.local_count as usize, 0);
        let mut stack: Vec<i64> = Vec::new();
        let mut pc = 0usize;
        let result = loop {
            let instr = f.code[pc];
            pc += 1;
            match instr {
                Instr::Const(v) => stack.push(v),
                Instr::LocalGet(i) => stack.push(locals[i as usize]),
                Instr::LocalSet(i) => locals[i as usize] = stack.pop().ok_or(())?,
                Instr::Add | Instr::Sub | Instr::Mul | Instr::Eq | Instr::LtS => {
                    let b = stack.pop().ok_or(())?;
                    let a = stack.pop().ok_or(())?;
                    stack.push(match instr {
                        Instr::Add => a.wrapping_add(b),
                        Instr::Sub => a.wrapping_sub(b),
                        Instr::Mul => a.wrapping_mul(b),
                        Instr::Eq => i64::from(a == b),
                        _ => i64::from(a < b),
                    });
                }
                Instr::Load => {
                    let a = self.check(stack.pop().ok_or(())?)?;
                    stack.push(*self.memory.get(&a).unwrap_or(&0));
                }
                Instr::Store => {
                    let v = stack.pop().ok_or(())?;
                    let a = self.check(stack.pop().ok_or(())?)?;
                    self.memory.insert(a, v);
                }
                Instr::Br(t) => pc = t as usize,
                Instr::BrIf(t) => {
                    if stack.pop().ok_or(())? != 0 {
                        pc = t as usize;
                    }
                }
                Instr::Call(t) => {
                    let n = self.module.functions()[t as usize].param_count as usize;
                    if stack.len() < n {
                        return Err(());
                    }
                    let args = stack.split_off(stack.len() - n);
                    match self.call(t, args)? {
                        Flow::Return(v) => stack.push(v),
                        halt @ Flow::Halt(_) => break halt,
                    }
                }
                Instr::Return => break Flow::Return(stack.pop().ok_or(())?),
                Instr::Halt => break Flow::Halt(stack.pop().ok_or(())?),
                Instr::Checkpoint => {}
            }
        };
        self.depth -= 1;
        Ok(result)
    }
}

pub fn reference_run(module: &Module) -> (RefOutcome, Vec<u8>) {
    RefMachine::new(module).run()
}
