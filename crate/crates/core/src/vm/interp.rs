use std::fmt;
use std::sync::Arc;

use crate::digest::Digest;

use super::isa::Instr;
use super::module::Module;
use super::state::{ExecutionState, Frame, Position};

/// Maximum call depth before [`Trap::CallStackOverflow`].
pub const MAX_CALL_DEPTH: usize = 1024;
/// Maximum operand stack height per frame before [`Trap::OperandStackOverflow`].
pub const MAX_OPERANDS: usize = 4096;

/// Which positions count as stable points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CheckpointPolicy {
    /// Every function entry.
    Function,
    /// Function entries plus every backward-branch target.
    Loop,
    /// Only `checkpoint` instructions.
    Explicit,
}

impl CheckpointPolicy {
    pub const ALL: [CheckpointPolicy; 3] = [
        CheckpointPolicy::Function,
        CheckpointPolicy::Loop,
        CheckpointPolicy::Explicit,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CheckpointPolicy::Function => "function",
            CheckpointPolicy::Loop => "loop",
            CheckpointPolicy::Explicit => "explicit",
        }
    }
}

impl std::str::FromStr for CheckpointPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "function" => Ok(CheckpointPolicy::Function),
            "loop" => Ok(CheckpointPolicy::Loop),
            "explicit" => Ok(CheckpointPolicy::Explicit),
            other => Err(format!("unknown checkpoint policy `{other}`")),
        }
    }
}

/// Stable-point positions for one module under one policy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StablePoints {
    per_function: Vec<Vec<bool>>,
}

impl StablePoints {
    pub fn compute(module: &Module, policy: CheckpointPolicy) -> Self {
        let per_function = module
            .functions()
            .iter()
            .map(|f| {
                let mut marks = vec![false; f.code.len()];
                match policy {
                    CheckpointPolicy::Function => marks[0] = true,
                    CheckpointPolicy::Loop => {
                        marks[0] = true;
                        for (at, instr) in f.code.iter().enumerate() {
                            if let Some(t) = instr.branch_target() {
                                if t as usize <= at {
                                    marks[t as usize] = true;
                                }
                            }
                        }
                    }
                    CheckpointPolicy::Explicit => {
                        for (at, instr) in f.code.iter().enumerate() {
                            if *instr == Instr::Checkpoint {
                                marks[at] = true;
                            }
                        }
                    }
                }
                marks
            })
            .collect();
        StablePoints { per_function }
    }

    pub fn contains(&self, p: Position) -> bool {
        self.per_function
            .get(p.function as usize)
            .and_then(|m| m.get(p.offset as usize))
            .copied()
            .unwrap_or(false)
    }

    pub fn positions(&self) -> impl Iterator<Item = Position> + '_ {
        self.per_function.iter().enumerate().flat_map(|(fi, marks)| {
            marks
                .iter()
                .enumerate()
                .filter(|(_, m)| **m)
                .map(move |(o, _)| Position::new(fi as u32, o as u32))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fuel {
    Unlimited,
    /// Retire at most this many instructions.
    Limited(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, thiserror::Error)]
pub enum Trap {
    #[error("out-of-bounds memory access at {0}")]
    OutOfBoundsMemory(i64),
    #[error("unaligned memory access at {0}")]
    UnalignedAccess(i64),
    #[error("operand stack underflow")]
    StackUnderflow,
    #[error("operand stack overflow")]
    OperandStackOverflow,
    #[error("call stack overflow")]
    CallStackOverflow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunOutcome {
    Halted(i64),
    CheckpointReached(Position),
    FuelExhausted,
    Trap(Trap),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ready,
    Halted(i64),
    Trapped(Trap),
    /// State was handed to another node and acknowledged.
    MigratedAway,
    /// A migration's outcome is unknown; not runnable until resolved.
    InDoubt,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ready => f.write_str("ready"),
            Status::Halted(v) => write!(f, "halted({v})"),
            Status::Trapped(t) => write!(f, "trapped({t})"),
            Status::MigratedAway => f.write_str("migrated-away"),
            Status::InDoubt => f.write_str("in-doubt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VmError {
    #[error("instance is not at a stable point")]
    NotAtStablePoint,
    #[error("module measurement {found} does not match state measurement {expected}")]
    MeasurementMismatch { expected: Digest, found: Digest },
    #[error("malformed state: {0}")]
    MalformedState(String),
    #[error("instance is not runnable ({0})")]
    NotRunnable(Status),
}

/// A running program.
#[derive(Debug, Clone)]
pub struct Instance {
    module: Arc<Module>,
    measurement: Digest,
    policy: CheckpointPolicy,
    stable: Arc<StablePoints>,
    frames: Vec<Frame>,
    memory: Vec<u8>,
    position: Position,
    steps: u64,
    status: Status,
    at_stable: bool,
}

/// Create an instance at the entry function with zeroed memory.
pub fn instantiate(module: &Module, policy: CheckpointPolicy) -> Instance {
    Instance::new(Arc::new(module.clone()), policy)
}

/// Rebuild an instance from captured state.
pub fn restore(
    module: &Module,
    state: &ExecutionState,
    policy: CheckpointPolicy,
) -> Result<Instance, VmError> {
    Instance::restore(Arc::new(module.clone()), state, policy)
}

impl Instance {
    pub fn new(module: Arc<Module>, policy: CheckpointPolicy) -> Self {
        let entry = module.entry_function();
        let f = module.function(entry).expect("validated module has entry");
        let frame = Frame {
            function: entry,
            return_position: None,
            locals: vec![0; f.frame_size()],
            operands: Vec::new(),
        };
        Instance {
            measurement: module.measure(),
            stable: Arc::new(StablePoints::compute(&module, policy)),
            memory: vec![0; module.memory_bytes()],
            module,
            policy,
            frames: vec![frame],
            position: Position::new(entry, 0),
            steps: 0,
            status: Status::Ready,
            at_stable: true,
        }
    }

    pub fn restore(
        module: Arc<Module>,
        state: &ExecutionState,
        policy: CheckpointPolicy,
    ) -> Result<Self, VmError> {
        let measurement = module.measure();
        if measurement != state.module_measurement {
            return Err(VmError::MeasurementMismatch {
                expected: state.module_measurement,
                found: measurement,
            });
        }
        state.check_against(&module).map_err(VmError::MalformedState)?;
        Ok(Instance {
            measurement,
            stable: Arc::new(StablePoints::compute(&module, policy)),
            module,
            policy,
            frames: state.frames.clone(),
            memory: state.memory.clone(),
            position: state.position,
            steps: state.steps_executed,
            status: Status::Ready,
            at_stable: true,
        })
    }

    pub fn module(&self) -> &Arc<Module> {
        &self.module
    }

    pub fn measurement(&self) -> Digest {
        self.measurement
    }

    pub fn policy(&self) -> CheckpointPolicy {
        self.policy
    }

    pub fn stable_points(&self) -> &StablePoints {
        &self.stable
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    /// Mutable access to linear memory, for hosts that seed inputs.
    pub fn memory_mut(&mut self) -> &mut [u8] {
        &mut self.memory
    }

    pub fn position(&self) -> Position {
        self.position
    }

    pub fn steps_executed(&self) -> u64 {
        self.steps
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn is_runnable(&self) -> bool {
        self.status == Status::Ready
    }

    pub fn is_at_stable_point(&self) -> bool {
        self.status == Status::Ready && self.at_stable
    }

    /// Hand-off acknowledged by the destination.
    pub fn mark_migrated_away(&mut self) {
        self.status = Status::MigratedAway;
    }

    pub fn mark_in_doubt(&mut self) {
        self.status = Status::InDoubt;
    }

    /// Settle an in-doubt migration: committed remotely means this copy is retired.
    pub fn resolve_in_doubt(&mut self, committed_remotely: bool) {
        if self.status == Status::InDoubt {
            self.status = if committed_remotely {
                Status::MigratedAway
            } else {
                Status::Ready
            };
        }
    }

    #[doc(hidden)]
    pub fn force_mid_instruction(&mut self) {
        self.at_stable = false;
    }

    /// Deep copy of the current state. Requires a stable point.
    pub fn capture(&self) -> Result<ExecutionState, VmError> {
        if !self.is_at_stable_point() {
            return Err(VmError::NotAtStablePoint);
        }
        Ok(ExecutionState {
            module_measurement: self.measurement,
            frames: self.frames.clone(),
            memory: self.memory.clone(),
            position: self.position,
            steps_executed: self.steps,
        })
    }

    /// Run until halt, trap, or fuel exhaustion, ignoring stable points.
    pub fn run(&mut self, fuel: Fuel) -> Result<RunOutcome, VmError> {
        self.execute(fuel, false)
    }

    /// Run until the next stable point (after retiring at least one instruction),
    /// halt, trap, or fuel exhaustion.
    pub fn run_until_stable(&mut self, fuel: Fuel) -> Result<RunOutcome, VmError> {
        self.execute(fuel, true)
    }

    fn execute(&mut self, fuel: Fuel, stop_at_stable: bool) -> Result<RunOutcome, VmError> {
        if self.status != Status::Ready {
            return Err(VmError::NotRunnable(self.status));
        }
        let budget = match fuel {
            Fuel::Unlimited => u64::MAX,
            Fuel::Limited(n) => n,
        };
        let mut retired = 0u64;
        while retired < budget {
            let step = self.step();
            self.steps += 1;
            retired += 1;
            match step {
                Err(trap) => {
                    self.status = Status::Trapped(trap);
                    self.at_stable = false;
                    return Ok(RunOutcome::Trap(trap));
                }
                Ok(Some(v)) => {
                    self.status = Status::Halted(v);
                    self.at_stable = false;
                    return Ok(RunOutcome::Halted(v));
                }
                Ok(None) => {}
            }
            if stop_at_stable && self.stable.contains(self.position) {
                self.at_stable = true;
                return Ok(RunOutcome::CheckpointReached(self.position));
            }
        }
        self.at_stable = false;
        Ok(RunOutcome::FuelExhausted)
    }

    fn pop(&mut self) -> Result<i64, Trap> {
        self.frames
            .last_mut()
            .and_then(|f| f.operands.pop())
            .ok_or(Trap::StackUnderflow)
    }

    fn push(&mut self, v: i64) -> Result<(), Trap> {
        let f = self.frames.last_mut().expect("running instance has a frame");
        if f.operands.len() >= MAX_OPERANDS {
            return Err(Trap::OperandStackOverflow);
        }
        f.operands.push(v);
        Ok(())
    }

    fn mem_index(&self, addr: i64) -> Result<usize, Trap> {
        if addr < 0 || addr as u64 + 8 > self.memory.len() as u64 {
            return Err(Trap::OutOfBoundsMemory(addr));
        }
        if addr % 8 != 0 {
            return Err(Trap::UnalignedAccess(addr));
        }
        Ok(addr as usize)
    }

    /// Execute one instruction. `Ok(Some(v))` means the program halted with `v`.
    fn step(&mut self) -> Result<Option<i64>, Trap> {
        let pos = self.position;
        let instr = self.module.functions()[pos.function as usize].code[pos.offset as usize];
        let mut next = Position::new(pos.function, pos.offset + 1);
        match instr {
            Instr::Const(v) => self.push(v)?,
            Instr::LocalGet(i) => {
                let v = self.frames.last().expect("frame").locals[i as usize];
                self.push(v)?;
            }
            Instr::LocalSet(i) => {
                let v = self.pop()?;
                self.frames.last_mut().expect("frame").locals[i as usize] = v;
            }
            Instr::Add | Instr::Sub | Instr::Mul | Instr::Eq | Instr::LtS => {
                let b = self.pop()?;
                let a = self.pop()?;
                self.push(match instr {
                    Instr::Add => a.wrapping_add(b),
                    Instr::Sub => a.wrapping_sub(b),
                    Instr::Mul => a.wrapping_mul(b),
                    Instr::Eq => (a == b) as i64,
                    _ => (a < b) as i64,
                })?;
            }
            Instr::Load => {
                let addr = self.pop()?;
                let at = self.mem_index(addr)?;
                let v = i64::from_le_bytes(self.memory[at..at + 8].try_into().expect("8 bytes"));
                self.push(v)?;
            }
            Instr::Store => {
                let v = self.pop()?;
                let addr = self.pop()?;
                let at = self.mem_index(addr)?;
                self.memory[at..at + 8].copy_from_slice(&v.to_le_bytes());
            }
            Instr::Br(t) => next.offset = t,
            Instr::BrIf(t) => {
                if self.pop()? != 0 {
                    next.offset = t;
                }
            }
            Instr::Call(target) => {
                if self.frames.len() >= MAX_CALL_DEPTH {
                    return Err(Trap::CallStackOverflow);
                }
                let callee = &self.module.functions()[target as usize];
                let (params, size) = (callee.param_count as usize, callee.frame_size());
                let caller = self.frames.last_mut().expect("frame");
                if caller.operands.len() < params {
                    return Err(Trap::StackUnderflow);
                }
                let mut locals = caller.operands.split_off(caller.operands.len() - params);
                locals.resize(size, 0);
                self.frames.push(Frame {
                    function: target,
                    return_position: Some(next),
                    locals,
                    operands: Vec::new(),
                });
                next = Position::new(target, 0);
            }
            Instr::Return => {
                let v = self.pop()?;
                let done = self.frames.pop().expect("frame");
                match done.return_position {
                    None => {
                        self.frames.clear();
                        return Ok(Some(v));
                    }
                    Some(rp) => {
                        self.push(v)?;
                        next = rp;
                    }
                }
            }
            Instr::Halt => {
                let v = self.pop()?;
                self.frames.clear();
                return Ok(Some(v));
            }
            Instr::Checkpoint => {}
        }
        self.position = next;
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::asm::assemble;

    fn module(src: &str) -> Module {
        assemble(src).unwrap()
    }

    #[test]
    fn instantiate_contract() {
        let m = module(".memory 2\n.func main 0 3\n const.i64 1\n halt\n.end");
        let inst = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(inst.steps_executed(), 0);
        assert_eq!(inst.memory().len(), 131072);
        assert!(inst.memory().iter().all(|b| *b == 0));
        assert_eq!(inst.frames().len(), 1);
        assert_eq!(inst.frames()[0].locals, vec![0, 0, 0]);
        assert_eq!(inst.position(), Position::new(0, 0));
    }

    #[test]
    fn out_of_bounds_and_unaligned() {
        let m = module(".func main 0 0\n const.i64 65536\n mem.load64\n halt\n.end");
        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(
            i.run(Fuel::Unlimited).unwrap(),
            RunOutcome::Trap(Trap::OutOfBoundsMemory(65536))
        );
        assert_eq!(i.run(Fuel::Unlimited), Err(VmError::NotRunnable(i.status())));

        let m = module(".func main 0 0\n const.i64 4\n const.i64 1\n mem.store64\n const.i64 0\n halt\n.end");
        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(
            i.run(Fuel::Unlimited).unwrap(),
            RunOutcome::Trap(Trap::UnalignedAccess(4))
        );

        let m = module(".func main 0 0\n i64.add\n halt\n.end");
        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(i.run(Fuel::Unlimited).unwrap(), RunOutcome::Trap(Trap::StackUnderflow));
    }

    #[test]
    fn runaway_recursion_traps() {
        let m = module(".func main 0 0\n call main\n halt\n.end");
        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(i.run(Fuel::Unlimited).unwrap(), RunOutcome::Trap(Trap::CallStackOverflow));
    }

    #[test]
    fn fuel_counts_checkpoint_markers() {
        let m = module(".func main 0 0\n checkpoint\n checkpoint\n const.i64 3\n halt\n.end");
        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(i.run(Fuel::Limited(2)).unwrap(), RunOutcome::FuelExhausted);
        assert_eq!(i.steps_executed(), 2);
        assert_eq!(i.capture(), Err(VmError::NotAtStablePoint));
        assert_eq!(i.run(Fuel::Unlimited).unwrap(), RunOutcome::Halted(3));
        assert_eq!(i.steps_executed(), 4);
    }

    #[test]
    fn explicit_policy_stops_at_markers_only() {
        let m = module(
            ".func f 1 0\n local.get 0\n return\n.end\n.func main 0 0\n const.i64 2\n call f\n checkpoint\n const.i64 1\n i64.add\n halt\n.end",
        );
        let mut i = instantiate(&m, CheckpointPolicy::Explicit);
        assert_eq!(
            i.run_until_stable(Fuel::Unlimited).unwrap(),
            RunOutcome::CheckpointReached(Position::new(1, 2))
        );
        assert_eq!(i.run_until_stable(Fuel::Unlimited).unwrap(), RunOutcome::Halted(3));

        let mut i = instantiate(&m, CheckpointPolicy::Function);
        assert_eq!(
            i.run_until_stable(Fuel::Unlimited).unwrap(),
            RunOutcome::CheckpointReached(Position::new(0, 0))
        );
    }

    #[test]
    fn capture_restore_is_identity_on_fresh_instance() {
        let m = module(".func main 0 1\n const.i64 0\n halt\n.end");
        let i = instantiate(&m, CheckpointPolicy::Loop);
        let s = i.capture().unwrap();
        let r = restore(&m, &s, CheckpointPolicy::Loop).unwrap();
        assert_eq!(r.capture().unwrap().to_bytes(), s.to_bytes());
    }

    #[test]
    fn restore_rejects_other_module_and_bad_frames() {
        let m = module(".func main 0 1\n const.i64 0\n halt\n.end");
        let other = module(".func main 0 1\n const.i64 1\n halt\n.end");
        let s = instantiate(&m, CheckpointPolicy::Loop).capture().unwrap();
        assert!(matches!(
            restore(&other, &s, CheckpointPolicy::Loop),
            Err(VmError::MeasurementMismatch { .. })
        ));
        let mut bad = s.clone();
        bad.frames[0].function = 99;
        bad.position.function = 99;
        assert!(matches!(
            restore(&m, &bad, CheckpointPolicy::Loop),
            Err(VmError::MalformedState(_))
        ));
        let mut bad = s;
        bad.frames.clear();
        assert!(matches!(
            restore(&m, &bad, CheckpointPolicy::Loop),
            Err(VmError::MalformedState(_))
        ));
    }
}
