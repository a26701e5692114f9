//! Seeded generator of well-formed, terminating programs.
//!
//! Generated programs exercise every opcode: nested counted loops (backward
//! branches), forward conditional skips, an acyclic call graph, aligned memory
//! traffic, and explicit `checkpoint` markers. A small fraction end in an
//! out-of-bounds trap. Programs that do not finish within [`STEP_LIMIT`] are
//! discarded and regenerated.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::asm::assemble;
use super::interp::{instantiate, CheckpointPolicy, Fuel, RunOutcome};
use super::module::Module;

pub const STEP_LIMIT: u64 = 200_000;

#[derive(Debug, Clone)]
pub struct GeneratedProgram {
    pub seed: u64,
    pub source: String,
    pub module: Module,
}

struct FuncShape {
    name: String,
    params: u32,
    locals: u32,
}

struct Gen<'a> {
    rng: ChaCha8Rng,
    funcs: &'a [FuncShape],
    current: usize,
    labels: usize,
    out: String,
}

impl Gen<'_> {
    fn frame(&self) -> u32 {
        let f = &self.funcs[self.current];
        f.params + f.locals
    }

    fn emit(&mut self, line: &str) {
        let _ = writeln!(self.out, "    {line}");
    }

    fn label(&mut self) -> String {
        self.labels += 1;
        format!("L{}", self.labels)
    }

    fn addr(&mut self) -> i64 {
        self.rng.gen_range(0..64) * 8
    }

    /// Emit code that pushes exactly one value.
    fn expr(&mut self, depth: u32) {
        if depth == 0 || self.rng.gen_bool(0.35) {
            match self.rng.gen_range(0..4) {
                0 | 1 if self.frame() > 0 => {
                    let l = self.rng.gen_range(0..self.frame());
                    self.emit(&format!("local.get {l}"));
                }
                2 => {
                    let a = self.addr();
                    self.emit(&format!("const.i64 {a}"));
                    self.emit("mem.load64");
                }
                _ => {
                    let v: i64 = self.rng.gen_range(-50..50);
                    self.emit(&format!("const.i64 {v}"));
                }
            }
            return;
        }
        // Calls go only to higher-numbered functions, so the call graph is acyclic.
        let first_callee = self.current + 1;
        if first_callee < self.funcs.len() && self.rng.gen_bool(0.25) {
            let target = self.rng.gen_range(first_callee..self.funcs.len());
            for _ in 0..self.funcs[target].params {
                self.expr(depth - 1);
            }
            let name = self.funcs[target].name.clone();
            self.emit(&format!("call {name}"));
            return;
        }
        self.expr(depth - 1);
        self.expr(depth - 1);
        let op = ["i64.add", "i64.sub", "i64.mul", "i64.eq", "i64.lt_s"][self.rng.gen_range(0..5)];
        self.emit(op);
    }

    /// Emit a stack-neutral statement. Loop counters in `protected` are never assigned.
    fn stmt(&mut self, depth: u32, protected: &mut Vec<u32>) {
        let assignable: Vec<u32> = (0..self.frame()).filter(|l| !protected.contains(l)).collect();
        match self.rng.gen_range(0..11) {
            0..=3 if !assignable.is_empty() => {
                let target = assignable[self.rng.gen_range(0..assignable.len())];
                self.expr(3);
                self.emit(&format!("local.set {target}"));
            }
            4 | 5 => {
                let a = self.addr();
                self.emit(&format!("const.i64 {a}"));
                self.expr(2);
                self.emit("mem.store64");
            }
            6 => {
                // read-modify-write of one memory cell
                let a = self.addr();
                self.emit(&format!("const.i64 {a}"));
                self.emit(&format!("const.i64 {a}"));
                self.emit("mem.load64");
                self.expr(1);
                self.emit("i64.add");
                self.emit("mem.store64");
            }
            7 => self.emit("checkpoint"),
            8 => {
                let skip = self.label();
                if self.rng.gen_bool(0.3) {
                    self.emit(&format!("br {skip}"));
                } else {
                    self.expr(2);
                    self.emit(&format!("br_if {skip}"));
                }
                self.stmt(0, protected);
                let _ = writeln!(self.out, "{skip}:");
            }
            9 | 10 if depth > 0 && assignable.len() > 1 => {
                let counter = assignable[self.rng.gen_range(0..assignable.len())];
                let trips = self.rng.gen_range(1..=5);
                let top = self.label();
                self.emit(&format!("const.i64 {trips}"));
                self.emit(&format!("local.set {counter}"));
                let _ = writeln!(self.out, "{top}:");
                protected.push(counter);
                for _ in 0..self.rng.gen_range(1..=3) {
                    self.stmt(depth - 1, protected);
                }
                protected.pop();
                self.emit(&format!("local.get {counter}"));
                self.emit("const.i64 1");
                self.emit("i64.sub");
                self.emit(&format!("local.set {counter}"));
                self.emit("const.i64 0");
                self.emit(&format!("local.get {counter}"));
                self.emit("i64.lt_s");
                self.emit(&format!("br_if {top}"));
            }
            _ => self.emit("checkpoint"),
        }
    }
}

fn render(seed: u64, rng: &mut ChaCha8Rng) -> String {
    let helpers = rng.gen_range(0..=3);
    let mut funcs = vec![FuncShape {
        name: "main".into(),
        params: 0,
        locals: rng.gen_range(2..=4),
    }];
    funcs.extend((0..helpers).map(|i| FuncShape {
        name: format!("h{}", i + 1),
        params: rng.gen_range(0..=2),
        locals: rng.gen_range(1..=3),
    }));

    let mut src = format!("; generated program, seed {seed}\n.memory 1\n");
    for idx in 0..funcs.len() {
        let is_main = idx == 0;
        let mut g = Gen {
            rng: ChaCha8Rng::seed_from_u64(rng.gen()),
            funcs: &funcs,
            current: idx,
            labels: 0,
            out: String::new(),
        };
        let depth = if is_main { 2 } else { 1 };
        let mut protected = Vec::new();
        for _ in 0..g.rng.gen_range(2..=6) {
            g.stmt(depth, &mut protected);
        }
        if is_main && g.rng.gen_bool(0.1) {
            g.emit("const.i64 65536");
            g.emit("mem.load64");
            g.emit("local.set 0");
        }
        g.expr(2);
        g.emit(if is_main { "halt" } else { "return" });
        let f = &funcs[idx];
        let _ = write!(src, ".func {} {} {}\n{}.end\n", f.name, f.params, f.locals, g.out);
    }
    src
}

/// Generate one program. The same seed always yields the same program.
pub fn generate(seed: u64) -> GeneratedProgram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let source = render(seed, &mut rng);
        let module = assemble(&source).unwrap_or_else(|e| panic!("generator bug: {e}\n{source}"));
        let mut probe = instantiate(&module, CheckpointPolicy::Function);
        let outcome = probe.run(Fuel::Limited(STEP_LIMIT)).expect("fresh instance runs");
        if outcome != RunOutcome::FuelExhausted {
            return GeneratedProgram {
                seed,
                source,
                module,
            };
        }
    }
}

/// `count` programs from consecutive seeds starting at `base_seed`.
pub fn corpus(base_seed: u64, count: usize) -> Vec<GeneratedProgram> {
    (0..count as u64).map(|i| generate(base_seed.wrapping_add(i))).collect()
}
