use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use super::{ChunkContext, Validator, Verdict};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Validators run concurrently with each other and with generation of later chunks.
    Parallel,
    /// Generate a chunk, run each validator in turn, then generate the next.
    Serial,
}

/// A finite ordered chunk source. Each chunk costs `delay` to generate.
#[derive(Debug, Clone, Default)]
pub struct ChunkStream {
    pub chunks: Vec<String>,
    pub delay: Duration,
    /// Input identifiers the output may reference.
    pub sources: Vec<String>,
}

impl ChunkStream {
    pub fn new(chunks: Vec<String>, delay: Duration) -> Self {
        ChunkStream { chunks, delay, sources: Vec::new() }
    }

    pub fn with_sources(mut self, sources: Vec<String>) -> Self {
        self.sources = sources;
        self
    }

    fn generate(&self) -> impl Iterator<Item = String> + '_ {
        self.chunks.iter().map(move |c| {
            if !self.delay.is_zero() {
                thread::sleep(self.delay);
            }
            c.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Terminal {
    Completed,
    Blocked { chunk: usize, validator: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlagRecord {
    pub chunk: usize,
    pub validator: String,
    pub reason: String,
}

/// Instrumentation: the verdicts that covered one released chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReleaseRecord {
    pub chunk: usize,
    pub verdicts: Vec<(String, Verdict)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GatedOutput {
    pub mode: Mode,
    pub released: Vec<String>,
    pub status: Terminal,
    pub flags: Vec<FlagRecord>,
    pub release_log: Vec<ReleaseRecord>,
    pub elapsed_secs: f64,
    pub baseline_secs: f64,
    /// elapsed - baseline, floored at zero.
    pub overhead_secs: f64,
    /// overhead / elapsed.
    pub overhead_fraction: f64,
}

/// Time to drain the stream with no validation at all.
pub fn ungated_baseline(stream: &ChunkStream) -> f64 {
    let start = Instant::now();
    let n = stream.generate().count();
    debug_assert_eq!(n, stream.chunks.len());
    start.elapsed().as_secs_f64()
}

fn run_one(v: &dyn Validator, chunk: &str, ctx: &ChunkContext<'_>) -> Verdict {
    catch_unwind(AssertUnwindSafe(|| v.check(chunk, ctx)))
        .unwrap_or_else(|_| Verdict::Block(format!("validator `{}` panicked", v.name())))
}

fn verdicts_parallel(validators: &[&dyn Validator], chunk: &str, ctx: &ChunkContext<'_>) -> Vec<Verdict> {
    thread::scope(|s| {
        let handles: Vec<_> = validators.iter().map(|v| s.spawn(move || run_one(*v, chunk, ctx))).collect();
        handles
            .into_iter()
            .zip(validators)
            .map(|(h, v)| h.join().unwrap_or_else(|_| Verdict::Block(format!("validator `{}` panicked", v.name()))))
            .collect()
    })
}

fn verdicts_serial(validators: &[&dyn Validator], chunk: &str, ctx: &ChunkContext<'_>) -> Vec<Verdict> {
    let mut out = Vec::with_capacity(validators.len());
    for v in validators {
        let verdict = run_one(*v, chunk, ctx);
        let stop = verdict.is_block();
        out.push(verdict);
        if stop {
            break;
        }
    }
    out
}

struct Gate<'a> {
    validators: &'a [&'a dyn Validator],
    sources: &'a [String],
    released: Vec<String>,
    prior: String,
    flags: Vec<FlagRecord>,
    log: Vec<ReleaseRecord>,
}

impl Gate<'_> {
    /// Decide one chunk. Returns the terminal status if it blocks.
    fn admit(&mut self, index: usize, chunk: String, verdicts: Vec<Verdict>) -> Option<Terminal> {
        for (v, verdict) in self.validators.iter().zip(&verdicts) {
            if let Verdict::Block(reason) = verdict {
                return Some(Terminal::Blocked { chunk: index, validator: v.name().to_string(), reason: reason.clone() });
            }
        }
        if verdicts.len() != self.validators.len() {
            // never release without a verdict from every validator
            return Some(Terminal::Blocked { chunk: index, validator: String::new(), reason: "missing verdict".into() });
        }
        for (v, verdict) in self.validators.iter().zip(&verdicts) {
            if let Verdict::Flag(reason) = verdict {
                self.flags.push(FlagRecord { chunk: index, validator: v.name().to_string(), reason: reason.clone() });
            }
        }
        self.log.push(ReleaseRecord {
            chunk: index,
            verdicts: self.validators.iter().map(|v| v.name().to_string()).zip(verdicts).collect(),
        });
        self.prior.push_str(&chunk);
        self.released.push(chunk);
        None
    }
}

/// Run `stream` through the validators and release what passes.
pub fn gate_stream(stream: &ChunkStream, validators: &[&dyn Validator], mode: Mode) -> GatedOutput {
    let baseline_secs = ungated_baseline(stream);
    let mut gate = Gate {
        validators,
        sources: &stream.sources,
        released: Vec::new(),
        prior: String::new(),
        flags: Vec::new(),
        log: Vec::new(),
    };
    let start = Instant::now();
    let status = match mode {
        Mode::Serial => {
            let mut status = Terminal::Completed;
            for (i, chunk) in stream.generate().enumerate() {
                let ctx = ChunkContext { index: i, prior: &gate.prior, sources: gate.sources };
                let verdicts = verdicts_serial(validators, &chunk, &ctx);
                if let Some(t) = gate.admit(i, chunk, verdicts) {
                    status = t;
                    break;
                }
            }
            status
        }
        Mode::Parallel => thread::scope(|s| {
            let (tx, rx) = mpsc::channel();
            s.spawn(move || {
                for chunk in stream.generate() {
                    if tx.send(chunk).is_err() {
                        break;
                    }
                }
            });
            let mut status = Terminal::Completed;
            for (i, chunk) in rx.iter().enumerate() {
                let ctx = ChunkContext { index: i, prior: &gate.prior, sources: gate.sources };
                let verdicts = verdicts_parallel(validators, &chunk, &ctx);
                if let Some(t) = gate.admit(i, chunk, verdicts) {
                    status = t;
                    break;
                }
            }
            // dropping the receiver stops the generator at its next chunk
            drop(rx);
            status
        }),
    };
    let elapsed_secs = start.elapsed().as_secs_f64();
    let overhead_secs = (elapsed_secs - baseline_secs).max(0.0);
    GatedOutput {
        mode,
        released: gate.released,
        status,
        flags: gate.flags,
        release_log: gate.log,
        elapsed_secs,
        baseline_secs,
        overhead_secs,
        overhead_fraction: if elapsed_secs > 0.0 { overhead_secs / elapsed_secs } else { 0.0 },
    }
}
