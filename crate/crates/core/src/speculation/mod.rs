//! Dual-path speculative execution.
//!
//! A task has a fast approximate path and a slow precise path. Both start at
//! once on their own threads. The fast result is emitted provisionally as
//! soon as it exists; the slow path streams partial results that are checked
//! against it, and the complete slow output settles the outcome. The slow
//! path is ground truth: an output is only ever final if it is the slow
//! output or a fast output the predicate accepted against the complete slow
//! output.

mod bench;
mod kernel;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use bench::{render_table, run_benchmark, BenchRow, SuiteConfig, WorkloadConfig};
pub use kernel::{mean_task, Dataset, MeanTaskConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("path trapped: {0}")]
pub struct PathTrap(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpeculationError {
    /// Without a slow result there is nothing to commit against.
    #[error("slow path trapped: {message}")]
    SlowPathTrap { message: String, provisional_emitted: bool },
    #[error("path thread panicked")]
    Panicked,
    #[error("benchmark configuration: {0}")]
    Config(String),
}

/// Handle given to a running path: publish partial results, observe cancellation.
pub struct PathCtx<T> {
    tx: mpsc::Sender<Msg<T>>,
    cancel: Arc<AtomicBool>,
}

impl<T> PathCtx<T> {
    /// A context for running a path on its own; partials go nowhere.
    pub(crate) fn detached() -> Self {
        PathCtx { tx: mpsc::channel().0, cancel: Arc::new(AtomicBool::new(false)) }
    }

    /// Publish an intermediate result. Only the slow path's partials are checked.
    pub fn publish(&self, partial: T) {
        let _ = self.tx.send(Msg::Partial(partial));
    }

    pub fn cancelled(&self) -> bool {
        self.cancel.load(Ordering::Relaxed)
    }
}

pub type PathFn<T> = Box<dyn FnOnce(&PathCtx<T>) -> Result<T, PathTrap> + Send>;

/// Consistency check between a fast output and a (possibly partial) slow output.
#[derive(Clone)]
pub struct Predicate<T>(Arc<dyn Fn(&T, &T) -> bool + Send + Sync>);

impl<T> Predicate<T> {
    pub fn new(f: impl Fn(&T, &T) -> bool + Send + Sync + 'static) -> Self {
        Predicate(Arc::new(f))
    }

    pub fn always() -> Self {
        Self::new(|_, _| true)
    }

    pub fn never() -> Self {
        Self::new(|_, _| false)
    }

    pub fn check(&self, fast: &T, slow: &T) -> bool {
        (self.0)(fast, slow)
    }
}

impl<T: PartialEq> Predicate<T> {
    pub fn exact() -> Self {
        Self::new(|a, b| a == b)
    }
}

impl Predicate<f64> {
    /// |fast - slow| <= tol * |slow|.
    pub fn relative(tol: f64) -> Self {
        Self::new(move |f: &f64, s: &f64| (f - s).abs() <= tol * s.abs())
    }
}

pub struct SpeculativeTask<T> {
    pub name: String,
    fast: PathFn<T>,
    slow: PathFn<T>,
    predicate: Predicate<T>,
}

impl<T> SpeculativeTask<T> {
    pub fn new(
        name: impl Into<String>,
        fast: impl FnOnce(&PathCtx<T>) -> Result<T, PathTrap> + Send + 'static,
        slow: impl FnOnce(&PathCtx<T>) -> Result<T, PathTrap> + Send + 'static,
        predicate: Predicate<T>,
    ) -> Self {
        SpeculativeTask { name: name.into(), fast: Box::new(fast), slow: Box::new(slow), predicate }
    }

    /// Both paths run the same computation.
    pub fn identical(
        name: impl Into<String>,
        path: impl Fn(&PathCtx<T>) -> Result<T, PathTrap> + Send + Sync + 'static,
        predicate: Predicate<T>,
    ) -> Self {
        let path = Arc::new(path);
        let p2 = path.clone();
        Self::new(name, move |c: &PathCtx<T>| path(c), move |c: &PathCtx<T>| p2(c), predicate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    CommittedFast,
    Corrected,
}

/// Event stream of one run. Times are seconds since both paths started.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event<T> {
    /// Fast output, not yet vetted.
    Provisional { t: f64, output: T, provisional: bool },
    FastTrapped { t: f64, message: String },
    PartialChecked { t: f64, consistent: bool },
    /// A slow partial disagreed with the provisional output.
    Retracted { t: f64 },
    Final { t: f64, output: T, status: Status },
}

#[derive(Debug, Clone, Serialize)]
pub struct SpeculationOutcome<T> {
    pub provisional: Option<T>,
    pub provisional_at: Option<f64>,
    pub final_output: T,
    pub final_at: f64,
    pub status: Status,
    /// When the caller first held the output that turned out final.
    pub perceived_secs: f64,
    pub fast_secs: Option<f64>,
    pub slow_secs: f64,
    pub speedup: f64,
    /// Partial results the slow path published.
    pub partials_seen: usize,
    pub events: Vec<Event<T>>,
}

enum Msg<T> {
    Partial(T),
    FastDone(Result<T, PathTrap>),
    SlowDone(Result<T, PathTrap>),
}

/// Run both paths of `task` concurrently and merge them.
///
/// `serial_baseline_secs` is the latency of running the precise path alone;
/// speedup is that over the perceived latency.
pub fn speculate<T>(task: SpeculativeTask<T>, serial_baseline_secs: f64) -> Result<SpeculationOutcome<T>, SpeculationError>
where
    T: Clone + PartialEq + Send + 'static,
{
    let SpeculativeTask { fast, slow, predicate, .. } = task;
    let cancel = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel::<Msg<T>>();
    let start = Instant::now();

    // fast results travel on their own channel so slow partials are not mistaken for them
    let (ftx, frx) = mpsc::channel::<Msg<T>>();
    let fast_ctx = PathCtx { tx: ftx, cancel: cancel.clone() };
    let slow_ctx = PathCtx { tx: tx.clone(), cancel: cancel.clone() };
    let fast_done = tx.clone();
    let fast_handle = thread::spawn(move || {
        let r = fast(&fast_ctx);
        let _ = fast_done.send(Msg::FastDone(r));
    });
    let slow_handle = thread::spawn(move || {
        let r = slow(&slow_ctx);
        let _ = slow_ctx.tx.send(Msg::SlowDone(r));
    });
    drop(tx);
    drop(frx);

    let elapsed = || start.elapsed().as_secs_f64();
    let mut events = Vec::new();
    let mut provisional: Option<(T, f64)> = None;
    let mut fast_finished = false;
    let mut doomed = false;
    let mut latest_partial: Option<T> = None;
    let mut partials_seen = 0;
    let mut slow_result: Option<(T, f64)> = None;

    let result = loop {
        let Ok(msg) = rx.recv() else { break Err(SpeculationError::Panicked) };
        let t = elapsed();
        match msg {
            Msg::FastDone(Ok(v)) => {
                fast_finished = true;
                if let Some(p) = &latest_partial {
                    if !predicate.check(&v, p) {
                        doomed = true;
                    }
                }
                if let Some((s, _)) = &slow_result {
                    // slow already answered; the fast result only classifies the run
                    let status = if v == *s { Status::CommittedFast } else { Status::Corrected };
                    provisional = Some((v, t));
                    break Ok(status);
                }
                if !doomed {
                    events.push(Event::Provisional { t, output: v.clone(), provisional: true });
                }
                provisional = Some((v, t));
            }
            Msg::FastDone(Err(e)) => {
                fast_finished = true;
                doomed = true;
                events.push(Event::FastTrapped { t, message: e.0 });
                if slow_result.is_some() {
                    break Ok(Status::Corrected);
                }
            }
            Msg::Partial(p) => {
                partials_seen += 1;
                if let Some((v, _)) = &provisional {
                    if !doomed {
                        let consistent = predicate.check(v, &p);
                        events.push(Event::PartialChecked { t, consistent });
                        if !consistent {
                            doomed = true;
                            events.push(Event::Retracted { t });
                        }
                    }
                }
                latest_partial = Some(p);
            }
            Msg::SlowDone(Ok(s)) => {
                if !fast_finished {
                    slow_result = Some((s, t));
                    continue;
                }
                let status = match &provisional {
                    Some((v, _)) if !doomed && predicate.check(v, &s) => Status::CommittedFast,
                    _ => Status::Corrected,
                };
                slow_result = Some((s, t));
                break Ok(status);
            }
            Msg::SlowDone(Err(e)) => {
                cancel.store(true, Ordering::Relaxed);
                break Err(SpeculationError::SlowPathTrap {
                    message: e.0,
                    provisional_emitted: events.iter().any(|e| matches!(e, Event::Provisional { .. })),
                });
            }
        }
    };
    cancel.store(true, Ordering::Relaxed);
    let joined = fast_handle.join().is_ok() & slow_handle.join().is_ok();
    let status = result?;
    if !joined {
        return Err(SpeculationError::Panicked);
    }
    let (slow_out, slow_at) = slow_result.expect("slow result present on success");
    let late_fast = provisional.as_ref().is_some_and(|(_, pt)| *pt > slow_at);
    let (final_output, perceived) = match status {
        Status::CommittedFast if !late_fast => {
            let (v, pt) = provisional.clone().unwrap();
            (v, pt)
        }
        // a fast result that arrived after the slow one never lowered latency
        _ => (slow_out, slow_at),
    };
    events.push(Event::Final { t: slow_at, output: final_output.clone(), status });
    Ok(SpeculationOutcome {
        provisional_at: provisional.as_ref().map(|(_, t)| *t),
        fast_secs: provisional.as_ref().map(|(_, t)| *t),
        provisional: provisional.map(|(v, _)| v),
        final_output,
        final_at: slow_at,
        status,
        perceived_secs: perceived,
        slow_secs: slow_at,
        speedup: serial_baseline_secs / perceived.max(1e-9),
        partials_seen,
        events,
    })
}
