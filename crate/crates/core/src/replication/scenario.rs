use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::snapshot::SnapshotKey;
use crate::vm::{workspace_instance, PAGE_SIZE};

use super::{Health, ReplicaId, ReplicaManager, ReplicationError, SyncReport, Tier};

/// Health probes run on this period of simulated time; a change is noticed at the next probe.
pub const PROBE_INTERVAL_MS: f64 = 50.0;

/// A replica roster, a fault schedule, and a workload write trace.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Format version line; must be [`SCENARIO_SCHEMA`] when present.
    #[serde(default)]
    pub schema: Option<String>,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default = "default_budget")]
    pub latency_budget_ms: f64,
    #[serde(default = "default_pages")]
    pub memory_pages: u32,
    #[serde(default)]
    pub seed: u64,
    /// Period of background sync rounds, in simulated seconds.
    #[serde(default = "default_sync_interval")]
    pub sync_interval_s: f64,
    /// End of the fault schedule; defaults to one sync interval after the last event.
    #[serde(default)]
    pub duration_s: Option<f64>,
    #[serde(rename = "replica")]
    pub replicas: Vec<ReplicaSpec>,
    #[serde(default, rename = "fault")]
    pub faults: Vec<FaultSpec>,
    #[serde(default, rename = "write")]
    pub writes: Vec<WriteSpec>,
    #[serde(default, rename = "assert")]
    pub assertions: Assertions,
}

pub const SCENARIO_SCHEMA: &str = "portvm.scenario/1";

/// Expectations checked after a run.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Assertions {
    #[serde(default)]
    pub final_active: Option<String>,
    /// Bound on probe delay + decision time for every failover.
    #[serde(default)]
    pub max_failover_ms: Option<f64>,
    /// Defaults to the replica count.
    #[serde(default)]
    pub converge_within_rounds: Option<usize>,
    #[serde(default)]
    pub min_failovers: Option<usize>,
    #[serde(default)]
    pub active: Vec<ActiveAt>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActiveAt {
    pub at: f64,
    pub replica: String,
}

/// Failed expectations, one message each; empty when everything held.
pub fn check_assertions(sc: &Scenario, run: &RunSummary) -> Vec<String> {
    let a = &sc.assertions;
    let mut failed = Vec::new();
    let bound = a.converge_within_rounds.unwrap_or(run.replicas);
    match run.rounds_to_converge {
        Some(r) if r <= bound => {}
        Some(r) => failed.push(format!("converged after {r} rounds, expected at most {bound}")),
        None => failed.push("replicas never converged".into()),
    }
    if let Some(want) = &a.final_active {
        if &run.final_active != want {
            failed.push(format!("final active replica is `{}`, expected `{want}`", run.final_active));
        }
    }
    if let Some(max) = a.max_failover_ms {
        if run.max_failover_latency_ms > max {
            failed.push(format!("failover took {:.3} ms, bound {max} ms", run.max_failover_latency_ms));
        }
    }
    if let Some(min) = a.min_failovers {
        if run.failovers < min {
            failed.push(format!("{} failovers, expected at least {min}", run.failovers));
        }
    }
    for e in &a.active {
        let got = run.active_timeline.iter().rev().find(|(t, _)| *t <= e.at).map(|(_, r)| r.as_str());
        if got != Some(e.replica.as_str()) {
            failed.push(format!("active at {}s is {:?}, expected `{}`", e.at, got, e.replica));
        }
    }
    failed
}

fn default_budget() -> f64 {
    150.0
}

fn default_pages() -> u32 {
    16
}

fn default_sync_interval() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicaSpec {
    pub name: String,
    pub tier: Tier,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub loss: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth_bps: f64,
}

fn default_bandwidth() -> f64 {
    1e9
}

impl ReplicaSpec {
    fn baseline(&self) -> Health {
        if self.tier == Tier::Local {
            return Health::local();
        }
        let default_latency = if self.tier == Tier::Cloud { 40.0 } else { 10.0 };
        Health::Reachable {
            latency_ms: self.latency_ms.unwrap_or(default_latency),
            loss: self.loss,
            bandwidth_bps: self.bandwidth_bps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Disconnect,
    /// Back to the roster baseline.
    Reconnect,
    /// Reachable with the given latency, loss, or bandwidth (others from the baseline).
    Degrade,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    pub at: f64,
    pub replica: String,
    pub kind: FaultKind,
    #[serde(default)]
    pub latency_ms: Option<f64>,
    #[serde(default)]
    pub loss: Option<f64>,
    #[serde(default)]
    pub bandwidth_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteSpec {
    pub at: f64,
    /// Number of distinct pages dirtied.
    pub pages: usize,
    /// Replica taking the write; the active replica when omitted.
    #[serde(default)]
    pub replica: Option<String>,
}

/// One line of the event log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogRecord {
    Register { t: f64, replica: ReplicaId, tier: Tier },
    Health {
        /// When the link changed.
        event_time: f64,
        /// When the probe noticed and the selection ran, in simulated time.
        decision_time: f64,
        replica: ReplicaId,
        health: Health,
        active: ReplicaId,
    },
    /// `detection_ms` is simulated; wall-clock decision cost is kept out of the
    /// log so that runs are reproducible, and reported in [`RunSummary`].
    Failover { t: f64, from: ReplicaId, to: ReplicaId, detection_ms: f64 },
    Write { t: f64, replica: ReplicaId, pages: usize },
    Sync { t: f64, report: SyncReport },
    Heal { t: f64 },
    Converged { t: f64, rounds: usize },
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub replicas: usize,
    pub failovers: usize,
    pub initial_active: ReplicaId,
    pub final_active: ReplicaId,
    /// Rounds after the schedule ended until all digests matched.
    pub rounds_to_converge: Option<usize>,
    pub max_decision_wall_ms: f64,
    /// Probe delay plus wall-clock decision time, per failover.
    pub failover_latencies_ms: Vec<f64>,
    pub max_failover_latency_ms: f64,
    /// Active replica from each time on.
    pub active_timeline: Vec<(f64, ReplicaId)>,
    /// Time-weighted quality of the active replica over the schedule.
    pub functionality: f64,
    /// Mean fraction of state moved by syncs that moved anything.
    pub mean_sync_fraction: f64,
    #[serde(skip)]
    pub log: Vec<LogRecord>,
}

impl RunSummary {
    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|r| r.to_json() + "\n").collect()
    }
}

impl Scenario {
    pub fn from_toml_str(s: &str) -> Result<Self, ReplicationError> {
        let sc: Scenario = toml::from_str(s).map_err(|e| ReplicationError::Scenario(e.to_string()))?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ReplicationError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ReplicationError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn validate(&self) -> Result<(), ReplicationError> {
        let bad = |m: String| Err(ReplicationError::Scenario(m));
        if let Some(v) = &self.schema {
            if v != SCENARIO_SCHEMA {
                return bad(format!("unsupported schema `{v}`, expected `{SCENARIO_SCHEMA}`"));
            }
        }
        if self.replicas.is_empty() {
            return bad("no replicas".into());
        }
        if self.memory_pages == 0 {
            return bad("memory_pages must be positive".into());
        }
        if !(self.sync_interval_s > 0.0) {
            return bad("sync_interval_s must be positive".into());
        }
        let known = |n: &str| self.replicas.iter().any(|r| r.name == n);
        for f in &self.faults {
            match self.replicas.iter().find(|r| r.name == f.replica) {
                None => return bad(format!("fault names unknown replica `{}`", f.replica)),
                Some(r) if r.tier == Tier::Local => {
                    return bad(format!("`{}` is device-local and has no link to fault", f.replica))
                }
                _ => {}
            }
            if !(f.at >= 0.0) {
                return bad("fault times must be nonnegative".into());
            }
        }
        for w in &self.writes {
            if w.replica.as_deref().is_some_and(|n| !known(n)) {
                return bad(format!("write names unknown replica `{}`", w.replica.as_ref().unwrap()));
            }
            if w.pages > self.memory_pages as usize {
                return bad("write dirties more pages than exist".into());
            }
        }
        Ok(())
    }

    fn end_time(&self) -> f64 {
        let last = self
            .faults
            .iter()
            .map(|f| f.at)
            .chain(self.writes.iter().map(|w| w.at))
            .fold(0.0, f64::max);
        self.duration_s.unwrap_or(last + self.sync_interval_s)
    }
}

enum Step<'a> {
    /// Faults at one instant are seen by the same probe.
    Faults(Vec<&'a FaultSpec>),
    Write(&'a WriteSpec),
    Sync,
}

/// Run a scenario: apply faults and writes in time order, re-select the
/// active replica on every health change, run periodic sync rounds, then
/// heal all links and sync until the replicas converge.
pub fn run_failover_monitor(sc: &Scenario) -> Result<RunSummary, ReplicationError> {
    sc.validate()?;
    let base = workspace_instance(sc.memory_pages as usize * PAGE_SIZE, sc.seed)
        .capture()
        .expect("fresh workspace is at a stable point");
    let key = SnapshotKey::new(Digest::of_parts([&b"portvm/replication"[..], &sc.seed.to_le_bytes()[..]]).0);
    let mut mgr = ReplicaManager::new(base.module_measurement, key);
    let mut log = Vec::new();
    for r in &sc.replicas {
        mgr.register(r.tier, base.clone(), Some(&r.name))?;
        mgr.set_health(&r.name, r.baseline())?;
        log.push(LogRecord::Register { t: 0.0, replica: r.name.clone(), tier: r.tier });
    }
    let mut active = mgr.select_active(sc.latency_budget_ms)?;
    let initial_active = active.clone();

    let end = sc.end_time();
    let mut steps: Vec<(f64, u8, Step)> = Vec::new();
    let mut faults: Vec<&FaultSpec> = sc.faults.iter().collect();
    faults.sort_by(|a, b| a.at.total_cmp(&b.at));
    let mut i = 0;
    while i < faults.len() {
        let n = faults[i..].iter().take_while(|f| f.at == faults[i].at).count();
        steps.push((faults[i].at, 0, Step::Faults(faults[i..i + n].to_vec())));
        i += n;
    }
    steps.extend(sc.writes.iter().map(|w| (w.at, 1, Step::Write(w))));
    let mut t = sc.sync_interval_s;
    while t <= end + 1e-9 {
        steps.push((t, 2, Step::Sync));
        t += sc.sync_interval_s;
    }
    steps.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x5eed);
    let mut failovers = 0;
    let mut max_wall = 0.0f64;
    let mut latencies = Vec::new();
    let mut timeline = vec![(0.0, active.clone())];
    let mut quality_time = 0.0;
    let mut last_t = 0.0;
    let mut fractions = Vec::new();
    let quality = |m: &ReplicaManager, id: &str| m.replica(id).map(|r| r.desc.tier.quality()).unwrap_or(0.0);

    for (at, _, step) in steps {
        quality_time += quality(&mgr, &active) * (at - last_t);
        last_t = at;
        match step {
            Step::Faults(group) => {
                let mut changes = Vec::new();
                for f in &group {
                    let spec = sc.replicas.iter().find(|r| r.name == f.replica).expect("validated");
                    let health = match f.kind {
                        FaultKind::Disconnect => Health::Unreachable,
                        FaultKind::Reconnect => spec.baseline(),
                        FaultKind::Degrade => match spec.baseline() {
                            Health::Reachable { latency_ms, loss, bandwidth_bps } => Health::Reachable {
                                latency_ms: f.latency_ms.unwrap_or(latency_ms),
                                loss: f.loss.unwrap_or(loss),
                                bandwidth_bps: f.bandwidth_bps.unwrap_or(bandwidth_bps),
                            },
                            h => h,
                        },
                    };
                    changes.push((f.replica.clone(), health));
                }
                let detection_ms = {
                    let ms = at * 1e3;
                    (ms / PROBE_INTERVAL_MS).ceil() * PROBE_INTERVAL_MS - ms
                };
                let start = std::time::Instant::now();
                for (id, health) in &changes {
                    mgr.set_health(id, *health)?;
                }
                let chosen = mgr.select_active(sc.latency_budget_ms)?;
                let wall_ms = start.elapsed().as_secs_f64() * 1e3;
                max_wall = max_wall.max(wall_ms);
                for (replica, health) in changes {
                    log.push(LogRecord::Health {
                        event_time: at,
                        decision_time: at + detection_ms / 1e3,
                        replica,
                        health,
                        active: chosen.clone(),
                    });
                }
                if chosen != active {
                    failovers += 1;
                    latencies.push(detection_ms + wall_ms);
                    timeline.push((at, chosen.clone()));
                    log.push(LogRecord::Failover { t: at, from: active.clone(), to: chosen.clone(), detection_ms });
                    // catch the new active replica up before it serves
                    if let Some(leader) = mgr.leader() {
                        if leader != chosen {
                            let report = mgr.sync_pair(&leader, &chosen)?;
                            record_sync(&mut log, &mut fractions, at, report);
                        }
                    }
                    active = chosen;
                }
            }
            Step::Write(w) => {
                let target = w.replica.clone().unwrap_or_else(|| active.clone());
                let mut pages: Vec<usize> = (0..sc.memory_pages as usize).collect();
                for i in 0..w.pages {
                    let j = rng.gen_range(i..pages.len());
                    pages.swap(i, j);
                }
                let dirty = &pages[..w.pages];
                let fill: u8 = rng.gen();
                mgr.write(&target, at, |mem| {
                    for &p in dirty {
                        let off = p * PAGE_SIZE + PAGE_SIZE - 1;
                        mem[off] = mem[off].wrapping_add(fill | 1);
                    }
                })?;
                log.push(LogRecord::Write { t: at, replica: target, pages: w.pages });
            }
            Step::Sync => {
                for report in mgr.sync_round()? {
                    record_sync(&mut log, &mut fractions, at, report);
                }
            }
        }
    }
    quality_time += quality(&mgr, &active) * (end - last_t).max(0.0);

    // the schedule is over: restore every link and let sync rounds run
    for r in &sc.replicas {
        mgr.set_health(&r.name, r.baseline())?;
    }
    if !sc.faults.is_empty() {
        log.push(LogRecord::Heal { t: end });
    }
    let healed_active = mgr.select_active(sc.latency_budget_ms)?;
    if healed_active != active {
        failovers += 1;
        timeline.push((end, healed_active.clone()));
        log.push(LogRecord::Failover { t: end, from: active.clone(), to: healed_active.clone(), detection_ms: 0.0 });
        active = healed_active;
    }
    let mut rounds_to_converge = mgr.converged().then_some(0);
    let mut t = end;
    for round in 1..=4 * mgr.len() {
        if rounds_to_converge.is_some() {
            break;
        }
        t += sc.sync_interval_s;
        for report in mgr.sync_round()? {
            record_sync(&mut log, &mut fractions, t, report);
        }
        if mgr.converged() {
            rounds_to_converge = Some(round);
        }
    }
    if let Some(rounds) = rounds_to_converge.filter(|&r| r > 0) {
        log.push(LogRecord::Converged { t, rounds });
    }

    Ok(RunSummary {
        scenario: sc.name.clone(),
        replicas: mgr.len(),
        failovers,
        initial_active,
        final_active: active,
        rounds_to_converge,
        max_decision_wall_ms: max_wall,
        max_failover_latency_ms: latencies.iter().copied().fold(0.0, f64::max),
        failover_latencies_ms: latencies,
        active_timeline: timeline,
        functionality: if end > 0.0 { quality_time / end } else { quality(&mgr, &mgr.select_active(sc.latency_budget_ms)?) },
        mean_sync_fraction: if fractions.is_empty() { 0.0 } else { fractions.iter().sum::<f64>() / fractions.len() as f64 },
        log,
    })
}

fn record_sync(log: &mut Vec<LogRecord>, fractions: &mut Vec<f64>, t: f64, report: SyncReport) {
    if report.pages_transferred > 0 {
        fractions.push(report.fraction);
    }
    if report.pages_transferred > 0 || report.conflict {
        log.push(LogRecord::Sync { t, report });
    }
}
