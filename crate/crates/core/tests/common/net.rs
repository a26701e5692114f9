//! Two-node harness: a destination server reachable through a connector,
//! with optional fault injection and frame logging on the first connection.

use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use portvm_core::attestation::{measure, GlobalId, NodeIdentity, VerificationPolicy, WASI_NN};
use portvm_core::clock::{Clock, ManualClock};
use portvm_core::migration::{
    pipe, Connector, MigrationError, MigrationServer, NodeContext, ServedOutcome, Transport,
};
use portvm_core::sim::{sim_link, FaultRule, FrameLog, LinkConfig, Tap};

pub const EPOCH: u64 = 1_700_000_000;

pub fn node_gid(name: &str) -> GlobalId {
    measure(format!("portvm-node/{name}").as_bytes())
}

/// Context trusting `trusted`, requiring {1003} from peers and advertising {1003}.
pub fn node_ctx(seed: u64, gid: GlobalId, trusted: &[GlobalId]) -> NodeContext {
    NodeContext::new(
        Arc::new(NodeIdentity::from_seed(seed)),
        gid,
        VerificationPolicy::new(trusted.iter().copied()).require([WASI_NN]),
    )
    .with_entry_ids([WASI_NN])
    .with_seed(seed)
}

pub fn pair() -> (NodeContext, NodeContext) {
    let (a, b) = (node_gid("a"), node_gid("b"));
    (node_ctx(1, a, &[a, b]), node_ctx(2, b, &[a, b]))
}

pub type LinkFactory = Box<dyn Fn() -> (Box<dyn Transport>, Box<dyn Transport>) + Send + Sync>;

pub fn pipe_link() -> LinkFactory {
    Box::new(|| {
        let (a, b) = pipe();
        (Box::new(a) as Box<dyn Transport>, Box::new(b) as Box<dyn Transport>)
    })
}

pub fn sim(config: LinkConfig, a: ManualClock, b: ManualClock) -> LinkFactory {
    Box::new(move || {
        let (x, y) = sim_link(config.clone(), a.clone(), b.clone());
        (Box::new(x) as Box<dyn Transport>, Box::new(y) as Box<dyn Transport>)
    })
}

pub fn manual_clocks() -> (ManualClock, ManualClock) {
    (ManualClock::at_secs(EPOCH), ManualClock::at_secs(EPOCH))
}

pub fn with_clock(ctx: NodeContext, clock: &ManualClock) -> NodeContext {
    ctx.with_clock(Arc::new(clock.clone()) as Arc<dyn Clock>)
}

type Served = Result<ServedOutcome, MigrationError>;

#[derive(Clone)]
pub struct Harness {
    pub server: Arc<MigrationServer>,
    link: Arc<LinkFactory>,
    threads: Arc<Mutex<Vec<JoinHandle<Served>>>>,
    connects: Arc<AtomicUsize>,
    src_rules: Vec<FaultRule>,
    dst_rules: Vec<FaultRule>,
    log: Option<Arc<FrameLog>>,
}

impl Harness {
    pub fn new(server_ctx: NodeContext, link: LinkFactory) -> Self {
        Harness {
            server: Arc::new(MigrationServer::new(server_ctx)),
            link: Arc::new(link),
            threads: Arc::default(),
            connects: Arc::default(),
            src_rules: Vec::new(),
            dst_rules: Vec::new(),
            log: None,
        }
    }

    /// Fault applied to frames the source sends on the first connection.
    pub fn source_fault(mut self, rule: FaultRule) -> Self {
        self.src_rules.push(rule);
        self
    }

    /// Fault applied to frames the destination sends on the first connection.
    pub fn dest_fault(mut self, rule: FaultRule) -> Self {
        self.dst_rules.push(rule);
        self
    }

    /// Record every frame of every connection, as seen from the source.
    pub fn logged(mut self, log: Arc<FrameLog>) -> Self {
        self.log = Some(log);
        self
    }

    fn open(&self) -> io::Result<Box<dyn Transport>> {
        let first = self.connects.fetch_add(1, Ordering::SeqCst) == 0;
        let (a, b) = (self.link)();
        let mut src = Tap::new(a);
        let mut dst = Tap::new(b);
        if first {
            for r in &self.src_rules {
                src = src.with_rule(*r);
            }
            for r in &self.dst_rules {
                dst = dst.with_rule(*r);
            }
        }
        if let Some(log) = &self.log {
            src = src.with_log(log.clone());
        }
        let server = self.server.clone();
        let h = std::thread::spawn(move || server.serve(Box::new(dst)));
        self.threads.lock().unwrap().push(h);
        Ok(Box::new(src))
    }

    pub fn connector(&self) -> impl Connector + '_ {
        move || self.open()
    }

    pub fn connections(&self) -> usize {
        self.connects.load(Ordering::SeqCst)
    }

    /// Wait for every server session to finish.
    pub fn join(&self) -> Vec<Served> {
        let hs: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        hs.into_iter().map(|h| h.join().expect("server thread panicked")).collect()
    }
}
