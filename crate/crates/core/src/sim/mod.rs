//! Deterministic network simulation.
//!
//! Each node owns a virtual clock. Writing `n` bytes advances the writer's
//! clock by the serialization time `8n / bandwidth`; the bytes are stamped
//! with a delivery time of that clock plus latency, jitter, and retransmission
//! delay for lost segments. Reading advances the reader's clock to the
//! delivery time. Delivery times never decrease within a direction, so the
//! stream stays ordered. Disconnect windows sever the link.

mod fault;

pub use fault::{FaultAction, FaultRule, FrameLog, LoggedFrame, Tap, TapDirection};

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, ManualClock};
use crate::migration::Transport;

/// Properties of one simulated link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkConfig {
    pub bandwidth_bps: f64,
    #[serde(with = "secs_f64")]
    pub latency: Duration,
    /// Uniform extra delay in `[0, jitter)` per write.
    #[serde(with = "secs_f64")]
    pub jitter: Duration,
    /// Probability that a segment is lost and retransmitted.
    pub loss: f64,
    pub segment_bytes: usize,
    #[serde(with = "secs_f64")]
    pub retransmit_timeout: Duration,
    /// `(start, end)` virtual-time windows during which the link is down.
    pub disconnects: Vec<(f64, f64)>,
    pub seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            bandwidth_bps: 1e9,
            latency: Duration::from_micros(500),
            jitter: Duration::ZERO,
            loss: 0.0,
            segment_bytes: 64 * 1024,
            retransmit_timeout: Duration::from_millis(200),
            disconnects: Vec::new(),
            seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn gigabit() -> Self {
        Self::default()
    }

    pub fn with_bandwidth(mut self, bps: f64) -> Self {
        self.bandwidth_bps = bps;
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Serialization time of `bytes` on this link.
    pub fn serialization(&self, bytes: usize) -> Duration {
        Duration::from_secs_f64(bytes as f64 * 8.0 / self.bandwidth_bps)
    }
}

mod secs_f64 {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(serde::de::Error::custom("duration must be a finite non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

#[derive(Default)]
struct Direction {
    queue: VecDeque<(Duration, Vec<u8>)>,
    last_delivery: Duration,
    writer_closed: bool,
}

struct Link {
    config: LinkConfig,
    rng: ChaCha8Rng,
    dirs: [Direction; 2],
    severed: bool,
    bytes_sent: [u64; 2],
}

type SharedLink = Arc<(Mutex<Link>, Condvar)>;

/// One end of a simulated link, bound to its node's clock.
pub struct SimEndpoint {
    link: SharedLink,
    side: usize,
    clock: ManualClock,
    pending: Vec<u8>,
    at: usize,
}

/// Connect two nodes whose virtual clocks are `a` and `b`.
pub fn sim_link(config: LinkConfig, a: ManualClock, b: ManualClock) -> (SimEndpoint, SimEndpoint) {
    let link = Arc::new((
        Mutex::new(Link {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            dirs: Default::default(),
            severed: false,
            bytes_sent: [0; 2],
        }),
        Condvar::new(),
    ));
    (
        SimEndpoint { link: link.clone(), side: 0, clock: a, pending: Vec::new(), at: 0 },
        SimEndpoint { link, side: 1, clock: b, pending: Vec::new(), at: 0 },
    )
}

fn in_window(windows: &[(f64, f64)], from: Duration, to: Duration) -> bool {
    let (f, t) = (from.as_secs_f64(), to.as_secs_f64());
    windows.iter().any(|&(s, e)| f < e && t >= s)
}

impl SimEndpoint {
    pub fn clock(&self) -> &ManualClock {
        &self.clock
    }

    /// Bytes this end has written so far.
    pub fn bytes_sent(&self) -> u64 {
        self.link.0.lock().unwrap().bytes_sent[self.side]
    }
}

impl Write for SimEndpoint {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let (lock, cv) = &*self.link;
        let mut link = lock.lock().unwrap();
        if link.severed {
            return Err(io::ErrorKind::ConnectionReset.into());
        }
        if link.dirs[self.side].writer_closed || link.dirs[1 - self.side].writer_closed {
            return Err(io::ErrorKind::BrokenPipe.into());
        }
        let start = self.clock.now();
        let cfg = link.config.clone();
        self.clock.advance(cfg.serialization(buf.len()));
        let mut delay = cfg.latency;
        if cfg.jitter > Duration::ZERO {
            delay += cfg.jitter.mul_f64(link.rng.gen::<f64>());
        }
        if cfg.loss > 0.0 {
            let segments = buf.len().div_ceil(cfg.segment_bytes.max(1)).max(1);
            for _ in 0..segments {
                // a segment can be lost more than once
                while link.rng.gen::<f64>() < cfg.loss {
                    delay += cfg.retransmit_timeout;
                }
            }
        }
        let dir = &mut link.dirs[1 - self.side];
        let deliver = (self.clock.now() + delay).max(dir.last_delivery);
        if in_window(&cfg.disconnects, start, deliver) {
            link.severed = true;
            for d in link.dirs.iter_mut() {
                d.queue.clear();
            }
            cv.notify_all();
            return Ok(buf.len());
        }
        dir.last_delivery = deliver;
        dir.queue.push_back((deliver, buf.to_vec()));
        link.bytes_sent[self.side] += buf.len() as u64;
        cv.notify_all();
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Read for SimEndpoint {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.at == self.pending.len() {
            let (lock, cv) = &*self.link;
            let mut link = lock.lock().unwrap();
            loop {
                if let Some((t, data)) = link.dirs[self.side].queue.pop_front() {
                    self.clock.advance_to(t);
                    self.pending = data;
                    self.at = 0;
                    break;
                }
                if link.severed {
                    return Err(io::ErrorKind::ConnectionReset.into());
                }
                if link.dirs[self.side].writer_closed {
                    return Ok(0);
                }
                link = cv.wait(link).unwrap();
            }
        }
        let n = buf.len().min(self.pending.len() - self.at);
        buf[..n].copy_from_slice(&self.pending[self.at..self.at + n]);
        self.at += n;
        Ok(n)
    }
}

impl Transport for SimEndpoint {
    fn close(&mut self) {
        let (lock, cv) = &*self.link;
        let mut link = lock.lock().unwrap();
        // queue index is the receiving side; the peer stops receiving from us
        link.dirs[1 - self.side].writer_closed = true;
        link.dirs[self.side].writer_closed = true;
        link.dirs[self.side].queue.clear();
        cv.notify_all();
    }
}

impl Drop for SimEndpoint {
    fn drop(&mut self) {
        self.close();
    }
}
