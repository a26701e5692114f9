use std::io::{self, Read, Write};
use std::sync::{Arc, Mutex};

use crate::migration::{Frame, FrameType, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TapDirection {
    Outgoing,
    Incoming,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoggedFrame {
    pub direction: TapDirection,
    pub ty: FrameType,
    /// Complete frame bytes as they crossed the wire.
    pub raw: Vec<u8>,
}

/// Shared record of frames seen by one or more taps.
#[derive(Debug, Default)]
pub struct FrameLog(Mutex<Vec<LoggedFrame>>);

impl FrameLog {
    pub fn frames(&self) -> Vec<LoggedFrame> {
        self.0.lock().unwrap().clone()
    }

    /// Concatenated raw bytes in one direction.
    pub fn stream(&self, direction: TapDirection) -> Vec<u8> {
        self.0
            .lock()
            .unwrap()
            .iter()
            .filter(|f| f.direction == direction)
            .flat_map(|f| f.raw.iter().copied())
            .collect()
    }

    fn push(&self, f: LoggedFrame) {
        self.0.lock().unwrap().push(f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultAction {
    /// The connection dies just before this frame is sent.
    Drop,
    /// One byte of the frame (after the length prefix) is flipped, counted modulo the frame body.
    Corrupt { byte: usize },
    /// Half of the frame is sent, then the connection dies.
    Truncate,
}

/// Fault applied to the `frame`-th outgoing frame (zero-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultRule {
    pub frame: usize,
    pub action: FaultAction,
}

/// Transport wrapper that parses frames for logging and fault injection.
pub struct Tap<T: Transport> {
    inner: T,
    rules: Vec<FaultRule>,
    log: Option<Arc<FrameLog>>,
    out_buf: Vec<u8>,
    in_buf: Vec<u8>,
    sent: usize,
    dead: bool,
}

impl<T: Transport> Tap<T> {
    pub fn new(inner: T) -> Self {
        Tap { inner, rules: Vec::new(), log: None, out_buf: Vec::new(), in_buf: Vec::new(), sent: 0, dead: false }
    }

    pub fn with_log(mut self, log: Arc<FrameLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_rule(mut self, rule: FaultRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn frames_sent(&self) -> usize {
        self.sent
    }

    fn kill(&mut self) -> io::Error {
        self.dead = true;
        self.inner.close();
        io::ErrorKind::ConnectionReset.into()
    }
}

impl<T: Transport> Write for Tap<T> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        if self.dead {
            return Err(io::ErrorKind::ConnectionReset.into());
        }
        self.out_buf.extend_from_slice(buf);
        while let Some(parsed) = Frame::parse_prefix(&self.out_buf) {
            let (frame, used) = match parsed {
                Ok(x) => x,
                Err(_) => {
                    // not a frame stream; pass through untouched
                    let raw = std::mem::take(&mut self.out_buf);
                    self.inner.write_all(&raw)?;
                    return Ok(buf.len());
                }
            };
            let mut raw: Vec<u8> = self.out_buf.drain(..used).collect();
            let index = self.sent;
            self.sent += 1;
            match self.rules.iter().find(|r| r.frame == index).map(|r| r.action) {
                Some(FaultAction::Drop) => return Err(self.kill()),
                Some(FaultAction::Truncate) => {
                    let _ = self.inner.write_all(&raw[..raw.len() / 2]);
                    let _ = self.inner.flush();
                    return Err(self.kill());
                }
                Some(FaultAction::Corrupt { byte }) => {
                    let at = 4 + byte % (raw.len() - 4);
                    raw[at] ^= 0x01;
                }
                None => {}
            }
            if let Some(log) = &self.log {
                log.push(LoggedFrame { direction: TapDirection::Outgoing, ty: frame.ty, raw: raw.clone() });
            }
            self.inner.write_all(&raw)?;
        }
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<T: Transport> Read for Tap<T> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if self.dead {
            return Err(io::ErrorKind::ConnectionReset.into());
        }
        let n = self.inner.read(buf)?;
        if let Some(log) = &self.log {
            self.in_buf.extend_from_slice(&buf[..n]);
            while let Some(Ok((frame, used))) = Frame::parse_prefix(&self.in_buf) {
                let raw: Vec<u8> = self.in_buf.drain(..used).collect();
                log.push(LoggedFrame { direction: TapDirection::Incoming, ty: frame.ty, raw });
            }
        }
        Ok(n)
    }
}

impl<T: Transport> Transport for Tap<T> {
    fn close(&mut self) {
        self.inner.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::migration::{pipe, read_frame, write_frame};

    #[test]
    fn logs_and_injects() {
        let (a, mut b) = pipe();
        let log = Arc::new(FrameLog::default());
        let mut tap = Tap::new(a)
            .with_log(log.clone())
            .with_rule(FaultRule { frame: 1, action: FaultAction::Corrupt { byte: 1 } })
            .with_rule(FaultRule { frame: 2, action: FaultAction::Drop });
        write_frame(&mut tap, &Frame::new(FrameType::Hello, vec![1, 2])).unwrap();
        write_frame(&mut tap, &Frame::new(FrameType::Quote, vec![0, 0])).unwrap();
        assert!(write_frame(&mut tap, &Frame::new(FrameType::Chunk, vec![9])).is_err());
        assert_eq!(read_frame(&mut b).unwrap().payload, vec![1, 2]);
        assert_eq!(read_frame(&mut b).unwrap().payload, vec![1, 0]);
        assert!(read_frame(&mut b).is_err());
        let frames = log.frames();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[1].raw, vec![3, 0, 0, 0, 2, 1, 0]);
    }
}
