//! Reliable ordered byte streams that carry the migration protocol.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Duration;

pub trait Transport: Read + Write + Send {
    /// Close both directions. Later reads return end of stream and later writes fail.
    fn close(&mut self) {}
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn close(&mut self) {
        (**self).close()
    }
}

impl Transport for TcpStream {
    fn close(&mut self) {
        let _ = self.shutdown(std::net::Shutdown::Both);
    }
}

/// Opens fresh connections to one peer; used again for in-doubt recovery.
pub trait Connector: Send + Sync {
    fn connect(&self) -> io::Result<Box<dyn Transport>>;
}

impl<F> Connector for F
where
    F: Fn() -> io::Result<Box<dyn Transport>> + Send + Sync,
{
    fn connect(&self) -> io::Result<Box<dyn Transport>> {
        self()
    }
}

#[derive(Debug, Clone)]
pub struct TcpConnector {
    pub addr: SocketAddr,
    pub timeout: Duration,
}

impl TcpConnector {
    pub fn new(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let addr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "address resolved to nothing"))?;
        Ok(TcpConnector {
            addr,
            timeout: Duration::from_secs(10),
        })
    }
}

impl Connector for TcpConnector {
    fn connect(&self) -> io::Result<Box<dyn Transport>> {
        let s = TcpStream::connect_timeout(&self.addr, self.timeout)?;
        s.set_nodelay(true)?;
        s.set_read_timeout(Some(Duration::from_secs(60)))?;
        Ok(Box::new(s))
    }
}

/// In-memory duplex stream end.
pub struct PipeEnd {
    tx: Option<Sender<Vec<u8>>>,
    rx: Receiver<Vec<u8>>,
    pending: Vec<u8>,
    at: usize,
}

/// Connected pair of in-memory stream ends.
pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (
        PipeEnd { tx: Some(a_tx), rx: a_rx, pending: Vec::new(), at: 0 },
        PipeEnd { tx: Some(b_tx), rx: b_rx, pending: Vec::new(), at: 0 },
    )
}

impl Read for PipeEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        while self.at == self.pending.len() {
            match self.rx.recv() {
                Ok(v) => {
                    self.pending = v;
                    self.at = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len() - self.at);
        buf[..n].copy_from_slice(&self.pending[self.at..self.at + n]);
        self.at += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let tx = self.tx.as_ref().ok_or_else(|| io::Error::from(io::ErrorKind::BrokenPipe))?;
        tx.send(buf.to_vec()).map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Transport for PipeEnd {
    fn close(&mut self) {
        self.tx = None;
        // drain so the peer's sends start failing once it notices
        while self.rx.try_recv().is_ok() {}
        self.pending.clear();
        self.at = 0;
        let (_, dead) = channel();
        self.rx = dead;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pipe_carries_bytes_and_closes() {
        let (mut a, mut b) = pipe();
        a.write_all(b"hello").unwrap();
        let mut got = [0u8; 5];
        b.read_exact(&mut got).unwrap();
        assert_eq!(&got, b"hello");
        drop(a);
        assert_eq!(b.read(&mut got).unwrap(), 0);
        assert!(b.write(b"x").is_err());
    }
}
