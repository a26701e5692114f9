use std::io;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::{pipe, Connector, MigrationError, MigrationServer, NodeContext, ServedOutcome, Transport};

type Served = Result<ServedOutcome, MigrationError>;

/// In-process destination: every connection is an in-memory pipe served on its own thread.
pub struct Loopback {
    server: Arc<MigrationServer>,
    threads: Mutex<Vec<JoinHandle<Served>>>,
}

impl Loopback {
    pub fn new(ctx: NodeContext) -> Self {
        Loopback { server: Arc::new(MigrationServer::new(ctx)), threads: Mutex::new(Vec::new()) }
    }

    pub fn server(&self) -> &MigrationServer {
        &self.server
    }

    /// Wait for every served session and return their results in connection order.
    pub fn join(&self) -> Vec<Served> {
        let hs: Vec<_> = self.threads.lock().unwrap().drain(..).collect();
        hs.into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(MigrationError::Protocol("server thread panicked".into()))))
            .collect()
    }
}

impl Connector for Loopback {
    fn connect(&self) -> io::Result<Box<dyn Transport>> {
        let (a, b) = pipe();
        let server = self.server.clone();
        let h = std::thread::spawn(move || server.serve(Box::new(b)));
        self.threads.lock().unwrap().push(h);
        Ok(Box::new(a))
    }
}
