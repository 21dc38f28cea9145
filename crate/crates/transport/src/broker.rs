//! Durable message broker with a line-delimited TCP protocol.
//!
//! Wire protocol (UTF-8 command lines, `\n`-terminated, raw bodies):
//!
//! ```text
//! client -> server:  SEND <queue> <len>\n<len body bytes>
//!                    SUBSCRIBE <queue>\n
//!                    ACK <id>\n
//! server -> client:  OK <id>\n            (reply to SEND)
//!                    ERR <reason>\n
//!                    MSG <id> <len>\n<len body bytes>   (on subscribed connections)
//! ```
//!
//! Messages are durably written to `<data_dir>/<queue>/<id>.msg` before the
//! `OK` reply. Delivery is at-least-once: a delivered message that is not
//! acknowledged within the redelivery timeout (or whose subscriber
//! disconnects) returns to the queue. Ids ascend in enqueue order and each
//! queue delivers in id order, so per-producer ordering is preserved.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::{ControlMessage, TransportError, MAX_CONTROL_MESSAGE_BYTES};

#[derive(Clone, Debug)]
pub struct BrokerConfig {
    pub data_dir: PathBuf,
    pub redelivery_timeout: Duration,
}

impl BrokerConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        BrokerConfig {
            data_dir: data_dir.into(),
            redelivery_timeout: Duration::from_secs(30),
        }
    }

    pub fn with_redelivery_timeout(mut self, timeout: Duration) -> Self {
        self.redelivery_timeout = timeout;
        self
    }
}

#[derive(Default)]
struct QueueState {
    pending: BTreeMap<u64, ()>,
    inflight: HashMap<u64, Instant>,
}

#[derive(Default)]
struct BrokerState {
    queues: HashMap<String, QueueState>,
    index: HashMap<u64, String>,
    next_id: u64,
}

struct Shared {
    config: BrokerConfig,
    state: Mutex<BrokerState>,
    shutdown: AtomicBool,
    sessions: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    fn message_path(&self, queue: &str, id: u64) -> PathBuf {
        self.config.data_dir.join(queue).join(format!("{id}.msg"))
    }

    fn enqueue(&self, queue: &str, body: &[u8]) -> std::io::Result<u64> {
        let mut state = self.state.lock().unwrap();
        let id = state.next_id;
        state.next_id += 1;
        let dir = self.config.data_dir.join(queue);
        std::fs::create_dir_all(&dir)?;
        let tmp = dir.join(format!("{id}.tmp"));
        {
            let mut file = std::fs::File::create(&tmp)?;
            file.write_all(body)?;
            file.sync_all()?;
        }
        std::fs::rename(&tmp, dir.join(format!("{id}.msg")))?;
        state
            .queues
            .entry(queue.to_string())
            .or_default()
            .pending
            .insert(id, ());
        state.index.insert(id, queue.to_string());
        Ok(id)
    }

    /// Claim the oldest pending message of a queue for delivery.
    fn claim(&self, queue: &str) -> Option<(u64, Vec<u8>)> {
        let mut state = self.state.lock().unwrap();
        loop {
            let q = state.queues.get_mut(queue)?;
            let (id, _) = q.pending.pop_first()?;
            match std::fs::read(self.message_path(queue, id)) {
                Ok(body) => {
                    let deadline = Instant::now() + self.config.redelivery_timeout;
                    state
                        .queues
                        .get_mut(queue)
                        .expect("queue exists")
                        .inflight
                        .insert(id, deadline);
                    return Some((id, body));
                }
                Err(e) => {
                    log::error!("dropping unreadable message {id} on {queue}: {e}");
                    state.index.remove(&id);
                }
            }
        }
    }

    fn still_inflight(&self, queue: &str, id: u64) -> bool {
        let state = self.state.lock().unwrap();
        state
            .queues
            .get(queue)
            .is_some_and(|q| q.inflight.contains_key(&id))
    }

    /// Return an unacknowledged claim to its queue (subscriber went away).
    fn requeue(&self, queue: &str, id: u64) {
        let mut state = self.state.lock().unwrap();
        if let Some(q) = state.queues.get_mut(queue) {
            if q.inflight.remove(&id).is_some() {
                q.pending.insert(id, ());
            }
        }
    }

    /// Acknowledge a message wherever it currently sits. Unknown ids are
    /// ignored (late acks for already-acknowledged messages).
    fn ack(&self, id: u64) {
        let mut state = self.state.lock().unwrap();
        let Some(queue) = state.index.remove(&id) else {
            return;
        };
        if let Some(q) = state.queues.get_mut(&queue) {
            q.pending.remove(&id);
            q.inflight.remove(&id);
        }
        let path = self.message_path(&queue, id);
        if let Err(e) = std::fs::remove_file(&path) {
            log::warn!("could not remove acked message {}: {e}", path.display());
        }
    }

    fn sweep_expired(&self) {
        let now = Instant::now();
        let mut state = self.state.lock().unwrap();
        for q in state.queues.values_mut() {
            let expired: Vec<u64> = q
                .inflight
                .iter()
                .filter(|(_, deadline)| **deadline <= now)
                .map(|(id, _)| *id)
                .collect();
            for id in expired {
                q.inflight.remove(&id);
                q.pending.insert(id, ());
            }
        }
    }

    /// Rebuild queue state from the data directory on startup.
    fn recover(&self) -> std::io::Result<()> {
        let mut state = self.state.lock().unwrap();
        let dir = &self.config.data_dir;
        std::fs::create_dir_all(dir)?;
        let mut max_id = 0u64;
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            if !entry.file_type()?.is_dir() {
                continue;
            }
            let queue = entry.file_name().to_string_lossy().to_string();
            for msg in std::fs::read_dir(entry.path())? {
                let msg = msg?;
                let name = msg.file_name().to_string_lossy().to_string();
                if let Some(stem) = name.strip_suffix(".msg") {
                    if let Ok(id) = stem.parse::<u64>() {
                        state.queues.entry(queue.clone()).or_default().pending.insert(id, ());
                        state.index.insert(id, queue.clone());
                        max_id = max_id.max(id);
                        continue;
                    }
                }
                if name.ends_with(".tmp") {
                    let _ = std::fs::remove_file(msg.path());
                }
            }
        }
        state.next_id = max_id + 1;
        Ok(())
    }
}

/// The broker service. `start` binds, recovers durable state, and spawns
/// the accept loop plus the redelivery sweeper.
pub struct Broker;

impl Broker {
    pub fn start(addr: &str, config: BrokerConfig) -> std::io::Result<BrokerHandle> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            config,
            state: Mutex::new(BrokerState::default()),
            shutdown: AtomicBool::new(false),
            sessions: Mutex::new(Vec::new()),
        });
        shared.recover()?;

        let accept_shared = Arc::clone(&shared);
        let accept_thread = std::thread::spawn(move || {
            while !accept_shared.shutdown.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let session_shared = Arc::clone(&accept_shared);
                        let handle = std::thread::spawn(move || {
                            if let Err(e) = run_session(stream, &session_shared) {
                                log::debug!("session ended: {e}");
                            }
                        });
                        accept_shared.sessions.lock().unwrap().push(handle);
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(20));
                    }
                    Err(e) => {
                        log::error!("accept failed: {e}");
                        std::thread::sleep(Duration::from_millis(100));
                    }
                }
            }
        });

        let sweep_shared = Arc::clone(&shared);
        let sweep_thread = std::thread::spawn(move || {
            while !sweep_shared.shutdown.load(Ordering::SeqCst) {
                sweep_shared.sweep_expired();
                std::thread::sleep(Duration::from_millis(25));
            }
        });

        Ok(BrokerHandle {
            addr: local_addr,
            shared,
            threads: vec![accept_thread, sweep_thread],
        })
    }
}

pub struct BrokerHandle {
    pub addr: SocketAddr,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
}

impl BrokerHandle {
    /// Stop accepting, wind down sessions, and join all broker threads.
    /// Durable queue state stays on disk for the next start.
    pub fn shutdown(mut self) {
        self.shutdown_inner();
    }

    fn shutdown_inner(&mut self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
        let sessions = std::mem::take(&mut *self.shared.sessions.lock().unwrap());
        for t in sessions {
            let _ = t.join();
        }
    }
}

impl Drop for BrokerHandle {
    fn drop(&mut self) {
        if !self.threads.is_empty() {
            self.shutdown_inner();
        }
    }
}

fn queue_name_ok(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

/// Buffered reader over a socket that survives read timeouts without losing
/// partial lines or bodies.
struct NetReader {
    stream: TcpStream,
    acc: Vec<u8>,
}

impl NetReader {
    fn new(stream: TcpStream) -> Self {
        NetReader {
            stream,
            acc: Vec::new(),
        }
    }

    fn fill(&mut self) -> std::io::Result<Option<()>> {
        let mut chunk = [0u8; 4096];
        match self.stream.read(&mut chunk) {
            Ok(0) => Err(std::io::Error::new(
                std::io::ErrorKind::UnexpectedEof,
                "peer closed",
            )),
            Ok(n) => {
                self.acc.extend_from_slice(&chunk[..n]);
                Ok(Some(()))
            }
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }

    /// One `\n`-terminated line, or `None` on read timeout.
    fn read_line(&mut self) -> std::io::Result<Option<String>> {
        loop {
            if let Some(pos) = self.acc.iter().position(|b| *b == b'\n') {
                let line: Vec<u8> = self.acc.drain(..=pos).collect();
                let text = String::from_utf8_lossy(&line[..line.len() - 1])
                    .trim_end_matches('\r')
                    .to_string();
                return Ok(Some(text));
            }
            if self.fill()?.is_none() {
                return Ok(None);
            }
        }
    }

    /// Exactly `n` body bytes, or `None` on read timeout before completion.
    fn read_body(&mut self, n: usize) -> std::io::Result<Option<Vec<u8>>> {
        loop {
            if self.acc.len() >= n {
                return Ok(Some(self.acc.drain(..n).collect()));
            }
            if self.fill()?.is_none() {
                return Ok(None);
            }
        }
    }

    /// Block (with an overall deadline) until `n` body bytes arrive.
    fn read_body_blocking(&mut self, n: usize, deadline: Instant) -> std::io::Result<Vec<u8>> {
        loop {
            if let Some(body) = self.read_body(n)? {
                return Ok(body);
            }
            if Instant::now() >= deadline {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::TimedOut,
                    "body read stalled",
                ));
            }
        }
    }
}

fn run_session(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(50)))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = NetReader::new(stream);
    let mut subscription: Option<(String, Option<u64>)> = None;

    let result = loop {
        if shared.shutdown.load(Ordering::SeqCst) {
            break Ok(());
        }

        // Subscriber duties: deliver the next message when no claim is
        // outstanding; drop the local claim when it was acked elsewhere or
        // requeued after a timeout.
        if let Some((queue, outstanding)) = &mut subscription {
            match outstanding {
                None => {
                    if let Some((id, body)) = shared.claim(queue) {
                        let frame = format!("MSG {id} {}\n", body.len());
                        if let Err(e) = writer
                            .write_all(frame.as_bytes())
                            .and_then(|_| writer.write_all(&body))
                            .and_then(|_| writer.flush())
                        {
                            shared.requeue(queue, id);
                            break Err(e);
                        }
                        *outstanding = Some(id);
                    }
                }
                Some(id) => {
                    if !shared.still_inflight(queue, *id) {
                        *outstanding = None;
                    }
                }
            }
        }

        let line = match reader.read_line() {
            Ok(Some(line)) => line,
            Ok(None) => continue,
            Err(e) => break Err(e),
        };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("SEND") => {
                let queue = parts.next().unwrap_or("");
                let len: Option<usize> = parts.next().and_then(|v| v.parse().ok());
                if subscription.is_some() {
                    writer.write_all(b"ERR subscribed connections cannot send\n")?;
                    continue;
                }
                let Some(len) = len else {
                    writer.write_all(b"ERR bad SEND syntax\n")?;
                    continue;
                };
                if !queue_name_ok(queue) {
                    writer.write_all(b"ERR bad queue name\n")?;
                    continue;
                }
                if len > MAX_CONTROL_MESSAGE_BYTES {
                    // Refuse, but only drain bodies of plausible size.
                    if len <= 4 * MAX_CONTROL_MESSAGE_BYTES {
                        let deadline = Instant::now() + Duration::from_secs(10);
                        let _ = reader.read_body_blocking(len, deadline);
                        writer.write_all(b"ERR message too large\n")?;
                        continue;
                    }
                    writer.write_all(b"ERR message too large\n")?;
                    break Ok(());
                }
                let deadline = Instant::now() + Duration::from_secs(10);
                let body = reader.read_body_blocking(len, deadline)?;
                match shared.enqueue(queue, &body) {
                    Ok(id) => writer.write_all(format!("OK {id}\n").as_bytes())?,
                    Err(e) => {
                        log::error!("enqueue on {queue} failed: {e}");
                        writer.write_all(b"ERR enqueue failed\n")?;
                    }
                }
                writer.flush()?;
            }
            Some("SUBSCRIBE") => {
                let queue = parts.next().unwrap_or("");
                if !queue_name_ok(queue) {
                    writer.write_all(b"ERR bad queue name\n")?;
                    continue;
                }
                if subscription.is_some() {
                    writer.write_all(b"ERR already subscribed\n")?;
                    continue;
                }
                subscription = Some((queue.to_string(), None));
            }
            Some("ACK") => {
                let id: Option<u64> = parts.next().and_then(|v| v.parse().ok());
                let Some(id) = id else {
                    writer.write_all(b"ERR bad ACK syntax\n")?;
                    continue;
                };
                shared.ack(id);
                if let Some((_, outstanding)) = &mut subscription {
                    if *outstanding == Some(id) {
                        *outstanding = None;
                    }
                }
            }
            _ => {
                writer.write_all(b"ERR unknown command\n")?;
            }
        }
    };

    // A dropped subscriber returns its unacknowledged claim immediately.
    if let Some((queue, Some(id))) = subscription {
        shared.requeue(&queue, id);
    }
    result.or_else(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Ok(())
        } else {
            Err(e)
        }
    })
}

// --- client ----------------------------------------------------------------

/// Sending side of the broker protocol.
pub struct BrokerClient {
    reader: NetReader,
}

impl BrokerClient {
    pub fn connect(addr: impl ToSocketAddrs) -> crate::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_millis(50)))?;
        Ok(BrokerClient {
            reader: NetReader::new(stream),
        })
    }

    /// Send one control message; returns the broker-assigned message id
    /// once the broker confirms durable enqueue.
    pub fn send(&mut self, queue: &str, message: &ControlMessage) -> crate::Result<u64> {
        let body = message.to_bytes()?;
        let header = format!("SEND {queue} {}\n", body.len());
        self.reader.stream.write_all(header.as_bytes())?;
        self.reader.stream.write_all(&body)?;
        self.reader.stream.flush()?;
        let deadline = Instant::now() + Duration::from_secs(10);
        let line = loop {
            match self.reader.read_line()? {
                Some(line) => break line,
                None if Instant::now() >= deadline => {
                    return Err(TransportError::Protocol("no reply to SEND".into()))
                }
                None => {}
            }
        };
        if let Some(id_text) = line.strip_prefix("OK ") {
            return id_text
                .trim()
                .parse()
                .map_err(|_| TransportError::Protocol(format!("bad OK reply {line:?}")));
        }
        if let Some(reason) = line.strip_prefix("ERR ") {
            return Err(TransportError::Rejected(reason.to_string()));
        }
        Err(TransportError::Protocol(format!("unexpected reply {line:?}")))
    }

    /// Switch this connection to delivery mode for one queue.
    pub fn subscribe(self, queue: &str) -> crate::Result<Subscriber> {
        let mut reader = self.reader;
        reader
            .stream
            .write_all(format!("SUBSCRIBE {queue}\n").as_bytes())?;
        reader.stream.flush()?;
        Ok(Subscriber { reader })
    }
}

/// One delivered message awaiting acknowledgement.
#[derive(Clone, Debug)]
pub struct Delivery {
    pub broker_id: u64,
    pub message: ControlMessage,
}

/// Receiving side of the broker protocol.
pub struct Subscriber {
    reader: NetReader,
}

impl Subscriber {
    /// Wait up to `timeout` for the next delivery.
    pub fn recv_timeout(&mut self, timeout: Duration) -> crate::Result<Option<Delivery>> {
        let deadline = Instant::now() + timeout;
        let line = loop {
            match self.reader.read_line()? {
                Some(line) => break line,
                None if Instant::now() >= deadline => return Ok(None),
                None => {}
            }
        };
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("MSG") => {
                let id: u64 = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| TransportError::Protocol(format!("bad MSG frame {line:?}")))?;
                let len: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| TransportError::Protocol(format!("bad MSG frame {line:?}")))?;
                let body = self
                    .reader
                    .read_body_blocking(len, Instant::now() + Duration::from_secs(10))?;
                let message = ControlMessage::from_bytes(&body)?;
                Ok(Some(Delivery {
                    broker_id: id,
                    message,
                }))
            }
            Some("ERR") => Err(TransportError::Rejected(line[3..].trim().to_string())),
            _ => Err(TransportError::Protocol(format!(
                "unexpected frame {line:?}"
            ))),
        }
    }

    /// Acknowledge a delivery; the broker will never redeliver it.
    pub fn ack(&mut self, broker_id: u64) -> crate::Result<()> {
        self.reader
            .stream
            .write_all(format!("ACK {broker_id}\n").as_bytes())?;
        self.reader.stream.flush()?;
        Ok(())
    }
}
