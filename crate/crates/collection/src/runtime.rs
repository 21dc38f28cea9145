//! Process-level runtimes around the pure cores: a journaled supervisor that
//! executes effects against the store and broker, and a consumer loop that
//! turns notices into sorted files and acknowledgements.

use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use ei_model::Registry;
use ei_transport::{
    BrokerClient, Clock, ControlBody, ControlMessage, StoreRouter, TransportError,
    ValidationNotice,
};

use crate::consumer::{consume_validation, ConsumerConfig};
use crate::error::{CollectionError, Result};
use crate::producer::{ReconnectingSender, ReportChannel, OBJECT_BUCKET};
use crate::supervisor::{
    DatasetStatus, Effect, EmitOutcome, SupervisorConfig, SupervisorCore, SupervisorInput,
};
use crate::validation::ValidationObject;

/// 64-bit FNV-1a. Used to derive stable message ids from logical content so
/// that retries of the same logical message carry the same id.
pub fn stable_hash64(text: &str) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// One journal line: the instant and the input applied at it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JournalEntry {
    pub now_ms: u64,
    #[serde(flatten)]
    pub input: SupervisorInput,
}

/// Outbound side for validation notices; the broker client implements it and
/// tests substitute fault-injecting stand-ins.
pub trait NoticeSender: Send {
    fn send_notice(&mut self, notice: &ValidationNotice) -> std::result::Result<(), String>;
}

/// Sends notices through the broker, one queue, reconnecting per attempt.
pub struct BrokerNoticeSender {
    sender: ReconnectingSender,
    queue: String,
    clock: Box<dyn Clock + Send>,
}

impl BrokerNoticeSender {
    pub fn new(addr: impl Into<String>, queue: impl Into<String>, clock: Box<dyn Clock + Send>) -> Self {
        BrokerNoticeSender {
            sender: ReconnectingSender::new(addr),
            queue: queue.into(),
            clock,
        }
    }
}

impl NoticeSender for BrokerNoticeSender {
    fn send_notice(&mut self, notice: &ValidationNotice) -> std::result::Result<(), String> {
        let msg_id = stable_hash64(&format!(
            "notice|{}|{}",
            notice.dataset, notice.validation_uri
        ));
        let message = ControlMessage::new(
            msg_id,
            self.clock.now_ms(),
            ControlBody::ValidationNotice(notice.clone()),
        );
        self.sender
            .send(&self.queue, &message)
            .map(|_| ())
            .map_err(|e| e.to_string())
    }
}

/// The supervisor with its write-ahead journal and effect execution. Every
/// input is journalled before it is applied; restarting from the journal
/// reconstructs the exact state without re-running effects.
pub struct SupervisorRuntime {
    core: SupervisorCore,
    router: StoreRouter,
    journal: std::fs::File,
    sender: Box<dyn NoticeSender>,
}

impl SupervisorRuntime {
    /// Open (replaying any existing journal) or start fresh. Returns the
    /// runtime and the number of journal entries replayed.
    pub fn open(
        registry: Registry,
        config: SupervisorConfig,
        router: StoreRouter,
        journal_path: &Path,
        sender: Box<dyn NoticeSender>,
    ) -> Result<(Self, u64)> {
        let mut core = SupervisorCore::new(registry, config);
        let mut replayed = 0u64;
        match std::fs::read_to_string(journal_path) {
            Ok(text) => {
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let entry: JournalEntry = serde_json::from_str(line).map_err(|e| {
                        CollectionError::BadConfig(format!(
                            "journal {} line {}: {e}",
                            journal_path.display(),
                            i + 1
                        ))
                    })?;
                    // Effects already ran before the crash; replay only state.
                    let _ = core.apply(&entry.input, entry.now_ms);
                    replayed += 1;
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        if let Some(parent) = journal_path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let journal = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(journal_path)?;
        Ok((
            SupervisorRuntime {
                core,
                router,
                journal,
                sender,
            },
            replayed,
        ))
    }

    pub fn core(&self) -> &SupervisorCore {
        &self.core
    }

    /// Journal one input, apply it, and execute the resulting effects
    /// (including feeding emit outcomes back in as further inputs).
    pub fn submit(&mut self, input: SupervisorInput, now_ms: u64) -> Result<()> {
        let entry = JournalEntry {
            now_ms,
            input: input.clone(),
        };
        let line = serde_json::to_string(&entry).expect("journal entries always serialize");
        writeln!(self.journal, "{line}")?;
        let effects = self.core.apply(&input, now_ms);
        self.run_effects(effects, now_ms)
    }

    fn run_effects(&mut self, effects: Vec<Effect>, now_ms: u64) -> Result<()> {
        for effect in effects {
            match effect {
                Effect::EmitValidation {
                    object,
                    storage_key,
                } => {
                    let result = self.execute_emit(&object, &storage_key);
                    let dataset = object.dataset.to_string();
                    self.submit(SupervisorInput::EmitResult { dataset, result }, now_ms)?;
                }
                Effect::ResendNotice {
                    dataset,
                    validation_uri,
                } => {
                    let notice = ValidationNotice {
                        dataset,
                        validation_uri,
                    };
                    if let Err(detail) = self.sender.send_notice(&notice) {
                        log::warn!(
                            "re-notification for {} failed: {detail}",
                            notice.dataset
                        );
                    }
                }
                Effect::Notify(notification) => {
                    log::info!(
                        "notification: {}",
                        serde_json::to_string(&notification).unwrap_or_default()
                    );
                }
                Effect::Quarantine(record) => {
                    log::warn!("message quarantined: {}", record.reason);
                }
            }
        }
        Ok(())
    }

    /// Store the validation object and announce it. Both steps must succeed
    /// for the emission to count; an object stored without a delivered notice
    /// is retried later under a fresh key.
    fn execute_emit(&mut self, object: &ValidationObject, storage_key: &str) -> EmitOutcome {
        let bytes = object.to_bytes();
        let uri = match self.router.put_new(OBJECT_BUCKET, storage_key, &bytes) {
            Ok(receipt) => receipt.uri.to_string(),
            // A previous attempt of this very emission already stored it.
            Err(TransportError::KeyExists { uri }) => uri,
            Err(e) => {
                return EmitOutcome::Failed {
                    detail: e.to_string(),
                }
            }
        };
        let notice = ValidationNotice {
            dataset: object.dataset.clone(),
            validation_uri: uri.clone(),
        };
        match self.sender.send_notice(&notice) {
            Ok(()) => EmitOutcome::Stored { uri },
            Err(detail) => EmitOutcome::Failed {
                detail: format!("object stored but notice not delivered: {detail}"),
            },
        }
    }
}

/// Shared, lock-guarded status rows for an HTTP layer to serve.
pub type SharedStatus = Arc<RwLock<Vec<DatasetStatus>>>;

fn publish_status(out: &Option<SharedStatus>, core: &SupervisorCore) {
    if let Some(out) = out {
        if let Ok(mut rows) = out.write() {
            *rows = core.snapshot();
        }
    }
}

/// Drive the supervisor from the broker until `shutdown` is raised: receive
/// on the inbound queue, acknowledge after the journal has the message, and
/// sweep on a timer.
pub fn run_supervisor_loop(
    runtime: &mut SupervisorRuntime,
    broker_addr: &str,
    inbound_queue: &str,
    clock: &dyn Clock,
    sweep_interval_ms: u64,
    shutdown: &AtomicBool,
    status_out: Option<SharedStatus>,
) -> Result<()> {
    let mut last_sweep = clock.now_ms();
    publish_status(&status_out, runtime.core());
    while !shutdown.load(Ordering::Relaxed) {
        let subscribed = BrokerClient::connect(broker_addr)
            .and_then(|client| client.subscribe(inbound_queue));
        let mut subscriber = match subscribed {
            Ok(s) => s,
            Err(e) => {
                log::warn!("broker not reachable ({e}); retrying");
                std::thread::sleep(Duration::from_millis(200));
                continue;
            }
        };
        loop {
            if shutdown.load(Ordering::Relaxed) {
                return Ok(());
            }
            match subscriber.recv_timeout(Duration::from_millis(100)) {
                Ok(Some(delivery)) => {
                    let now = clock.now_ms();
                    runtime.submit(SupervisorInput::Message(delivery.message.clone()), now)?;
                    // Ack only after the journal holds the message; a crash in
                    // between redelivers, and the id check drops the repeat.
                    if let Err(e) = subscriber.ack(delivery.broker_id) {
                        log::warn!("ack failed ({e}); message will be redelivered");
                    }
                    publish_status(&status_out, runtime.core());
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("broker connection lost ({e}); reconnecting");
                    break;
                }
            }
            let now = clock.now_ms();
            if now.saturating_sub(last_sweep) >= sweep_interval_ms {
                runtime.submit(SupervisorInput::Sweep, now)?;
                last_sweep = now;
                publish_status(&status_out, runtime.core());
            }
        }
    }
    Ok(())
}

/// Message id for a consumption acknowledgement: stable for the same logical
/// outcome so the supervisor can drop redeliveries.
pub fn ack_message_id(notice: &ValidationNotice, ack: &ei_transport::ConsumptionAck) -> u64 {
    stable_hash64(&format!(
        "ack|{}|{}|{:?}|{}|{}",
        ack.dataset, notice.validation_uri, ack.status, ack.consumed_events, ack.target_path
    ))
}

/// Drive the consumer from the broker until `shutdown` is raised: each
/// validation notice is processed into a sorted file and acknowledged.
pub fn run_consumer_loop(
    broker_addr: &str,
    notice_queue: &str,
    ack_queue: &str,
    router: &StoreRouter,
    config: &ConsumerConfig,
    clock: &dyn Clock,
    shutdown: &AtomicBool,
) -> Result<()> {
    let mut ack_sender = ReconnectingSender::new(broker_addr);
    while !shutdown.load(Ordering::Relaxed) {
        let subscribed = BrokerClient::connect(broker_addr)
            .and_then(|client| client.subscribe(notice_queue));
        let mut subscriber = match subscribed {
            Ok(s) => s,
            Err(e) => {
                log::warn!("broker not reachable ({e}); retrying");
                std::thread::sleep(Duration::from_millis(200));
                continue;
            }
        };
        loop {
            if shutdown.load(Ordering::Relaxed) {
                return Ok(());
            }
            match subscriber.recv_timeout(Duration::from_millis(100)) {
                Ok(Some(delivery)) => {
                    if let ControlBody::ValidationNotice(notice) = &delivery.message.body {
                        let ack = consume_validation(notice, router, config);
                        log::info!(
                            "consumed {}: {} events, status {:?}",
                            ack.dataset,
                            ack.consumed_events,
                            ack.status
                        );
                        let message = ControlMessage::new(
                            ack_message_id(notice, &ack),
                            clock.now_ms(),
                            ControlBody::ConsumptionAck(ack),
                        );
                        let mut sent = false;
                        for _ in 0..3 {
                            if ack_sender.send(ack_queue, &message).is_ok() {
                                sent = true;
                                break;
                            }
                            std::thread::sleep(Duration::from_millis(100));
                        }
                        if !sent {
                            // The supervisor's ack timeout will re-notify.
                            log::warn!("ack for {} not delivered", notice.dataset);
                        }
                    } else {
                        log::warn!(
                            "unexpected message type on {notice_queue}: msg {}",
                            delivery.message.msg_id
                        );
                    }
                    if let Err(e) = subscriber.ack(delivery.broker_id) {
                        log::warn!("ack failed ({e}); notice will be redelivered");
                    }
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("broker connection lost ({e}); reconnecting");
                    break;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_hash_is_stable_and_spread() {
        assert_eq!(stable_hash64(""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(stable_hash64("a"), stable_hash64("a"));
        assert_ne!(stable_hash64("a"), stable_hash64("b"));
        assert_ne!(stable_hash64("ab|c"), stable_hash64("a|bc"));
    }
}
