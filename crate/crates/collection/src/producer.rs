//! The indexing job: reads input event files, extracts immutable per-event
//! metadata into a framed compressed stream, stores it as one object, and
//! reports to the supervisor queue.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use ei_model::{BitMask, DatasetName, EventKey, EventRecord, GuidRef, RefType, TriggerBlock};
use ei_spb::{BeginGuid, EndGuid, Header, Message, SpbWriter, Trailer, TriggerMenu};
use ei_transport::{
    Backend, BrokerClient, Clock, ControlBody, ControlMessage, DuplicateAlert, FileReport,
    JobReport, LocalStore, ObjectStore, ObjectUri, StoreRouter, TransportError, UnavailableStore,
};

use crate::error::{CollectionError, Result};
use crate::input::{read_event_file, InputEvent, InputFileHeader};

/// Everything one indexing job needs to know.
#[derive(Clone, Debug)]
pub struct JobConfig {
    pub task_id: u64,
    pub job_id: u64,
    pub dataset: DatasetName,
    pub input_paths: Vec<PathBuf>,
    /// Backend config strings, e.g. `local:///var/ei/store-a`.
    pub store_primary: String,
    pub store_fallback: Option<String>,
    pub broker_addr: String,
    pub broker_queue: String,
}

/// Bucket that holds every pipeline object (index streams and validation
/// objects alike).
pub const OBJECT_BUCKET: &str = "ei";

/// Key of the stored index stream for one job.
pub fn object_key(dataset: &DatasetName, task_id: u64, job_id: u64) -> String {
    format!("ei/{dataset}/{task_id}.{job_id}.spb")
}

/// Parse one backend config string into a store. `role_fallback` tags the
/// store as the fallback backend so stored URIs name where the bytes went.
pub fn build_store(config: &str, role_fallback: bool) -> Result<Arc<dyn ObjectStore>> {
    let (scheme, rest) = config
        .split_once("://")
        .ok_or_else(|| CollectionError::BadConfig(format!("store config {config:?} has no scheme")))?;
    match scheme {
        "local" => Ok(if role_fallback {
            Arc::new(LocalStore::new_fallback(rest))
        } else {
            Arc::new(LocalStore::new(rest))
        }),
        "unavailable" => Ok(Arc::new(UnavailableStore::new(if role_fallback {
            Backend::Fallback
        } else {
            Backend::Local
        }))),
        "s3c" => Err(CollectionError::BadConfig(
            "s3c backend not built; use local://".to_string(),
        )),
        other => Err(CollectionError::BadConfig(format!(
            "unknown store scheme {other:?}"
        ))),
    }
}

pub fn build_router(primary: &str, fallback: Option<&str>) -> Result<StoreRouter> {
    let primary = build_store(primary, false)?;
    let fallback = fallback.map(|f| build_store(f, true)).transpose()?;
    Ok(StoreRouter::new(primary, fallback))
}

/// Per-file outcome of the indexing pass.
#[derive(Clone, Debug, PartialEq)]
pub struct FileIndexSummary {
    pub guid: ei_model::Guid,
    pub nevents: u64,
    pub nunique: u64,
    /// One entry per repeated occurrence of a key within this file.
    pub duplicate_keys: Vec<EventKey>,
}

/// Convert one parsed input event into the full record to be framed.
fn build_record(
    header: &InputFileHeader,
    ordinal: u64,
    ev: &InputEvent,
    path: &str,
) -> Result<EventRecord> {
    if ev.upstream_guids.len() > 2 {
        return Err(CollectionError::CorruptInput {
            path: path.to_string(),
            detail: format!(
                "event {} carries {} upstream files; at most 2 are allowed",
                ev.event,
                ev.upstream_guids.len()
            ),
        });
    }
    let mut locations = vec![GuidRef {
        ref_type: RefType::Indexed,
        guid: header.guid,
        internal_pointer: ordinal,
    }];
    for (i, up) in ev.upstream_guids.iter().enumerate() {
        locations.push(GuidRef {
            ref_type: RefType::from_code(1 + i as u8).expect("checked above"),
            guid: *up,
            internal_pointer: 0,
        });
    }
    let record = EventRecord {
        key: EventKey::new(ev.run, ev.event),
        dataset_id: header.dataset.stable_id(),
        lbn: ev.lbn,
        bcid: ev.bcid,
        timestamp_ms: ev.timestamp,
        is_simulated: ev.is_sim,
        event_weight: ev.weight,
        sim_process_id: ev.sim_process_id,
        lhc_conditions: ev.conditions.clone(),
        trigger: TriggerBlock {
            smk: ev.smk.unwrap_or(header.smk),
            l1_psk: ev.l1_psk,
            hlt_psk: ev.hlt_psk,
            l1: BitMask::from_words(ev.l1.clone()),
            l2: BitMask::from_words(ev.l2.clone()),
            hlt: BitMask::from_words(ev.hlt.clone()),
            decoded_chains: Vec::new(),
        },
        locations,
    };
    record.validate().map_err(|e| CollectionError::CorruptInput {
        path: path.to_string(),
        detail: format!("event {} fails validation: {e}", ev.event),
    })?;
    Ok(record)
}

/// Frame one file's events: a group-begin, a trigger-menu frame before the
/// first event and again whenever the configuration key changes mid-file,
/// every event in file order, and a group-end carrying the count. Events are
/// never reordered.
pub fn index_file(
    header: &InputFileHeader,
    path: &str,
    events: impl Iterator<Item = Result<(u64, InputEvent)>>,
    clock: &dyn Clock,
    mut emit: impl FnMut(&Message) -> Result<()>,
) -> Result<FileIndexSummary> {
    emit(&Message::BeginGuid(BeginGuid {
        guid: header.guid,
        start_ms: clock.now_ms(),
        proc_version: header.proc_version.clone(),
        stream: header.stream.clone(),
        project: header.project.clone(),
    }))?;
    let mut current_smk: Option<u32> = None;
    let mut seen: HashSet<EventKey> = HashSet::new();
    let mut summary = FileIndexSummary {
        guid: header.guid,
        nevents: 0,
        nunique: 0,
        duplicate_keys: Vec::new(),
    };
    for item in events {
        let (ordinal, ev) = item?;
        let record = build_record(header, ordinal, &ev, path)?;
        if current_smk != Some(record.trigger.smk) {
            current_smk = Some(record.trigger.smk);
            emit(&Message::TriggerMenu(TriggerMenu {
                smk: record.trigger.smk,
                ..TriggerMenu::default()
            }))?;
        }
        if seen.insert(record.key) {
            summary.nunique += 1;
        } else {
            summary.duplicate_keys.push(record.key);
        }
        summary.nevents += 1;
        emit(&Message::Event(record))?;
    }
    emit(&Message::EndGuid(EndGuid {
        n_events: summary.nevents,
        end_ms: clock.now_ms(),
    }))?;
    Ok(summary)
}

/// Where a completed job leaves its traces.
#[derive(Debug)]
pub struct JobOutcome {
    pub object_uri: ObjectUri,
    pub object_bytes: u64,
    pub report: JobReport,
    pub duplicate_alerts: Vec<DuplicateAlert>,
}

/// Sending side of the report channel; the broker client implements it, and
/// tests substitute fault-injecting stand-ins.
pub trait ReportChannel {
    fn send(
        &mut self,
        queue: &str,
        message: &ControlMessage,
    ) -> std::result::Result<u64, TransportError>;
}

/// Reconnects per send attempt so a broker restart between retries recovers.
pub struct ReconnectingSender {
    addr: String,
    conn: Option<BrokerClient>,
}

impl ReconnectingSender {
    pub fn new(addr: impl Into<String>) -> Self {
        ReconnectingSender {
            addr: addr.into(),
            conn: None,
        }
    }
}

impl ReportChannel for ReconnectingSender {
    fn send(
        &mut self,
        queue: &str,
        message: &ControlMessage,
    ) -> std::result::Result<u64, TransportError> {
        if self.conn.is_none() {
            self.conn = Some(BrokerClient::connect(&self.addr)?);
        }
        let result = self.conn.as_mut().unwrap().send(queue, message);
        if result.is_err() {
            self.conn = None;
        }
        result
    }
}

/// Pluggable delay between send retries; tests use a no-op.
pub trait Sleeper {
    fn sleep(&self, duration: Duration);
}

pub struct RealSleeper;

impl Sleeper for RealSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

pub struct NoSleep;

impl Sleeper for NoSleep {
    fn sleep(&self, _duration: Duration) {}
}

pub const REPORT_ATTEMPTS: u32 = 5;
pub const REPORT_BACKOFF_START: Duration = Duration::from_secs(1);

fn send_with_retry(
    channel: &mut dyn ReportChannel,
    sleeper: &dyn Sleeper,
    queue: &str,
    message: &ControlMessage,
) -> Result<u64> {
    let mut backoff = REPORT_BACKOFF_START;
    let mut last_err = String::new();
    for attempt in 1..=REPORT_ATTEMPTS {
        match channel.send(queue, message) {
            Ok(id) => return Ok(id),
            Err(e) => {
                log::warn!("report send attempt {attempt}/{REPORT_ATTEMPTS} failed: {e}");
                last_err = e.to_string();
                if attempt < REPORT_ATTEMPTS {
                    sleeper.sleep(backoff);
                    backoff *= 2;
                }
            }
        }
    }
    Err(CollectionError::BrokerUnreachable {
        attempts: REPORT_ATTEMPTS,
        detail: last_err,
    })
}

/// Message ids must be unique per logical message so receivers can drop
/// redeliveries; retries of the same message reuse the id.
fn message_id(task_id: u64, job_id: u64, kind: u64) -> u64 {
    (task_id << 24) ^ (job_id << 4) ^ kind
}

/// Run one indexing job end to end: read every input file, write exactly one
/// framed stream object (header, one group per file, trailer with totals),
/// store it primary-first, then report. The object is written before any
/// message goes out; a dead broker leaves the object in place and fails the
/// job after retries.
pub fn run_producer_job(
    config: &JobConfig,
    router: &StoreRouter,
    channel: &mut dyn ReportChannel,
    clock: &dyn Clock,
    sleeper: &dyn Sleeper,
) -> Result<JobOutcome> {
    if config.input_paths.is_empty() {
        return Err(CollectionError::BadConfig("input_paths is empty".into()));
    }
    let started_ms = clock.now_ms();
    let mut writer = SpbWriter::new(Vec::new())?;
    writer.write(&Message::Header(Header {
        task_id: config.task_id,
        job_id: config.job_id,
        dataset: config.dataset.to_string(),
        start_ms: started_ms,
    }))?;

    let mut summaries: Vec<FileIndexSummary> = Vec::new();
    let mut n_events_total = 0u64;
    for path in &config.input_paths {
        let reader = read_event_file(path)?;
        let header = reader.header().clone();
        if header.dataset != config.dataset {
            return Err(CollectionError::CorruptInput {
                path: path.display().to_string(),
                detail: format!(
                    "file belongs to dataset {}, job covers {}",
                    header.dataset, config.dataset
                ),
            });
        }
        let summary = index_file(
            &header,
            &path.display().to_string(),
            reader,
            clock,
            |message| Ok(writer.write(message)?),
        )?;
        n_events_total += summary.nevents;
        summaries.push(summary);
    }

    writer.write(&Message::Trailer(Trailer {
        n_files: summaries.len() as u32,
        n_events: n_events_total,
        end_ms: clock.now_ms(),
    }))?;
    let (bytes, compressed_len) = writer.finish()?;

    let key = object_key(&config.dataset, config.task_id, config.job_id);
    let receipt = match router.put_new(OBJECT_BUCKET, &key, &bytes) {
        Ok(receipt) => receipt,
        Err(e @ TransportError::KeyExists { .. }) => return Err(e.into()),
        Err(e) => {
            return Err(CollectionError::AllStoresUnavailable {
                detail: e.to_string(),
            })
        }
    };
    log::info!(
        "job {}.{} stored {} ({} events, {} compressed bytes)",
        config.task_id,
        config.job_id,
        receipt.uri,
        n_events_total,
        compressed_len
    );

    let report = JobReport {
        task_id: config.task_id,
        job_id: config.job_id,
        dataset: config.dataset.clone(),
        object_uri: receipt.uri.to_string(),
        files: summaries
            .iter()
            .map(|s| FileReport {
                guid: s.guid,
                nevents: s.nevents,
                nunique: s.nunique,
            })
            .collect(),
        started_ms,
        ended_ms: clock.now_ms(),
    };
    let report_msg = ControlMessage::new(
        message_id(config.task_id, config.job_id, 1),
        clock.now_ms(),
        ControlBody::JobReport(report.clone()),
    );
    send_with_retry(channel, sleeper, &config.broker_queue, &report_msg)?;

    let mut duplicate_alerts = Vec::new();
    let all_duplicates: Vec<EventKey> = summaries
        .iter()
        .flat_map(|s| s.duplicate_keys.iter().copied())
        .collect();
    if !all_duplicates.is_empty() {
        let alert = DuplicateAlert {
            dataset: config.dataset.clone(),
            job_id: config.job_id,
            duplicate_keys: all_duplicates,
        };
        let alert_msg = ControlMessage::new(
            message_id(config.task_id, config.job_id, 2),
            clock.now_ms(),
            ControlBody::DuplicateAlert(alert.clone()),
        );
        // Alerts are advisory: a failure here doesn't fail the job.
        if let Err(e) = send_with_retry(channel, sleeper, &config.broker_queue, &alert_msg) {
            log::warn!("duplicate alert not delivered: {e}");
        }
        duplicate_alerts.push(alert);
    }

    Ok(JobOutcome {
        object_uri: receipt.uri,
        object_bytes: receipt.bytes,
        report,
        duplicate_alerts,
    })
}
