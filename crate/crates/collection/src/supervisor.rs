//! Dataset lifecycle tracking: a deterministic state machine that consumes
//! control messages and sweep ticks, and emits effects for a thin runtime to
//! execute (store a validation object, send or re-send a notice).
//!
//! The core never touches the network or the store itself. Everything it does
//! is a pure function of the input sequence and the clock values passed in,
//! which makes journal replay and randomized interleaving tests exact.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use ei_model::{DatasetName, Guid, Registry};
use ei_transport::{AckStatus, ControlBody, ControlMessage};

use crate::validation::{ValidationEntry, ValidationObject};

/// Lifecycle phase of one tracked dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Reports are still arriving; registry coverage is incomplete.
    Indexing,
    /// Coverage is complete and a validation object is being produced.
    Validating,
    /// A validation object is stored and consumers have been notified.
    Validated,
    /// A consumer confirmed ingestion with matching event counts.
    Consumed,
    /// Validation or consumption failed; waiting out a backoff delay.
    RetryQueue,
    /// Retries exhausted; terminal.
    Failed,
    /// Superseded or withdrawn; terminal.
    Obsolete,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Consumed | Phase::Failed | Phase::Obsolete)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Indexing => "INDEXING",
            Phase::Validating => "VALIDATING",
            Phase::Validated => "VALIDATED",
            Phase::Consumed => "CONSUMED",
            Phase::RetryQueue => "RETRY_QUEUE",
            Phase::Failed => "FAILED",
            Phase::Obsolete => "OBSOLETE",
        }
    }
}

/// Winning report for one file GUID (later tasks supersede earlier ones).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileProgress {
    pub task_id: u64,
    pub job_id: u64,
    pub object_uri: String,
    pub nevents: u64,
    pub nunique: u64,
}

/// Mutable tracking state for one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetState {
    pub dataset: DatasetName,
    pub phase: Phase,
    /// Winner-takes-GUID view of everything reported so far.
    pub files_seen: BTreeMap<Guid, FileProgress>,
    /// Every (task_id, job_id) pair that has reported.
    pub jobs_seen: BTreeSet<(u64, u64)>,
    /// Snapshot of the registry's total expected events for this dataset.
    pub expected_events: u64,
    /// URI of the currently live validation object, once one is stored.
    pub validation_uri: Option<String>,
    /// Number of times this dataset has entered the retry queue.
    pub retry_count: u32,
    /// Clock value at the most recent phase transition.
    pub last_transition_ms: u64,
    /// Monotonic counter of validation-object emissions, used in store keys.
    pub emit_seq: u32,
}

/// Why a dataset failed validation; one line per distinct problem.
pub type ValidationFailures = Vec<String>;

/// Operational notification records, kept by the core and surfaced as effects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Notification {
    ValidationFailed {
        dataset: String,
        failures: ValidationFailures,
    },
    CountDiscrepancy {
        dataset: String,
        expected: u64,
        reported: u64,
    },
    ConsumerError {
        dataset: String,
        detail: String,
    },
    AckTimeout {
        dataset: String,
    },
    RetriesExhausted {
        dataset: String,
    },
    DuplicatesDetected {
        dataset: String,
        job_id: u64,
        n_keys: usize,
    },
    EmitFailed {
        dataset: String,
        detail: String,
    },
}

/// Messages that could not be applied to any tracked dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuarantineRecord {
    pub received_ms: u64,
    pub reason: String,
    pub message: ControlMessage,
}

/// Outcome of the runtime's attempt to store a validation object and notify
/// consumers, fed back into the core as an input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome")]
pub enum EmitOutcome {
    Stored { uri: String },
    Failed { detail: String },
}

/// One unit of input to the state machine. The journal is a sequence of these
/// paired with clock values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "input")]
pub enum SupervisorInput {
    Message(ControlMessage),
    EmitResult { dataset: String, result: EmitOutcome },
    Sweep,
}

/// Side effects the runtime must carry out after an `apply` call.
#[derive(Clone, Debug, PartialEq)]
pub enum Effect {
    /// Store this object and send a notice for it, then feed the outcome back
    /// in as `SupervisorInput::EmitResult`.
    EmitValidation {
        object: ValidationObject,
        storage_key: String,
    },
    /// Re-send a notice for an already stored validation object.
    ResendNotice {
        dataset: DatasetName,
        validation_uri: String,
    },
    /// Append to the operator notification log.
    Notify(Notification),
    /// Append to the quarantine log.
    Quarantine(QuarantineRecord),
}

/// Tuning knobs. Defaults match production pacing; tests shrink the unit.
#[derive(Clone, Debug)]
pub struct SupervisorConfig {
    /// Datasets entering the retry queue more than this many times fail.
    pub max_retries: u32,
    /// One backoff unit in milliseconds (a minute in production).
    pub backoff_unit_ms: u64,
    /// Backoff delay is `min(2^retry_count, cap)` units.
    pub backoff_cap_units: u64,
    /// A validated dataset with no ack after this long re-enters the queue.
    pub ack_timeout_ms: u64,
    /// Directory of per-task expected-job files (`task_<id>.txt`, one job id
    /// per line). Absent files make the job-completeness check vacuous.
    pub task_status_dir: Option<PathBuf>,
}

impl Default for SupervisorConfig {
    fn default() -> Self {
        SupervisorConfig {
            max_retries: 10,
            backoff_unit_ms: 60_000,
            backoff_cap_units: 60,
            ack_timeout_ms: 600_000,
            task_status_dir: None,
        }
    }
}

/// The deterministic dataset-lifecycle state machine.
pub struct SupervisorCore {
    registry: Registry,
    config: SupervisorConfig,
    states: BTreeMap<String, DatasetState>,
    seen_msg_ids: HashSet<u64>,
    notifications: Vec<Notification>,
    quarantine: Vec<QuarantineRecord>,
}

impl SupervisorCore {
    pub fn new(registry: Registry, config: SupervisorConfig) -> Self {
        SupervisorCore {
            registry,
            config,
            states: BTreeMap::new(),
            seen_msg_ids: HashSet::new(),
            notifications: Vec::new(),
            quarantine: Vec::new(),
        }
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn state(&self, dataset: &str) -> Option<&DatasetState> {
        self.states.get(dataset)
    }

    pub fn states(&self) -> impl Iterator<Item = &DatasetState> {
        self.states.values()
    }

    pub fn notifications(&self) -> &[Notification] {
        &self.notifications
    }

    pub fn quarantine(&self) -> &[QuarantineRecord] {
        &self.quarantine
    }

    /// Apply one input at one instant. Every state change in the machine goes
    /// through here; the returned effects are the only outward actions.
    pub fn apply(&mut self, input: &SupervisorInput, now_ms: u64) -> Vec<Effect> {
        let mut effects = Vec::new();
        match input {
            SupervisorInput::Message(message) => {
                self.handle_message(message, now_ms, &mut effects)
            }
            SupervisorInput::EmitResult { dataset, result } => {
                self.handle_emit_result(dataset, result, now_ms, &mut effects)
            }
            SupervisorInput::Sweep => self.handle_sweep(now_ms, &mut effects),
        }
        effects
    }

    fn note(&mut self, effects: &mut Vec<Effect>, notification: Notification) {
        self.notifications.push(notification.clone());
        effects.push(Effect::Notify(notification));
    }

    fn quarantine_message(
        &mut self,
        effects: &mut Vec<Effect>,
        message: &ControlMessage,
        now_ms: u64,
        reason: impl Into<String>,
    ) {
        let record = QuarantineRecord {
            received_ms: now_ms,
            reason: reason.into(),
            message: message.clone(),
        };
        self.quarantine.push(record.clone());
        effects.push(Effect::Quarantine(record));
    }

    fn handle_message(
        &mut self,
        message: &ControlMessage,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        // At-least-once transport means redelivery; a message id seen before
        // must change nothing.
        if !self.seen_msg_ids.insert(message.msg_id) {
            return;
        }
        match &message.body {
            ControlBody::JobReport(report) => {
                self.handle_job_report(message, report, now_ms, effects)
            }
            ControlBody::ConsumptionAck(ack) => self.handle_ack(message, ack, now_ms, effects),
            ControlBody::DuplicateAlert(alert) => {
                let dataset = alert.dataset.to_string();
                if self.registry.contains(&dataset) {
                    let n = Notification::DuplicatesDetected {
                        dataset,
                        job_id: alert.job_id,
                        n_keys: alert.duplicate_keys.len(),
                    };
                    self.note(effects, n);
                } else {
                    self.quarantine_message(
                        effects,
                        message,
                        now_ms,
                        format!("duplicate alert for unknown dataset {}", alert.dataset),
                    );
                }
            }
            ControlBody::ValidationNotice(notice) => {
                self.quarantine_message(
                    effects,
                    message,
                    now_ms,
                    format!(
                        "validation notice for {} received on the inbound queue",
                        notice.dataset
                    ),
                );
            }
        }
    }

    fn handle_job_report(
        &mut self,
        message: &ControlMessage,
        report: &ei_transport::JobReport,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        let name = report.dataset.to_string();
        let Ok(entry) = self.registry.lookup(&name).cloned() else {
            self.quarantine_message(
                effects,
                message,
                now_ms,
                format!("job report for unknown dataset {name}"),
            );
            return;
        };
        let state = self
            .states
            .entry(name.clone())
            .or_insert_with(|| DatasetState {
                dataset: report.dataset.clone(),
                phase: Phase::Indexing,
                files_seen: BTreeMap::new(),
                jobs_seen: BTreeSet::new(),
                expected_events: entry.total_expected_events(),
                validation_uri: None,
                retry_count: 0,
                last_transition_ms: now_ms,
                emit_seq: 0,
            });
        if state.phase.is_terminal() {
            let reason = format!(
                "job report for {name} arrived in terminal phase {}",
                state.phase.as_str()
            );
            self.quarantine_message(effects, message, now_ms, reason);
            return;
        }
        state.jobs_seen.insert((report.task_id, report.job_id));
        for file in &report.files {
            let incoming = FileProgress {
                task_id: report.task_id,
                job_id: report.job_id,
                object_uri: report.object_uri.clone(),
                nevents: file.nevents,
                nunique: file.nunique,
            };
            match state.files_seen.get(&file.guid) {
                // A re-run of the same file under a newer task wins; anything
                // else leaves the existing winner in place.
                Some(existing) if existing.task_id >= report.task_id => {}
                _ => {
                    state.files_seen.insert(file.guid, incoming);
                }
            }
        }
        if state.phase == Phase::Indexing && Self::coverage_complete(state, &entry) {
            self.start_validation(&name, now_ms, effects);
        }
    }

    fn coverage_complete(state: &DatasetState, entry: &ei_model::RegistryEntry) -> bool {
        entry
            .files
            .iter()
            .all(|f| state.files_seen.contains_key(&f.guid))
    }

    /// Move a dataset into VALIDATING and run the validation checks. On
    /// success the returned effect asks the runtime to store and announce the
    /// object; failures send the dataset to the retry queue.
    fn start_validation(&mut self, name: &str, now_ms: u64, effects: &mut Vec<Effect>) {
        let entry = self
            .registry
            .lookup(name)
            .cloned()
            .expect("validation only starts for registered datasets");
        let state = self.states.get_mut(name).expect("state exists");
        state.phase = Phase::Validating;
        state.last_transition_ms = now_ms;
        let failures = Self::validation_failures(state, &entry, &self.config);
        if failures.is_empty() {
            let state = self.states.get_mut(name).expect("state exists");
            let object = Self::build_validation_object(state, &entry, now_ms);
            let storage_key =
                ValidationObject::storage_key(&state.dataset, now_ms, state.emit_seq);
            state.emit_seq += 1;
            effects.push(Effect::EmitValidation {
                object,
                storage_key,
            });
        } else {
            let n = Notification::ValidationFailed {
                dataset: name.to_string(),
                failures,
            };
            self.note(effects, n);
            self.enter_retry_queue(name, now_ms, effects);
        }
    }

    /// All reasons this dataset does not validate, empty when it does.
    fn validation_failures(
        state: &DatasetState,
        entry: &ei_model::RegistryEntry,
        config: &SupervisorConfig,
    ) -> ValidationFailures {
        let mut failures = Vec::new();
        for file in &entry.files {
            match state.files_seen.get(&file.guid) {
                None => failures.push(format!("file {} has no report", file.guid)),
                Some(progress) => {
                    if progress.nevents != file.expected_events {
                        failures.push(format!(
                            "file {} reported {} events, registry expects {}",
                            file.guid, progress.nevents, file.expected_events
                        ));
                    }
                }
            }
        }
        // Optional task completeness check: a task's expected-job file lists
        // every job id that must have reported before validation may pass.
        if let Some(dir) = &config.task_status_dir {
            let tasks: BTreeSet<u64> = state.files_seen.values().map(|p| p.task_id).collect();
            for task_id in tasks {
                let path = dir.join(format!("task_{task_id}.txt"));
                let Ok(text) = std::fs::read_to_string(&path) else {
                    continue;
                };
                for line in text.lines() {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let Ok(job_id) = line.parse::<u64>() else {
                        failures.push(format!(
                            "task status file for task {task_id} has a bad line: {line:?}"
                        ));
                        continue;
                    };
                    if !state.jobs_seen.contains(&(task_id, job_id)) {
                        failures.push(format!(
                            "task {task_id} job {job_id} never reported"
                        ));
                    }
                }
            }
        }
        failures
    }

    fn build_validation_object(
        state: &DatasetState,
        entry: &ei_model::RegistryEntry,
        now_ms: u64,
    ) -> ValidationObject {
        // Group the winning registry files by the object that holds them.
        let registered: BTreeSet<Guid> = entry.files.iter().map(|f| f.guid).collect();
        let mut by_uri: BTreeMap<String, Vec<Guid>> = BTreeMap::new();
        for (guid, progress) in &state.files_seen {
            if registered.contains(guid) {
                by_uri
                    .entry(progress.object_uri.clone())
                    .or_default()
                    .push(*guid);
            }
        }
        let objects = by_uri
            .into_iter()
            .map(|(uri, valid_guids)| ValidationEntry { uri, valid_guids })
            .collect();
        ValidationObject {
            dataset: state.dataset.clone(),
            objects,
            expected_events: state.expected_events,
            created_ms: now_ms,
        }
    }

    /// Book a retry: increment the counter, and either park the dataset in
    /// the queue or fail it permanently once retries are exhausted.
    fn enter_retry_queue(&mut self, name: &str, now_ms: u64, effects: &mut Vec<Effect>) {
        let max_retries = self.config.max_retries;
        let state = self.states.get_mut(name).expect("state exists");
        state.retry_count += 1;
        state.last_transition_ms = now_ms;
        if state.retry_count > max_retries {
            state.phase = Phase::Failed;
            let n = Notification::RetriesExhausted {
                dataset: name.to_string(),
            };
            self.note(effects, n);
        } else {
            state.phase = Phase::RetryQueue;
        }
    }

    fn handle_emit_result(
        &mut self,
        dataset: &str,
        result: &EmitOutcome,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        let Some(state) = self.states.get_mut(dataset) else {
            return;
        };
        if state.phase != Phase::Validating {
            return;
        }
        match result {
            EmitOutcome::Stored { uri } => {
                state.phase = Phase::Validated;
                state.validation_uri = Some(uri.clone());
                state.last_transition_ms = now_ms;
            }
            EmitOutcome::Failed { detail } => {
                let n = Notification::EmitFailed {
                    dataset: dataset.to_string(),
                    detail: detail.clone(),
                };
                self.note(effects, n);
                self.enter_retry_queue(dataset, now_ms, effects);
            }
        }
    }

    fn handle_ack(
        &mut self,
        message: &ControlMessage,
        ack: &ei_transport::ConsumptionAck,
        now_ms: u64,
        effects: &mut Vec<Effect>,
    ) {
        let name = ack.dataset.to_string();
        let Some(state) = self.states.get_mut(&name) else {
            self.quarantine_message(
                effects,
                message,
                now_ms,
                format!("consumption ack for untracked dataset {name}"),
            );
            return;
        };
        if state.phase != Phase::Validated {
            let reason = format!(
                "consumption ack for {name} arrived in phase {}",
                state.phase.as_str()
            );
            self.quarantine_message(effects, message, now_ms, reason);
            return;
        }
        match ack.status {
            AckStatus::Ok => {
                if ack.consumed_events == state.expected_events {
                    state.phase = Phase::Consumed;
                    state.last_transition_ms = now_ms;
                } else {
                    let expected = state.expected_events;
                    let n = Notification::CountDiscrepancy {
                        dataset: name.clone(),
                        expected,
                        reported: ack.consumed_events,
                    };
                    self.note(effects, n);
                    self.enter_retry_queue(&name, now_ms, effects);
                }
            }
            AckStatus::Error => {
                let detail = ack
                    .error
                    .clone()
                    .unwrap_or_else(|| "consumer reported an unspecified error".to_string());
                let n = Notification::ConsumerError {
                    dataset: name.clone(),
                    detail,
                };
                self.note(effects, n);
                let state = self.states.get_mut(&name).expect("state exists");
                let uri = state.validation_uri.clone();
                let dataset = state.dataset.clone();
                self.enter_retry_queue(&name, now_ms, effects);
                // The stored object is still good; ask consumers to try again.
                let state = self.states.get(&name).expect("state exists");
                if state.phase == Phase::RetryQueue {
                    if let Some(validation_uri) = uri {
                        effects.push(Effect::ResendNotice {
                            dataset,
                            validation_uri,
                        });
                    }
                }
            }
        }
    }

    /// Backoff deadline for a dataset parked in the retry queue.
    fn retry_deadline(&self, state: &DatasetState) -> u64 {
        let units = 1u64
            .checked_shl(state.retry_count)
            .unwrap_or(u64::MAX)
            .min(self.config.backoff_cap_units);
        state.last_transition_ms + units * self.config.backoff_unit_ms
    }

    fn handle_sweep(&mut self, now_ms: u64, effects: &mut Vec<Effect>) {
        let names: Vec<String> = self.states.keys().cloned().collect();
        for name in names {
            let state = self.states.get(&name).expect("state exists");
            match state.phase {
                Phase::RetryQueue => {
                    if now_ms >= self.retry_deadline(state) {
                        self.start_validation(&name, now_ms, effects);
                    }
                }
                Phase::Validated => {
                    if now_ms >= state.last_transition_ms + self.config.ack_timeout_ms {
                        let n = Notification::AckTimeout {
                            dataset: name.clone(),
                        };
                        self.note(effects, n);
                        self.enter_retry_queue(&name, now_ms, effects);
                    }
                }
                // A dataset stuck waiting for an emit outcome (for example
                // after a crash between the effect and its result) is
                // re-validated so a fresh object gets emitted.
                Phase::Validating => {
                    if now_ms >= state.last_transition_ms + self.config.ack_timeout_ms {
                        self.start_validation(&name, now_ms, effects);
                    }
                }
                _ => {}
            }
        }
    }

    /// Mark every tracked dataset whose files are fully superseded by a newer
    /// task as obsolete. Exposed for operator tooling.
    pub fn mark_obsolete(&mut self, dataset: &str, now_ms: u64) -> bool {
        match self.states.get_mut(dataset) {
            Some(state) if !state.phase.is_terminal() => {
                state.phase = Phase::Obsolete;
                state.last_transition_ms = now_ms;
                true
            }
            _ => false,
        }
    }

    /// Serializable status rows for every tracked dataset.
    pub fn snapshot(&self) -> Vec<DatasetStatus> {
        self.states
            .values()
            .map(|state| {
                let expected_files = self
                    .registry
                    .lookup(&state.dataset.to_string())
                    .map(|e| e.files.len())
                    .unwrap_or(0);
                DatasetStatus {
                    dataset: state.dataset.to_string(),
                    phase: state.phase.as_str().to_string(),
                    files_seen: state.files_seen.len(),
                    files_expected: expected_files,
                    expected_events: state.expected_events,
                    retry_count: state.retry_count,
                    validation_uri: state.validation_uri.clone(),
                    last_transition_ms: state.last_transition_ms,
                }
            })
            .collect()
    }
}

/// One row of the status report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStatus {
    pub dataset: String,
    pub phase: String,
    pub files_seen: usize,
    pub files_expected: usize,
    pub expected_events: u64,
    pub retry_count: u32,
    pub validation_uri: Option<String>,
    pub last_transition_ms: u64,
}
