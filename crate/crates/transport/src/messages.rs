use ei_model::{DatasetName, EventKey, Guid};
use serde::{Deserialize, Serialize};

use crate::TransportError;

/// Upper bound for one serialized control message: it must fit a single
/// broker frame.
pub const MAX_CONTROL_MESSAGE_BYTES: usize = 64 * 1024;

/// Per-input-file result inside a job report.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct FileReport {
    pub guid: Guid,
    pub nevents: u64,
    pub nunique: u64,
}

/// Producer → supervisor: one indexing job finished and stored its output.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct JobReport {
    pub task_id: u64,
    pub job_id: u64,
    pub dataset: DatasetName,
    pub object_uri: String,
    pub files: Vec<FileReport>,
    pub started_ms: u64,
    pub ended_ms: u64,
}

/// Supervisor → consumers: a dataset validated; its validation object tells
/// consumers what to convert.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ValidationNotice {
    pub dataset: DatasetName,
    pub validation_uri: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Ok,
    Error,
}

/// Consumer → supervisor: conversion finished (or failed).
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ConsumptionAck {
    pub dataset: DatasetName,
    pub consumed_events: u64,
    pub target_path: String,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Producer → supervisor: duplicate event identifiers were seen inside one
/// input file.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct DuplicateAlert {
    pub dataset: DatasetName,
    pub job_id: u64,
    pub duplicate_keys: Vec<EventKey>,
}

/// Typed control-message payload.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "msg_type", content = "body")]
pub enum ControlBody {
    #[serde(rename = "JOB_REPORT")]
    JobReport(JobReport),
    #[serde(rename = "VALIDATION_NOTICE")]
    ValidationNotice(ValidationNotice),
    #[serde(rename = "CONSUMPTION_ACK")]
    ConsumptionAck(ConsumptionAck),
    #[serde(rename = "DUPLICATE_ALERT")]
    DuplicateAlert(DuplicateAlert),
}

impl ControlBody {
    pub fn type_name(&self) -> &'static str {
        match self {
            ControlBody::JobReport(_) => "JOB_REPORT",
            ControlBody::ValidationNotice(_) => "VALIDATION_NOTICE",
            ControlBody::ConsumptionAck(_) => "CONSUMPTION_ACK",
            ControlBody::DuplicateAlert(_) => "DUPLICATE_ALERT",
        }
    }
}

/// Envelope for every control message: a sender-assigned id used for
/// idempotent handling on redelivery, the send timestamp, and the body.
/// Serialized as one JSON document per broker frame.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct ControlMessage {
    pub msg_id: u64,
    pub sent_ms: u64,
    #[serde(flatten)]
    pub body: ControlBody,
}

impl ControlMessage {
    pub fn new(msg_id: u64, sent_ms: u64, body: ControlBody) -> Self {
        ControlMessage {
            msg_id,
            sent_ms,
            body,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TransportError> {
        let bytes = serde_json::to_vec(self)?;
        if bytes.len() > MAX_CONTROL_MESSAGE_BYTES {
            return Err(TransportError::MessageTooLarge {
                size: bytes.len(),
                limit: MAX_CONTROL_MESSAGE_BYTES,
            });
        }
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransportError> {
        Ok(serde_json::from_slice(bytes)?)
    }
}
