use ei_model::{EventRecord, Guid};

use crate::payload::{decode_event, encode_event, Reader, Writer};
use crate::{Frame, MsgType, SpbError};

/// Opens a stream: identity of the indexing job and the dataset it covers.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Header {
    pub task_id: u64,
    pub job_id: u64,
    pub dataset: String,
    pub start_ms: u64,
}

/// Closes a stream: totals for cross-checking against the header side.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Trailer {
    pub n_files: u32,
    pub n_events: u64,
    pub end_ms: u64,
}

/// Opens one input-file group.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BeginGuid {
    pub guid: Guid,
    pub start_ms: u64,
    pub proc_version: String,
    pub stream: String,
    pub project: String,
}

/// Closes one input-file group.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EndGuid {
    pub n_events: u64,
    pub end_ms: u64,
}

/// Trigger configuration in force for the events that follow: the
/// configuration key plus `(counter, chain name)` tables for each of the
/// three levels. Levels may be empty when chains are resolved downstream
/// from the configuration key alone.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct TriggerMenu {
    pub smk: u32,
    pub l1: Vec<(u32, String)>,
    pub l2: Vec<(u32, String)>,
    pub hlt: Vec<(u32, String)>,
}

/// A decoded frame payload.
#[derive(Clone, PartialEq, Debug)]
pub enum Message {
    Header(Header),
    Trailer(Trailer),
    BeginGuid(BeginGuid),
    EndGuid(EndGuid),
    TriggerMenu(TriggerMenu),
    Event(EventRecord),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Header(_) => MsgType::Header,
            Message::Trailer(_) => MsgType::Trailer,
            Message::BeginGuid(_) => MsgType::BeginGuid,
            Message::EndGuid(_) => MsgType::EndGuid,
            Message::TriggerMenu(_) => MsgType::TriggerMenu,
            Message::Event(_) => MsgType::EiEvent,
        }
    }

    pub fn encode(&self) -> Result<Frame, SpbError> {
        let payload = match self {
            Message::Header(h) => {
                let mut w = Writer::new();
                w.u64(h.task_id);
                w.u64(h.job_id);
                w.string(&h.dataset)?;
                w.u64(h.start_ms);
                w.finish()
            }
            Message::Trailer(t) => {
                let mut w = Writer::new();
                w.u32(t.n_files);
                w.u64(t.n_events);
                w.u64(t.end_ms);
                w.finish()
            }
            Message::BeginGuid(b) => {
                let mut w = Writer::new();
                w.guid(&b.guid);
                w.u64(b.start_ms);
                w.string(&b.proc_version)?;
                w.string(&b.stream)?;
                w.string(&b.project)?;
                w.finish()
            }
            Message::EndGuid(e) => {
                let mut w = Writer::new();
                w.u64(e.n_events);
                w.u64(e.end_ms);
                w.finish()
            }
            Message::TriggerMenu(m) => {
                let mut w = Writer::new();
                w.u32(m.smk);
                for level in [&m.l1, &m.l2, &m.hlt] {
                    w.u32(level.len() as u32);
                    for (counter, name) in level {
                        w.u32(*counter);
                        w.string(name)?;
                    }
                }
                w.finish()
            }
            Message::Event(record) => encode_event(record)?,
        };
        Ok(Frame::new(self.msg_type(), payload))
    }

    pub fn decode(frame: &Frame) -> Result<Message, SpbError> {
        let payload = &frame.payload;
        Ok(match frame.msg_type {
            MsgType::Header => {
                let mut r = Reader::new("header", payload);
                let msg = Header {
                    task_id: r.u64()?,
                    job_id: r.u64()?,
                    dataset: r.string()?,
                    start_ms: r.u64()?,
                };
                r.expect_end()?;
                Message::Header(msg)
            }
            MsgType::Trailer => {
                let mut r = Reader::new("trailer", payload);
                let msg = Trailer {
                    n_files: r.u32()?,
                    n_events: r.u64()?,
                    end_ms: r.u64()?,
                };
                r.expect_end()?;
                Message::Trailer(msg)
            }
            MsgType::BeginGuid => {
                let mut r = Reader::new("begin-guid", payload);
                let msg = BeginGuid {
                    guid: r.guid()?,
                    start_ms: r.u64()?,
                    proc_version: r.string()?,
                    stream: r.string()?,
                    project: r.string()?,
                };
                r.expect_end()?;
                Message::BeginGuid(msg)
            }
            MsgType::EndGuid => {
                let mut r = Reader::new("end-guid", payload);
                let msg = EndGuid {
                    n_events: r.u64()?,
                    end_ms: r.u64()?,
                };
                r.expect_end()?;
                Message::EndGuid(msg)
            }
            MsgType::TriggerMenu => {
                let mut r = Reader::new("trigger-menu", payload);
                let smk = r.u32()?;
                let mut levels: [Vec<(u32, String)>; 3] = Default::default();
                for level in levels.iter_mut() {
                    let count = r.list_count()?;
                    for _ in 0..count {
                        let counter = r.u32()?;
                        let name = r.string()?;
                        level.push((counter, name));
                    }
                }
                r.expect_end()?;
                let [l1, l2, hlt] = levels;
                Message::TriggerMenu(TriggerMenu { smk, l1, l2, hlt })
            }
            MsgType::EiEvent => Message::Event(decode_event(payload)?),
        })
    }
}
