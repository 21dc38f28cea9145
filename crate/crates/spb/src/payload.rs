//! Payload byte codecs. Integers are little-endian; strings are a 16-bit
//! length followed by UTF-8 bytes; lists are a 32-bit count followed by
//! items.

use ei_model::{BitMask, EventKey, EventRecord, Guid, GuidRef, RefType, TriggerBlock};

use crate::SpbError;

pub(crate) const MAX_STRING_BYTES: usize = u16::MAX as usize;
const MAX_MASK_WORDS: u32 = 1 << 16;
const MAX_LIST_ITEMS: u32 = 1 << 20;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn guid(&mut self, g: &Guid) {
        self.buf.extend_from_slice(g.as_bytes());
    }

    pub fn string(&mut self, s: &str) -> Result<(), SpbError> {
        if s.len() > MAX_STRING_BYTES {
            return Err(SpbError::FieldOverflow(format!(
                "string of {} bytes exceeds 16-bit length",
                s.len()
            )));
        }
        self.u16(s.len() as u16);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    pub fn mask(&mut self, m: &BitMask) {
        self.u32(m.words().len() as u32);
        for w in m.words() {
            self.u64(*w);
        }
    }
}

pub(crate) struct Reader<'a> {
    msg: &'static str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(msg: &'static str, buf: &'a [u8]) -> Self {
        Reader { msg, buf, pos: 0 }
    }

    fn bad(&self, detail: impl Into<String>) -> SpbError {
        SpbError::MalformedPayload {
            msg: self.msg,
            detail: detail.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], SpbError> {
        if self.buf.len() - self.pos < n {
            return Err(self.bad("unexpected end of payload"));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn u8(&mut self) -> Result<u8, SpbError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, SpbError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, SpbError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, SpbError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, SpbError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn guid(&mut self) -> Result<Guid, SpbError> {
        Ok(Guid::from_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn string(&mut self) -> Result<String, SpbError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| self.bad("string is not UTF-8"))
    }

    pub fn mask(&mut self) -> Result<BitMask, SpbError> {
        let count = self.u32()?;
        if count > MAX_MASK_WORDS {
            return Err(self.bad(format!("mask of {count} words")));
        }
        let mut words = Vec::with_capacity(count as usize);
        for _ in 0..count {
            words.push(self.u64()?);
        }
        Ok(BitMask::from_words(words))
    }

    pub fn list_count(&mut self) -> Result<u32, SpbError> {
        let count = self.u32()?;
        if count > MAX_LIST_ITEMS {
            return Err(self.bad(format!("list of {count} items")));
        }
        Ok(count)
    }

    pub fn expect_end(&self) -> Result<(), SpbError> {
        if self.pos != self.buf.len() {
            return Err(self.bad(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encode a full event record. Field order: key, identification and
/// condition fields, trigger keys and masks, decoded chains, then the GUID
/// reference list (at most three entries).
pub fn encode_event(record: &EventRecord) -> Result<Vec<u8>, SpbError> {
    let mut w = Writer::new();
    w.u32(record.key.run);
    w.u64(record.key.event);
    w.u32(record.dataset_id);
    w.u32(record.lbn);
    w.u16(record.bcid);
    w.u64(record.timestamp_ms);
    w.u8(record.is_simulated as u8);
    w.f32(record.event_weight);
    w.u32(record.sim_process_id);
    w.string(&record.lhc_conditions)?;
    w.u32(record.trigger.smk);
    w.u32(record.trigger.l1_psk);
    w.u32(record.trigger.hlt_psk);
    w.mask(&record.trigger.l1);
    w.mask(&record.trigger.l2);
    w.mask(&record.trigger.hlt);
    w.u32(record.trigger.decoded_chains.len() as u32);
    for chain in &record.trigger.decoded_chains {
        w.string(chain)?;
    }
    if record.locations.len() > ei_model::MAX_GUID_REFS {
        return Err(SpbError::FieldOverflow(format!(
            "{} GUID references (max 3)",
            record.locations.len()
        )));
    }
    w.u32(record.locations.len() as u32);
    for loc in &record.locations {
        w.u8(loc.ref_type.code());
        w.guid(&loc.guid);
        w.u64(loc.internal_pointer);
    }
    Ok(w.finish())
}

/// Decode an event record payload, rejecting trailing bytes.
pub fn decode_event(payload: &[u8]) -> Result<EventRecord, SpbError> {
    let mut r = Reader::new("event", payload);
    let run = r.u32()?;
    let event = r.u64()?;
    let dataset_id = r.u32()?;
    let lbn = r.u32()?;
    let bcid = r.u16()?;
    let timestamp_ms = r.u64()?;
    let is_simulated = match r.u8()? {
        0 => false,
        1 => true,
        other => {
            return Err(SpbError::MalformedPayload {
                msg: "event",
                detail: format!("bad boolean {other}"),
            })
        }
    };
    let event_weight = r.f32()?;
    let sim_process_id = r.u32()?;
    let lhc_conditions = r.string()?;
    let smk = r.u32()?;
    let l1_psk = r.u32()?;
    let hlt_psk = r.u32()?;
    let l1 = r.mask()?;
    let l2 = r.mask()?;
    let hlt = r.mask()?;
    let n_chains = r.list_count()?;
    let mut decoded_chains = Vec::with_capacity(n_chains as usize);
    for _ in 0..n_chains {
        decoded_chains.push(r.string()?);
    }
    let n_refs = r.u32()?;
    if n_refs as usize > ei_model::MAX_GUID_REFS {
        return Err(SpbError::FieldOverflow(format!(
            "{n_refs} GUID references (max 3)"
        )));
    }
    let mut locations = Vec::with_capacity(n_refs as usize);
    for _ in 0..n_refs {
        let code = r.u8()?;
        let ref_type = RefType::from_code(code).ok_or_else(|| SpbError::MalformedPayload {
            msg: "event",
            detail: format!("bad GUID reference role {code}"),
        })?;
        let guid = r.guid()?;
        let internal_pointer = r.u64()?;
        locations.push(GuidRef {
            ref_type,
            guid,
            internal_pointer,
        });
    }
    r.expect_end()?;
    Ok(EventRecord {
        key: EventKey::new(run, event),
        dataset_id,
        lbn,
        bcid,
        timestamp_ms,
        is_simulated,
        event_weight,
        sim_process_id,
        lhc_conditions,
        trigger: TriggerBlock {
            smk,
            l1_psk,
            hlt_psk,
            l1,
            l2,
            hlt,
            decoded_chains,
        },
        locations,
    })
}
