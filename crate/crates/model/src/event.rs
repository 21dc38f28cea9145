use crate::{EventKey, Guid, ModelError, TriggerBlock};

/// Role of a GUID reference attached to an event: the file being indexed,
/// or one of up to two upstream files in its provenance chain.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum RefType {
    Indexed = 0,
    Upstream1 = 1,
    Upstream2 = 2,
}

impl RefType {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RefType::Indexed),
            1 => Some(RefType::Upstream1),
            2 => Some(RefType::Upstream2),
            _ => None,
        }
    }

    pub fn code(&self) -> u8 {
        *self as u8
    }
}

/// Reference from an event to a file: which role the file plays, its GUID,
/// and the ordinal position of the event inside that file.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct GuidRef {
    pub ref_type: RefType,
    pub guid: Guid,
    pub internal_pointer: u64,
}

/// Complete metadata record for one event.
#[derive(Clone, PartialEq, Debug)]
pub struct EventRecord {
    pub key: EventKey,
    pub dataset_id: u32,
    pub lbn: u32,
    pub bcid: u16,
    pub timestamp_ms: u64,
    pub is_simulated: bool,
    pub event_weight: f32,
    pub sim_process_id: u32,
    pub lhc_conditions: String,
    pub trigger: TriggerBlock,
    pub locations: Vec<GuidRef>,
}

pub const MAX_GUID_REFS: usize = 3;

impl EventRecord {
    /// Check the structural invariants: one to three GUID references with
    /// strictly ascending roles starting at `Indexed`, luminosity block
    /// numbering from 1 for real data, and a comparable event weight.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidRecord {
            reason: reason.to_string(),
        };
        if self.locations.is_empty() {
            return Err(bad("no GUID references"));
        }
        if self.locations.len() > MAX_GUID_REFS {
            return Err(bad("more than 3 GUID references"));
        }
        if self.locations[0].ref_type != RefType::Indexed {
            return Err(bad("first GUID reference is not the indexed file"));
        }
        for pair in self.locations.windows(2) {
            if pair[1].ref_type <= pair[0].ref_type {
                return Err(bad("GUID reference roles are not strictly ascending"));
            }
        }
        if !self.is_simulated && self.lbn == 0 {
            return Err(bad("real-data luminosity blocks are numbered from 1"));
        }
        if self.event_weight.is_nan() {
            return Err(bad("event weight is NaN"));
        }
        Ok(())
    }

    /// The GUID of the file this event was indexed from.
    pub fn indexed_guid(&self) -> Guid {
        self.locations[0].guid
    }
}
