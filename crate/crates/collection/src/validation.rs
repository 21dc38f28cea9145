//! The validation object: the supervisor's stored proof that a dataset's
//! index data is complete, listing each stored object and exactly which file
//! GUIDs inside it are good to convert.

use serde::{Deserialize, Serialize};

use ei_model::{DatasetName, Guid};

use crate::error::{CollectionError, Result};

/// One stored index object and the validated file groups inside it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationEntry {
    pub uri: String,
    pub valid_guids: Vec<Guid>,
}

/// Complete validation record for one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationObject {
    pub dataset: DatasetName,
    pub objects: Vec<ValidationEntry>,
    pub expected_events: u64,
    pub created_ms: u64,
}

impl ValidationObject {
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("validation objects always serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let object: ValidationObject = serde_json::from_slice(bytes).map_err(|e| {
            CollectionError::FetchFailure {
                uri: "<validation object>".to_string(),
                detail: format!("unparseable validation object: {e}"),
            }
        })?;
        object.check()?;
        Ok(object)
    }

    /// Every valid GUID must appear in exactly one object entry.
    pub fn check(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for entry in &self.objects {
            for guid in &entry.valid_guids {
                if !seen.insert(*guid) {
                    return Err(CollectionError::BadConfig(format!(
                        "validation object for {} lists {} twice",
                        self.dataset, guid
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_valid_guids(&self) -> usize {
        self.objects.iter().map(|o| o.valid_guids.len()).sum()
    }

    /// Store key for this object; the emit sequence number keeps repeated
    /// emissions of the same dataset distinct.
    pub fn storage_key(dataset: &DatasetName, created_ms: u64, emit_seq: u32) -> String {
        format!("validation/{dataset}/{created_ms}.{emit_seq}.json")
    }
}
