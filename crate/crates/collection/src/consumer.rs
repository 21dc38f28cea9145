//! The consumption side: turn validated index objects into sorted sequential
//! files under the map store's incoming area, and acknowledge the result.
//!
//! A consumption attempt never panics the loop: every outcome — success,
//! unreachable store, corrupt object — is folded into a `ConsumptionAck` so
//! the dataset tracker upstream always learns what happened.

use std::collections::BTreeSet;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use ei_mapstore::{EventRow, SeqWriter};
use ei_spb::{Message, SpbReader};
use ei_model::Guid;
use ei_transport::{AckStatus, ConsumptionAck, ObjectUri, StoreRouter, ValidationNotice};

use crate::error::{CollectionError, Result};
use crate::sorter::ExternalSorter;
use crate::validation::ValidationObject;

/// Default in-memory sort budget before spilling to disk.
pub const DEFAULT_SORT_BUDGET: usize = 256 * 1024 * 1024;

#[derive(Clone, Debug)]
pub struct ConsumerConfig {
    /// Root of the map-store area; output lands under `incoming/<container>/`.
    pub store_root: PathBuf,
    pub sort_budget_bytes: usize,
}

impl ConsumerConfig {
    pub fn new(store_root: impl Into<PathBuf>) -> ConsumerConfig {
        ConsumerConfig {
            store_root: store_root.into(),
            sort_budget_bytes: DEFAULT_SORT_BUDGET,
        }
    }

    pub fn with_sort_budget(mut self, bytes: usize) -> ConsumerConfig {
        self.sort_budget_bytes = bytes;
        self
    }
}

/// Process one validation notice end to end and report the outcome as the
/// acknowledgement that should be sent back.
pub fn consume_validation(
    notice: &ValidationNotice,
    router: &StoreRouter,
    config: &ConsumerConfig,
) -> ConsumptionAck {
    match consume_inner(notice, router, config) {
        Ok((rows, target)) => ConsumptionAck {
            dataset: notice.dataset.clone(),
            consumed_events: rows,
            target_path: target.display().to_string(),
            status: AckStatus::Ok,
            error: None,
        },
        Err(e) => ConsumptionAck {
            dataset: notice.dataset.clone(),
            consumed_events: 0,
            target_path: String::new(),
            status: AckStatus::Error,
            error: Some(e.to_string()),
        },
    }
}

fn fetch_failure(uri: &str, detail: impl ToString) -> CollectionError {
    CollectionError::FetchFailure {
        uri: uri.to_string(),
        detail: detail.to_string(),
    }
}

fn consume_inner(
    notice: &ValidationNotice,
    router: &StoreRouter,
    config: &ConsumerConfig,
) -> Result<(u64, PathBuf)> {
    let uri = ObjectUri::parse(&notice.validation_uri)
        .map_err(|e| fetch_failure(&notice.validation_uri, e))?;
    let bytes = router
        .get(&uri)
        .map_err(|e| fetch_failure(&notice.validation_uri, e))?;
    let object = ValidationObject::from_bytes(&bytes)
        .map_err(|e| fetch_failure(&notice.validation_uri, e))?;
    if object.dataset != notice.dataset {
        return Err(fetch_failure(
            &notice.validation_uri,
            format!(
                "validation object covers {}, notice names {}",
                object.dataset, notice.dataset
            ),
        ));
    }

    let container = notice.dataset.container();
    let incoming = config.store_root.join("incoming").join(&container);
    let work_dir = incoming.join(format!(".sort-{}", notice.dataset));
    let mut sorter = ExternalSorter::new(config.sort_budget_bytes, work_dir);

    // Objects are processed in the order the validation object lists them,
    // so a re-run of the same notice produces an identical file.
    for entry in &object.objects {
        let object_uri =
            ObjectUri::parse(&entry.uri).map_err(|e| fetch_failure(&entry.uri, e))?;
        let object_bytes = router
            .get(&object_uri)
            .map_err(|e| fetch_failure(&entry.uri, e))?;
        let valid: BTreeSet<Guid> = entry.valid_guids.iter().copied().collect();
        convert_object(&object_bytes, &valid, &mut sorter).map_err(|e| match e {
            CollectionError::Spb(inner) => CollectionError::PartialObject {
                uri: entry.uri.clone(),
                detail: inner.to_string(),
            },
            CollectionError::MapStore(inner) => CollectionError::PartialObject {
                uri: entry.uri.clone(),
                detail: inner.to_string(),
            },
            CollectionError::Model(inner) => CollectionError::PartialObject {
                uri: entry.uri.clone(),
                detail: inner.to_string(),
            },
            other => other,
        })?;
    }

    let rows_converted = sorter.pushed();
    let sorted = sorter.finish()?;
    let final_path = incoming.join(format!("{}.seq", notice.dataset));
    let tmp_path = incoming.join(format!("{}.seq.tmp", notice.dataset));
    let mut writer = SeqWriter::create(&tmp_path)?;
    for row in sorted {
        let (key, value) = row?;
        writer.append(&key, &value)?;
    }
    let written = writer.finish()?;
    debug_assert_eq!(written, rows_converted);
    std::fs::rename(&tmp_path, &final_path)?;

    append_if_absent(
        &incoming.join("_validated.txt"),
        &final_path.display().to_string(),
    )?;
    Ok((written, final_path))
}

/// Decode one stored index object, pushing rows for every event inside a
/// file group whose GUID is listed as valid. Other groups are skipped whole.
fn convert_object(
    bytes: &[u8],
    valid_guids: &BTreeSet<Guid>,
    sorter: &mut ExternalSorter,
) -> Result<u64> {
    let reader = SpbReader::new(Cursor::new(bytes))?;
    let mut include = false;
    let mut pushed = 0u64;
    for frame in reader {
        let frame = frame?;
        match Message::decode(&frame)? {
            Message::BeginGuid(begin) => include = valid_guids.contains(&begin.guid),
            Message::EndGuid(_) => include = false,
            Message::Event(record) => {
                if include {
                    let row = EventRow::from_record(&record)?;
                    sorter.push(row.key.encode().to_vec(), row.to_value()?)?;
                    pushed += 1;
                }
            }
            Message::Header(_) | Message::Trailer(_) | Message::TriggerMenu(_) => {}
        }
    }
    Ok(pushed)
}

/// Append `line` to the list file unless an identical line is already there.
fn append_if_absent(path: &Path, line: &str) -> Result<()> {
    let existing = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    if existing.lines().any(|l| l == line) {
        return Ok(());
    }
    let mut updated = existing;
    if !updated.is_empty() && !updated.ends_with('\n') {
        updated.push('\n');
    }
    updated.push_str(line);
    updated.push('\n');
    std::fs::write(path, updated)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn append_if_absent_adds_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("_validated.txt");
        append_if_absent(&path, "a/b/c.seq").unwrap();
        append_if_absent(&path, "a/b/c.seq").unwrap();
        append_if_absent(&path, "d/e/f.seq").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a/b/c.seq\nd/e/f.seq\n");
    }
}
