//! Producer input files: JSON Lines. The first line is the file header,
//! every following line one event record. This parser is written against the
//! documented line layout, independently of any code that writes such files.

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use ei_model::{DatasetName, Guid};

use crate::error::{CollectionError, Result};

/// First line of an input file: identity and totals for the file about to
/// be indexed.
#[derive(Clone, Debug, Deserialize)]
pub struct InputFileHeader {
    pub guid: Guid,
    pub dataset: DatasetName,
    pub proc_version: String,
    pub stream: String,
    pub project: String,
    pub smk: u32,
    pub n_events: u64,
}

/// One event line. Trigger keys and the conditions tag are optional with
/// zero/empty defaults; `smk` falls back to the header value when absent.
#[derive(Clone, Debug, Deserialize, PartialEq)]
pub struct InputEvent {
    pub run: u32,
    pub event: u64,
    pub lbn: u32,
    pub bcid: u16,
    pub timestamp: u64,
    pub is_sim: bool,
    pub weight: f32,
    pub sim_process_id: u32,
    #[serde(default)]
    pub l1: Vec<u64>,
    #[serde(default)]
    pub l2: Vec<u64>,
    #[serde(default)]
    pub hlt: Vec<u64>,
    #[serde(default)]
    pub upstream_guids: Vec<Guid>,
    #[serde(default)]
    pub smk: Option<u32>,
    #[serde(default)]
    pub l1_psk: u32,
    #[serde(default)]
    pub hlt_psk: u32,
    #[serde(default)]
    pub conditions: String,
}

/// Streaming reader for one input file: the parsed header plus an iterator
/// over `(ordinal, event)` with ordinals assigned 0, 1, 2, … in file order.
pub struct EventFileReader {
    path: String,
    header: InputFileHeader,
    lines: std::io::Lines<BufReader<std::fs::File>>,
    yielded: u64,
    finished: bool,
}

/// Open an input file and parse its header line.
pub fn read_event_file(path: &Path) -> Result<EventFileReader> {
    let display = path.display().to_string();
    let corrupt = |detail: String| CollectionError::CorruptInput {
        path: display.clone(),
        detail,
    };
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(Ok(line)) => line,
        Some(Err(e)) => return Err(corrupt(format!("unreadable header line: {e}"))),
        None => return Err(corrupt("empty file".to_string())),
    };
    let header: InputFileHeader = serde_json::from_str(&header_line)
        .map_err(|e| corrupt(format!("bad header line: {e}")))?;
    Ok(EventFileReader {
        path: display,
        header,
        lines,
        yielded: 0,
        finished: false,
    })
}

impl EventFileReader {
    pub fn header(&self) -> &InputFileHeader {
        &self.header
    }
}

impl Iterator for EventFileReader {
    type Item = Result<(u64, InputEvent)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.finished {
            return None;
        }
        let corrupt = |path: &str, detail: String| CollectionError::CorruptInput {
            path: path.to_string(),
            detail,
        };
        match self.lines.next() {
            Some(Ok(line)) => match serde_json::from_str::<InputEvent>(&line) {
                Ok(event) => {
                    let ordinal = self.yielded;
                    self.yielded += 1;
                    Some(Ok((ordinal, event)))
                }
                Err(e) => {
                    self.finished = true;
                    Some(Err(corrupt(
                        &self.path,
                        format!("bad event line {}: {e}", self.yielded + 2),
                    )))
                }
            },
            Some(Err(e)) => {
                self.finished = true;
                Some(Err(corrupt(&self.path, format!("read error: {e}"))))
            }
            None => {
                self.finished = true;
                if self.yielded != self.header.n_events {
                    Some(Err(corrupt(
                        &self.path,
                        format!(
                            "header says {} events, file holds {}",
                            self.header.n_events, self.yielded
                        ),
                    )))
                } else {
                    None
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        path
    }

    const HEADER: &str = r#"{"guid":"21EC2020-3AEA-4069-A2DD-08002B30309D","dataset":"data17_13TeV.00330079.physics_Main.merge.AOD.f894_m1902","proc_version":"22.0.91","stream":"physics_Main","project":"data17_13TeV","smk":2154,"n_events":2}"#;
    const EVENT: &str = r#"{"run":330079,"event":41,"lbn":3,"bcid":100,"timestamp":1495000000123,"is_sim":false,"weight":1.0,"sim_process_id":0,"l1":[5],"l2":[],"hlt":[1],"upstream_guids":["31EC2020-3AEA-4069-A2DD-08002B30309D"],"smk":2154,"l1_psk":260,"hlt_psk":325,"conditions":"stable_beams"}"#;

    #[test]
    fn header_and_ordinals_parse() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "f.jsonl", &[HEADER, EVENT, EVENT]);
        let reader = read_event_file(&path).unwrap();
        assert_eq!(reader.header().smk, 2154);
        assert_eq!(reader.header().n_events, 2);
        assert_eq!(reader.header().dataset.run_id, 330079);
        let events: Vec<(u64, InputEvent)> = reader.map(|r| r.unwrap()).collect();
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].0, 0);
        assert_eq!(events[1].0, 1);
        assert_eq!(events[0].1.event, 41);
        assert_eq!(events[0].1.upstream_guids.len(), 1);
    }

    #[test]
    fn count_mismatch_is_corrupt_after_last_good_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "f.jsonl", &[HEADER, EVENT]);
        let mut reader = read_event_file(&path).unwrap();
        assert!(reader.next().unwrap().is_ok());
        let err = reader.next().unwrap().unwrap_err();
        assert!(matches!(err, CollectionError::CorruptInput { .. }), "{err}");
        assert!(err.to_string().contains("header says 2"));
        assert!(reader.next().is_none());
    }

    #[test]
    fn bad_event_line_is_corrupt_after_last_good_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "f.jsonl", &[HEADER, EVENT, "{nope"]);
        let mut reader = read_event_file(&path).unwrap();
        assert!(reader.next().unwrap().is_ok());
        let err = reader.next().unwrap().unwrap_err();
        assert!(err.to_string().contains("line 3"));
        assert!(reader.next().is_none());
    }

    #[test]
    fn missing_optional_fields_default() {
        let dir = tempfile::tempdir().unwrap();
        let minimal = r#"{"run":1,"event":2,"lbn":3,"bcid":4,"timestamp":5,"is_sim":true,"weight":-1.5,"sim_process_id":9}"#;
        let header_one = HEADER.replace("\"n_events\":2", "\"n_events\":1");
        let path = write_lines(dir.path(), "f.jsonl", &[&header_one, minimal]);
        let events: Vec<(u64, InputEvent)> =
            read_event_file(&path).unwrap().map(|r| r.unwrap()).collect();
        let ev = &events[0].1;
        assert_eq!(ev.smk, None);
        assert_eq!(ev.l1_psk, 0);
        assert!(ev.l1.is_empty() && ev.upstream_guids.is_empty());
        assert_eq!(ev.conditions, "");
    }

    #[test]
    fn empty_or_headerless_file_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_lines(dir.path(), "f.jsonl", &[]);
        assert!(read_event_file(&path).is_err());
        let path = write_lines(dir.path(), "g.jsonl", &["not json"]);
        assert!(read_event_file(&path).is_err());
    }
}
