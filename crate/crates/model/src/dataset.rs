use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::ModelError;

/// Six-field dotted dataset name:
/// `project.runId.stream.prodStep.dataFormat.amiTag`, e.g.
/// `data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824`.
///
/// The run field renders zero-padded to 8 digits; parsing accepts any
/// decimal width that fits an unsigned 32-bit value, so `format(parse(s))`
/// is the identity on canonical names and canonicalizes the rest.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct DatasetName {
    pub project: String,
    pub run_id: u32,
    pub stream: String,
    pub prod_step: String,
    pub data_format: String,
    pub ami_tag: String,
}

impl DatasetName {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let bad = |reason: String| ModelError::MalformedName {
            text: text.to_string(),
            reason,
        };
        let fields: Vec<&str> = text.split('.').collect();
        if fields.len() != 6 {
            return Err(bad(format!("expected 6 dotted fields, got {}", fields.len())));
        }
        for (i, f) in fields.iter().enumerate() {
            if f.is_empty() {
                return Err(bad(format!("field {} is empty", i + 1)));
            }
            if let Some(c) = f.chars().find(|c| !field_char_ok(*c)) {
                return Err(bad(format!("field {} contains {:?}", i + 1, c)));
            }
        }
        if !fields[1].bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad("run field is not decimal".into()));
        }
        let run_id: u32 = fields[1]
            .parse()
            .map_err(|_| bad("run field exceeds 32 bits".into()))?;
        if !format_label_ok(fields[4]) {
            return Err(bad(format!(
                "data format {:?} is not RAW, AOD, EVNT, or DAOD*",
                fields[4]
            )));
        }
        Ok(DatasetName {
            project: fields[0].to_string(),
            run_id,
            stream: fields[2].to_string(),
            prod_step: fields[3].to_string(),
            data_format: fields[4].to_string(),
            ami_tag: fields[5].to_string(),
        })
    }

    /// Container the dataset belongs to: the first three name fields,
    /// `project.runId.stream`.
    pub fn container(&self) -> String {
        format!("{}.{:08}.{}", self.project, self.run_id, self.stream)
    }

    /// Stable 32-bit dataset id derived from the canonical name. Components
    /// that never exchange id assignments (producers, stores, analytics)
    /// still agree on the id of a dataset.
    pub fn stable_id(&self) -> u32 {
        crc32fast::hash(self.to_string().as_bytes())
    }

    /// True for simulated-data projects (`mc...`); real data uses `data...`.
    pub fn is_simulation(&self) -> bool {
        self.project.starts_with("mc")
    }
}

fn field_char_ok(c: char) -> bool {
    c.is_ascii_graphic() && c != '.' && c != ','
}

fn format_label_ok(label: &str) -> bool {
    matches!(label, "RAW" | "AOD" | "EVNT") || label.starts_with("DAOD")
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{:08}.{}.{}.{}.{}",
            self.project, self.run_id, self.stream, self.prod_step, self.data_format, self.ami_tag
        )
    }
}

impl std::str::FromStr for DatasetName {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetName::parse(s)
    }
}

impl Serialize for DatasetName {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for DatasetName {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        DatasetName::parse(&text).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_name_parses_and_round_trips() {
        let text = "data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824";
        let name = DatasetName::parse(text).unwrap();
        assert_eq!(name.project, "data17_13TeV");
        assert_eq!(name.run_id, 330079);
        assert_eq!(name.stream, "physics_BphysLS");
        assert_eq!(name.prod_step, "merge");
        assert_eq!(name.data_format, "AOD");
        assert_eq!(name.ami_tag, "f843_m1824");
        assert_eq!(name.to_string(), text);
        assert_eq!(name.container(), "data17_13TeV.00330079.physics_BphysLS");
        assert!(!name.is_simulation());
    }

    #[test]
    fn short_run_field_is_canonicalized_to_eight_digits() {
        let name = DatasetName::parse("a.1.s.p.AOD.t").unwrap();
        assert_eq!(name.run_id, 1);
        assert_eq!(name.to_string(), "a.00000001.s.p.AOD.t");
    }

    #[test]
    fn daod_formats_are_accepted() {
        for label in ["DAOD_PHYS", "DAOD_BPHY4", "DAOD"] {
            let text = format!("mc16_13TeV.00361022.physics_Main.deriv.{label}.e5984");
            let name = DatasetName::parse(&text).unwrap();
            assert_eq!(name.data_format, label);
            assert!(name.is_simulation());
        }
    }

    #[test]
    fn malformed_names_are_rejected() {
        for bad in [
            "a.b.c",                                  // wrong field count
            "a..s.p.AOD.t",                           // empty field
            "a.0033007x.s.p.AOD.t",                   // non-decimal run
            "a.99999999999.s.p.AOD.t",                // run exceeds u32
            "a.00000001.s.p.ESD.t",                   // unknown format label
            "a.00000001.s p.x.AOD.t",                 // whitespace in field
            "a.00000001.s,p.x.AOD.t",                 // comma in field
            "a.00000001.s.p.AOD.t.extra",             // 7 fields
            "",                                       // empty
        ] {
            assert!(DatasetName::parse(bad).is_err(), "accepted {bad:?}");
        }
    }

    #[test]
    fn stable_id_is_deterministic_and_name_sensitive() {
        let a = DatasetName::parse("data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1824")
            .unwrap();
        let b = DatasetName::parse("data17_13TeV.00330079.physics_BphysLS.merge.AOD.f843_m1825")
            .unwrap();
        assert_eq!(a.stable_id(), a.clone().stable_id());
        assert_ne!(a.stable_id(), b.stable_id());
    }

    fn field_strategy() -> impl Strategy<Value = String> {
        "[a-zA-Z][a-zA-Z0-9_]{0,14}"
    }

    proptest! {
        #[test]
        fn canonical_text_round_trips(
            project in field_strategy(),
            run in 0u32..=99_999_999,
            stream in field_strategy(),
            step in field_strategy(),
            format_idx in 0usize..4,
            tag in field_strategy(),
        ) {
            let format = ["RAW", "AOD", "EVNT", "DAOD_PHYS"][format_idx];
            let name = DatasetName {
                project,
                run_id: run,
                stream,
                prod_step: step,
                data_format: format.to_string(),
                ami_tag: tag,
            };
            let text = name.to_string();
            let parsed = DatasetName::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &name);
            prop_assert_eq!(parsed.to_string(), text);
        }
    }
}
