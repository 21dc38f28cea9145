//! Menu tables: per-configuration-key chain dictionaries and the resolution
//! maps that recover a configuration key from a run number or processing tag.
//!
//! Source format is tab-separated text, one fact per line:
//!
//! ```text
//! MENU   <smk> <level> <counter> <chain-name>
//! SMKMAP real|sim <run-or-tag> <smk>
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Result, TriggerError};

/// The three trigger levels, in decode order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    L1,
    L2,
    Hlt,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L1, Level::L2, Level::Hlt];

    pub fn as_str(self) -> &'static str {
        match self {
            Level::L1 => "L1",
            Level::L2 => "L2",
            Level::Hlt => "HLT",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "L1" => Ok(Level::L1),
            "L2" => Ok(Level::L2),
            "HLT" => Ok(Level::Hlt),
            other => Err(format!("unknown level {other:?}")),
        }
    }
}

/// Chain dictionary for one configuration key: counter → name per level.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriggerMenuTable {
    pub smk: u32,
    pub l1: BTreeMap<u32, String>,
    pub l2: BTreeMap<u32, String>,
    pub hlt: BTreeMap<u32, String>,
}

impl TriggerMenuTable {
    pub fn level(&self, level: Level) -> &BTreeMap<u32, String> {
        match level {
            Level::L1 => &self.l1,
            Level::L2 => &self.l2,
            Level::Hlt => &self.hlt,
        }
    }

    fn level_mut(&mut self, level: Level) -> &mut BTreeMap<u32, String> {
        match level {
            Level::L1 => &mut self.l1,
            Level::L2 => &mut self.l2,
            Level::Hlt => &mut self.hlt,
        }
    }

    pub fn n_chains(&self) -> usize {
        self.l1.len() + self.l2.len() + self.hlt.len()
    }

    /// Every chain name in decode order (levels in order, counter-ascending).
    pub fn chain_names(&self) -> Vec<String> {
        Level::ALL
            .iter()
            .flat_map(|level| self.level(*level).values().cloned())
            .collect()
    }
}

/// Recovers a configuration key when an event block carries none: real data
/// resolves by run number, simulation by processing tag.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SmkResolutionTable {
    pub by_run: BTreeMap<u32, u32>,
    pub by_tag: BTreeMap<String, u32>,
}

impl SmkResolutionTable {
    pub fn resolve(&self, is_sim: bool, run: u32, tag: &str) -> Option<u32> {
        if is_sim {
            self.by_tag.get(tag).copied()
        } else {
            self.by_run.get(&run).copied()
        }
    }
}

/// Everything loaded from one menu source: menus by configuration key plus
/// the resolution maps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MenuTables {
    pub menus: BTreeMap<u32, TriggerMenuTable>,
    pub resolution: SmkResolutionTable,
}

impl MenuTables {
    pub fn menu(&self, smk: u32) -> Option<&TriggerMenuTable> {
        self.menus.get(&smk)
    }

    /// The menu for an event: by its own configuration key when one is
    /// recorded (non-zero), otherwise resolved via run number or tag.
    pub fn resolve_menu(
        &self,
        smk: u32,
        is_sim: bool,
        run: u32,
        tag: &str,
    ) -> Result<&TriggerMenuTable> {
        let effective = if smk != 0 {
            smk
        } else {
            self.resolution
                .resolve(is_sim, run, tag)
                .ok_or_else(|| TriggerError::UnknownSmk {
                    detail: if is_sim {
                        format!("no configuration key mapped for tag {tag:?}")
                    } else {
                        format!("no configuration key mapped for run {run}")
                    },
                })?
        };
        self.menu(effective).ok_or_else(|| TriggerError::UnknownSmk {
            detail: format!("no menu loaded for configuration key {effective}"),
        })
    }
}

/// Parse the tab-separated menu source.
pub fn parse_menu_text(text: &str) -> Result<MenuTables> {
    let mut tables = MenuTables::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let malformed = |detail: String| TriggerError::MalformedMenuSource {
            line: line_no,
            detail,
        };
        match fields[0] {
            "MENU" => {
                if fields.len() != 5 {
                    return Err(malformed(format!(
                        "MENU rows take 5 fields, found {}",
                        fields.len()
                    )));
                }
                let smk: u32 = fields[1]
                    .parse()
                    .map_err(|_| malformed(format!("bad configuration key {:?}", fields[1])))?;
                let level: Level = fields[2]
                    .parse()
                    .map_err(|e: String| malformed(e))?;
                let counter: u32 = fields[3]
                    .parse()
                    .map_err(|_| malformed(format!("bad counter {:?}", fields[3])))?;
                let name = fields[4];
                if name.is_empty() {
                    return Err(malformed("empty chain name".to_string()));
                }
                let menu = tables
                    .menus
                    .entry(smk)
                    .or_insert_with(|| TriggerMenuTable {
                        smk,
                        ..TriggerMenuTable::default()
                    });
                if menu.level(level).values().any(|n| n == name) {
                    return Err(malformed(format!(
                        "chain name {name:?} repeats within level {level} of key {smk}"
                    )));
                }
                if menu
                    .level_mut(level)
                    .insert(counter, name.to_string())
                    .is_some()
                {
                    return Err(TriggerError::DuplicateCounter {
                        smk,
                        level: level.as_str().to_string(),
                        counter,
                    });
                }
            }
            "SMKMAP" => {
                if fields.len() != 4 {
                    return Err(malformed(format!(
                        "SMKMAP rows take 4 fields, found {}",
                        fields.len()
                    )));
                }
                let smk: u32 = fields[3]
                    .parse()
                    .map_err(|_| malformed(format!("bad configuration key {:?}", fields[3])))?;
                match fields[1] {
                    "real" => {
                        let run: u32 = fields[2]
                            .parse()
                            .map_err(|_| malformed(format!("bad run number {:?}", fields[2])))?;
                        tables.resolution.by_run.insert(run, smk);
                    }
                    "sim" => {
                        tables
                            .resolution
                            .by_tag
                            .insert(fields[2].to_string(), smk);
                    }
                    other => {
                        return Err(malformed(format!(
                            "SMKMAP kind must be real or sim, found {other:?}"
                        )))
                    }
                }
            }
            other => return Err(malformed(format!("unknown row kind {other:?}"))),
        }
    }
    Ok(tables)
}

/// Load and validate a menu source file.
pub fn load_menu_tables(path: &Path) -> Result<MenuTables> {
    parse_menu_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "MENU\t100\tL1\t0\tL1_EM3\nMENU\t100\tL1\t1\tL1_MU4\nMENU\t100\tHLT\t5\tHLT_e5\nSMKMAP\treal\t330079\t100\nSMKMAP\tsim\tr9364\t100\n";

    #[test]
    fn fixture_menu_loads_all_chains() {
        let tables = parse_menu_text(FIXTURE).unwrap();
        let menu = tables.menu(100).unwrap();
        assert_eq!(menu.n_chains(), 3);
        assert_eq!(menu.l1[&0], "L1_EM3");
        assert_eq!(menu.l1[&1], "L1_MU4");
        assert_eq!(menu.hlt[&5], "HLT_e5");
        assert_eq!(
            menu.chain_names(),
            vec!["L1_EM3", "L1_MU4", "HLT_e5"]
        );
    }

    #[test]
    fn duplicate_counter_is_rejected_naming_the_row() {
        let text = format!("{FIXTURE}MENU\t100\tL1\t0\tL1_TAU8\n");
        let err = parse_menu_text(&text).unwrap_err();
        let TriggerError::DuplicateCounter {
            smk,
            level,
            counter,
        } = err
        else {
            panic!("expected a duplicate-counter error, got {err}");
        };
        assert_eq!((smk, level.as_str(), counter), (100, "L1", 0));
    }

    #[test]
    fn duplicate_name_within_level_is_rejected() {
        let text = format!("{FIXTURE}MENU\t100\tL1\t9\tL1_EM3\n");
        let err = parse_menu_text(&text).unwrap_err();
        assert!(matches!(err, TriggerError::MalformedMenuSource { .. }));
        assert!(err.to_string().contains("L1_EM3"));
    }

    #[test]
    fn same_name_on_other_level_or_key_is_fine() {
        let text = format!("{FIXTURE}MENU\t100\tL2\t0\tL1_EM3\nMENU\t200\tL1\t0\tL1_EM3\n");
        let tables = parse_menu_text(&text).unwrap();
        assert_eq!(tables.menu(100).unwrap().n_chains(), 4);
        assert_eq!(tables.menu(200).unwrap().n_chains(), 1);
    }

    #[test]
    fn malformed_rows_name_their_line() {
        for (text, needle) in [
            ("MENU\t100\tL1\t0\n", "5 fields"),
            ("MENU\tx\tL1\t0\tA\n", "configuration key"),
            ("MENU\t100\tL9\t0\tA\n", "level"),
            ("MENU\t100\tL1\tx\tA\n", "counter"),
            ("SMKMAP\tweird\t1\t100\n", "real or sim"),
            ("NOISE\t1\n", "row kind"),
        ] {
            let err = parse_menu_text(text).unwrap_err();
            let TriggerError::MalformedMenuSource { line, detail } = err else {
                panic!("expected malformed-source for {text:?}");
            };
            assert_eq!(line, 1);
            assert!(detail.contains(needle), "{detail:?} missing {needle:?}");
        }
    }

    #[test]
    fn resolution_maps_answer_by_kind() {
        let tables = parse_menu_text(FIXTURE).unwrap();
        assert_eq!(tables.resolution.resolve(false, 330079, ""), Some(100));
        assert_eq!(tables.resolution.resolve(false, 999999, ""), None);
        assert_eq!(tables.resolution.resolve(true, 0, "r9364"), Some(100));
        assert_eq!(tables.resolution.resolve(true, 330079, "x"), None);
    }

    #[test]
    fn resolve_menu_prefers_recorded_key_and_falls_back() {
        let tables = parse_menu_text(FIXTURE).unwrap();
        assert_eq!(tables.resolve_menu(100, false, 0, "").unwrap().smk, 100);
        assert_eq!(
            tables.resolve_menu(0, false, 330079, "").unwrap().smk,
            100
        );
        assert_eq!(tables.resolve_menu(0, true, 0, "r9364").unwrap().smk, 100);
        assert!(matches!(
            tables.resolve_menu(0, false, 12345, ""),
            Err(TriggerError::UnknownSmk { .. })
        ));
        assert!(matches!(
            tables.resolve_menu(777, false, 330079, ""),
            Err(TriggerError::UnknownSmk { .. })
        ));
    }
}
