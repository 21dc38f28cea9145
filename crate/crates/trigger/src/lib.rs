//! Trigger decoding: menu dictionaries, fired-bit → chain-name translation,
//! and the derived per-dataset fire-count and overlap tables.

pub mod decode;
pub mod derived;
pub mod error;
pub mod menu;

pub use decode::{decode_event, decode_masks, decode_trigger, placeholder_name, DecodeOutcome};
pub use derived::{
    decode_dataset, read_overlaps, read_statistics, trigger_overlaps, trigger_statistics,
    DecodeReport, TriggerOverlapTable, TriggerStatistics, OVERLAP_SUFFIX, STATS_SUFFIX,
};
pub use error::{Result, TriggerError};
pub use menu::{
    load_menu_tables, parse_menu_text, Level, MenuTables, SmkResolutionTable, TriggerMenuTable,
};
