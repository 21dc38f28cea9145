//! Deterministic fixture generator for the event-index pipeline: trigger
//! menus with firing rates, dataset recipes that render as producer input
//! files, and the ledgers (duplicates, chain fires, overlaps, registries)
//! the rest of the test suite uses as independent oracles.

mod events;
mod menu;

pub use events::{
    build_registry, planned_overlap, DatasetSpec, GeneratedDataset, GeneratedFile, SynthEvent,
};
pub use menu::{write_menu_file, ChainSpec, MenuSpec, SmkMapEntry, TriggerLevel};
