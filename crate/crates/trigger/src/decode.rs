//! Turning fired-bit masks back into chain names.
//!
//! Decoding walks the three levels in order (L1, L2, HLT) and within each
//! level the set bits counter-ascending, emitting the menu's name for every
//! bit. A bit with no menu entry still produces output — a placeholder name
//! like `L1_counter_17` — plus a warning; an event is never dropped for
//! having an unmapped counter.

use ei_model::{BitMask, TriggerBlock};

use crate::menu::{Level, MenuTables, TriggerMenuTable};
use crate::Result;

/// What one decode produced: the chain names in canonical order, and a
/// warning per counter the menu had no entry for.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DecodeOutcome {
    pub chains: Vec<String>,
    pub warnings: Vec<String>,
}

impl DecodeOutcome {
    pub fn has_placeholders(&self) -> bool {
        !self.warnings.is_empty()
    }
}

/// The placeholder name generated for a counter with no menu entry.
pub fn placeholder_name(level: Level, counter: u32) -> String {
    format!("{}_counter_{}", level.as_str(), counter)
}

fn decode_level(
    level: Level,
    mask: &BitMask,
    menu: &TriggerMenuTable,
    out: &mut DecodeOutcome,
) {
    let names = menu.level(level);
    for bit in mask.iter_set_bits() {
        match names.get(&bit) {
            Some(name) => out.chains.push(name.clone()),
            None => {
                out.chains.push(placeholder_name(level, bit));
                out.warnings.push(format!(
                    "key {}: no {} chain at counter {}",
                    menu.smk,
                    level.as_str(),
                    bit
                ));
            }
        }
    }
}

/// Decode a raw mask triple against one menu.
pub fn decode_masks(
    l1: &BitMask,
    l2: &BitMask,
    hlt: &BitMask,
    menu: &TriggerMenuTable,
) -> DecodeOutcome {
    let mut out = DecodeOutcome::default();
    decode_level(Level::L1, l1, menu, &mut out);
    decode_level(Level::L2, l2, menu, &mut out);
    decode_level(Level::Hlt, hlt, menu, &mut out);
    out
}

/// Decode a trigger block whose configuration key is already known to match
/// `menu`.
pub fn decode_trigger(block: &TriggerBlock, menu: &TriggerMenuTable) -> DecodeOutcome {
    decode_masks(&block.l1, &block.l2, &block.hlt, menu)
}

/// Decode a trigger block, resolving which menu applies: the block's own key
/// when recorded, otherwise the run-number (real data) or processing-tag
/// (simulation) resolution maps.
pub fn decode_event(
    block: &TriggerBlock,
    is_sim: bool,
    run: u32,
    tag: &str,
    tables: &MenuTables,
) -> Result<DecodeOutcome> {
    let menu = tables.resolve_menu(block.smk, is_sim, run, tag)?;
    Ok(decode_trigger(block, menu))
}
