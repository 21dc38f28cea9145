//! Trigger-menu fixtures: chain definitions with firing rates, menu-file
//! serialization, and mask sampling that doubles as the decode oracle.
//!
//! Menu files are tab-separated text with two line kinds:
//!
//! ```text
//! MENU\t<smk>\t<L1|L2|HLT>\t<counter>\t<chain-name>
//! SMKMAP\t<real|sim>\t<run-or-tag>\t<smk>
//! ```

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::Rng;

/// One of the three trigger levels. The middle level exists only in older
/// menus; newer ones fold it into the final level and leave it empty.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TriggerLevel {
    L1,
    L2,
    Hlt,
}

impl TriggerLevel {
    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerLevel::L1 => "L1",
            TriggerLevel::L2 => "L2",
            TriggerLevel::Hlt => "HLT",
        }
    }
}

impl fmt::Display for TriggerLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One chain: its level, counter (bit position), name, and the probability
/// that a sampled event fires it.
#[derive(Clone, Debug)]
pub struct ChainSpec {
    pub level: TriggerLevel,
    pub counter: u32,
    pub name: String,
    pub fire_rate: f64,
}

/// A complete menu for one SMK, with sampling rates attached so generated
/// masks and expected decode output come from the same source of truth.
#[derive(Clone, Debug)]
pub struct MenuSpec {
    pub smk: u32,
    pub chains: Vec<ChainSpec>,
}

const L1_POOL: &[&str] = &[
    "L1_EM22VHI",
    "L1_MU20",
    "L1_XE50",
    "L1_J100",
    "L1_TAU60",
    "L1_2EM15VHI",
    "L1_MU10_2MU6",
    "L1_J400",
];

const HLT_POOL: &[&str] = &[
    "HLT_e26_lhtight_ivarloose",
    "HLT_mu26_ivarmedium",
    "HLT_xe110_pufit_L1XE50",
    "HLT_j420",
    "HLT_tau160_medium1",
    "HLT_2e17_lhvloose",
    "HLT_g140_loose",
    "HLT_5j70_0eta240",
];

const L2_POOL: &[&str] = &["L2_e15_medium", "L2_mu13", "L2_xe30", "L2_j95"];

impl MenuSpec {
    /// A 16-chain two-level menu (8 first-level, 8 final-level) with firing
    /// rates spread from common to rare. Counters are deliberately sparse so
    /// masks span several words.
    pub fn standard(smk: u32) -> MenuSpec {
        let mut chains = Vec::new();
        for (i, name) in L1_POOL.iter().enumerate() {
            chains.push(ChainSpec {
                level: TriggerLevel::L1,
                counter: (i as u32) * 23 + 2,
                name: (*name).to_string(),
                fire_rate: (0.7 / 1.5f64.powi(i as i32)).max(0.02),
            });
        }
        for (i, name) in HLT_POOL.iter().enumerate() {
            chains.push(ChainSpec {
                level: TriggerLevel::Hlt,
                counter: (i as u32) * 31 + 5,
                name: (*name).to_string(),
                fire_rate: (0.35 / 1.6f64.powi(i as i32)).max(0.01),
            });
        }
        MenuSpec { smk, chains }
    }

    /// A menu that also populates the middle level, for coverage of
    /// three-level decoding.
    pub fn three_level(smk: u32) -> MenuSpec {
        let mut menu = MenuSpec::standard(smk);
        for (i, name) in L2_POOL.iter().enumerate() {
            menu.chains.push(ChainSpec {
                level: TriggerLevel::L2,
                counter: (i as u32) * 17 + 3,
                name: (*name).to_string(),
                fire_rate: 0.25 / (i as f64 + 1.0),
            });
        }
        menu
    }

    /// A randomized menu with `n_chains` chains per level, unique counters
    /// in `0..counter_span` and synthetic names.
    pub fn random(smk: u32, n_chains: usize, counter_span: u32, rng: &mut impl Rng) -> MenuSpec {
        let mut chains = Vec::new();
        for level in [TriggerLevel::L1, TriggerLevel::L2, TriggerLevel::Hlt] {
            let mut counters: Vec<u32> = Vec::new();
            while counters.len() < n_chains {
                let c = rng.gen_range(0..counter_span);
                if !counters.contains(&c) {
                    counters.push(c);
                }
            }
            for c in counters {
                chains.push(ChainSpec {
                    level,
                    counter: c,
                    name: format!("{}_synth_{c}", level.as_str()),
                    fire_rate: rng.gen_range(0.05..0.6),
                });
            }
        }
        MenuSpec { smk, chains }
    }

    pub fn chains_at(&self, level: TriggerLevel) -> impl Iterator<Item = &ChainSpec> {
        self.chains.iter().filter(move |c| c.level == level)
    }

    /// Fixed mask width (in 64-bit words) for a level: enough words for the
    /// highest counter, zero words when the level has no chains.
    pub fn mask_words(&self, level: TriggerLevel) -> usize {
        self.chains_at(level)
            .map(|c| c.counter as usize / 64 + 1)
            .max()
            .unwrap_or(0)
    }

    /// Sample one event's three mask-word vectors. Each chain fires
    /// independently at its rate; widths are fixed per level so consecutive
    /// events produce same-shape (and highly compressible) masks.
    pub fn sample_masks(&self, rng: &mut impl Rng) -> (Vec<u64>, Vec<u64>, Vec<u64>) {
        let mut out = (
            vec![0u64; self.mask_words(TriggerLevel::L1)],
            vec![0u64; self.mask_words(TriggerLevel::L2)],
            vec![0u64; self.mask_words(TriggerLevel::Hlt)],
        );
        for chain in &self.chains {
            if rng.gen_bool(chain.fire_rate) {
                let words = match chain.level {
                    TriggerLevel::L1 => &mut out.0,
                    TriggerLevel::L2 => &mut out.1,
                    TriggerLevel::Hlt => &mut out.2,
                };
                words[chain.counter as usize / 64] |= 1u64 << (chain.counter % 64);
            }
        }
        out
    }

    /// Decode oracle: names of the chains whose bits are set, first level
    /// then middle then final, counter-ascending within each level.
    pub fn fired_chains(&self, l1: &[u64], l2: &[u64], hlt: &[u64]) -> Vec<String> {
        let mut fired = Vec::new();
        for level in [TriggerLevel::L1, TriggerLevel::L2, TriggerLevel::Hlt] {
            let words = match level {
                TriggerLevel::L1 => l1,
                TriggerLevel::L2 => l2,
                TriggerLevel::Hlt => hlt,
            };
            let mut per_level: Vec<&ChainSpec> = self
                .chains_at(level)
                .filter(|c| bit_set(words, c.counter))
                .collect();
            per_level.sort_by_key(|c| c.counter);
            fired.extend(per_level.into_iter().map(|c| c.name.clone()));
        }
        fired
    }

    /// The `MENU` lines for this menu, counter-ascending within each level.
    pub fn menu_lines(&self) -> String {
        let mut out = String::new();
        for level in [TriggerLevel::L1, TriggerLevel::L2, TriggerLevel::Hlt] {
            let mut per_level: Vec<&ChainSpec> = self.chains_at(level).collect();
            per_level.sort_by_key(|c| c.counter);
            for c in per_level {
                out.push_str(&format!(
                    "MENU\t{}\t{}\t{}\t{}\n",
                    self.smk, level, c.counter, c.name
                ));
            }
        }
        out
    }
}

fn bit_set(words: &[u64], index: u32) -> bool {
    words
        .get(index as usize / 64)
        .is_some_and(|w| (w >> (index % 64)) & 1 == 1)
}

/// One SMK-resolution line: maps a run number (real data) or a
/// reconstruction tag (simulation) to an SMK.
#[derive(Clone, Debug)]
pub struct SmkMapEntry {
    pub sim: bool,
    pub key: String,
    pub smk: u32,
}

impl SmkMapEntry {
    pub fn for_run(run: u32, smk: u32) -> Self {
        SmkMapEntry {
            sim: false,
            key: run.to_string(),
            smk,
        }
    }

    pub fn for_tag(tag: &str, smk: u32) -> Self {
        SmkMapEntry {
            sim: true,
            key: tag.to_string(),
            smk,
        }
    }
}

/// Write a complete menu source file: all menus' `MENU` lines followed by
/// the `SMKMAP` resolution lines.
pub fn write_menu_file(
    path: &Path,
    menus: &[MenuSpec],
    maps: &[SmkMapEntry],
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for menu in menus {
        out.write_all(menu.menu_lines().as_bytes())?;
    }
    for entry in maps {
        writeln!(
            out,
            "SMKMAP\t{}\t{}\t{}",
            if entry.sim { "sim" } else { "real" },
            entry.key,
            entry.smk
        )?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_menu_has_unique_counters_and_names_per_level() {
        let menu = MenuSpec::three_level(2154);
        for level in [TriggerLevel::L1, TriggerLevel::L2, TriggerLevel::Hlt] {
            let counters: Vec<u32> = menu.chains_at(level).map(|c| c.counter).collect();
            let names: Vec<&str> = menu.chains_at(level).map(|c| c.name.as_str()).collect();
            let mut c2 = counters.clone();
            c2.sort();
            c2.dedup();
            assert_eq!(c2.len(), counters.len());
            let mut n2 = names.clone();
            n2.sort();
            n2.dedup();
            assert_eq!(n2.len(), names.len());
        }
    }

    #[test]
    fn fired_chains_matches_per_bit_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let menu = MenuSpec::three_level(100);
        for _ in 0..200 {
            let (l1, l2, hlt) = menu.sample_masks(&mut rng);
            let fired = menu.fired_chains(&l1, &l2, &hlt);
            // Naive recomputation straight from bit positions.
            let mut expect = Vec::new();
            for (level, words) in [
                (TriggerLevel::L1, &l1),
                (TriggerLevel::L2, &l2),
                (TriggerLevel::Hlt, &hlt),
            ] {
                for bit in 0..(words.len() as u32 * 64) {
                    if (words[bit as usize / 64] >> (bit % 64)) & 1 == 1 {
                        let chain = menu
                            .chains_at(level)
                            .find(|c| c.counter == bit)
                            .expect("sampled bit must belong to a chain");
                        expect.push(chain.name.clone());
                    }
                }
            }
            assert_eq!(fired, expect);
        }
    }

    #[test]
    fn menu_file_lines_are_well_formed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("menu.tsv");
        write_menu_file(
            &path,
            &[MenuSpec::standard(2154)],
            &[SmkMapEntry::for_run(330079, 2154), SmkMapEntry::for_tag("r9364", 2300)],
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let menu_lines = text.lines().filter(|l| l.starts_with("MENU\t")).count();
        assert_eq!(menu_lines, 16);
        assert!(text.contains("MENU\t2154\tL1\t2\tL1_EM22VHI"));
        assert!(text.contains("SMKMAP\treal\t330079\t2154"));
        assert!(text.contains("SMKMAP\tsim\tr9364\t2300"));
    }
}
