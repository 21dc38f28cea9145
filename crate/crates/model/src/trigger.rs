use std::fmt;

/// Fired-chain bit mask for one trigger level: a little piece of columnar
/// storage where bit `i` of word `i / 64` says whether chain counter `i`
/// fired. Trailing words may be absent; bits beyond the stored words read
/// as zero.
#[derive(Clone, PartialEq, Eq, Default)]
pub struct BitMask {
    words: Vec<u64>,
}

impl BitMask {
    pub fn new() -> Self {
        BitMask::default()
    }

    pub fn from_words(words: Vec<u64>) -> Self {
        BitMask { words }
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    pub fn bit(&self, index: u32) -> bool {
        let word = (index / 64) as usize;
        match self.words.get(word) {
            Some(w) => (w >> (index % 64)) & 1 == 1,
            None => false,
        }
    }

    pub fn set_bit(&mut self, index: u32) {
        let word = (index / 64) as usize;
        if self.words.len() <= word {
            self.words.resize(word + 1, 0);
        }
        self.words[word] |= 1u64 << (index % 64);
    }

    /// Indices of set bits in ascending order.
    pub fn iter_set_bits(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, w)| {
            (0..64u32).filter_map(move |b| {
                if (w >> b) & 1 == 1 {
                    Some(wi as u32 * 64 + b)
                } else {
                    None
                }
            })
        })
    }

    pub fn count_set(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }
}

impl fmt::Debug for BitMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMask[{}]", self.count_set())
    }
}

/// Trigger information carried by each event record: the configuration keys
/// in force plus one fired-chain mask per level. The second-level mask is
/// empty for runs where that level was merged into the final one. Decoded
/// chain names stay empty until a decoding pass fills them in.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct TriggerBlock {
    pub smk: u32,
    pub l1_psk: u32,
    pub hlt_psk: u32,
    pub l1: BitMask,
    pub l2: BitMask,
    pub hlt: BitMask,
    pub decoded_chains: Vec<String>,
}

impl TriggerBlock {
    /// True when no level carries any fired bit — e.g. derived formats
    /// indexed without trigger information.
    pub fn has_no_masks(&self) -> bool {
        self.l1.is_empty() && self.l2.is_empty() && self.hlt.is_empty()
    }
}
