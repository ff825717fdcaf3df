//! Rank-indexed associative store for evicted counter entries.
//!
//! Keys are counter indices below `2^key_bits`. Presence is a bitmap laid out
//! as 72-bit memory words: the low 64 bits of word `key >> 6` hold presence
//! flags for 64 consecutive keys and the remaining 8 bits hold the word's
//! cumulative rank (entries stored in all earlier words). Values live in a
//! dense array of capacity `J`, in ascending key order, so a present key's
//! value sits at its global rank minus one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::{Reader, Writer};

/// Presence flags per memory word.
pub const KEYS_PER_WORD: u32 = 64;
/// Physical width of one presence word (flags plus rank field).
pub const WORD_BITS: u32 = 72;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociativeStore {
    key_bits: u32,
    capacity: usize,
    presence: Vec<u64>,
    /// `prefix[w]` = number of stored keys in words `0..w`.
    prefix: Vec<u32>,
    values: Vec<u64>,
}

impl AssociativeStore {
    pub fn new(key_bits: u32, capacity: usize) -> Result<Self> {
        if key_bits > 32 {
            return Err(Error::InvalidConfig(format!(
                "associative key width {key_bits} exceeds 32 bits"
            )));
        }
        let words = presence_words(key_bits);
        Ok(Self {
            key_bits,
            capacity,
            presence: vec![0; words],
            prefix: vec![0; words],
            values: Vec::new(),
        })
    }

    pub fn key_bits(&self) -> u32 {
        self.key_bits
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.values.len() >= self.capacity
    }

    /// Number of presence words (one 72-bit memory row each).
    pub fn word_count(&self) -> usize {
        self.presence.len()
    }

    fn check_key(&self, key: u64) -> Result<(usize, u32)> {
        if key >> self.key_bits != 0 {
            return Err(Error::OutOfRange {
                index: key,
                len: 1u64 << self.key_bits,
            });
        }
        Ok(((key / KEYS_PER_WORD as u64) as usize, (key % KEYS_PER_WORD as u64) as u32))
    }

    /// Global rank of the key's bit, minus one: the key's value slot if the
    /// key is present, or its insertion point otherwise.
    fn slot(&self, word: usize, bit: u32) -> usize {
        let below = self.presence[word] & ((1u64 << bit) - 1);
        self.prefix[word] as usize + below.count_ones() as usize
    }

    pub fn contains(&self, key: u64) -> Result<bool> {
        let (w, b) = self.check_key(key)?;
        Ok(self.presence[w] >> b & 1 == 1)
    }

    pub fn lookup(&self, key: u64) -> Result<Option<u64>> {
        let (w, b) = self.check_key(key)?;
        if self.presence[w] >> b & 1 == 0 {
            return Ok(None);
        }
        Ok(Some(self.values[self.slot(w, b)]))
    }

    pub fn insert(&mut self, key: u64, value: u64) -> Result<()> {
        let (w, b) = self.check_key(key)?;
        if self.presence[w] >> b & 1 == 1 {
            return Err(Error::DuplicateKey(key));
        }
        if self.is_full() {
            return Err(Error::CapacityExhausted {
                capacity: self.capacity,
            });
        }
        let slot = self.slot(w, b);
        self.values.insert(slot, value);
        self.presence[w] |= 1 << b;
        for p in &mut self.prefix[w + 1..] {
            *p += 1;
        }
        Ok(())
    }

    /// Replaces the value of a present key.
    pub fn update(&mut self, key: u64, value: u64) -> Result<()> {
        let (w, b) = self.check_key(key)?;
        if self.presence[w] >> b & 1 == 0 {
            return Err(Error::AbsentKey(key));
        }
        let slot = self.slot(w, b);
        self.values[slot] = value;
        Ok(())
    }

    /// Counter-path update: like [`update`](Self::update) but rejects a
    /// smaller value.
    pub fn update_monotone(&mut self, key: u64, value: u64) -> Result<()> {
        let (w, b) = self.check_key(key)?;
        if self.presence[w] >> b & 1 == 0 {
            return Err(Error::AbsentKey(key));
        }
        let slot = self.slot(w, b);
        let old = self.values[slot];
        if value < old {
            return Err(Error::NonMonotonic { key, old, new: value });
        }
        self.values[slot] = value;
        Ok(())
    }

    /// Stored `(key, value)` pairs in ascending key order.
    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.presence
            .iter()
            .enumerate()
            .flat_map(|(w, &word)| {
                (0..KEYS_PER_WORD)
                    .filter(move |&b| word >> b & 1 == 1)
                    .map(move |b| w as u64 * KEYS_PER_WORD as u64 + b as u64)
            })
            .zip(self.values.iter().copied())
    }

    /// Checks the bitmap, rank index and value array against each other.
    pub fn check(&self) -> Result<()> {
        let mut acc = 0u32;
        for (w, &word) in self.presence.iter().enumerate() {
            if self.prefix[w] != acc {
                return Err(Error::Inconsistent(format!("rank index stale at word {w}")));
            }
            acc += word.count_ones();
        }
        if acc as usize != self.values.len() || self.values.len() > self.capacity {
            return Err(Error::Inconsistent(
                "presence count disagrees with value array".into(),
            ));
        }
        if self.key_bits < 6 && self.presence[0] >> (1u64 << self.key_bits) != 0 {
            return Err(Error::Inconsistent("presence bit past key space".into()));
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        w.u32(self.key_bits);
        w.u64(self.capacity as u64);
        for &p in &self.presence {
            w.u64(p);
        }
        w.u64(self.values.len() as u64);
        for &v in &self.values {
            w.u64(v);
        }
    }

    pub(crate) fn decode(r: &mut Reader) -> Result<Self> {
        let key_bits = r.u32()?;
        let capacity = r.len_u64()?;
        if key_bits > 32 {
            return Err(Error::Snapshot(format!("associative key width {key_bits}")));
        }
        let words = presence_words(key_bits);
        r.expect_remaining(words * 8)?;
        let mut store = Self::new(key_bits, capacity).map_err(|e| Error::Snapshot(e.to_string()))?;
        let mut acc = 0u32;
        for w in 0..words {
            store.prefix[w] = acc;
            store.presence[w] = r.u64()?;
            acc += store.presence[w].count_ones();
        }
        let n = r.len_u64()?;
        r.expect_remaining(n.saturating_mul(8))?;
        store.values = (0..n).map(|_| r.u64()).collect::<Result<_>>()?;
        store.check().map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(store)
    }
}

/// Presence words needed for a `key_bits`-bit key space.
pub fn presence_words(key_bits: u32) -> usize {
    ((1u64 << key_bits).div_ceil(KEYS_PER_WORD as u64)) as usize
}
