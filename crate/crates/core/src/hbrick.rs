//! Hardware-friendly rank-indexed counters (HBRICK).
//!
//! Differences from [`crate::brick`]:
//!
//! * the per-level bitmaps of a bucket are concatenated into one unified
//!   bitmap, so the slot of every level is computed from a single read
//!   ([`rank_vector`]);
//! * all slots of an optional level live in one packed word of at most 72
//!   bits, so opening or closing a slot is one shift of that word;
//! * an entry that cannot grow (its next level is full, or it outgrows all
//!   levels) is evicted: its dirty bit is set and its full value moves to a
//!   rank-indexed [`AssociativeStore`] shared by the whole array.
//!
//! Packed words hold slot 0 in the least-significant bits. Inserting at slot
//! `s` moves the region holding slots `s..` towards the most-significant end
//! by `w_l` bits.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assoc::{presence_words, AssociativeStore};
use crate::bits::{low_mask, Bits};
use crate::brick::{level_offsets, levels_needed, validate_levels};
use crate::counter::CounterArray;
use crate::error::{check_index, Error, Result};
use crate::snapshot::{Reader, Writer};

/// Widest packed level word a block RAM row can hold.
pub const MAX_PACKED_BITS: u32 = 72;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbrickConfig {
    /// Sub-counter width per level, `w_1..w_L`.
    pub widths: Vec<u32>,
    /// Slots per level, `k_1 = k, k_2..k_L`.
    pub slots: Vec<usize>,
    /// Buckets `N`; `W = N * k`.
    pub buckets: usize,
    /// Associative store capacity `J`.
    pub assoc_capacity: usize,
    /// Associative key width; `None` means `log2 W`.
    pub key_bits: Option<u32>,
    /// Fixed update latency `T_c` in cycles.
    pub update_latency: u32,
    /// Free an evicted entry's optional-level slots.
    pub reclaim: bool,
}

impl HbrickConfig {
    /// The default three-level profile: 14/8/7-bit levels (29 bits total),
    /// 64 entries per bucket with 8 and 4 packed optional slots, `J = 128`.
    pub fn caida_profile(entries: usize) -> Self {
        Self::profile(3, entries).expect("three-level profile exists")
    }

    /// Level-count profiles used by the memory sweeps. All cover 29 bits or
    /// more; deeper hierarchies trade base width for more optional levels.
    pub fn profile(levels: usize, entries: usize) -> Option<Self> {
        let (widths, slots): (Vec<u32>, Vec<usize>) = match levels {
            1 => (vec![32], vec![64]),
            2 => (vec![16, 13], vec![64, 5]),
            3 => (vec![14, 8, 7], vec![64, 8, 4]),
            4 => (vec![12, 6, 6, 5], vec![64, 12, 8, 4]),
            5 => (vec![10, 6, 5, 4, 4], vec![64, 12, 8, 6, 4]),
            _ => return None,
        };
        Some(Self {
            widths,
            slots,
            buckets: (entries / 64).max(1),
            assoc_capacity: 128,
            key_bits: None,
            update_latency: 4 * levels as u32 + 2,
            reclaim: true,
        })
    }

    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn entries_per_bucket(&self) -> usize {
        self.slots[0]
    }

    pub fn entries(&self) -> usize {
        self.buckets * self.slots[0]
    }

    pub fn total_width(&self) -> u32 {
        self.widths.iter().sum()
    }

    pub fn effective_key_bits(&self) -> u32 {
        self.key_bits
            .unwrap_or_else(|| self.entries().next_power_of_two().trailing_zeros())
    }

    /// Bits in the unified bitmap: one segment per level except the last.
    pub fn bitmap_bits(&self) -> usize {
        self.slots[..self.levels() - 1].iter().sum()
    }

    /// Width of the packed word of optional level `l` (0-based, `l >= 1`).
    pub fn packed_bits(&self, l: usize) -> u32 {
        self.slots[l] as u32 * self.widths[l]
    }

    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.widths, &self.slots)?;
        if self.buckets == 0 || !self.buckets.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "bucket count must be a power of two, got {}",
                self.buckets
            )));
        }
        for l in 1..self.levels() {
            let bits = self.slots[l] as u64 * self.widths[l] as u64;
            if bits > MAX_PACKED_BITS as u64 {
                return Err(Error::InvalidConfig(format!(
                    "level {} packs {} x {} = {bits} bits, over the {MAX_PACKED_BITS}-bit word",
                    l + 1,
                    self.slots[l],
                    self.widths[l]
                )));
            }
        }
        let entries = self.buckets.checked_mul(self.slots[0]).ok_or_else(|| {
            Error::InvalidConfig("bucket count times bucket size overflows".into())
        })?;
        let kb = self.effective_key_bits();
        if kb > 32 || (entries as u64) > (1u64 << kb) {
            return Err(Error::InvalidConfig(format!(
                "associative key width {kb} cannot address {entries} entries"
            )));
        }
        Ok(())
    }
}

/// Per-level slot indices of one entry. Level 1's slot is the entry position
/// itself; a level is present only if every level below it is.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LevelIndexVector {
    slots: Vec<usize>,
}

impl LevelIndexVector {
    /// Number of present levels (at least 1).
    pub fn depth(&self) -> usize {
        self.slots.len()
    }

    /// 0-based slot at 0-based level `l`, if present.
    pub fn get(&self, l: usize) -> Option<usize> {
        self.slots.get(l).copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.slots
    }
}

/// Computes every level's slot for entry `j` from a single unified bitmap.
///
/// `segments[s] = (start, len)` locates segment `s`, which flags which
/// level-`s` slots extend into level `s + 1`.
fn rank_vector_in(bitmap: &Bits, segments: &[(usize, usize)], j: usize) -> LevelIndexVector {
    let mut slots = Vec::with_capacity(segments.len() + 1);
    slots.push(j);
    let mut s = j;
    for &(start, _) in segments {
        if !bitmap.get(start + s) {
            break;
        }
        s = bitmap.count_range(start, start + s + 1) - 1;
        slots.push(s);
    }
    LevelIndexVector { slots }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bucket {
    base: Vec<u64>,
    /// `packed[l - 1]` is the word of optional level `l` (0-based).
    packed: Vec<u128>,
    bitmap: Bits,
    dirty: Bits,
}

/// Read-only view of one bucket's storage.
#[derive(Debug, Clone, Copy)]
pub struct BucketView<'a> {
    pub base: &'a [u64],
    pub packed: &'a [u128],
    pub bitmap: &'a Bits,
    pub dirty: &'a Bits,
}

/// Occupancy and activity counters, see [`HbrickArray::stats`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HbrickStats {
    /// `level_occupancy[l - 1][c]` = buckets with `c` occupied slots at
    /// optional level `l` (0-based).
    pub level_occupancy: Vec<Vec<u64>>,
    pub evictions: u64,
    /// Evictions that found the associative store full.
    pub spilled: u64,
    /// Packed-word shifts (one per slot opened or closed).
    pub packed_shifts: u64,
    pub dirty_entries: u64,
    /// Largest number of bitmap + packed words touched by a single update.
    pub max_words_per_update: u64,
    pub reclaim: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HbrickArray {
    cfg: HbrickConfig,
    offsets: Vec<u32>,
    segments: Vec<(usize, usize)>,
    buckets: Vec<Bucket>,
    assoc: AssociativeStore,
    /// Evicted entries that did not fit in the associative store.
    spill: BTreeMap<u64, u64>,
    evictions: u64,
    packed_shifts: u64,
    max_words_per_update: u64,
}

impl HbrickArray {
    pub fn new(cfg: HbrickConfig) -> Result<Self> {
        cfg.validate()?;
        let mut segments = Vec::with_capacity(cfg.levels() - 1);
        let mut start = 0;
        for &len in &cfg.slots[..cfg.levels() - 1] {
            segments.push((start, len));
            start += len;
        }
        let k = cfg.entries_per_bucket();
        let bucket = Bucket {
            base: vec![0; k],
            packed: vec![0; cfg.levels() - 1],
            bitmap: Bits::zeros(cfg.bitmap_bits()),
            dirty: Bits::zeros(k),
        };
        Ok(Self {
            offsets: level_offsets(&cfg.widths),
            segments,
            buckets: vec![bucket; cfg.buckets],
            assoc: AssociativeStore::new(cfg.effective_key_bits(), cfg.assoc_capacity)?,
            spill: BTreeMap::new(),
            evictions: 0,
            packed_shifts: 0,
            max_words_per_update: 0,
            cfg,
        })
    }

    pub fn config(&self) -> &HbrickConfig {
        &self.cfg
    }

    pub fn assoc(&self) -> &AssociativeStore {
        &self.assoc
    }

    pub fn bucket(&self, b: usize) -> BucketView<'_> {
        let bucket = &self.buckets[b];
        BucketView {
            base: &bucket.base,
            packed: &bucket.packed,
            bitmap: &bucket.bitmap,
            dirty: &bucket.dirty,
        }
    }

    /// Upper bound on bitmap + packed words one update may touch: every
    /// bitmap word and every packed word, each read once and written once.
    pub fn words_per_update_bound(&self) -> u64 {
        2 * (self.cfg.bitmap_bits().div_ceil(64) as u64 + (self.cfg.levels() as u64 - 1))
    }

    fn split(&self, i: usize) -> (usize, usize) {
        let k = self.cfg.entries_per_bucket();
        (i / k, i % k)
    }

    pub fn rank_vector(&self, bucket: usize, j: usize) -> Result<LevelIndexVector> {
        check_index(bucket, self.buckets.len())?;
        check_index(j, self.cfg.entries_per_bucket())?;
        Ok(rank_vector_in(&self.buckets[bucket].bitmap, &self.segments, j))
    }

    fn slot_field(&self, word: u128, l: usize, s: usize) -> u64 {
        let w = self.cfg.widths[l];
        ((word >> (s as u32 * w)) as u64) & low_mask(w)
    }

    fn assemble(&self, bucket: &Bucket, iv: &LevelIndexVector) -> u64 {
        let mut v = bucket.base[iv.slots[0]];
        for (l, &s) in iv.slots.iter().enumerate().skip(1) {
            v |= self.slot_field(bucket.packed[l - 1], l, s) << self.offsets[l];
        }
        v
    }

    fn evicted_value(&self, i: usize) -> Result<u64> {
        if let Some(v) = self.assoc.lookup(i as u64)? {
            return Ok(v);
        }
        self.spill.get(&(i as u64)).copied().ok_or_else(|| {
            Error::Inconsistent(format!("entry {i} is dirty but has no evicted value"))
        })
    }

    /// Writes `new >= current` into entry `i`.
    fn store(&mut self, i: usize, new: u64) -> Result<u64> {
        let (b, j) = self.split(i);
        if self.buckets[b].dirty.get(j) {
            let key = i as u64;
            if self.assoc.contains(key)? {
                self.assoc.update_monotone(key, new)?;
            } else {
                let slot = self.spill.get_mut(&key).ok_or_else(|| {
                    Error::Inconsistent(format!("entry {i} is dirty but has no evicted value"))
                })?;
                *slot = new.max(*slot);
            }
            return Ok(new);
        }

        let levels = self.cfg.levels();
        let bitmap_words = self.buckets[b].bitmap.words().len() as u64;
        let mut touched = bitmap_words;
        let mut iv = rank_vector_in(&self.buckets[b].bitmap, &self.segments, j);
        let have = iv.depth();
        let need = levels_needed(&self.cfg.widths, new);

        if need > have {
            let overflow = need > levels
                || (have..need).any(|l| {
                    let (start, len) = self.segments[l - 1];
                    self.buckets[b].bitmap.count_range(start, start + len) >= self.cfg.slots[l]
                });
            if overflow {
                touched += self.evict(b, j, i, &iv, new)?;
                self.max_words_per_update = self.max_words_per_update.max(touched);
                return Ok(new);
            }
            let bucket = &mut self.buckets[b];
            for l in have..need {
                let (pstart, _) = self.segments[l - 1];
                let parent = iv.slots[l - 1];
                let pos = bucket.bitmap.count_range(pstart, pstart + parent);
                let w = self.cfg.widths[l];
                let word = bucket.packed[l - 1];
                debug_assert_eq!(
                    word >> ((self.cfg.slots[l] as u32 - 1) * w),
                    0,
                    "top slot must be free"
                );
                let cut = pos as u32 * w;
                let low = word & mask128(cut);
                let high = (word >> cut) << (cut + w);
                bucket.packed[l - 1] = low | high;
                self.packed_shifts += 1;
                if l < levels - 1 {
                    let (start, len) = self.segments[l];
                    bucket.bitmap.insert_zero(start, len, pos);
                }
                bucket.bitmap.set(pstart + parent);
                iv.slots.push(pos);
            }
            touched += bitmap_words;
        }

        let bucket = &mut self.buckets[b];
        bucket.base[j] = new & low_mask(self.cfg.widths[0]);
        for l in 1..iv.depth() {
            let s = iv.slots[l];
            let w = self.cfg.widths[l];
            let field = ((new >> self.offsets[l]) & low_mask(w)) as u128;
            let shift = s as u32 * w;
            let word = &mut bucket.packed[l - 1];
            *word = (*word & !(mask128(w) << shift)) | (field << shift);
            debug_assert!(*word >> self.cfg.packed_bits(l) == 0);
        }
        touched += 2 * (iv.depth() as u64 - 1);
        self.max_words_per_update = self.max_words_per_update.max(touched);
        Ok(new)
    }

    /// Moves entry `j` of bucket `b` (array index `i`) out of the bucket.
    /// Returns the extra words touched.
    fn evict(&mut self, b: usize, j: usize, i: usize, iv: &LevelIndexVector, new: u64) -> Result<u64> {
        let key = i as u64;
        if self.assoc.is_full() {
            self.spill.insert(key, new);
        } else {
            self.assoc.insert(key, new)?;
        }
        self.evictions += 1;
        let levels = self.cfg.levels();
        let bucket = &mut self.buckets[b];
        bucket.dirty.set(j);
        if !self.cfg.reclaim {
            return Ok(0);
        }
        let have = iv.depth();
        for l in (1..have).rev() {
            let s = iv.slots[l];
            let w = self.cfg.widths[l];
            let word = bucket.packed[l - 1];
            let cut = s as u32 * w;
            bucket.packed[l - 1] = (word & mask128(cut)) | ((word >> (cut + w)) << cut);
            self.packed_shifts += 1;
            if l < levels - 1 {
                let (start, len) = self.segments[l];
                bucket.bitmap.remove(start, len, s);
            }
        }
        if have > 1 {
            bucket.bitmap.clear(j);
        }
        bucket.base[j] = 0;
        Ok(2 * (have as u64 - 1) + bucket.bitmap.words().len() as u64)
    }

    pub fn stats(&self) -> HbrickStats {
        let levels = self.cfg.levels();
        let mut level_occupancy: Vec<Vec<u64>> =
            (1..levels).map(|l| vec![0; self.cfg.slots[l] + 1]).collect();
        let mut dirty_entries = 0;
        for bucket in &self.buckets {
            for (s, &(start, len)) in self.segments.iter().enumerate() {
                let occ = bucket.bitmap.count_range(start, start + len);
                level_occupancy[s][occ] += 1;
            }
            dirty_entries += bucket.dirty.count_ones() as u64;
        }
        HbrickStats {
            level_occupancy,
            evictions: self.evictions,
            spilled: self.spill.len() as u64,
            packed_shifts: self.packed_shifts,
            dirty_entries,
            max_words_per_update: self.max_words_per_update,
            reclaim: self.cfg.reclaim,
        }
    }

    /// Verifies every structural invariant of every bucket and of the
    /// eviction storage.
    pub fn check(&self) -> Result<()> {
        let levels = self.cfg.levels();
        let k = self.cfg.entries_per_bucket();
        let mut dirty_keys = 0usize;
        for (b, bucket) in self.buckets.iter().enumerate() {
            let bad = |m: &str| Err(Error::Inconsistent(format!("bucket {b}: {m}")));
            if bucket.base.iter().any(|&v| v > low_mask(self.cfg.widths[0])) {
                return bad("base sub-counter wider than level 1");
            }
            let mut live = k;
            for (s, &(start, len)) in self.segments.iter().enumerate() {
                let occ = bucket.bitmap.count_range(start, start + len);
                if occ > self.cfg.slots[s + 1] {
                    return bad("optional level over-subscribed");
                }
                if bucket.bitmap.count_range(start + live.min(len), start + len) != 0 {
                    return bad("extension flag on a free slot");
                }
                live = occ;
            }
            for l in 1..levels {
                let occ = {
                    let (start, len) = self.segments[l - 1];
                    bucket.bitmap.count_range(start, start + len)
                };
                let word = bucket.packed[l - 1];
                if word >> self.cfg.packed_bits(l) != 0 {
                    return bad("packed word wider than its level");
                }
                if word >> (occ as u32 * self.cfg.widths[l]) != 0 {
                    return bad("data in a free packed slot");
                }
            }
            for j in 0..k {
                if bucket.dirty.get(j) {
                    dirty_keys += 1;
                    let key = (b * k + j) as u64;
                    let in_assoc = self.assoc.contains(key)?;
                    if in_assoc == self.spill.contains_key(&key) {
                        return bad("dirty entry must have exactly one evicted value");
                    }
                }
            }
        }
        self.assoc.check()?;
        if dirty_keys != self.assoc.len() + self.spill.len() {
            return Err(Error::Inconsistent("evicted value without a dirty bit".into()));
        }
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        let c = &self.cfg;
        w.u32(c.levels() as u32);
        for (&wd, &s) in c.widths.iter().zip(&c.slots) {
            w.u32(wd);
            w.u64(s as u64);
        }
        w.u64(c.buckets as u64);
        w.u64(c.assoc_capacity as u64);
        w.u32(c.key_bits.unwrap_or(u32::MAX));
        w.u32(c.update_latency);
        w.u8(c.reclaim as u8);
        for bucket in &self.buckets {
            for &v in &bucket.base {
                w.u64(v);
            }
            for &p in &bucket.packed {
                w.u128(p);
            }
            w.bits(&bucket.bitmap);
            w.bits(&bucket.dirty);
        }
        self.assoc.encode(w);
        w.u64(self.spill.len() as u64);
        for (&k, &v) in &self.spill {
            w.u64(k);
            w.u64(v);
        }
        w.u64(self.evictions);
        w.u64(self.packed_shifts);
        w.u64(self.max_words_per_update);
    }

    pub(crate) fn decode(r: &mut Reader, expected_entries: usize) -> Result<Self> {
        let levels = r.u32()? as usize;
        if levels == 0 || levels > 64 {
            return Err(Error::Snapshot(format!("bad level count {levels}")));
        }
        let mut widths = Vec::with_capacity(levels);
        let mut slots = Vec::with_capacity(levels);
        for _ in 0..levels {
            widths.push(r.u32()?);
            slots.push(r.len_u64()?);
        }
        let buckets = r.len_u64()?;
        let assoc_capacity = r.len_u64()?;
        let key_bits = match r.u32()? {
            u32::MAX => None,
            v => Some(v),
        };
        let update_latency = r.u32()?;
        let reclaim = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(Error::Snapshot(format!("bad reclaim flag {v}"))),
        };
        let cfg = HbrickConfig {
            widths,
            slots,
            buckets,
            assoc_capacity,
            key_bits,
            update_latency,
            reclaim,
        };
        cfg.validate().map_err(|e| Error::Snapshot(e.to_string()))?;
        if cfg.entries() != expected_entries {
            return Err(Error::Snapshot("hbrick geometry disagrees with header".into()));
        }
        let k = cfg.entries_per_bucket();
        let per_bucket = k * 8 + (levels - 1) * 16 + cfg.bitmap_bits().div_ceil(64) * 8 + k.div_ceil(64) * 8;
        r.expect_remaining(
            cfg.buckets
                .saturating_mul(per_bucket)
                .saturating_add(presence_words(cfg.effective_key_bits()) * 8),
        )?;
        let mut arr = HbrickArray::new(cfg)?;
        for b in 0..arr.cfg.buckets {
            let bucket = &mut arr.buckets[b];
            for v in bucket.base.iter_mut() {
                *v = r.u64()?;
            }
            for p in bucket.packed.iter_mut() {
                *p = r.u128()?;
            }
            bucket.bitmap = r.bits(arr.cfg.bitmap_bits())?;
            bucket.dirty = r.bits(k)?;
        }
        arr.assoc = AssociativeStore::decode(r)?;
        if arr.assoc.key_bits() != arr.cfg.effective_key_bits()
            || arr.assoc.capacity() != arr.cfg.assoc_capacity
        {
            return Err(Error::Snapshot("associative store geometry mismatch".into()));
        }
        let n = r.len_u64()?;
        r.expect_remaining(n.saturating_mul(16))?;
        for _ in 0..n {
            let key = r.u64()?;
            let v = r.u64()?;
            if key >= expected_entries as u64 || arr.spill.insert(key, v).is_some() {
                return Err(Error::Snapshot("bad spill entry".into()));
            }
        }
        arr.evictions = r.u64()?;
        arr.packed_shifts = r.u64()?;
        arr.max_words_per_update = r.u64()?;
        arr.check().map_err(|e| Error::Snapshot(e.to_string()))?;
        Ok(arr)
    }
}

fn mask128(bits: u32) -> u128 {
    if bits >= 128 {
        !0
    } else {
        (1u128 << bits) - 1
    }
}

impl CounterArray for HbrickArray {
    fn len(&self) -> usize {
        self.cfg.entries()
    }

    fn read(&self, i: usize) -> Result<u64> {
        check_index(i, self.len())?;
        let (b, j) = self.split(i);
        let bucket = &self.buckets[b];
        if bucket.dirty.get(j) {
            return self.evicted_value(i);
        }
        let iv = rank_vector_in(&bucket.bitmap, &self.segments, j);
        Ok(self.assemble(bucket, &iv))
    }

    fn add(&mut self, i: usize, delta: u64) -> Result<u64> {
        let old = self.read(i)?;
        if delta == 0 {
            return Ok(old);
        }
        self.store(i, old.saturating_add(delta))
    }

    fn raise_to(&mut self, i: usize, v: u64) -> Result<u64> {
        let old = self.read(i)?;
        if v <= old {
            return Ok(old);
        }
        self.store(i, v)
    }
}
