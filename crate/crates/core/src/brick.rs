//! Bucketized rank-indexed counters (BRICK), the variable-width baseline.
//!
//! Each bucket holds `k` logical counters. Level 1 has one `w_1`-bit
//! sub-counter per entry; level `l > 1` has only `k_l` sub-counters of `w_l`
//! bits, shared on demand. Bitmap `I_l` has one bit per level-`l` slot telling
//! whether that slot extends into level `l + 1`, and the inclusive rank of that
//! bit is the (1-based) slot it extends into. A value is the bit-concatenation
//! of its sub-counters, lowest level in the least-significant bits.
//!
//! Allocating a slot in the middle of a level moves every occupied slot above
//! it one position up, element by element. When a level has no free slot the
//! whole bucket is copied into one of `J` spare full-width buckets and all
//! further traffic for the bucket goes there.

use serde::{Deserialize, Serialize};

use crate::bits::{low_mask, Bits};
use crate::counter::CounterArray;
use crate::error::{check_index, Error, Result};
use crate::snapshot::{Reader, Writer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickConfig {
    /// Sub-counter width per level, `w_1..w_L`.
    pub widths: Vec<u32>,
    /// Slots per level, `k_1 = k, k_2..k_L`.
    pub slots: Vec<usize>,
    /// Number of buckets `N`; `W = N * k`.
    pub buckets: usize,
    /// Spare full-width buckets `J`.
    pub spares: usize,
}

impl BrickConfig {
    /// Three levels of 14/8/7 bits (29 total), 64 entries per bucket with 8
    /// and 4 optional slots, and 100 spares.
    pub fn caida_profile(entries: usize) -> Self {
        Self {
            widths: vec![14, 8, 7],
            slots: vec![64, 8, 4],
            buckets: (entries / 64).max(1),
            spares: 100,
        }
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

    pub fn validate(&self) -> Result<()> {
        validate_levels(&self.widths, &self.slots)?;
        if self.buckets == 0 {
            return Err(Error::InvalidConfig("need at least one bucket".into()));
        }
        Ok(())
    }

    /// Bit offset of level `l` (0-based) within a value.
    pub(crate) fn offsets(&self) -> Vec<u32> {
        level_offsets(&self.widths)
    }
}

pub(crate) fn validate_levels(widths: &[u32], slots: &[usize]) -> Result<()> {
    if widths.is_empty() || widths.len() != slots.len() {
        return Err(Error::InvalidConfig(format!(
            "need one width and one slot count per level (got {} widths, {} slot counts)",
            widths.len(),
            slots.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidConfig("level widths must be at least 1 bit".into()));
    }
    if widths.iter().map(|&w| w as u64).sum::<u64>() > 64 {
        return Err(Error::InvalidConfig("level widths sum past 64 bits".into()));
    }
    let k = slots[0];
    if k == 0 || !k.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "entries per bucket must be a power of two, got {k}"
        )));
    }
    if slots.windows(2).any(|p| p[1] > p[0]) || slots.contains(&0) {
        return Err(Error::InvalidConfig(
            "slot counts must be positive and non-increasing across levels".into(),
        ));
    }
    Ok(())
}

pub(crate) fn level_offsets(widths: &[u32]) -> Vec<u32> {
    widths
        .iter()
        .scan(0u32, |acc, &w| {
            let off = *acc;
            *acc += w;
            Some(off)
        })
        .collect()
}

/// Levels needed to hold `v`: the smallest `n` with `v < 2^(w_1 + .. + w_n)`,
/// or `L + 1` when even all levels are too narrow.
pub(crate) fn levels_needed(widths: &[u32], v: u64) -> usize {
    let need = crate::bits::bit_length(v);
    let mut acc = 0u32;
    for (l, &w) in widths.iter().enumerate() {
        acc += w;
        if need <= acc {
            return l + 1;
        }
    }
    widths.len() + 1
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Bucket {
    /// `levels[l]` holds the `k_{l+1}` sub-counters of level `l + 1`.
    levels: Vec<Vec<u64>>,
    /// `bitmaps[l]` is `I_{l+1}`; one bit per level-`(l + 1)` slot.
    bitmaps: Vec<Bits>,
}

impl Bucket {
    fn new(cfg: &BrickConfig) -> Self {
        let l = cfg.levels();
        Self {
            levels: cfg.slots.iter().map(|&s| vec![0; s]).collect(),
            bitmaps: cfg.slots[..l - 1].iter().map(|&s| Bits::zeros(s)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BrickStats {
    pub migrations: u64,
    /// Sub-counters moved one slot up to make room for an insertion.
    pub element_shifts: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrickArray {
    cfg: BrickConfig,
    offsets: Vec<u32>,
    buckets: Vec<Bucket>,
    spares: Vec<Vec<u64>>,
    /// Bucket -> spare index, for migrated buckets.
    migrated: Vec<Option<u32>>,
    stats: BrickStats,
}

impl BrickArray {
    pub fn new(cfg: BrickConfig) -> Result<Self> {
        cfg.validate()?;
        let buckets = (0..cfg.buckets).map(|_| Bucket::new(&cfg)).collect();
        Ok(Self {
            offsets: cfg.offsets(),
            migrated: vec![None; cfg.buckets],
            buckets,
            spares: Vec::new(),
            cfg,
            stats: BrickStats::default(),
        })
    }

    pub fn config(&self) -> &BrickConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &BrickStats {
        &self.stats
    }

    pub fn spares_in_use(&self) -> usize {
        self.spares.len()
    }

    pub fn is_migrated(&self, bucket: usize) -> bool {
        self.migrated.get(bucket).is_some_and(|m| m.is_some())
    }

    /// Bitmaps `I_1..I_{L-1}` of `bucket`.
    pub fn bucket_bitmaps(&self, bucket: usize) -> &[Bits] {
        &self.buckets[bucket].bitmaps
    }

    /// Follows the rank chain from entry `j` of `bucket`: element `l` is the
    /// entry's 0-based slot at level `l + 1`. Each step reads one bitmap.
    pub fn index_path(&self, bucket: usize, j: usize) -> Vec<usize> {
        recursive_path(&self.buckets[bucket].bitmaps, j)
    }

    fn split(&self, i: usize) -> (usize, usize) {
        let k = self.cfg.entries_per_bucket();
        (i / k, i % k)
    }

    fn assemble(&self, bucket: &Bucket, path: &[usize]) -> u64 {
        path.iter()
            .enumerate()
            .map(|(l, &s)| bucket.levels[l][s] << self.offsets[l])
            .fold(0, |acc, v| acc | v)
    }

    fn value_in_bucket(&self, b: usize, j: usize) -> u64 {
        let bucket = &self.buckets[b];
        let path = recursive_path(&bucket.bitmaps, j);
        self.assemble(bucket, &path)
    }

    /// Writes `new >= current` into entry `i`, growing or migrating as needed.
    fn store(&mut self, i: usize, new: u64) -> Result<u64> {
        let (b, j) = self.split(i);
        if let Some(s) = self.migrated[b] {
            self.spares[s as usize][j] = new;
            return Ok(new);
        }
        let levels = self.cfg.levels();
        let need = levels_needed(&self.cfg.widths, new);
        let mut path = recursive_path(&self.buckets[b].bitmaps, j);
        let have = path.len();

        let fits = need <= levels
            && (have..need).all(|l| self.buckets[b].bitmaps[l - 1].count_ones() < self.cfg.slots[l]);
        if !fits {
            self.migrate(b)?;
            let s = self.migrated[b].expect("just migrated") as usize;
            self.spares[s][j] = new;
            return Ok(new);
        }

        let bucket = &mut self.buckets[b];
        for l in have..need {
            let parent = path[l - 1];
            let occupied = bucket.bitmaps[l - 1].count_ones();
            let pos = bucket.bitmaps[l - 1].count_range(0, parent);
            // Element-wise shift of the occupied region above `pos`.
            for s in (pos..occupied).rev() {
                bucket.levels[l][s + 1] = bucket.levels[l][s];
            }
            self.stats.element_shifts += (occupied - pos) as u64;
            bucket.levels[l][pos] = 0;
            if l < levels - 1 {
                let len = bucket.bitmaps[l].len();
                bucket.bitmaps[l].insert_zero(0, len, pos);
            }
            bucket.bitmaps[l - 1].set(parent);
            path.push(pos);
        }
        for (l, &s) in path.iter().enumerate() {
            bucket.levels[l][s] = (new >> self.offsets[l]) & low_mask(self.cfg.widths[l]);
        }
        Ok(new)
    }

    fn migrate(&mut self, b: usize) -> Result<()> {
        if self.spares.len() >= self.cfg.spares {
            return Err(Error::SpareExhausted {
                spares: self.cfg.spares,
            });
        }
        let k = self.cfg.entries_per_bucket();
        let copy: Vec<u64> = (0..k).map(|j| self.value_in_bucket(b, j)).collect();
        self.migrated[b] = Some(self.spares.len() as u32);
        self.spares.push(copy);
        self.stats.migrations += 1;
        Ok(())
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        let cfg = &self.cfg;
        w.u32(cfg.levels() as u32);
        for (&wd, &s) in cfg.widths.iter().zip(&cfg.slots) {
            w.u32(wd);
            w.u64(s as u64);
        }
        w.u64(cfg.buckets as u64);
        w.u64(cfg.spares as u64);
        for bucket in &self.buckets {
            for level in &bucket.levels {
                for &v in level {
                    w.u64(v);
                }
            }
            for bm in &bucket.bitmaps {
                w.bits(bm);
            }
        }
        w.u64(self.spares.len() as u64);
        for spare in &self.spares {
            for &v in spare {
                w.u64(v);
            }
        }
        for m in &self.migrated {
            w.u32(m.map_or(u32::MAX, |s| s));
        }
        w.u64(self.stats.migrations);
        w.u64(self.stats.element_shifts);
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
        let cfg = BrickConfig {
            widths,
            slots,
            buckets: r.len_u64()?,
            spares: r.len_u64()?,
        };
        cfg.validate().map_err(|e| Error::Snapshot(e.to_string()))?;
        if cfg.buckets.checked_mul(cfg.slots[0]) != Some(expected_entries) {
            return Err(Error::Snapshot("brick geometry disagrees with header".into()));
        }
        let per_bucket: usize = cfg.slots.iter().sum::<usize>() * 8;
        r.expect_remaining(cfg.buckets.saturating_mul(per_bucket))?;
        let mut arr = BrickArray::new(cfg)?;
        for b in 0..arr.cfg.buckets {
            let bucket = &mut arr.buckets[b];
            for (l, level) in bucket.levels.iter_mut().enumerate() {
                for v in level.iter_mut() {
                    *v = r.u64()?;
                    if *v > low_mask(arr.cfg.widths[l]) {
                        return Err(Error::Snapshot("sub-counter wider than its level".into()));
                    }
                }
            }
            for l in 0..bucket.bitmaps.len() {
                bucket.bitmaps[l] = r.bits(arr.cfg.slots[l])?;
            }
            check_bucket(&arr.cfg, bucket).map_err(Error::Snapshot)?;
        }
        let n_spares = r.len_u64()?;
        if n_spares > arr.cfg.spares {
            return Err(Error::Snapshot("more spares in use than configured".into()));
        }
        let k = arr.cfg.entries_per_bucket();
        r.expect_remaining(n_spares.saturating_mul(k * 8))?;
        for _ in 0..n_spares {
            let mut spare = Vec::with_capacity(k);
            for _ in 0..k {
                spare.push(r.u64()?);
            }
            arr.spares.push(spare);
        }
        let mut used = vec![false; n_spares];
        for b in 0..arr.cfg.buckets {
            let m = r.u32()?;
            if m != u32::MAX {
                let s = m as usize;
                if s >= n_spares || std::mem::replace(&mut used[s], true) {
                    return Err(Error::Snapshot("bad migration map".into()));
                }
                arr.migrated[b] = Some(m);
            }
        }
        if used.iter().any(|&u| !u) {
            return Err(Error::Snapshot("orphan spare bucket".into()));
        }
        arr.stats.migrations = r.u64()?;
        arr.stats.element_shifts = r.u64()?;
        Ok(arr)
    }
}

fn recursive_path(bitmaps: &[Bits], j: usize) -> Vec<usize> {
    let mut path = vec![j];
    let mut s = j;
    for bm in bitmaps {
        if !bm.get(s) {
            break;
        }
        s = bm.count_range(0, s + 1) - 1;
        path.push(s);
    }
    path
}

/// Slot-conservation check for a non-migrated bucket.
fn check_bucket(cfg: &BrickConfig, bucket: &Bucket) -> std::result::Result<(), String> {
    for l in 1..cfg.levels() {
        let occupied = bucket.bitmaps[l - 1].count_ones();
        if occupied > cfg.slots[l] {
            return Err(format!("level {} over-subscribed", l + 1));
        }
        if bucket.levels[l][occupied..].iter().any(|&v| v != 0) {
            return Err(format!("level {} has data in a free slot", l + 1));
        }
        if l < cfg.levels() - 1 && bucket.bitmaps[l].count_range(occupied, cfg.slots[l]) != 0 {
            return Err(format!("bitmap {} flags a free slot", l + 1));
        }
    }
    Ok(())
}

impl CounterArray for BrickArray {
    fn len(&self) -> usize {
        self.cfg.entries()
    }

    fn read(&self, i: usize) -> Result<u64> {
        check_index(i, self.len())?;
        let (b, j) = self.split(i);
        Ok(match self.migrated[b] {
            Some(s) => self.spares[s as usize][j],
            None => self.value_in_bucket(b, j),
        })
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
