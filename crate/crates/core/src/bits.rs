//! Fixed-length bit sequences with rank support.

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut b = Self::zeros(bits.len());
        for (i, &v) in bits.iter().enumerate() {
            b.assign(i, v);
        }
        b
    }

    pub(crate) fn from_words(words: Vec<u64>, len: usize) -> Option<Self> {
        if words.len() != len.div_ceil(64) {
            return None;
        }
        if !len.is_multiple_of(64) {
            if let Some(&last) = words.last() {
                if last >> (len % 64) != 0 {
                    return None;
                }
            }
        }
        Some(Self { words, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / 64] >> (i % 64)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        debug_assert!(i < self.len);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn assign(&mut self, i: usize, v: bool) {
        if v {
            self.set(i)
        } else {
            self.clear(i)
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Number of set bits in `[lo, hi)`.
    pub fn count_range(&self, lo: usize, hi: usize) -> usize {
        debug_assert!(lo <= hi && hi <= self.len);
        if lo == hi {
            return 0;
        }
        let (lw, hw) = (lo / 64, (hi - 1) / 64);
        let lo_mask = !0u64 << (lo % 64);
        let hi_mask = !0u64 >> (63 - (hi - 1) % 64);
        if lw == hw {
            return (self.words[lw] & lo_mask & hi_mask).count_ones() as usize;
        }
        let mut n = (self.words[lw] & lo_mask).count_ones() as usize;
        for w in &self.words[lw + 1..hw] {
            n += w.count_ones() as usize;
        }
        n + (self.words[hw] & hi_mask).count_ones() as usize
    }

    /// Opens a zero at `pos` inside the segment `[start, start + seg_len)`,
    /// moving the segment's bits at positions `>= pos` up by one. The bit that
    /// falls off the top of the segment must be zero.
    pub(crate) fn insert_zero(&mut self, start: usize, seg_len: usize, pos: usize) {
        debug_assert!(pos < seg_len);
        debug_assert!(!self.get(start + seg_len - 1), "segment overflow on insert");
        for p in (pos + 1..seg_len).rev() {
            let v = self.get(start + p - 1);
            self.assign(start + p, v);
        }
        self.clear(start + pos);
    }

    /// Removes the bit at `pos` inside the segment, moving higher bits down and
    /// zero-filling the top.
    pub(crate) fn remove(&mut self, start: usize, seg_len: usize, pos: usize) {
        debug_assert!(pos < seg_len);
        for p in pos..seg_len - 1 {
            let v = self.get(start + p + 1);
            self.assign(start + p, v);
        }
        self.clear(start + seg_len - 1);
    }
}

/// Inclusive rank: the number of ones in `bits[0..=p]`.
pub fn rank(bits: &Bits, p: usize) -> Result<usize> {
    check_index(p, bits.len())?;
    Ok(bits.count_range(0, p + 1))
}

/// Minimum number of bits needed to represent `v` (0 for 0).
#[inline]
pub fn bit_length(v: u64) -> u32 {
    64 - v.leading_zeros()
}

#[inline]
pub fn low_mask(bits: u32) -> u64 {
    if bits >= 64 {
        !0
    } else {
        (1u64 << bits) - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_of_empty_bitmap_is_zero() {
        let b = Bits::zeros(70);
        for p in 0..70 {
            assert_eq!(rank(&b, p).unwrap(), 0);
        }
    }

    #[test]
    fn rank_direct_count() {
        let b = Bits::from_bools(&[true, true, false, true]);
        assert_eq!(rank(&b, 3).unwrap(), 3);
        assert_eq!(rank(&b, 2).unwrap(), 2);
        assert_eq!(rank(&b, 0).unwrap(), 1);
    }

    #[test]
    fn rank_out_of_range() {
        let b = Bits::zeros(4);
        assert!(rank(&b, 4).is_err());
    }

    /// A first-level bitmap where entry 3's flag is the second set bit: its
    /// rank is 2, so its extension is the second next-level slot (index 1).
    #[test]
    fn second_set_flag_has_rank_two() {
        let b = Bits::from_bools(&[false, true, false, true, false, false, true, false]);
        assert_eq!(rank(&b, 3).unwrap(), 2);
    }

    #[test]
    fn bit_lengths() {
        assert_eq!(bit_length(0), 0);
        assert_eq!(bit_length(1), 1);
        assert_eq!(bit_length(1 << 28), 29);
        assert_eq!(bit_length(u64::MAX), 64);
        assert_eq!(low_mask(0), 0);
        assert_eq!(low_mask(3), 7);
        assert_eq!(low_mask(64), u64::MAX);
    }

    #[test]
    fn from_words_rejects_stray_bits() {
        assert!(Bits::from_words(vec![1 << 5], 5).is_none());
        assert!(Bits::from_words(vec![1 << 4], 5).is_some());
        assert!(Bits::from_words(vec![0, 0], 64).is_none());
    }

    proptest! {
        #[test]
        fn count_range_matches_naive(bits in proptest::collection::vec(any::<bool>(), 1..300), a in 0usize..300, b in 0usize..300) {
            let n = bits.len();
            let (lo, hi) = { let (x, y) = (a % (n + 1), b % (n + 1)); if x <= y { (x, y) } else { (y, x) } };
            let bm = Bits::from_bools(&bits);
            let naive = bits[lo..hi].iter().filter(|&&v| v).count();
            prop_assert_eq!(bm.count_range(lo, hi), naive);
        }

        #[test]
        fn insert_then_remove_is_identity(mut bits in proptest::collection::vec(any::<bool>(), 2..100), start_frac in 0.0f64..1.0, pos_frac in 0.0f64..1.0) {
            let n = bits.len();
            let start = ((n - 1) as f64 * start_frac) as usize;
            let seg = n - start;
            let pos = ((seg - 1) as f64 * pos_frac) as usize;
            bits[n - 1] = false;
            let original = Bits::from_bools(&bits);
            let mut b = original.clone();
            b.insert_zero(start, seg, pos);
            prop_assert!(!b.get(start + pos));
            for p in 0..pos {
                prop_assert_eq!(b.get(start + p), original.get(start + p));
            }
            for p in pos + 1..seg {
                prop_assert_eq!(b.get(start + p), original.get(start + p - 1));
            }
            b.remove(start, seg, pos);
            prop_assert_eq!(b, original);
        }
    }
}
