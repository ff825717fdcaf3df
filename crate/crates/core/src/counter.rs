//! The counter-array interface shared by every backend, and the flat
//! fixed-width reference backend.

use serde::{Deserialize, Serialize};

use crate::bits::{low_mask, Bits};
use crate::error::{check_index, Error, Result};

/// W non-negative counters supporting read, add and raise-to.
///
/// No operation ever decreases a stored value.
pub trait CounterArray {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read(&self, i: usize) -> Result<u64>;

    /// Adds `delta` to entry `i` and returns the new value.
    fn add(&mut self, i: usize, delta: u64) -> Result<u64>;

    /// Sets entry `i` to `max(old, v)` and returns the new value.
    fn raise_to(&mut self, i: usize, v: u64) -> Result<u64>;

    /// True if entry `i` has been clamped at the backend's capacity.
    fn is_saturated(&self, _i: usize) -> bool {
        false
    }
}

/// W counters of `width_bits` bits each, saturating at `2^w - 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlatCounterArray {
    width_bits: u32,
    cells: Vec<u64>,
    clamped: Bits,
    saturation_events: u64,
}

impl FlatCounterArray {
    pub fn new(entries: usize, width_bits: u32) -> Result<Self> {
        if !(1..=64).contains(&width_bits) {
            return Err(Error::InvalidConfig(format!(
                "counter width must be in 1..=64 bits, got {width_bits}"
            )));
        }
        if entries == 0 {
            return Err(Error::InvalidConfig("counter array needs at least one entry".into()));
        }
        Ok(Self {
            width_bits,
            cells: vec![0; entries],
            clamped: Bits::zeros(entries),
            saturation_events: 0,
        })
    }

    pub fn width_bits(&self) -> u32 {
        self.width_bits
    }

    pub fn capacity(&self) -> u64 {
        low_mask(self.width_bits)
    }

    pub fn saturation_events(&self) -> u64 {
        self.saturation_events
    }

    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    pub(crate) fn from_parts(
        width_bits: u32,
        cells: Vec<u64>,
        clamped: Bits,
        saturation_events: u64,
    ) -> Result<Self> {
        if !(1..=64).contains(&width_bits) || cells.is_empty() || clamped.len() != cells.len() {
            return Err(Error::Snapshot("inconsistent flat counter layout".into()));
        }
        let cap = low_mask(width_bits);
        if cells.iter().any(|&c| c > cap) {
            return Err(Error::Snapshot("flat counter value exceeds its width".into()));
        }
        Ok(Self {
            width_bits,
            cells,
            clamped,
            saturation_events,
        })
    }

    pub(crate) fn clamped_bits(&self) -> &Bits {
        &self.clamped
    }

    fn store(&mut self, i: usize, wanted: u128) -> u64 {
        let cap = self.capacity();
        if wanted > cap as u128 {
            self.saturation_events += 1;
            self.clamped.set(i);
            self.cells[i] = cap;
        } else {
            self.cells[i] = wanted as u64;
        }
        self.cells[i]
    }
}

impl CounterArray for FlatCounterArray {
    fn len(&self) -> usize {
        self.cells.len()
    }

    fn read(&self, i: usize) -> Result<u64> {
        check_index(i, self.cells.len())?;
        Ok(self.cells[i])
    }

    fn add(&mut self, i: usize, delta: u64) -> Result<u64> {
        check_index(i, self.cells.len())?;
        if delta == 0 {
            return Ok(self.cells[i]);
        }
        let wanted = self.cells[i] as u128 + delta as u128;
        Ok(self.store(i, wanted))
    }

    fn raise_to(&mut self, i: usize, v: u64) -> Result<u64> {
        check_index(i, self.cells.len())?;
        if v <= self.cells[i] {
            return Ok(self.cells[i]);
        }
        Ok(self.store(i, v as u128))
    }

    fn is_saturated(&self, i: usize) -> bool {
        i < self.clamped.len() && self.clamped.get(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    #[test]
    fn fresh_reads_zero() {
        let a = FlatCounterArray::new(16, 32).unwrap();
        for i in 0..16 {
            assert_eq!(a.read(i).unwrap(), 0);
        }
    }

    #[test]
    fn single_write_readback() {
        let mut a = FlatCounterArray::new(16, 32).unwrap();
        assert_eq!(a.add(3, 7).unwrap(), 7);
        assert_eq!(a.read(3).unwrap(), 7);
    }

    #[test]
    fn out_of_range() {
        let mut a = FlatCounterArray::new(4, 8).unwrap();
        assert!(matches!(a.read(4), Err(Error::OutOfRange { .. })));
        assert!(matches!(a.add(4, 1), Err(Error::OutOfRange { .. })));
        assert!(matches!(a.raise_to(9, 1), Err(Error::OutOfRange { .. })));
    }

    #[test]
    fn zero_delta_is_noop() {
        let mut a = FlatCounterArray::new(4, 8).unwrap();
        a.add(1, 5).unwrap();
        assert_eq!(a.add(1, 0).unwrap(), 5);
        assert_eq!(a.saturation_events(), 0);
    }

    #[test]
    fn clamps_at_capacity() {
        let mut a = FlatCounterArray::new(4, 14).unwrap();
        assert_eq!(a.add(0, 1 << 14).unwrap(), (1 << 14) - 1);
        assert_eq!(a.saturation_events(), 1);
        assert!(a.is_saturated(0));
        assert!(!a.is_saturated(1));
    }

    #[test]
    fn raise_to_semantics() {
        let mut a = FlatCounterArray::new(4, 32).unwrap();
        assert_eq!(a.raise_to(2, 0).unwrap(), 0);
        a.add(2, 5).unwrap();
        assert_eq!(a.raise_to(2, 9).unwrap(), 9);
        assert_eq!(a.raise_to(2, 7).unwrap(), 9);
    }

    #[test]
    fn rejects_bad_width() {
        assert!(FlatCounterArray::new(4, 0).is_err());
        assert!(FlatCounterArray::new(4, 65).is_err());
        assert!(FlatCounterArray::new(0, 8).is_err());
    }

    #[test]
    fn random_adds_match_map_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut a = FlatCounterArray::new(256, 64).unwrap();
        let mut oracle: HashMap<usize, u128> = HashMap::new();
        for _ in 0..1000 {
            let i = rng.gen_range(0..256);
            let d = rng.gen_range(0..100_000u64);
            a.add(i, d).unwrap();
            *oracle.entry(i).or_default() += d as u128;
        }
        for (&i, &v) in &oracle {
            assert_eq!(a.read(i).unwrap() as u128, v);
        }
    }

    #[test]
    fn interleaved_matches_oracle_until_saturation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut a = FlatCounterArray::new(8, 16).unwrap();
        let mut oracle = [0u128; 8];
        loop {
            let i = rng.gen_range(0..8);
            let d = rng.gen_range(0..2000u64);
            let got = a.add(i, d).unwrap();
            oracle[i] += d as u128;
            if a.saturation_events() > 0 {
                assert_eq!(got, 0xFFFF);
                break;
            }
            assert_eq!(got as u128, oracle[i]);
            let j = rng.gen_range(0..8);
            assert_eq!(a.read(j).unwrap() as u128, oracle[j]);
        }
    }

    #[test]
    fn raise_add_mix_matches_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = FlatCounterArray::new(32, 64).unwrap();
        let mut oracle = [0u64; 32];
        for _ in 0..5000 {
            let i = rng.gen_range(0..32);
            let v = rng.gen_range(0..1_000_000u64);
            if rng.gen_bool(0.5) {
                a.add(i, v).unwrap();
                oracle[i] += v;
            } else {
                a.raise_to(i, v).unwrap();
                oracle[i] = oracle[i].max(v);
            }
        }
        for (i, &v) in oracle.iter().enumerate() {
            assert_eq!(a.read(i).unwrap(), v);
        }
    }
}
