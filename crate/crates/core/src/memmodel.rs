//! Block-RAM accounting for flat, BRICK and HBRICK counter arrays.
//!
//! One block is a 36Kb dual-port RAM configurable as 512x72, 1Kx36, 2Kx18,
//! 4Kx9, 8Kx4, 16Kx2 or 32Kx1. A logical `entries x width` array is built
//! from columns of any of these shapes, each column stacked as deep as the
//! array needs.

use serde::{Deserialize, Serialize};

use crate::assoc::{presence_words, WORD_BITS};
use crate::brick::BrickConfig;
use crate::error::{Error, Result};
use crate::hbrick::HbrickConfig;
use crate::sketch::BackendKind;

/// Bits in one block.
pub const BRAM_BITS: u64 = 36 * 1024;

/// `(depth, width)` of every block configuration.
pub const ASPECTS: [(u64, u32); 7] = [
    (512, 72),
    (1024, 36),
    (2048, 18),
    (4096, 9),
    (8192, 4),
    (16384, 2),
    (32768, 1),
];

/// Fewest blocks that hold an `entries x width_bits` array.
///
/// Columns of different aspect ratios may be mixed; a column of shape
/// `depth x w` costs `ceil(entries / depth)` blocks and supplies `w` bits.
pub fn bram_count(width_bits: u32, entries: u64) -> u64 {
    if width_bits == 0 || entries == 0 {
        return 0;
    }
    let width = width_bits as usize;
    let cost: Vec<(usize, u64)> = ASPECTS
        .iter()
        .map(|&(d, w)| (w as usize, entries.div_ceil(d)))
        .collect();
    // best[b] = cheapest way to supply at least b bits.
    let mut best = vec![0u64; width + 1];
    for b in 1..=width {
        best[b] = cost
            .iter()
            .map(|&(w, c)| c + best[b.saturating_sub(w)])
            .min()
            .unwrap();
    }
    best[width]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    /// Word width of the logical array.
    pub width_bits: u32,
    /// Words per instance.
    pub entries: u64,
    /// Instances (one per sketch array).
    pub copies: u64,
    pub bits: u64,
    pub brams: u64,
    /// Whether the bits count as counter storage rather than overflow
    /// provisioning.
    pub counter_storage: bool,
}

impl Component {
    fn new(name: &str, width_bits: u32, entries: u64, copies: u64, counter_storage: bool) -> Self {
        Self {
            name: name.to_string(),
            width_bits,
            entries,
            copies,
            bits: copies * width_bits as u64 * entries,
            brams: copies * bram_count(width_bits, entries),
            counter_storage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub backend: BackendKind,
    pub label: String,
    pub depth: usize,
    pub width: usize,
    pub components: Vec<Component>,
    pub total_bits: u64,
    pub total_brams: u64,
    /// Bits of counter storage, excluding overflow provisioning (BRICK spare
    /// buckets, the HBRICK associative store).
    pub counter_bits: u64,
    /// Bits of overflow provisioning.
    pub overflow_bits: u64,
    /// Entry storage of the overflow provisioning, without index structures.
    pub overflow_entry_bits: u64,
    /// Width of the flat counters used as the comparison baseline.
    pub baseline_width: u32,
    /// `total_brams / flat baseline brams` when a baseline was supplied.
    pub brams_vs_flat: Option<f64>,
}

impl MemoryReport {
    fn assemble(
        backend: BackendKind,
        label: String,
        depth: usize,
        width: usize,
        components: Vec<Component>,
        overflow_entry_bits: u64,
        baseline_width: u32,
    ) -> Self {
        let total_bits = components.iter().map(|c| c.bits).sum();
        let total_brams = components.iter().map(|c| c.brams).sum();
        let counter_bits = components
            .iter()
            .filter(|c| c.counter_storage)
            .map(|c| c.bits)
            .sum();
        Self {
            backend,
            label,
            depth,
            width,
            components,
            total_bits,
            total_brams,
            counter_bits,
            overflow_bits: total_bits - counter_bits,
            overflow_entry_bits,
            baseline_width,
            brams_vs_flat: None,
        }
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Sum over components whose name starts with `prefix`.
    pub fn bits_of(&self, prefix: &str) -> u64 {
        self.components
            .iter()
            .filter(|c| c.name.starts_with(prefix))
            .map(|c| c.bits)
            .sum()
    }

    pub fn compare_to(mut self, flat: &MemoryReport) -> Self {
        self.brams_vs_flat = Some(self.total_brams as f64 / flat.total_brams as f64);
        self
    }
}

fn check_geometry(depth: usize, width: usize) -> Result<()> {
    if depth == 0 || width == 0 || !width.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "memory accounting needs D >= 1 and W a power of two, got D={depth} W={width}"
        )));
    }
    Ok(())
}

pub fn flat_report(depth: usize, width: usize, width_bits: u32) -> Result<MemoryReport> {
    check_geometry(depth, width)?;
    if !(1..=64).contains(&width_bits) {
        return Err(Error::InvalidConfig(format!("flat counter width {width_bits}")));
    }
    let d = depth as u64;
    let comps = vec![Component::new("counters", width_bits, width as u64, d, true)];
    Ok(MemoryReport::assemble(
        BackendKind::Flat,
        format!("flat-{width_bits}"),
        depth,
        width,
        comps,
        0,
        width_bits,
    ))
}

/// BRICK accounting. Spare buckets hold `k` entries of `spare_width` bits.
pub fn brick_report(depth: usize, cfg: &BrickConfig, spare_width: u32) -> Result<MemoryReport> {
    cfg.validate()?;
    let width = cfg.entries();
    check_geometry(depth, width)?;
    let d = depth as u64;
    let n = cfg.buckets as u64;
    let k = cfg.entries_per_bucket() as u64;
    let mut comps = vec![Component::new("base", cfg.widths[0], width as u64, d, true)];
    for l in 1..cfg.levels() {
        comps.push(Component::new(
            &format!("level{}", l + 1),
            cfg.widths[l],
            n * cfg.slots[l] as u64,
            d,
            true,
        ));
    }
    for l in 0..cfg.levels() - 1 {
        comps.push(Component::new(
            &format!("bitmap{}", l + 1),
            cfg.slots[l] as u32,
            n,
            d,
            true,
        ));
    }
    let spares = Component::new("spares", spare_width, cfg.spares as u64 * k, d, false);
    let entry_bits = spares.bits;
    comps.push(spares);
    Ok(MemoryReport::assemble(
        BackendKind::Brick,
        format!("brick-L{}", cfg.levels()),
        depth,
        width,
        comps,
        entry_bits,
        spare_width,
    ))
}

/// HBRICK accounting. Associative-store values are `value_width` bits wide.
///
/// A single-level profile has no optional levels and nothing to evict, so it
/// is accounted as its base array alone.
pub fn hbrick_report(depth: usize, cfg: &HbrickConfig, value_width: u32) -> Result<MemoryReport> {
    cfg.validate()?;
    let width = cfg.entries();
    check_geometry(depth, width)?;
    let d = depth as u64;
    let n = cfg.buckets as u64;
    let k = cfg.entries_per_bucket() as u32;
    let mut comps = vec![Component::new("base", cfg.widths[0], width as u64, d, true)];
    let mut entry_bits = 0;
    if cfg.levels() > 1 {
        for l in 1..cfg.levels() {
            comps.push(Component::new(
                &format!("packed{}", l + 1),
                cfg.packed_bits(l),
                n,
                d,
                true,
            ));
        }
        comps.push(Component::new("bitmap", cfg.bitmap_bits() as u32, n, d, true));
        comps.push(Component::new("dirty", k, n, d, true));
        let words = presence_words(cfg.effective_key_bits()) as u64;
        comps.push(Component::new("assoc-presence", WORD_BITS, words, d, false));
        let values = Component::new("assoc-values", value_width, cfg.assoc_capacity as u64, d, false);
        entry_bits = values.bits;
        comps.push(values);
    }
    Ok(MemoryReport::assemble(
        BackendKind::Hbrick,
        format!("hbrick-L{}", cfg.levels()),
        depth,
        width,
        comps,
        entry_bits,
        value_width,
    ))
}

/// Reports for the flat baseline, the default BRICK profile and HBRICK
/// profiles with each requested level count, all at `D x W`.
pub fn sweep(depth: usize, width: usize, baseline_width: u32, levels: &[usize]) -> Result<Vec<MemoryReport>> {
    let flat = flat_report(depth, width, baseline_width)?;
    let brick_cfg = BrickConfig::caida_profile(width);
    let mut out = vec![brick_report(depth, &brick_cfg, baseline_width)?.compare_to(&flat)];
    for &l in levels {
        let cfg = HbrickConfig::profile(l, width)
            .ok_or_else(|| Error::InvalidConfig(format!("no HBRICK profile with {l} levels")))?;
        out.push(hbrick_report(depth, &cfg, baseline_width)?.compare_to(&flat));
    }
    let flat = flat.clone().compare_to(&flat);
    out.insert(0, flat);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates every combination of column counts that covers the width.
    fn brute_force(width_bits: u32, entries: u64) -> u64 {
        fn go(i: usize, remaining: i64, entries: u64) -> u64 {
            if remaining <= 0 {
                return 0;
            }
            if i == ASPECTS.len() {
                return u64::MAX;
            }
            let (d, w) = ASPECTS[i];
            let per = entries.div_ceil(d);
            let max_cols = (remaining as u64).div_ceil(w as u64);
            (0..=max_cols)
                .map(|c| {
                    let rest = go(i + 1, remaining - (c * w as u64) as i64, entries);
                    rest.saturating_add(c * per)
                })
                .min()
                .unwrap()
        }
        go(0, width_bits as i64, entries)
    }

    #[test]
    fn reference_and_trivial_examples() {
        assert_eq!(bram_count(72, 512), 1);
        assert_eq!(bram_count(1, 1), 1);
        assert_eq!(bram_count(32, 1 << 15), 29);
        assert_eq!(brute_force(32, 1 << 15), 29);
    }

    #[test]
    fn matches_brute_force_on_grid() {
        for w in [1, 2, 3, 5, 9, 13, 14, 17, 29, 32, 40, 64, 72, 73] {
            for e in [1, 100, 512, 513, 1000, 4096, 5000, 32768, 40000] {
                assert_eq!(bram_count(w, e), brute_force(w, e), "w={w} e={e}");
            }
        }
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(w in 1u32..80, e in 1u64..70_000) {
            let b = bram_count(w, e);
            prop_assert!(bram_count(w + 1, e) >= b);
            prop_assert!(bram_count(w, e + 1) >= b);
            prop_assert!(b >= (w as u64 * e).div_ceil(BRAM_BITS));
        }
    }

    #[test]
    fn totals_are_sums() {
        for r in sweep(4, 1 << 15, 32, &[2, 3, 4, 5]).unwrap() {
            assert_eq!(r.total_bits, r.components.iter().map(|c| c.bits).sum::<u64>());
            assert_eq!(r.total_brams, r.components.iter().map(|c| c.brams).sum::<u64>());
            assert!(r.total_brams >= r.total_bits.div_ceil(BRAM_BITS));
        }
    }

    #[test]
    fn flat_is_depth_times_array() {
        let r = flat_report(4, 1 << 15, 32).unwrap();
        assert_eq!(r.total_brams, 4 * 29);
        assert_eq!(r.total_bits, (4 * 32) << 15);
    }

    #[test]
    fn hbrick_beats_flat_in_brams() {
        let flat = flat_report(4, 1 << 15, 32).unwrap();
        let h = hbrick_report(4, &HbrickConfig::caida_profile(1 << 15), 32).unwrap();
        assert!(h.total_brams < flat.total_brams, "{} vs {}", h.total_brams, flat.total_brams);
    }

    #[test]
    fn raw_counter_bit_ordering() {
        let w = 1 << 15;
        let flat = flat_report(4, w, 32).unwrap();
        let b = brick_report(4, &BrickConfig::caida_profile(w), 32).unwrap();
        let h = hbrick_report(4, &HbrickConfig::caida_profile(w), 32).unwrap();
        assert!(b.counter_bits < h.counter_bits);
        assert!(h.counter_bits < flat.counter_bits);
    }

    #[test]
    fn assoc_entries_are_a_fraction_of_spares() {
        let w = 1 << 15;
        let b = brick_report(4, &BrickConfig::caida_profile(w), 32).unwrap();
        let h = hbrick_report(4, &HbrickConfig::caida_profile(w), 32).unwrap();
        let k = 64.0;
        let ratio = b.overflow_entry_bits as f64 / h.overflow_entry_bits as f64;
        assert!(ratio >= k / 4.0, "{ratio}");
        // Including the presence words the saving is much smaller.
        assert!((b.overflow_bits as f64 / h.overflow_bits as f64) < ratio);
    }

    #[test]
    fn single_level_is_flat() {
        let w = 1 << 12;
        let h = hbrick_report(3, &HbrickConfig::profile(1, w).unwrap(), 32).unwrap();
        let f = flat_report(3, w, 32).unwrap();
        assert_eq!(h.total_bits, f.total_bits);
        assert_eq!(h.total_brams, f.total_brams);
    }

    #[test]
    fn storage_shrinks_with_more_levels() {
        let bits: Vec<u64> = (2..=5)
            .map(|l| {
                let r = hbrick_report(4, &HbrickConfig::profile(l, 1 << 15).unwrap(), 32).unwrap();
                r.bits_of("base") + r.bits_of("packed") + r.bits_of("bitmap")
            })
            .collect();
        assert!(bits.windows(2).all(|p| p[1] < p[0]), "{bits:?}");
    }

    #[test]
    fn bad_geometry_rejected() {
        assert!(flat_report(0, 1024, 32).is_err());
        assert!(flat_report(4, 1000, 32).is_err());
        assert!(flat_report(4, 1024, 0).is_err());
        assert!(sweep(4, 1 << 15, 32, &[6]).is_err());
    }
}
