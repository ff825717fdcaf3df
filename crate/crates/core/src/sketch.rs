//! Count-min sketch over any [`CounterArray`] backend.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::brick::{BrickArray, BrickConfig};
use crate::counter::{CounterArray, FlatCounterArray};
use crate::error::{Error, Result};
use crate::flowkey::{FlowKey, HashFamily, ENCODED_LEN};
use crate::hbrick::{HbrickArray, HbrickConfig};
use crate::snapshot::{Reader, Writer};
use crate::traces::PacketRecord;

const SNAPSHOT_MAGIC: &[u8; 8] = b"HBCMSNAP";
pub const SNAPSHOT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateStrategy {
    Plain,
    Conservative,
}

impl fmt::Display for UpdateStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UpdateStrategy::Plain => "plain",
            UpdateStrategy::Conservative => "conservative",
        })
    }
}

impl FromStr for UpdateStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "plain" => Ok(UpdateStrategy::Plain),
            "conservative" => Ok(UpdateStrategy::Conservative),
            _ => Err(format!("unknown update strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Flat,
    Brick,
    Hbrick,
}

impl BackendKind {
    fn tag(self) -> u8 {
        match self {
            BackendKind::Flat => 0,
            BackendKind::Brick => 1,
            BackendKind::Hbrick => 2,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => BackendKind::Flat,
            1 => BackendKind::Brick,
            2 => BackendKind::Hbrick,
            _ => return Err(Error::Snapshot(format!("unknown backend tag {t}"))),
        })
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Flat => "flat",
            BackendKind::Brick => "brick",
            BackendKind::Hbrick => "hbrick",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendConfig {
    Flat { width_bits: u32 },
    Brick(BrickConfig),
    Hbrick(HbrickConfig),
}

impl BackendConfig {
    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::Flat { .. } => BackendKind::Flat,
            BackendConfig::Brick(_) => BackendKind::Brick,
            BackendConfig::Hbrick(_) => BackendKind::Hbrick,
        }
    }

    /// Default configuration of `kind` for `entries` counters per array.
    pub fn default_for(kind: BackendKind, entries: usize) -> Self {
        match kind {
            BackendKind::Flat => BackendConfig::Flat { width_bits: 64 },
            BackendKind::Brick => BackendConfig::Brick(BrickConfig::caida_profile(entries)),
            BackendKind::Hbrick => BackendConfig::Hbrick(HbrickConfig::caida_profile(entries)),
        }
    }

    fn entries(&self) -> Option<usize> {
        match self {
            BackendConfig::Flat { .. } => None,
            BackendConfig::Brick(c) => Some(c.entries()),
            BackendConfig::Hbrick(c) => Some(c.entries()),
        }
    }

    pub fn build(&self, entries: usize) -> Result<Backend> {
        if let Some(n) = self.entries() {
            if n != entries {
                return Err(Error::InvalidConfig(format!(
                    "{} backend holds {n} entries but the sketch width is {entries}",
                    self.kind()
                )));
            }
        }
        Ok(match self {
            BackendConfig::Flat { width_bits } => {
                Backend::Flat(FlatCounterArray::new(entries, *width_bits)?)
            }
            BackendConfig::Brick(c) => Backend::Brick(BrickArray::new(c.clone())?),
            BackendConfig::Hbrick(c) => Backend::Hbrick(HbrickArray::new(c.clone())?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Flat(FlatCounterArray),
    Brick(BrickArray),
    Hbrick(HbrickArray),
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Flat(_) => BackendKind::Flat,
            Backend::Brick(_) => BackendKind::Brick,
            Backend::Hbrick(_) => BackendKind::Hbrick,
        }
    }

    fn as_dyn(&self) -> &dyn CounterArray {
        match self {
            Backend::Flat(a) => a,
            Backend::Brick(a) => a,
            Backend::Hbrick(a) => a,
        }
    }

    fn as_dyn_mut(&mut self) -> &mut dyn CounterArray {
        match self {
            Backend::Flat(a) => a,
            Backend::Brick(a) => a,
            Backend::Hbrick(a) => a,
        }
    }

    fn encode(&self, w: &mut Writer) {
        match self {
            Backend::Flat(a) => {
                w.u32(a.width_bits());
                for &c in a.cells() {
                    w.u64(c);
                }
                w.bits(a.clamped_bits());
                w.u64(a.saturation_events());
            }
            Backend::Brick(a) => a.encode(w),
            Backend::Hbrick(a) => a.encode(w),
        }
    }

    fn decode(kind: BackendKind, r: &mut Reader, entries: usize) -> Result<Self> {
        Ok(match kind {
            BackendKind::Flat => {
                let width = r.u32()?;
                r.expect_remaining(entries.saturating_mul(8))?;
                let cells = (0..entries).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
                let clamped: Bits = r.bits(entries)?;
                let events = r.u64()?;
                Backend::Flat(FlatCounterArray::from_parts(width, cells, clamped, events)?)
            }
            BackendKind::Brick => Backend::Brick(BrickArray::decode(r, entries)?),
            BackendKind::Hbrick => Backend::Hbrick(HbrickArray::decode(r, entries)?),
        })
    }
}

impl CounterArray for Backend {
    fn len(&self) -> usize {
        self.as_dyn().len()
    }

    fn read(&self, i: usize) -> Result<u64> {
        self.as_dyn().read(i)
    }

    fn add(&mut self, i: usize, delta: u64) -> Result<u64> {
        self.as_dyn_mut().add(i, delta)
    }

    fn raise_to(&mut self, i: usize, v: u64) -> Result<u64> {
        self.as_dyn_mut().raise_to(i, v)
    }

    fn is_saturated(&self, i: usize) -> bool {
        self.as_dyn().is_saturated(i)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchConfig {
    /// Number of hash functions / counter arrays, `D`.
    pub depth: usize,
    /// Entries per array, `W` (a power of two).
    pub width: usize,
    pub backend: BackendConfig,
    pub strategy: UpdateStrategy,
    /// Heavy-hitter threshold in bytes.
    pub heavy_threshold: u64,
    /// Master seed; the D hash seeds are derived from it.
    pub seed: u64,
}

impl SketchConfig {
    pub fn new(depth: usize, width: usize, backend: BackendConfig) -> Self {
        Self {
            depth,
            width,
            backend,
            strategy: UpdateStrategy::Plain,
            heavy_threshold: u64::MAX,
            seed: 0,
        }
    }

    pub fn with_strategy(mut self, strategy: UpdateStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threshold(mut self, phi: u64) -> Self {
        self.heavy_threshold = phi;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidConfig("sketch depth must be at least 1".into()));
        }
        if self.width == 0 || !self.width.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "sketch width must be a power of two, got {}",
                self.width
            )));
        }
        Ok(())
    }
}

/// Analytic `(epsilon, delta)` for a `D x W` sketch: `epsilon = 2 / W` and
/// `delta = 2^-D`.
pub fn error_bound(depth: usize, width: usize) -> (f64, f64) {
    (2.0 / width as f64, 0.5f64.powi(depth as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: u64,
    /// Some array holding the minimum had clamped that counter.
    pub saturated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMinSketch {
    hashes: HashFamily,
    rows: Vec<Backend>,
    strategy: UpdateStrategy,
    heavy_threshold: u64,
    /// Heavy flow -> ordinal of the packet that first pushed it over the
    /// threshold.
    registry: BTreeMap<FlowKey, u64>,
    packets: u64,
}

impl CountMinSketch {
    pub fn new(cfg: &SketchConfig) -> Result<Self> {
        cfg.validate()?;
        let hashes = HashFamily::from_master_seed(cfg.depth, cfg.width, cfg.seed)?;
        let rows = (0..cfg.depth)
            .map(|_| cfg.backend.build(cfg.width))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            hashes,
            rows,
            strategy: cfg.strategy,
            heavy_threshold: cfg.heavy_threshold,
            registry: BTreeMap::new(),
            packets: 0,
        })
    }

    pub fn depth(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.hashes.table_size()
    }

    pub fn hashes(&self) -> &HashFamily {
        &self.hashes
    }

    pub fn rows(&self) -> &[Backend] {
        &self.rows
    }

    pub fn strategy(&self) -> UpdateStrategy {
        self.strategy
    }

    pub fn heavy_threshold(&self) -> u64 {
        self.heavy_threshold
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.rows[0].kind()
    }

    pub fn registry(&self) -> &BTreeMap<FlowKey, u64> {
        &self.registry
    }

    pub fn packets(&self) -> u64 {
        self.packets
    }

    /// Adds `size` to every addressed counter.
    pub fn update_plain(&mut self, key: &FlowKey, size: u64) -> Result<Estimate> {
        let idx = self.hashes.indices(key);
        for (row, &i) in self.rows.iter_mut().zip(&idx) {
            row.add(i, size)?;
        }
        self.estimate_at(&idx)
    }

    /// Raises every addressed counter to at least `min + size`.
    pub fn update_conservative(&mut self, key: &FlowKey, size: u64) -> Result<Estimate> {
        let idx = self.hashes.indices(key);
        let current = self.estimate_at(&idx)?.value;
        let target = current.saturating_add(size);
        for (row, &i) in self.rows.iter_mut().zip(&idx) {
            row.raise_to(i, target)?;
        }
        self.estimate_at(&idx)
    }

    pub fn update(&mut self, key: &FlowKey, size: u64) -> Result<Estimate> {
        match self.strategy {
            UpdateStrategy::Plain => self.update_plain(key, size),
            UpdateStrategy::Conservative => self.update_conservative(key, size),
        }
    }

    pub fn query(&self, key: &FlowKey) -> Result<Estimate> {
        self.estimate_at(&self.hashes.indices(key))
    }

    fn estimate_at(&self, idx: &[usize]) -> Result<Estimate> {
        let mut value = u64::MAX;
        let mut saturated = false;
        for (row, &i) in self.rows.iter().zip(idx) {
            let v = row.read(i)?;
            let sat = row.is_saturated(i);
            if v < value {
                value = v;
                saturated = sat;
            } else if v == value {
                saturated |= sat;
            }
        }
        Ok(Estimate { value, saturated })
    }

    /// Applies the configured strategy and flags the packet's flow as heavy
    /// when its estimate exceeds the threshold.
    pub fn process_packet(&mut self, pkt: &PacketRecord) -> Result<(Estimate, bool)> {
        let est = self.update(&pkt.key, pkt.size)?;
        self.packets += 1;
        let heavy = est.value > self.heavy_threshold;
        if heavy {
            self.registry.entry(pkt.key).or_insert(pkt.ordinal);
        }
        Ok((est, heavy))
    }

    /// Serializes the full sketch state.
    ///
    /// Layout (little-endian): magic `HBCMSNAP`, version `u16`, `D: u32`,
    /// `W: u64`, backend kind `u8`, `D` seeds `u64`, strategy `u8`,
    /// threshold `u64`, packets `u64`, registry (count `u64`, then 13-byte
    /// key + `u64` ordinal each), then one backend payload per array.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SNAPSHOT_MAGIC);
        w.u16(SNAPSHOT_VERSION);
        w.u32(self.depth() as u32);
        w.u64(self.width() as u64);
        w.u8(self.backend_kind().tag());
        for &s in self.hashes.seeds() {
            w.u64(s);
        }
        w.u8(match self.strategy {
            UpdateStrategy::Plain => 0,
            UpdateStrategy::Conservative => 1,
        });
        w.u64(self.heavy_threshold);
        w.u64(self.packets);
        w.u64(self.registry.len() as u64);
        for (k, &ord) in &self.registry {
            w.bytes(&k.encode());
            w.u64(ord);
        }
        for row in &self.rows {
            row.encode(&mut w);
        }
        w.into_inner()
    }

    pub fn from_snapshot(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        if r.take(8)? != SNAPSHOT_MAGIC {
            return Err(Error::Snapshot("bad magic".into()));
        }
        let version = r.u16()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let depth = r.u32()? as usize;
        let width = r.len_u64()?;
        if depth == 0 || depth > 64 || width == 0 || !width.is_power_of_two() {
            return Err(Error::Snapshot(format!("bad geometry D={depth} W={width}")));
        }
        let kind = BackendKind::from_tag(r.u8()?)?;
        let seeds = (0..depth).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let hashes = HashFamily::new(width, seeds)?;
        let strategy = match r.u8()? {
            0 => UpdateStrategy::Plain,
            1 => UpdateStrategy::Conservative,
            t => return Err(Error::Snapshot(format!("unknown strategy tag {t}"))),
        };
        let heavy_threshold = r.u64()?;
        let packets = r.u64()?;
        let n = r.len_u64()?;
        r.expect_remaining(n.saturating_mul(ENCODED_LEN + 8))?;
        let mut registry = BTreeMap::new();
        for _ in 0..n {
            let key = FlowKey::decode(r.take(ENCODED_LEN)?)?;
            let ord = r.u64()?;
            if registry.insert(key, ord).is_some() {
                return Err(Error::Snapshot("duplicate registry key".into()));
            }
        }
        let rows = (0..depth)
            .map(|_| Backend::decode(kind, &mut r, width))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            hashes,
            rows,
            strategy,
            heavy_threshold,
            registry,
            packets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traces::{exact_counts, gen_zipf, ZipfSpec};
    use std::net::Ipv4Addr;

    fn key(n: u32) -> FlowKey {
        FlowKey::new(Ipv4Addr::from(n), Ipv4Addr::new(10, 0, 0, 1), 1000, 80, 6)
    }

    fn flat_cfg(depth: usize, width: usize) -> SketchConfig {
        SketchConfig::new(depth, width, BackendConfig::Flat { width_bits: 64 }).with_seed(42)
    }

    #[test]
    fn first_touch_is_exact() {
        let mut sk = CountMinSketch::new(&flat_cfg(4, 1024)).unwrap();
        assert_eq!(sk.query(&key(1)).unwrap().value, 0);
        assert_eq!(sk.update_plain(&key(1), 100).unwrap().value, 100);
        assert_eq!(sk.query(&key(1)).unwrap().value, 100);
        let mut sk = CountMinSketch::new(&flat_cfg(4, 1024)).unwrap();
        sk.update_plain(&key(2), 42).unwrap();
        assert_eq!(sk.query(&key(2)).unwrap(), Estimate { value: 42, saturated: false });
    }

    #[test]
    fn non_colliding_keys_are_exact() {
        let mut sk = CountMinSketch::new(&flat_cfg(3, 1 << 16)).unwrap();
        let (a, b) = (key(1), key(2));
        let ia = sk.hashes().indices(&a);
        let ib = sk.hashes().indices(&b);
        assert!(ia.iter().zip(&ib).all(|(x, y)| x != y));
        sk.update_plain(&a, 10).unwrap();
        sk.update_plain(&b, 20).unwrap();
        assert_eq!(sk.query(&a).unwrap().value, 10);
        assert_eq!(sk.query(&b).unwrap().value, 20);
    }

    #[test]
    fn conservative_first_packet_equals_plain() {
        let mut p = CountMinSketch::new(&flat_cfg(4, 256)).unwrap();
        let mut c = CountMinSketch::new(&flat_cfg(4, 256).with_strategy(UpdateStrategy::Conservative)).unwrap();
        for n in 0..50 {
            assert_eq!(p.update(&key(n), 77).unwrap().value, 77);
            assert_eq!(c.update(&key(n), 77).unwrap().value, c.query(&key(n)).unwrap().value);
        }
        let mut c = CountMinSketch::new(&flat_cfg(4, 256).with_strategy(UpdateStrategy::Conservative)).unwrap();
        assert_eq!(c.update(&key(9), 5).unwrap().value, 5);
    }

    /// Finds a key sharing exactly one counter with `a` and checks that B's
    /// conservative update leaves A's other counters alone.
    #[test]
    fn conservative_confines_inflation() {
        let cfg = flat_cfg(2, 64).with_strategy(UpdateStrategy::Conservative);
        let mut sk = CountMinSketch::new(&cfg).unwrap();
        let a = key(0);
        let ia = sk.hashes().indices(&a);
        let b = (1..)
            .map(key)
            .find(|k| {
                let ib = sk.hashes().indices(k);
                ib[0] == ia[0] && ib[1] != ia[1]
            })
            .unwrap();
        sk.update(&a, 100).unwrap();
        sk.update(&b, 30).unwrap();
        // B's minimum is 0, so the shared cell is already above its target.
        assert_eq!(sk.rows()[0].read(ia[0]).unwrap(), 100);
        assert_eq!(sk.rows()[1].read(ia[1]).unwrap(), 100);
        assert_eq!(sk.query(&a).unwrap().value, 100);
        assert_eq!(sk.query(&b).unwrap().value, 30);
    }

    #[test]
    fn query_is_min_of_direct_reads() {
        let trace = gen_zipf(&ZipfSpec::new(5000, 500, 1.0, 3)).unwrap();
        let mut sk = CountMinSketch::new(&flat_cfg(4, 128)).unwrap();
        for p in &trace {
            sk.update(&p.key, p.size).unwrap();
        }
        for k in exact_counts(&trace).flows.keys() {
            let direct = (0..4)
                .map(|d| sk.rows()[d].read(sk.hashes().hash(d, k).unwrap()).unwrap())
                .min()
                .unwrap();
            assert_eq!(sk.query(k).unwrap().value, direct);
        }
    }

    #[test]
    fn plain_never_underestimates_and_conservative_dominates() {
        let trace = gen_zipf(&ZipfSpec::new(100_000, 20_000, 1.0, 5)).unwrap();
        let oracle = exact_counts(&trace);
        let mut plain = CountMinSketch::new(&flat_cfg(4, 1 << 12)).unwrap();
        let mut cons =
            CountMinSketch::new(&flat_cfg(4, 1 << 12).with_strategy(UpdateStrategy::Conservative)).unwrap();
        for p in &trace {
            plain.update(&p.key, p.size).unwrap();
            cons.update(&p.key, p.size).unwrap();
        }
        for (k, &t) in &oracle.flows {
            let pv = plain.query(k).unwrap().value as u128;
            let cv = cons.query(k).unwrap().value as u128;
            assert!(pv >= t);
            assert!(cv >= t);
            assert!(cv <= pv);
        }
    }

    #[test]
    fn zero_threshold_flags_every_packet() {
        let mut sk = CountMinSketch::new(&flat_cfg(2, 64).with_threshold(0)).unwrap();
        for o in 0..10 {
            let p = PacketRecord { key: key(o as u32), size: 64, ordinal: o };
            assert!(sk.process_packet(&p).unwrap().1);
        }
        assert_eq!(sk.registry().len(), 10);
    }

    #[test]
    fn cumulative_crossing() {
        let mut sk = CountMinSketch::new(&flat_cfg(4, 1024).with_threshold(500)).unwrap();
        let flags: Vec<bool> = (0..10)
            .map(|o| {
                sk.process_packet(&PacketRecord { key: key(7), size: 100, ordinal: o })
                    .unwrap()
                    .1
            })
            .collect();
        assert_eq!(flags, [false, false, false, false, false, true, true, true, true, true]);
        assert_eq!(sk.registry().get(&key(7)), Some(&5));
    }

    #[test]
    fn error_bound_values() {
        assert_eq!(error_bound(1, 2), (1.0, 0.5));
        assert_eq!(error_bound(4, 1 << 15), (2.0f64.powi(-14), 0.0625));
    }

    #[test]
    fn saturation_is_reported() {
        let cfg = SketchConfig::new(2, 64, BackendConfig::Flat { width_bits: 8 });
        let mut sk = CountMinSketch::new(&cfg).unwrap();
        let e = sk.update(&key(1), 300).unwrap();
        assert_eq!(e, Estimate { value: 255, saturated: true });
    }

    #[test]
    fn backend_width_mismatch_rejected() {
        let cfg = SketchConfig::new(2, 1024, BackendConfig::default_for(BackendKind::Hbrick, 2048));
        assert!(CountMinSketch::new(&cfg).is_err());
        let cfg = SketchConfig::new(0, 1024, BackendConfig::Flat { width_bits: 32 });
        assert!(CountMinSketch::new(&cfg).is_err());
        let cfg = SketchConfig::new(2, 1000, BackendConfig::Flat { width_bits: 32 });
        assert!(CountMinSketch::new(&cfg).is_err());
    }

    #[test]
    fn snapshot_round_trip_each_backend() {
        let trace = gen_zipf(&ZipfSpec::new(20_000, 2000, 1.1, 9)).unwrap();
        for kind in [BackendKind::Flat, BackendKind::Brick, BackendKind::Hbrick] {
            let cfg = SketchConfig::new(3, 1 << 10, BackendConfig::default_for(kind, 1 << 10))
                .with_seed(5)
                .with_threshold(100_000)
                .with_strategy(UpdateStrategy::Conservative);
            let mut sk = CountMinSketch::new(&cfg).unwrap();
            for p in &trace {
                sk.process_packet(p).unwrap();
            }
            let bytes = sk.to_snapshot();
            let back = CountMinSketch::from_snapshot(&bytes).unwrap();
            assert_eq!(back, sk, "{kind}");
            assert_eq!(back.to_snapshot(), bytes);
        }
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(CountMinSketch::from_snapshot(b"").is_err());
        assert!(CountMinSketch::from_snapshot(b"HBCMSNAP\x02\x00").is_err());
        let sk = CountMinSketch::new(&flat_cfg(2, 16)).unwrap();
        let mut bytes = sk.to_snapshot();
        bytes.push(0);
        assert!(CountMinSketch::from_snapshot(&bytes).is_err());
        bytes.truncate(bytes.len() - 9);
        assert!(CountMinSketch::from_snapshot(&bytes).is_err());
    }
}
