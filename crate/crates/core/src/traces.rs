//! Packet traces: CSV I/O, synthetic Zipf generation, and the exact-count
//! oracle with the accuracy metrics computed against it.
//!
//! Wire format, one packet per line:
//!
//! ```text
//! # src_ip,dst_ip,src_port,dst_port,proto,bytes
//! 10.0.0.1,10.0.0.2,1234,80,6,1500
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::net::Ipv4Addr;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowkey::{mix64, FlowKey};
use crate::sketch::CountMinSketch;

pub const CSV_HEADER: &str = "# src_ip,dst_ip,src_port,dst_port,proto,bytes";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PacketRecord {
    pub key: FlowKey,
    pub size: u64,
    /// Zero-based position in the stream.
    pub ordinal: u64,
}

/// Parses one CSV line. Returns `None` for blank and comment lines.
pub fn parse_line(line: &str, line_no: u64) -> Result<Option<(FlowKey, u64)>> {
    let line = line.trim_end_matches('\r');
    if line.trim().is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let err = |msg: String| Error::Parse { line: line_no, msg };
    let (key_part, bytes) = line
        .rsplit_once(',')
        .ok_or_else(|| err("expected 6 comma-separated fields".into()))?;
    let key: FlowKey = key_part.parse().map_err(err)?;
    let size = bytes
        .trim()
        .parse::<u64>()
        .map_err(|e| err(format!("bad byte count {bytes:?}: {e}")))?;
    Ok(Some((key, size)))
}

pub fn format_line(p: &PacketRecord) -> String {
    format!("{},{}", p.key, p.size)
}

/// Streaming reader over the CSV wire format.
pub struct TraceReader<R> {
    inner: R,
    line_no: u64,
    next_ordinal: u64,
    buf: String,
    failed: bool,
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line_no: 0,
            next_ordinal: 0,
            buf: String::new(),
            failed: false,
        }
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<PacketRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            self.buf.clear();
            self.line_no += 1;
            match self.inner.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            let line = self.buf.strip_suffix('\n').unwrap_or(&self.buf);
            match parse_line(line, self.line_no) {
                Ok(None) => continue,
                Ok(Some((key, size))) => {
                    let ordinal = self.next_ordinal;
                    self.next_ordinal += 1;
                    return Some(Ok(PacketRecord { key, size, ordinal }));
                }
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

pub fn load_csv(path: &Path) -> Result<TraceReader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    Ok(TraceReader::new(BufReader::new(f)))
}

/// Reads a whole trace into memory.
pub fn read_trace(path: &Path) -> Result<Vec<PacketRecord>> {
    load_csv(path)?.collect()
}

pub fn write_csv<'a, W: Write>(mut out: W, trace: impl IntoIterator<Item = &'a PacketRecord>) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for p in trace {
        writeln!(out, "{}", format_line(p))?;
    }
    out.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZipfSpec {
    pub n_packets: u64,
    pub n_flows: u64,
    /// Skewness `s`; popularity of rank `r` is proportional to `r^-s`.
    pub skew: f64,
    pub size_min: u64,
    pub size_max: u64,
    pub seed: u64,
}

impl ZipfSpec {
    /// Packet sizes default to the Ethernet frame range `[64, 1500]`.
    pub fn new(n_packets: u64, n_flows: u64, skew: f64, seed: u64) -> Self {
        Self {
            n_packets,
            n_flows,
            skew,
            size_min: 64,
            size_max: 1500,
            seed,
        }
    }

    /// Synthetic stand-in for a backbone capture: `s = 1`, on average five
    /// packets per flow.
    pub fn caida_profile(n_packets: u64, seed: u64) -> Self {
        Self::new(n_packets, (n_packets / 5).max(1), 1.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_flows == 0 {
            return Err(Error::InvalidConfig("n_flows must be at least 1".into()));
        }
        if self.n_flows > 1 << 32 {
            return Err(Error::InvalidConfig("n_flows above 2^32".into()));
        }
        if !(self.skew.is_finite() && self.skew >= 0.0) {
            return Err(Error::InvalidConfig(format!("bad skewness {}", self.skew)));
        }
        if self.size_min > self.size_max {
            return Err(Error::InvalidConfig(format!(
                "size range [{}, {}] is empty",
                self.size_min, self.size_max
            )));
        }
        Ok(())
    }
}

/// Key of the flow with popularity rank `rank` (1-based) under `seed`.
/// Distinct ranks always map to distinct keys.
pub fn flow_key_for_rank(rank: u64, seed: u64) -> FlowKey {
    let h = mix64(rank ^ mix64(seed));
    let g = mix64(h ^ 0x9e37_79b9_7f4a_7c15);
    FlowKey::new(
        Ipv4Addr::from((h >> 32) as u32),
        Ipv4Addr::from(h as u32),
        (g >> 48) as u16,
        (g >> 32) as u16,
        if g & 1 == 0 { 6 } else { 17 },
    )
}

/// Streaming Zipf packet generator.
pub struct ZipfGenerator {
    spec: ZipfSpec,
    cdf: Vec<f64>,
    rng: ChaCha8Rng,
    emitted: u64,
}

impl ZipfGenerator {
    pub fn new(spec: &ZipfSpec) -> Result<Self> {
        spec.validate()?;
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = (1..=spec.n_flows)
            .map(|r| {
                acc += (r as f64).powf(-spec.skew);
                acc
            })
            .collect();
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        Ok(Self {
            spec: spec.clone(),
            cdf,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            emitted: 0,
        })
    }
}

impl Iterator for ZipfGenerator {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        if self.emitted >= self.spec.n_packets {
            return None;
        }
        let u: f64 = self.rng.gen();
        let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let size = self.rng.gen_range(self.spec.size_min..=self.spec.size_max);
        let p = PacketRecord {
            key: flow_key_for_rank(idx as u64 + 1, self.spec.seed),
            size,
            ordinal: self.emitted,
        };
        self.emitted += 1;
        Some(p)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = (self.spec.n_packets - self.emitted) as usize;
        (n, Some(n))
    }
}

pub fn gen_zipf(spec: &ZipfSpec) -> Result<Vec<PacketRecord>> {
    Ok(ZipfGenerator::new(spec)?.collect())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactCounts {
    pub flows: BTreeMap<FlowKey, u128>,
    pub total_bytes: u128,
}

impl ExactCounts {
    pub fn add(&mut self, key: FlowKey, size: u64) {
        *self.flows.entry(key).or_default() += size as u128;
        self.total_bytes += size as u128;
    }

    pub fn flow_count(&self) -> usize {
        self.flows.len()
    }

    pub fn get(&self, key: &FlowKey) -> u128 {
        self.flows.get(key).copied().unwrap_or(0)
    }
}

pub fn exact_counts<'a>(trace: impl IntoIterator<Item = &'a PacketRecord>) -> ExactCounts {
    let mut c = ExactCounts::default();
    for p in trace {
        c.add(p.key, p.size);
    }
    c
}

/// Error statistics of an estimator against the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub flows: u64,
    pub avg_abs_error: f64,
    pub max_over: u128,
    /// Flows whose estimate is below the true size.
    pub underestimated: u64,
    pub underestimate_bytes: u128,
    /// Flows overestimated by more than `epsilon * total_bytes`.
    pub over_eps: u64,
}

pub fn error_stats(
    oracle: &ExactCounts,
    epsilon: f64,
    mut estimate: impl FnMut(&FlowKey) -> Result<u64>,
) -> Result<ErrorStats> {
    let limit = epsilon * oracle.total_bytes as f64;
    let mut s = ErrorStats {
        flows: oracle.flows.len() as u64,
        avg_abs_error: 0.0,
        max_over: 0,
        underestimated: 0,
        underestimate_bytes: 0,
        over_eps: 0,
    };
    let mut sum: u128 = 0;
    for (k, &t) in &oracle.flows {
        let e = estimate(k)? as u128;
        if e < t {
            s.underestimated += 1;
            s.underestimate_bytes += t - e;
            sum += t - e;
        } else {
            let over = e - t;
            sum += over;
            s.max_over = s.max_over.max(over);
            if over as f64 > limit {
                s.over_eps += 1;
            }
        }
    }
    if s.flows > 0 {
        s.avg_abs_error = sum as f64 / s.flows as f64;
    }
    Ok(s)
}

/// Mean over distinct flows of `|query(k) - true(k)|`.
pub fn avg_abs_error(oracle: &ExactCounts, sk: &CountMinSketch) -> Result<f64> {
    Ok(error_stats(oracle, f64::INFINITY, |k| Ok(sk.query(k)?.value))?.avg_abs_error)
}

/// Flow count per minimum bit width of the flow's total size.
pub fn min_bitwidth_histogram(oracle: &ExactCounts) -> BTreeMap<u32, u64> {
    let mut h = BTreeMap::new();
    for &v in oracle.flows.values() {
        let bits = 128 - v.leading_zeros();
        *h.entry(bits).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{BackendConfig, SketchConfig};
    use std::io::Cursor;

    fn reader(s: &str) -> TraceReader<Cursor<&[u8]>> {
        TraceReader::new(Cursor::new(s.as_bytes()))
    }

    #[test]
    fn empty_file_is_empty_trace() {
        assert_eq!(reader("").count(), 0);
        assert_eq!(reader("# header only\n\n").count(), 0);
    }

    #[test]
    fn one_line() {
        let got: Vec<_> = reader("10.0.0.1,10.0.0.2,1234,80,6,1500\n")
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(
            got,
            vec![PacketRecord {
                key: FlowKey::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2), 1234, 80, 6),
                size: 1500,
                ordinal: 0,
            }]
        );
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let mut r = reader("# c\n1.2.3.4,5.6.7.8,1,2,6,10\n1.2.3.4,5.6.7.8,1,2,6\n");
        assert!(r.next().unwrap().is_ok());
        match r.next().unwrap() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(r.next().is_none());
        for bad in ["1.2.3.4,5.6.7.8,1,2,6,-1", "1.2.3.4,5.6.7.8,1,2,6,x", "x", "1.2.3.4,5.6.7.8,70000,2,6,1"] {
            assert!(matches!(parse_line(bad, 1), Err(Error::Parse { line: 1, .. })), "{bad}");
        }
    }

    #[test]
    fn crlf_tolerated() {
        let got: Vec<_> = reader("1.2.3.4,5.6.7.8,1,2,17,99\r\n").collect::<Result<_>>().unwrap();
        assert_eq!(got[0].size, 99);
    }

    #[test]
    fn csv_round_trip_10k() {
        let trace = gen_zipf(&ZipfSpec::new(10_000, 1000, 1.0, 3)).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &trace).unwrap();
        let back: Vec<_> = TraceReader::new(Cursor::new(&buf[..])).collect::<Result<_>>().unwrap();
        assert_eq!(back, trace);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let trace = gen_zipf(&ZipfSpec::new(500, 50, 0.5, 1)).unwrap();
        write_csv(File::create(&path).unwrap(), &trace).unwrap();
        assert_eq!(read_trace(&path).unwrap(), trace);
        assert!(matches!(read_trace(&dir.path().join("missing")), Err(Error::Io(_))));
    }

    #[test]
    fn uniform_limit() {
        let n = 200_000;
        let trace = gen_zipf(&ZipfSpec::new(n, 4, 0.0, 11)).unwrap();
        let c = exact_counts(&trace);
        let mut per_flow: BTreeMap<FlowKey, u64> = BTreeMap::new();
        for p in &trace {
            *per_flow.entry(p.key).or_default() += 1;
        }
        assert_eq!(c.flow_count(), 4);
        for &v in per_flow.values() {
            assert!((v as f64 - n as f64 / 4.0).abs() < 0.05 * n as f64 / 4.0, "{v}");
        }
    }

    fn top_share(skew: f64) -> f64 {
        let trace = gen_zipf(&ZipfSpec::new(50_000, 1000, skew, 2)).unwrap();
        let mut per_flow: BTreeMap<FlowKey, u64> = BTreeMap::new();
        for p in &trace {
            *per_flow.entry(p.key).or_default() += 1;
        }
        *per_flow.values().max().unwrap() as f64 / trace.len() as f64
    }

    #[test]
    fn heavier_head_with_larger_skew() {
        assert!(top_share(1.5) > top_share(0.0));
        assert!(top_share(1.5) > top_share(1.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = ZipfSpec::new(5000, 300, 1.2, 77);
        assert_eq!(gen_zipf(&s).unwrap(), gen_zipf(&s).unwrap());
        let other = ZipfSpec { seed: 78, ..s.clone() };
        assert_ne!(gen_zipf(&s).unwrap(), gen_zipf(&other).unwrap());
    }

    #[test]
    fn ordinals_and_sizes() {
        let t = gen_zipf(&ZipfSpec::new(1000, 10, 1.0, 0)).unwrap();
        assert!(t.iter().enumerate().all(|(i, p)| p.ordinal == i as u64));
        assert!(t.iter().all(|p| (64..=1500).contains(&p.size)));
    }

    #[test]
    fn invalid_specs() {
        assert!(gen_zipf(&ZipfSpec::new(10, 0, 1.0, 0)).is_err());
        assert!(gen_zipf(&ZipfSpec::new(10, 5, -1.0, 0)).is_err());
        assert!(gen_zipf(&ZipfSpec::new(10, 5, f64::NAN, 0)).is_err());
        let mut s = ZipfSpec::new(10, 5, 1.0, 0);
        s.size_min = 10;
        s.size_max = 9;
        assert!(gen_zipf(&s).is_err());
        assert!(gen_zipf(&ZipfSpec::new(0, 5, 1.0, 0)).unwrap().is_empty());
    }

    #[test]
    fn rank_keys_are_distinct() {
        let keys: std::collections::BTreeSet<_> = (1..=100_000).map(|r| flow_key_for_rank(r, 5)).collect();
        assert_eq!(keys.len(), 100_000);
    }

    #[test]
    fn exact_count_examples() {
        assert!(exact_counts(&[]).flows.is_empty());
        let k = flow_key_for_rank(1, 0);
        let t: Vec<_> = (1..=3).map(|s| PacketRecord { key: k, size: s, ordinal: s - 1 }).collect();
        let c = exact_counts(&t);
        assert_eq!(c.flows.len(), 1);
        assert_eq!(c.get(&k), 6);
        let trace = gen_zipf(&ZipfSpec::new(20_000, 500, 1.0, 4)).unwrap();
        let c = exact_counts(&trace);
        assert_eq!(c.total_bytes, trace.iter().map(|p| p.size as u128).sum::<u128>());
        assert_eq!(c.total_bytes, c.flows.values().sum::<u128>());
    }

    #[test]
    fn reordering_preserves_counts() {
        let mut trace = gen_zipf(&ZipfSpec::new(5000, 100, 1.0, 6)).unwrap();
        let a = exact_counts(&trace);
        trace.reverse();
        assert_eq!(exact_counts(&trace), a);
    }

    #[test]
    fn collision_free_sketch_has_zero_error() {
        let trace = gen_zipf(&ZipfSpec::new(200, 20, 1.0, 4)).unwrap();
        let oracle = exact_counts(&trace);
        let mut sk = CountMinSketch::new(
            &SketchConfig::new(2, 1 << 20, BackendConfig::Flat { width_bits: 64 }).with_seed(1),
        )
        .unwrap();
        for p in &trace {
            sk.update(&p.key, p.size).unwrap();
        }
        assert_eq!(avg_abs_error(&oracle, &sk).unwrap(), 0.0);
    }

    #[test]
    fn full_collision_error_is_half_the_other_flow() {
        // W = 1 forces both flows onto the same cell in every array.
        let mut sk = CountMinSketch::new(&SketchConfig::new(3, 1, BackendConfig::Flat { width_bits: 64 })).unwrap();
        let (a, b) = (flow_key_for_rank(1, 0), flow_key_for_rank(2, 0));
        let trace = [
            PacketRecord { key: a, size: 300, ordinal: 0 },
            PacketRecord { key: b, size: 500, ordinal: 1 },
        ];
        for p in &trace {
            sk.update(&p.key, p.size).unwrap();
        }
        let oracle = exact_counts(&trace);
        assert_eq!(avg_abs_error(&oracle, &sk).unwrap(), (500.0 + 300.0) / 2.0);
    }

    #[test]
    fn histogram_examples() {
        let mut c = ExactCounts::default();
        c.add(flow_key_for_rank(1, 0), 1);
        assert_eq!(min_bitwidth_histogram(&c), BTreeMap::from([(1, 1)]));
        let mut c = ExactCounts::default();
        c.add(flow_key_for_rank(1, 0), 1 << 28);
        assert_eq!(min_bitwidth_histogram(&c), BTreeMap::from([(29, 1)]));
    }

    #[test]
    fn caida_profile_shape() {
        let trace = gen_zipf(&ZipfSpec::caida_profile(300_000, 1)).unwrap();
        let h = min_bitwidth_histogram(&exact_counts(&trace));
        let mode = h.iter().max_by_key(|(_, &n)| n).map(|(&b, _)| b).unwrap();
        let max = *h.keys().last().unwrap();
        assert!(mode <= 14, "mode {mode}");
        assert!(max <= 29, "max {max}");
    }
}
