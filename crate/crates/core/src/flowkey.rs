//! Flow identity and the seeded hash family that maps flows onto counter
//! indices.
//!
//! A [`FlowKey`] is the classic IPv4 five-tuple. Its canonical encoding is the
//! 13-byte big-endian concatenation of the fields, and every hash function in
//! a [`HashFamily`] is a seeded 64-bit xxHash over that encoding, reduced to
//! the table size by masking.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::error::{Error, Result};

/// Length of [`FlowKey::encode`] output.
pub const ENCODED_LEN: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub proto: u8,
}

impl FlowKey {
    pub fn new(src_ip: Ipv4Addr, dst_ip: Ipv4Addr, src_port: u16, dst_port: u16, proto: u8) -> Self {
        Self {
            src_ip,
            dst_ip,
            src_port,
            dst_port,
            proto,
        }
    }

    pub fn encode(&self) -> [u8; ENCODED_LEN] {
        let mut out = [0u8; ENCODED_LEN];
        out[0..4].copy_from_slice(&self.src_ip.octets());
        out[4..8].copy_from_slice(&self.dst_ip.octets());
        out[8..10].copy_from_slice(&self.src_port.to_be_bytes());
        out[10..12].copy_from_slice(&self.dst_port.to_be_bytes());
        out[12] = self.proto;
        out
    }

    /// Inverse of [`encode`](Self::encode). The input must be exactly 13 bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let b: &[u8; ENCODED_LEN] = bytes.try_into().map_err(|_| {
            Error::Snapshot(format!("flow key must be {ENCODED_LEN} bytes, got {}", bytes.len()))
        })?;
        Ok(Self {
            src_ip: Ipv4Addr::new(b[0], b[1], b[2], b[3]),
            dst_ip: Ipv4Addr::new(b[4], b[5], b[6], b[7]),
            src_port: u16::from_be_bytes([b[8], b[9]]),
            dst_port: u16::from_be_bytes([b[10], b[11]]),
            proto: b[12],
        })
    }
}

/// `src,dst,sport,dport,proto`, the key columns of the trace wire format.
impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{},{}",
            self.src_ip, self.dst_ip, self.src_port, self.dst_port, self.proto
        )
    }
}

impl FromStr for FlowKey {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let fields: Vec<&str> = s.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(format!("expected 5 comma-separated fields, got {}", fields.len()));
        }
        Ok(Self {
            src_ip: fields[0].parse().map_err(|_| format!("bad src_ip {:?}", fields[0]))?,
            dst_ip: fields[1].parse().map_err(|_| format!("bad dst_ip {:?}", fields[1]))?,
            src_port: fields[2].parse().map_err(|_| format!("bad src_port {:?}", fields[2]))?,
            dst_port: fields[3].parse().map_err(|_| format!("bad dst_port {:?}", fields[3]))?,
            proto: fields[4].parse().map_err(|_| format!("bad proto {:?}", fields[4]))?,
        })
    }
}

/// SplitMix64 step; used to derive independent seeds from one master seed.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    mix64(*state)
}

/// The SplitMix64 finalizer. A bijection on `u64`.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// D seeded hash functions onto `[0, table_size)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    table_size: usize,
    seeds: Vec<u64>,
}

impl HashFamily {
    pub fn new(table_size: usize, seeds: Vec<u64>) -> Result<Self> {
        if table_size == 0 || !table_size.is_power_of_two() {
            return Err(Error::InvalidConfig(format!(
                "table size must be a power of two, got {table_size}"
            )));
        }
        if seeds.is_empty() {
            return Err(Error::InvalidConfig("hash family needs at least one seed".into()));
        }
        Ok(Self { table_size, seeds })
    }

    /// Derives `depth` seeds from `master` with SplitMix64.
    pub fn from_master_seed(depth: usize, table_size: usize, master: u64) -> Result<Self> {
        Self::new(table_size, derive_seeds(depth, master))
    }

    pub fn depth(&self) -> usize {
        self.seeds.len()
    }

    pub fn table_size(&self) -> usize {
        self.table_size
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn hash(&self, d: usize, key: &FlowKey) -> Result<usize> {
        let seed = *self.seeds.get(d).ok_or(Error::HashOutOfRange {
            d,
            depth: self.seeds.len(),
        })?;
        Ok(self.hash_with_seed(seed, key))
    }

    /// All D indices for `key`, in hash-function order.
    pub fn indices(&self, key: &FlowKey) -> Vec<usize> {
        let bytes = key.encode();
        self.seeds
            .iter()
            .map(|&s| (XxHash64::oneshot(s, &bytes) as usize) & (self.table_size - 1))
            .collect()
    }

    fn hash_with_seed(&self, seed: u64, key: &FlowKey) -> usize {
        (XxHash64::oneshot(seed, &key.encode()) as usize) & (self.table_size - 1)
    }
}

pub fn derive_seeds(depth: usize, master: u64) -> Vec<u64> {
    let mut state = master;
    (0..depth).map(|_| splitmix64(&mut state)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_key(rng: &mut impl Rng) -> FlowKey {
        FlowKey::new(
            Ipv4Addr::from(rng.gen::<u32>()),
            Ipv4Addr::from(rng.gen::<u32>()),
            rng.gen(),
            rng.gen(),
            rng.gen(),
        )
    }

    #[test]
    fn encode_all_zero() {
        let k = FlowKey::new(Ipv4Addr::UNSPECIFIED, Ipv4Addr::UNSPECIFIED, 0, 0, 0);
        assert_eq!(k.encode(), [0u8; 13]);
    }

    #[test]
    fn encode_big_endian_fields() {
        let k = FlowKey::new(Ipv4Addr::new(10, 0, 0, 1), Ipv4Addr::new(10, 0, 0, 2), 80, 443, 6);
        assert_eq!(
            k.encode(),
            [0x0A, 0, 0, 1, 0x0A, 0, 0, 2, 0x00, 0x50, 0x01, 0xBB, 0x06]
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = random_key(&mut rng);
            assert_eq!(FlowKey::decode(&k.encode()).unwrap(), k);
        }
    }

    #[test]
    fn decode_rejects_wrong_length() {
        assert!(FlowKey::decode(&[0u8; 12]).is_err());
        assert!(FlowKey::decode(&[0u8; 14]).is_err());
    }

    #[test]
    fn display_parses_back() {
        let k = FlowKey::new(Ipv4Addr::new(192, 168, 1, 9), Ipv4Addr::new(8, 8, 8, 8), 5353, 53, 17);
        assert_eq!(k.to_string().parse::<FlowKey>().unwrap(), k);
        assert!("1.2.3.4,5.6.7.8,1,2".parse::<FlowKey>().is_err());
    }

    #[test]
    fn single_slot_table_always_zero() {
        let fam = HashFamily::from_master_seed(3, 1, 99).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let k = random_key(&mut rng);
            for d in 0..3 {
                assert_eq!(fam.hash(d, &k).unwrap(), 0);
            }
        }
    }

    #[test]
    fn hash_is_deterministic_and_seed_dependent() {
        let fam = HashFamily::from_master_seed(2, 1 << 20, 5).unwrap();
        let again = HashFamily::from_master_seed(2, 1 << 20, 5).unwrap();
        assert_ne!(fam.seeds()[0], fam.seeds()[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut differ = 0;
        for _ in 0..200 {
            let k = random_key(&mut rng);
            assert_eq!(fam.hash(0, &k).unwrap(), again.hash(0, &k).unwrap());
            assert_eq!(fam.hash(1, &k).unwrap(), again.hash(1, &k).unwrap());
            if fam.hash(0, &k).unwrap() != fam.hash(1, &k).unwrap() {
                differ += 1;
            }
        }
        assert!(differ > 190);
    }

    #[test]
    fn hash_out_of_range_d() {
        let fam = HashFamily::from_master_seed(2, 16, 5).unwrap();
        let k = FlowKey::new(Ipv4Addr::LOCALHOST, Ipv4Addr::LOCALHOST, 1, 2, 6);
        assert_eq!(fam.hash(2, &k), Err(Error::HashOutOfRange { d: 2, depth: 2 }));
    }

    #[test]
    fn indices_match_hash() {
        let fam = HashFamily::from_master_seed(4, 1 << 10, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let k = random_key(&mut rng);
            let idx = fam.indices(&k);
            for (d, &i) in idx.iter().enumerate() {
                assert_eq!(fam.hash(d, &k).unwrap(), i);
            }
        }
    }

    #[test]
    fn rejects_non_power_of_two() {
        assert!(HashFamily::new(3, vec![1]).is_err());
        assert!(HashFamily::new(0, vec![1]).is_err());
        assert!(HashFamily::new(4, vec![]).is_err());
    }

    #[test]
    fn changing_one_seed_changes_one_function() {
        let a = HashFamily::new(1 << 12, vec![1, 2, 3]).unwrap();
        let b = HashFamily::new(1 << 12, vec![1, 99, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let k = random_key(&mut rng);
            assert_eq!(a.hash(0, &k).unwrap(), b.hash(0, &k).unwrap());
            assert_eq!(a.hash(2, &k).unwrap(), b.hash(2, &k).unwrap());
        }
    }

    /// Pearson chi-square over 2^15 bins with 10^5 samples; the statistic has
    /// mean W-1 and standard deviation sqrt(2(W-1)) under uniformity.
    #[test]
    fn chi_square_uniformity() {
        let w = 1usize << 15;
        let n = 100_000usize;
        let fam = HashFamily::from_master_seed(4, w, 2024).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let keys: Vec<FlowKey> = (0..n).map(|_| random_key(&mut rng)).collect();
        for d in 0..4 {
            let mut bins = vec![0u64; w];
            for k in &keys {
                bins[fam.hash(d, k).unwrap()] += 1;
            }
            let expected = n as f64 / w as f64;
            let chi: f64 = bins
                .iter()
                .map(|&o| {
                    let diff = o as f64 - expected;
                    diff * diff / expected
                })
                .sum();
            let dof = (w - 1) as f64;
            let sigma = (2.0 * dof).sqrt();
            assert!(
                (chi - dof).abs() <= 3.0 * sigma,
                "d={d}: chi2={chi} dof={dof} sigma={sigma}"
            );
        }
    }
}
