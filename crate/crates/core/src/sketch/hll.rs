//! HyperLogLog distinct-count sketch.
//!
//! The low `b` bits of a 64-bit hash select a register; the register keeps
//! the maximum leading-zero run (plus one) observed in the remaining bits.
//! The estimate is the bias-corrected harmonic mean, with linear counting
//! in the small range and the 2^64 correction in the large range.

use crate::error::{Error, Result};
use crate::hash::hash_bytes;

const MIN_PRECISION: u8 = 4;
const MAX_PRECISION: u8 = 18;
const SERIAL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HyperLogLog {
    precision_bits: u8,
    registers: Vec<u8>,
    hash_seed: u64,
}

impl HyperLogLog {
    pub fn new(precision_bits: u8, hash_seed: u64) -> Result<Self> {
        if !(MIN_PRECISION..=MAX_PRECISION).contains(&precision_bits) {
            return Err(Error::Config(format!(
                "hll precision_bits must be in [{MIN_PRECISION}, {MAX_PRECISION}], got {precision_bits}"
            )));
        }
        Ok(Self {
            precision_bits,
            registers: vec![0; 1 << precision_bits],
            hash_seed,
        })
    }

    pub fn precision_bits(&self) -> u8 {
        self.precision_bits
    }

    pub fn num_registers(&self) -> usize {
        self.registers.len()
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn insert(&mut self, item: &[u8]) {
        self.insert_hash(hash_bytes(self.hash_seed, item));
    }

    // Split out so tests can feed crafted hash values directly.
    pub(crate) fn insert_hash(&mut self, hash: u64) {
        let b = self.precision_bits as u32;
        let index = (hash & ((1u64 << b) - 1)) as usize;
        let rest = hash >> b;
        // Leading-zero run within the remaining 64 - b bits, then +1 for
        // the position of the leftmost 1. All-zero remainder maps to the
        // maximum value 64 - b + 1.
        let rank = if rest == 0 {
            (64 - b + 1) as u8
        } else {
            (rest.leading_zeros() - b + 1) as u8
        };
        if rank > self.registers[index] {
            self.registers[index] = rank;
        }
    }

    pub fn estimate(&self) -> f64 {
        let m = self.registers.len() as f64;
        let mut sum = 0.0;
        let mut zeros = 0u64;
        for &r in &self.registers {
            sum += (-(f64::from(r))).exp2();
            if r == 0 {
                zeros += 1;
            }
        }
        let raw = alpha(self.registers.len()) * m * m / sum;
        if raw <= 2.5 * m && zeros > 0 {
            // linear counting
            m * (m / zeros as f64).ln()
        } else if raw > (u64::MAX as f64) / 30.0 {
            // large-range correction at the 2^64 hash space
            let two64 = u64::MAX as f64 + 1.0;
            -two64 * (-raw / two64).ln_1p()
        } else {
            raw
        }
    }

    /// Little-endian framing: version byte, precision, seed, registers.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.registers.len());
        out.push(SERIAL_VERSION);
        out.push(self.precision_bits);
        out.extend_from_slice(&self.hash_seed.to_le_bytes());
        out.extend_from_slice(&self.registers);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 {
            return Err(Error::Codec("hll blob too short".into()));
        }
        if bytes[0] != SERIAL_VERSION {
            return Err(Error::Codec(format!("unsupported hll version {}", bytes[0])));
        }
        let precision_bits = bytes[1];
        let mut sketch = Self::new(
            precision_bits,
            u64::from_le_bytes(bytes[2..10].try_into().unwrap()),
        )?;
        let registers = &bytes[10..];
        if registers.len() != sketch.registers.len() {
            return Err(Error::Codec("hll register count mismatch".into()));
        }
        let max = 64 - precision_bits + 1;
        for &r in registers {
            if r > max {
                return Err(Error::Codec("hll register value out of range".into()));
            }
        }
        sketch.registers.copy_from_slice(registers);
        Ok(sketch)
    }
}

fn alpha(m: usize) -> f64 {
    match m {
        16 => 0.673,
        32 => 0.697,
        64 => 0.709,
        _ => 0.7213 / (1.0 + 1.079 / m as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    #[test]
    fn new_sizes_registers() {
        assert_eq!(HyperLogLog::new(14, 0).unwrap().num_registers(), 16384);
        assert_eq!(HyperLogLog::new(4, 0).unwrap().num_registers(), 16);
    }

    #[test]
    fn new_rejects_out_of_range_precision() {
        assert!(matches!(HyperLogLog::new(20, 0), Err(Error::Config(_))));
        assert!(matches!(HyperLogLog::new(3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn empty_estimates_zero() {
        assert_eq!(HyperLogLog::new(14, 1).unwrap().estimate(), 0.0);
    }

    #[test]
    fn insert_is_idempotent() {
        let mut a = HyperLogLog::new(12, 9).unwrap();
        a.insert(b"x");
        let once = a.clone();
        a.insert(b"x");
        assert_eq!(a, once);
    }

    #[test]
    fn all_zero_remainder_sets_max_run() {
        let mut s = HyperLogLog::new(14, 0).unwrap();
        s.insert_hash(0b101); // index 5, remainder 0
        assert_eq!(s.registers[5], 64 - 14 + 1);
    }

    #[test]
    fn five_distinct_exact_in_linear_counting_regime() {
        let mut s = HyperLogLog::new(14, 3).unwrap();
        for w in ["a", "b", "c", "d", "e"] {
            s.insert(w.as_bytes());
        }
        assert_eq!(s.estimate().round() as u64, 5);
    }

    #[test]
    fn hundred_thousand_distinct_within_error_bound() {
        let mut s = HyperLogLog::new(14, 5).unwrap();
        let mut exact = HashSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        while exact.len() < 100_000 {
            let v: u64 = rng.gen();
            if exact.insert(v) {
                s.insert(&v.to_le_bytes());
            }
        }
        let err = (s.estimate() - 100_000.0).abs() / 100_000.0;
        assert!(err <= 3.0 * 1.04 / (16384.0f64).sqrt(), "rel err {err}");
    }

    #[test]
    fn estimate_is_monotone_along_stream() {
        let mut s = HyperLogLog::new(10, 2).unwrap();
        let mut prev = 0.0;
        for i in 0u64..20_000 {
            s.insert(&i.to_le_bytes());
            if i % 97 == 0 {
                let e = s.estimate();
                assert!(e >= prev - 1e-9, "estimate dropped at {i}: {prev} -> {e}");
                prev = e;
            }
        }
    }

    #[test]
    fn small_range_within_one_with_high_probability() {
        // The +-1 claim only holds where register collisions are rare,
        // i.e. at small precisions; checked over 150 hash seeds.
        for (b, n) in [(6u8, 2u64), (7, 4)] {
            let mut hits = 0;
            for seed in 0..150u64 {
                let mut s = HyperLogLog::new(b, seed).unwrap();
                for i in 0..n {
                    s.insert(format!("item-{i}").as_bytes());
                }
                if (s.estimate() - n as f64).abs() <= 1.0 {
                    hits += 1;
                }
            }
            assert!(hits >= 149, "b={b} n={n}: {hits}/150 within +-1");
        }
    }

    #[test]
    fn empirical_standard_error_over_seeds() {
        // n = 10^4 at b = 12 (m = 4096): SE target 2 * 1.04 / sqrt(m).
        let m = 4096.0f64;
        let n = 10_000u64;
        let mut sq = 0.0;
        let trials = 50;
        for seed in 0..trials {
            let mut s = HyperLogLog::new(12, seed).unwrap();
            for i in 0..n {
                s.insert(format!("k{seed}-{i}").as_bytes());
            }
            let rel = (s.estimate() - n as f64) / n as f64;
            sq += rel * rel;
        }
        let se = (sq / trials as f64).sqrt();
        assert!(se <= 2.0 * 1.04 / m.sqrt(), "empirical SE {se}");
    }

    #[test]
    fn serialization_round_trip() {
        let mut s = HyperLogLog::new(8, 77).unwrap();
        for i in 0..500u32 {
            s.insert(&i.to_le_bytes());
        }
        let back = HyperLogLog::from_bytes(&s.to_bytes()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn from_bytes_rejects_garbage() {
        assert!(HyperLogLog::from_bytes(&[1, 2]).is_err());
        assert!(HyperLogLog::from_bytes(&[9; 300]).is_err());
    }

    proptest! {
        // Estimate depends on the set of items, not order or multiplicity.
        #[test]
        fn duplicate_and_order_insensitive(items in proptest::collection::vec(0u32..500, 1..200), seed in 0u64..32) {
            let mut plain = HyperLogLog::new(9, seed).unwrap();
            for i in &items {
                plain.insert(&i.to_le_bytes());
            }
            let mut shuffled = items.clone();
            shuffled.extend_from_slice(&items); // duplicate everything
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut other = HyperLogLog::new(9, seed).unwrap();
            for i in &shuffled {
                other.insert(&i.to_le_bytes());
            }
            prop_assert_eq!(plain, other);
        }
    }
}
