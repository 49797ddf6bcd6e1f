//! Count-Mean-Min frequency sketch with conservative update.
//!
//! Conservative update raises only the minimal addressed counters, so every
//! counter stays at or below its plain count-min value while the min-row
//! estimate remains an upper bound on the true frequency. Queries deduct
//! the expected collision noise per row and clamp the result to the
//! count-min bound, so the reported estimate can only under-shoot (which is
//! the safe direction for the k-anonymity gate).

use crate::error::{Error, Result};
use crate::hash::{derive_seed, hash_bytes};

const SERIAL_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMeanMin {
    depth: usize,
    width: usize,
    counters: Vec<u64>, // row-major depth x width
    stream_length: u64,
    hash_seeds: Vec<u64>,
}

impl CountMeanMin {
    pub fn new(depth: usize, width: usize, seed: u64) -> Result<Self> {
        if depth < 1 {
            return Err(Error::Config("cmm depth must be >= 1".into()));
        }
        if width < 2 {
            // noise deduction divides by width - 1
            return Err(Error::Config("cmm width must be >= 2".into()));
        }
        Ok(Self {
            depth,
            width,
            counters: vec![0; depth * width],
            stream_length: 0,
            hash_seeds: (0..depth as u64).map(|i| derive_seed(seed, i)).collect(),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn stream_length(&self) -> u64 {
        self.stream_length
    }

    fn indexes(&self, item: &[u8]) -> Vec<usize> {
        self.hash_seeds
            .iter()
            .enumerate()
            .map(|(row, &s)| row * self.width + (hash_bytes(s, item) as usize % self.width))
            .collect()
    }

    /// Conservative update: raise each addressed counter to
    /// max(counter, min_counter + 1).
    pub fn update(&mut self, item: &[u8]) {
        let idx = self.indexes(item);
        let floor = idx.iter().map(|&i| self.counters[i]).min().unwrap() + 1;
        for &i in &idx {
            if self.counters[i] < floor {
                self.counters[i] = floor;
            }
        }
        self.stream_length += 1;
    }

    /// Plain count-min update (every addressed counter incremented); kept
    /// for error-comparison experiments.
    pub fn update_plain(&mut self, item: &[u8]) {
        for i in self.indexes(item) {
            self.counters[i] += 1;
        }
        self.stream_length += 1;
    }

    /// Raw count-min bound: min over rows, never below the true frequency.
    pub fn estimate_count_min(&self, item: &[u8]) -> u64 {
        self.indexes(item)
            .into_iter()
            .map(|i| self.counters[i])
            .min()
            .unwrap()
    }

    /// Noise-deducted estimate: per-row counters minus the expected
    /// collision mass (N - c) / (w - 1), combined as the row median and
    /// clamped to [0, count-min bound].
    pub fn estimate(&self, item: &[u8]) -> f64 {
        let n = self.stream_length as f64;
        let w1 = (self.width - 1) as f64;
        let mut deducted: Vec<f64> = self
            .indexes(item)
            .into_iter()
            .map(|i| {
                let c = self.counters[i] as f64;
                c - (n - c) / w1
            })
            .collect();
        deducted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mid = deducted.len() / 2;
        let median = if deducted.len() % 2 == 1 {
            deducted[mid]
        } else {
            (deducted[mid - 1] + deducted[mid]) / 2.0
        };
        median.min(self.estimate_count_min(item) as f64).max(0.0)
    }

    /// Binary framing mirroring the cardinality sketch: version, depth,
    /// width, stream length, seeds, counters; all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(25 + 8 * (self.depth + self.counters.len()));
        out.push(SERIAL_VERSION);
        out.extend_from_slice(&(self.depth as u64).to_le_bytes());
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        out.extend_from_slice(&self.stream_length.to_le_bytes());
        for s in &self.hash_seeds {
            out.extend_from_slice(&s.to_le_bytes());
        }
        for c in &self.counters {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = || Error::Codec("cmm blob malformed".into());
        if bytes.len() < 25 || bytes[0] != SERIAL_VERSION {
            return Err(err());
        }
        let read_u64 =
            |off: usize| -> u64 { u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) };
        let depth = read_u64(1) as usize;
        let width = read_u64(9) as usize;
        let stream_length = read_u64(17);
        let expect = 25 + 8 * (depth + depth * width);
        if depth < 1 || width < 2 || bytes.len() != expect {
            return Err(err());
        }
        let hash_seeds = (0..depth).map(|i| read_u64(25 + 8 * i)).collect();
        let base = 25 + 8 * depth;
        let counters = (0..depth * width).map(|i| read_u64(base + 8 * i)).collect();
        Ok(Self {
            depth,
            width,
            counters,
            stream_length,
            hash_seeds,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn zipf_stream(n: usize, s: f64, universe: usize, seed: u64) -> Vec<String> {
        let weights: Vec<f64> = (1..=universe).map(|r| (r as f64).powf(-s)).collect();
        let total: f64 = weights.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut u = rng.gen::<f64>() * total;
                let mut r = 0;
                while r < universe - 1 && u > weights[r] {
                    u -= weights[r];
                    r += 1;
                }
                format!("q{r}")
            })
            .collect()
    }

    #[test]
    fn new_zeroes_state() {
        let s = CountMeanMin::new(4, 2048, 0).unwrap();
        assert_eq!(s.stream_length(), 0);
        assert!(s.counters.iter().all(|&c| c == 0));
        assert!(CountMeanMin::new(1, 16, 0).is_ok());
    }

    #[test]
    fn new_rejects_degenerate_width() {
        assert!(matches!(CountMeanMin::new(4, 1, 0), Err(Error::Config(_))));
        assert!(matches!(CountMeanMin::new(0, 16, 0), Err(Error::Config(_))));
    }

    #[test]
    fn first_update_sets_all_rows_to_one() {
        let mut s = CountMeanMin::new(4, 64, 1).unwrap();
        s.update(b"a");
        assert_eq!(s.stream_length(), 1);
        for i in s.indexes(b"a") {
            assert_eq!(s.counters[i], 1);
        }
    }

    #[test]
    fn repeated_item_exact_without_collisions() {
        let mut s = CountMeanMin::new(4, 4096, 2).unwrap();
        for _ in 0..5 {
            s.update(b"a");
        }
        assert_eq!(s.estimate_count_min(b"a"), 5);
        assert_eq!(s.estimate(b"a"), 5.0);
    }

    #[test]
    fn never_inserted_item_is_zero() {
        let s = CountMeanMin::new(4, 64, 3).unwrap();
        assert_eq!(s.estimate(b"ghost"), 0.0);
    }

    #[test]
    fn single_item_seven_inserts_no_noise() {
        let mut s = CountMeanMin::new(4, 64, 4).unwrap();
        for _ in 0..7 {
            s.update(b"only");
        }
        // N == c so the deducted term is exactly c
        assert_eq!(s.estimate(b"only"), 7.0);
    }

    #[test]
    fn constructed_collision_stays_exact() {
        // Find two items that collide in row 0 but nowhere else; the
        // min/median combination keeps both estimates exact.
        let s = CountMeanMin::new(4, 8, 5).unwrap();
        let a = "a".to_string();
        let mut partner = None;
        for cand in 0..10_000 {
            let c = format!("c{cand}");
            let ia = s.indexes(a.as_bytes());
            let ic = s.indexes(c.as_bytes());
            if ia[0] == ic[0] && ia[1..] != ic[1..] && ia[1..].iter().all(|i| !ic.contains(i)) {
                partner = Some(c);
                break;
            }
        }
        let partner = partner.expect("collision partner");
        let mut s = s;
        for _ in 0..10 {
            s.update(a.as_bytes());
        }
        for _ in 0..3 {
            s.update(partner.as_bytes());
        }
        assert_eq!(s.estimate_count_min(a.as_bytes()), 10);
        assert_eq!(s.estimate_count_min(partner.as_bytes()), 3);
    }

    #[test]
    fn zipf_heavy_hitters_within_two_percent() {
        let stream = zipf_stream(100_000, 1.05, 300, 6);
        let mut s = CountMeanMin::new(4, 4096, 6).unwrap();
        let mut exact: HashMap<&str, u64> = HashMap::new();
        for q in &stream {
            s.update(q.as_bytes());
            *exact.entry(q).or_default() += 1;
        }
        let mut top: Vec<_> = exact.iter().collect();
        top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        for (q, &truth) in top.into_iter().take(10) {
            let est = s.estimate(q.as_bytes());
            let rel = (est - truth as f64).abs() / truth as f64;
            assert!(rel <= 0.02, "{q}: est {est} truth {truth}");
        }
    }

    #[test]
    fn count_min_never_underestimates() {
        let stream = zipf_stream(20_000, 1.2, 800, 7);
        let mut s = CountMeanMin::new(4, 512, 7).unwrap();
        let mut exact: HashMap<&str, u64> = HashMap::new();
        for q in &stream {
            s.update(q.as_bytes());
            *exact.entry(q).or_default() += 1;
        }
        for (q, &truth) in &exact {
            assert!(s.estimate_count_min(q.as_bytes()) >= truth, "{q}");
        }
    }

    #[test]
    fn conservative_dominated_by_plain() {
        let stream = zipf_stream(20_000, 1.1, 500, 8);
        let mut cons = CountMeanMin::new(4, 256, 8).unwrap();
        let mut plain = CountMeanMin::new(4, 256, 8).unwrap();
        for q in &stream {
            cons.update(q.as_bytes());
            plain.update_plain(q.as_bytes());
            for (c, p) in cons.counters.iter().zip(plain.counters.iter()) {
                debug_assert!(c <= p);
            }
        }
        for (c, p) in cons.counters.iter().zip(plain.counters.iter()) {
            assert!(c <= p);
        }
    }

    #[test]
    fn noise_deduction_reduces_mean_absolute_error() {
        // collision-heavy regime (universe >> width), where the raw
        // count-min bound genuinely over-estimates
        let mut with = 0.0;
        let mut without = 0.0;
        for seed in 0..20u64 {
            let stream = zipf_stream(30_000, 1.05, 5_000, 100 + seed);
            let mut s = CountMeanMin::new(4, 256, seed).unwrap();
            let mut exact: HashMap<&str, u64> = HashMap::new();
            for q in &stream {
                s.update(q.as_bytes());
                *exact.entry(q).or_default() += 1;
            }
            for (q, &truth) in &exact {
                with += (s.estimate(q.as_bytes()) - truth as f64).abs();
                without += (s.estimate_count_min(q.as_bytes()) as f64 - truth as f64).abs();
            }
        }
        assert!(with <= without, "MAE with deduction {with} vs raw {without}");
    }

    #[test]
    fn heavy_hitter_estimates_scale_with_stream() {
        let stream = zipf_stream(25_000, 1.2, 2_000, 9);
        let mut once = CountMeanMin::new(4, 4096, 9).unwrap();
        let mut twice = CountMeanMin::new(4, 4096, 9).unwrap();
        for q in &stream {
            once.update(q.as_bytes());
        }
        for q in stream.iter().chain(stream.iter()) {
            twice.update(q.as_bytes());
        }
        let mut exact: HashMap<&str, u64> = HashMap::new();
        for q in &stream {
            *exact.entry(q).or_default() += 1;
        }
        for (q, &truth) in exact.iter().filter(|(_, &c)| c >= 100) {
            let a = once.estimate(q.as_bytes());
            let b = twice.estimate(q.as_bytes());
            assert!((b - 2.0 * a).abs() / (2.0 * truth as f64) <= 0.02, "{q}: {a} {b}");
        }
    }

    #[test]
    fn serialization_round_trip() {
        let mut s = CountMeanMin::new(3, 128, 10).unwrap();
        for i in 0..1000u32 {
            s.update(&i.to_le_bytes()[..2]);
        }
        assert_eq!(CountMeanMin::from_bytes(&s.to_bytes()).unwrap(), s);
        assert!(CountMeanMin::from_bytes(&[0, 1, 2]).is_err());
    }

    proptest! {
        // Upper-bound safety on arbitrary short streams.
        #[test]
        fn raw_estimate_upper_bounds_truth(items in proptest::collection::vec(0u8..40, 0..300)) {
            let mut s = CountMeanMin::new(3, 16, 11).unwrap();
            let mut exact: HashMap<u8, u64> = HashMap::new();
            for &i in &items {
                s.update(&[i]);
                *exact.entry(i).or_default() += 1;
            }
            for (i, &truth) in &exact {
                prop_assert!(s.estimate_count_min(&[*i]) >= truth);
            }
        }
    }
}
