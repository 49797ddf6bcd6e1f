//! Synthetic query-corpus generator. Frequencies follow a Zipf profile
//! with the exponent calibrated by bisection so the fraction of distinct
//! queries occurring exactly once hits a target; labels are assigned per
//! distinct query and the query text carries class-conditional tokens so
//! the corpus is actually learnable.

use crate::error::{Error, Result};
use crate::pipeline::{Label, Query};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

const TOKENS_PER_QUERY: usize = 5;
const CLASS_POOL_SIZE: u64 = 2_500;
const OWN_POOL_PROB: f64 = 0.85;
const SINGLETON_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub n_total: u64,
    pub n_distinct_target: u64,
    /// Fixed Zipf exponent; None means calibrate to the singleton target.
    pub zipf_s: Option<f64>,
    pub positive_fraction: f64,
    pub singleton_fraction_target: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_total: 250_000,
            n_distinct_target: 5_800,
            zipf_s: None,
            positive_fraction: 0.63,
            singleton_fraction_target: 0.60,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    fn validate(&self) -> Result<()> {
        if self.n_distinct_target == 0 || self.n_distinct_target > self.n_total {
            return Err(Error::Config(format!(
                "need 1 <= n_distinct_target <= n_total, got {} / {}",
                self.n_distinct_target, self.n_total
            )));
        }
        for (name, v) in [
            ("positive_fraction", self.positive_fraction),
            ("singleton_fraction_target", self.singleton_fraction_target),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must be in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub query: Query,
    pub label: Label,
    pub count: u64,
}

/// A generated corpus: distinct entries with multiplicities plus the
/// shuffled occurrence stream (indices into `entries`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
    pub stream: Vec<u32>,
    /// Exponent actually used (calibrated or fixed).
    pub zipf_s: f64,
}

impl Corpus {
    pub fn distinct_count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn total_occurrences(&self) -> u64 {
        self.stream.len() as u64
    }

    pub fn singleton_fraction(&self) -> f64 {
        let ones = self.entries.iter().filter(|e| e.count == 1).count();
        ones as f64 / self.entries.len() as f64
    }

    pub fn occurrences(&self) -> impl Iterator<Item = &Query> + '_ {
        self.stream.iter().map(|&i| &self.entries[i as usize].query)
    }

    /// One occurrence per line: query text, tab, hidden label.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for &i in &self.stream {
            let e = &self.entries[i as usize];
            let label = match e.label {
                Label::Positive => "Positive",
                Label::Negative => "Negative",
            };
            writeln!(f, "{}\t{}", e.query.text(), label)?;
        }
        Ok(())
    }

    pub fn read_tsv(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut index: std::collections::HashMap<String, u32> = Default::default();
        let mut entries: Vec<CorpusEntry> = Vec::new();
        let mut stream = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            let (text, label) = line.rsplit_once('\t').ok_or_else(|| {
                Error::Config(format!("corpus line {} is not tab-separated", lineno + 1))
            })?;
            let label = match label {
                "Positive" => Label::Positive,
                "Negative" => Label::Negative,
                other => {
                    return Err(Error::Config(format!(
                        "corpus line {}: unknown label '{other}'",
                        lineno + 1
                    )))
                }
            };
            let idx = *index.entry(text.to_string()).or_insert_with(|| {
                entries.push(CorpusEntry {
                    query: Query::new(text).expect("non-empty corpus line"),
                    label,
                    count: 0,
                });
                (entries.len() - 1) as u32
            });
            if entries[idx as usize].label != label {
                return Err(Error::Config(format!(
                    "corpus line {}: inconsistent label for '{text}'",
                    lineno + 1
                )));
            }
            entries[idx as usize].count += 1;
            stream.push(idx);
        }
        if entries.is_empty() {
            return Err(Error::Config("corpus file is empty".into()));
        }
        Ok(Self {
            entries,
            stream,
            zipf_s: f64::NAN,
        })
    }
}

/// Rank multiplicities for exponent `s`: floor-scaled Zipf weights with a
/// per-rank floor of one, scale chosen so the total lands exactly on
/// n_total.
fn counts_for(s: f64, n_total: u64, n_distinct: u64) -> Vec<u64> {
    let weights: Vec<f64> = (1..=n_distinct).map(|r| (r as f64).powf(-s)).collect();
    let total_at = |scale: f64| -> u64 {
        weights
            .iter()
            .map(|w| ((scale * w).floor() as u64).max(1))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = n_total as f64 / weights[0] + 2.0;
    for _ in 0..80 {
        let mid = (lo + hi) / 2.0;
        if total_at(mid) <= n_total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut counts: Vec<u64> = weights
        .iter()
        .map(|w| ((lo * w).floor() as u64).max(1))
        .collect();
    let mut remainder = n_total - counts.iter().sum::<u64>();
    let head = (n_distinct as usize / 10).max(1);
    let mut i = 0;
    while remainder > 0 {
        counts[i % head] += 1;
        remainder -= 1;
        i += 1;
    }
    counts
}

fn singleton_fraction_of(counts: &[u64]) -> f64 {
    counts.iter().filter(|&&c| c == 1).count() as f64 / counts.len() as f64
}

fn calibrate_exponent(spec: &CorpusSpec) -> Result<(f64, Vec<u64>)> {
    if let Some(s) = spec.zipf_s {
        return Ok((s, counts_for(s, spec.n_total, spec.n_distinct_target)));
    }
    if spec.n_total == spec.n_distinct_target {
        // forced all-singleton corpus
        return Ok((1.0, vec![1; spec.n_distinct_target as usize]));
    }
    let target = spec.singleton_fraction_target;
    let (mut lo, mut hi) = (0.05f64, 6.0f64);
    for _ in 0..50 {
        let mid = (lo + hi) / 2.0;
        let frac = singleton_fraction_of(&counts_for(mid, spec.n_total, spec.n_distinct_target));
        if frac < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s = (lo + hi) / 2.0;
    let counts = counts_for(s, spec.n_total, spec.n_distinct_target);
    let frac = singleton_fraction_of(&counts);
    if (frac - target).abs() > SINGLETON_TOLERANCE {
        return Err(Error::Config(format!(
            "singleton target {target:.2} infeasible for n_total={} n_distinct={}: \
             best achievable fraction {frac:.3} at s={s:.3}",
            spec.n_total, spec.n_distinct_target
        )));
    }
    Ok((s, counts))
}

pub fn generate(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let (zipf_s, counts) = calibrate_exponent(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut entries = Vec::with_capacity(counts.len());
    for (rank, &count) in counts.iter().enumerate() {
        let label = if rng.gen::<f64>() < spec.positive_fraction {
            Label::Positive
        } else {
            Label::Negative
        };
        let mut text = format!("q{rank:05x}");
        for _ in 0..TOKENS_PER_QUERY {
            let own = rng.gen::<f64>() < OWN_POOL_PROB;
            let pos_pool = matches!(label, Label::Positive) == own;
            let tok = rng.gen_range(0..CLASS_POOL_SIZE);
            let prefix = if pos_pool { 'a' } else { 'b' };
            text.push_str(&format!(" {prefix}{tok:04x}"));
        }
        entries.push(CorpusEntry {
            query: Query::new(text)?,
            label,
            count,
        });
    }
    let mut stream = Vec::with_capacity(spec.n_total as usize);
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            stream.push(i as u32);
        }
    }
    stream.shuffle(&mut rng);
    Ok(Corpus {
        entries,
        stream,
        zipf_s,
    })
}
