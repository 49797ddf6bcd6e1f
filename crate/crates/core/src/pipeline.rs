//! The release data path: Bernoulli subsampling of the query stream,
//! sketch-backed frequency-k filtering, and the ranked candidate pool with
//! its release ledger.
//!
//! The whole query string is the quasi-identifier; frequency is measured
//! on the full original stream by default and the k-threshold is applied
//! to queries surviving the subsample. The gate uses the noise-deducted
//! estimate, which biases toward rejecting borderline queries.

use crate::error::{Error, Result};
use crate::hash::hash_bytes;
use crate::sketch::{CountMeanMin, HyperLogLog};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Binary intent label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

/// A user utterance; the unit of privacy. True labels live outside the
/// query (in the harness truth store) so learner and pipeline code cannot
/// read them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    text: String,
}

impl Query {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::Config("query text must be non-empty".into()));
        }
        Ok(Self { text })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Stable 64-bit identifier used for tie-breaking and ledgers.
    pub fn id_hash(&self) -> u64 {
        hash_bytes(0, self.text.as_bytes())
    }
}

/// Keep each occurrence independently with probability beta; order
/// preserved, deterministic per seed.
pub fn subsample(stream: &[Query], beta: f64, seed: u64) -> Result<Vec<Query>> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Config(format!("beta must be in (0, 1], got {beta}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(stream
        .iter()
        .filter(|_| rng.gen::<f64>() < beta)
        .cloned()
        .collect())
}

/// Expected distinct-count of the subsample, ceil(beta * n_hat); used for
/// capacity pre-allocation and reporting. Occurrence-level sampling keeps
/// repeated queries more often than beta, so this is a planning figure,
/// not a bound.
pub fn expected_pool_size(hll: &HyperLogLog, beta: f64) -> u64 {
    (beta * hll.estimate()).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub query: Query,
    /// Prediction variance phi over the scorer's draws.
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRecord {
    pub query_hash: u64,
    pub phi: f64,
    pub k: u32,
    pub beta: f64,
    pub step: u64,
}

/// One JSON-lines record per released distinct query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReleaseLedger {
    records: Vec<ReleaseRecord>,
}

impl ReleaseLedger {
    pub fn len(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[ReleaseRecord] {
        &self.records
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("ledger record serializes"))
            .map(|s| s + "\n")
            .collect()
    }
}

/// Candidate pool of k-anonymous queries ordered by prediction variance
/// (descending, ties broken by ascending query hash).
#[derive(Debug, Clone)]
pub struct RankedExamplePool {
    entries: Vec<PoolEntry>,
    released: Vec<bool>,
    k: u32,
    beta: f64,
    ledger: ReleaseLedger,
}

impl RankedExamplePool {
    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn is_released(&self, index: usize) -> bool {
        self.released[index]
    }

    pub fn ledger(&self) -> &ReleaseLedger {
        &self.ledger
    }

    /// Indices of entries not yet released, in rank order.
    pub fn remaining(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.entries.len()).filter(|&i| !self.released[i])
    }

    /// Release the single representative occurrence of a pool entry to the
    /// external annotator. The ledger grows by one per distinct query
    /// regardless of its multiplicity; re-releasing is an error.
    pub fn release_one_of_k(&mut self, index: usize) -> Result<&Query> {
        if index >= self.entries.len() {
            return Err(Error::Ledger(format!("no pool entry at index {index}")));
        }
        if self.released[index] {
            return Err(Error::Ledger(format!(
                "pool entry {index} already released"
            )));
        }
        self.released[index] = true;
        let entry = &self.entries[index];
        self.ledger.records.push(ReleaseRecord {
            query_hash: entry.query.id_hash(),
            phi: entry.score,
            k: self.k,
            beta: self.beta,
            step: self.ledger.len(),
        });
        Ok(&self.entries[index].query)
    }
}

fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
}

/// Build the ranked pool from a subsample: distinct queries whose
/// (noise-deducted) estimated frequency reaches k are scored with the
/// variance of `l` scorer draws and ranked descending. An empty pool is a
/// valid outcome and signals over-strict privacy settings.
pub fn build_pool<F>(
    sample: &[Query],
    k: u32,
    beta: f64,
    freq: &CountMeanMin,
    scorer: F,
    l: usize,
) -> Result<RankedExamplePool>
where
    F: Fn(&Query) -> Vec<f64>,
{
    if k < 1 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if l < 2 {
        return Err(Error::Config("l must be >= 2".into()));
    }
    // distinct queries in first-seen order for deterministic scoring
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for q in sample {
        if !seen.insert(q.text().to_string()) {
            continue;
        }
        // Frequencies are integers, so the gate tests ceil(estimate) >= k;
        // otherwise the fractional noise deduction would reject every
        // observed singleton even at k = 1.
        if freq.estimate(q.text().as_bytes()) <= f64::from(k) - 1.0 {
            continue;
        }
        let draws = scorer(q);
        if draws.len() != l {
            return Err(Error::Config(format!(
                "scorer returned {} draws, expected {l}",
                draws.len()
            )));
        }
        entries.push(PoolEntry {
            query: q.clone(),
            score: population_variance(&draws),
        });
    }
    entries.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.query.id_hash().cmp(&b.query.id_hash()))
    });
    let released = vec![false; entries.len()];
    Ok(RankedExamplePool {
        entries,
        released,
        k,
        beta,
        ledger: ReleaseLedger::default(),
    })
}
