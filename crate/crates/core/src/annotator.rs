//! Simulated external crowd oracle. Each annotate call draws a fresh
//! per-call correctness probability from a clamped normal and returns the
//! true label with that probability; every call increments the budget
//! ledger.

use crate::pipeline::{Label, Query};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub accuracy_mean: f64,
    pub accuracy_sd: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            accuracy_mean: 0.65,
            accuracy_sd: 0.01,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    per_step_log: Vec<(u64, u64)>, // (step, query_hash)
}

impl BudgetLedger {
    pub fn labels_purchased(&self) -> u64 {
        self.per_step_log.len() as u64
    }

    pub fn log(&self) -> &[(u64, u64)] {
        &self.per_step_log
    }

    pub fn to_jsonl(&self) -> String {
        self.per_step_log
            .iter()
            .map(|(step, hash)| format!("{{\"step\":{step},\"query_hash\":{hash}}}\n"))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Annotator {
    config: OracleConfig,
    rng: ChaCha8Rng,
    ledger: BudgetLedger,
}

impl Annotator {
    pub fn new(config: OracleConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            ledger: BudgetLedger::default(),
        }
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    /// Label one query. The caller supplies the hidden true label; the
    /// n-annotator crowd is collapsed to a single returned label.
    pub fn annotate(&mut self, x: &Query, truth: Label) -> Label {
        let p_correct = if self.config.accuracy_sd == 0.0 {
            self.config.accuracy_mean
        } else {
            Normal::new(self.config.accuracy_mean, self.config.accuracy_sd)
                .expect("valid normal")
                .sample(&mut self.rng)
        }
        .clamp(0.0, 1.0);
        let correct = self.rng.gen::<f64>() < p_correct;
        self.ledger
            .per_step_log
            .push((self.ledger.labels_purchased(), x.id_hash()));
        if correct {
            truth
        } else {
            truth.flipped()
        }
    }
}
