//! Desk-scale probabilistic binary classifier: a bagged ensemble of
//! logistic members over hashed bag-of-words features, plus the
//! uncertainty-sampling acquisition strategies. Bagging supplies the
//! prediction variance phi that ranks the candidate pool.

use crate::error::{Error, Result};
use crate::hash::{derive_seed, hash_bytes};
use crate::pipeline::{Label, Query, RankedExamplePool};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_FEATURE_DIM: usize = 1 << 18;
pub const DEFAULT_ENSEMBLE: usize = 10;
pub const DEFAULT_REFIT_EVERY: u64 = 500;

const PROB_CLAMP: f64 = 1e-9;
const FEATURE_HASH_SEED: u64 = 0x5eed_f00d;
const BOOTSTRAP_EPOCHS: usize = 6;
const BOOTSTRAP_LR: f64 = 0.3;
const UPDATE_LR: f64 = 0.02;
const REFIT_EPOCHS: usize = 2;
const REFIT_LR: f64 = 0.06;
const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    LeastConfidence,
    Margin,
    Entropy,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "least-confidence" | "least_confidence" | "lc" => Ok(Strategy::LeastConfidence),
            "margin" => Ok(Strategy::Margin),
            "entropy" => Ok(Strategy::Entropy),
            other => Err(Error::Config(format!("unknown strategy '{other}'"))),
        }
    }
}

/// Signed hashed bag-of-words over whitespace tokens.
pub fn features(text: &str, dim: usize) -> Vec<(usize, f64)> {
    debug_assert!(dim.is_power_of_two());
    text.split_whitespace()
        .map(|tok| {
            let h = hash_bytes(FEATURE_HASH_SEED, tok.as_bytes());
            let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
            ((h >> 1) as usize & (dim - 1), sign)
        })
        .collect()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn label_target(label: Label) -> f64 {
    match label {
        Label::Positive => 1.0,
        Label::Negative => 0.0,
    }
}

#[derive(Debug, Clone)]
struct Member {
    weights: Vec<f64>,
    bias: f64,
}

impl Member {
    fn new(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    fn raw(&self, feats: &[(usize, f64)]) -> f64 {
        self.bias + feats.iter().map(|&(i, v)| self.weights[i] * v).sum::<f64>()
    }

    fn predict(&self, feats: &[(usize, f64)]) -> f64 {
        sigmoid(self.raw(feats)).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    }

    fn sgd_step(&mut self, feats: &[(usize, f64)], target: f64, lr: f64) {
        let g = sigmoid(self.raw(feats)) - target;
        for &(i, v) in feats {
            self.weights[i] -= lr * g * v;
        }
        self.bias -= lr * g;
    }
}

/// Log loss of a single logistic member on one example; the gradient
/// counterpart below is checked against finite differences in tests.
pub fn logistic_loss(weights: &[f64], bias: f64, feats: &[(usize, f64)], target: f64) -> f64 {
    let z = bias + feats.iter().map(|&(i, v)| weights[i] * v).sum::<f64>();
    let p = sigmoid(z).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

/// Gradient of `logistic_loss` with respect to the active weights and the
/// bias; returned as (per-active-feature gradients, bias gradient).
pub fn logistic_grad(
    weights: &[f64],
    bias: f64,
    feats: &[(usize, f64)],
    target: f64,
) -> (Vec<f64>, f64) {
    let z = bias + feats.iter().map(|&(i, v)| weights[i] * v).sum::<f64>();
    let g = sigmoid(z) - target;
    (feats.iter().map(|&(_, v)| g * v).collect(), g)
}

#[derive(Debug, Clone)]
pub struct Model {
    members: Vec<Member>,
    feature_dim: usize,
    ensemble_size: usize,
    seed: u64,
    refit_every: u64,
    golden: Vec<(Query, Label)>,
    acquired: Vec<(Query, Label)>,
    training_log: Vec<(u64, Label, u64)>, // (query_hash, label, step)
    steps: u64,
}

impl Model {
    /// Train l members on bootstrap resamples of the golden set.
    pub fn bootstrap(
        golden: &[(Query, Label)],
        l: usize,
        seed: u64,
        feature_dim: usize,
        refit_every: u64,
    ) -> Result<Self> {
        if golden.is_empty() {
            return Err(Error::Config("golden set must be non-empty".into()));
        }
        if l < 2 {
            return Err(Error::Config("ensemble size l must be >= 2".into()));
        }
        if !feature_dim.is_power_of_two() {
            return Err(Error::Config("feature_dim must be a power of two".into()));
        }
        let has_pos = golden.iter().any(|(_, y)| *y == Label::Positive);
        let has_neg = golden.iter().any(|(_, y)| *y == Label::Negative);
        if !has_pos || !has_neg {
            return Err(Error::Config("golden set must contain both labels".into()));
        }
        let mut model = Self {
            members: Vec::new(),
            feature_dim,
            ensemble_size: l,
            seed,
            refit_every: refit_every.max(1),
            golden: golden.to_vec(),
            acquired: Vec::new(),
            training_log: Vec::new(),
            steps: 0,
        };
        model.fit_members(0);
        Ok(model)
    }

    fn fit_members(&mut self, refit_round: u64) {
        let examples: Vec<(Vec<(usize, f64)>, f64)> = self
            .golden
            .iter()
            .chain(self.acquired.iter())
            .map(|(q, y)| (features(q.text(), self.feature_dim), label_target(*y)))
            .collect();
        let n = examples.len();
        self.members = (0..self.ensemble_size)
            .map(|m| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    self.seed,
                    (m as u64) << 20 | refit_round,
                ));
                let mut member = Member::new(self.feature_dim);
                // bagging resample with replacement
                let mut order: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
                for _ in 0..BOOTSTRAP_EPOCHS {
                    order.shuffle(&mut rng);
                    for &i in &order {
                        member.sgd_step(&examples[i].0, examples[i].1, BOOTSTRAP_LR);
                    }
                }
                member
            })
            .collect();
    }

    pub fn ensemble_size(&self) -> usize {
        self.ensemble_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn training_log(&self) -> &[(u64, Label, u64)] {
        &self.training_log
    }

    pub fn update_count(&self) -> u64 {
        self.steps
    }

    /// Per-member positive-class probabilities, clamped away from {0, 1}.
    pub fn predict_members(&self, x: &Query) -> Vec<f64> {
        let feats = features(x.text(), self.feature_dim);
        self.members.iter().map(|m| m.predict(&feats)).collect()
    }

    /// Ensemble-mean positive-class probability.
    pub fn predict_proba(&self, x: &Query) -> f64 {
        let probs = self.predict_members(x);
        probs.iter().sum::<f64>() / probs.len() as f64
    }

    /// Population variance of the member probabilities (phi).
    pub fn variance_score(&self, x: &Query) -> f64 {
        let probs = self.predict_members(x);
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        probs.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / probs.len() as f64
    }

    /// Incremental gradient step on every member, with a full refit from
    /// golden + acquired every `refit_every` acquisitions.
    pub fn update(&mut self, x: &Query, label: Label) {
        let feats = features(x.text(), self.feature_dim);
        let target = label_target(label);
        for m in &mut self.members {
            m.sgd_step(&feats, target, UPDATE_LR);
        }
        self.steps += 1;
        self.acquired.push((x.clone(), label));
        self.training_log.push((x.id_hash(), label, self.steps));
        if self.steps % self.refit_every == 0 {
            self.refit_members(self.steps / self.refit_every);
        }
    }

    /// Periodic full refit: each member continues from its current weights
    /// with shuffled passes over golden + acquired. Warm-starting keeps
    /// successive refits smooth (no bagging re-draw) while still averaging
    /// annotator noise across the whole acquired set.
    fn refit_members(&mut self, refit_round: u64) {
        let examples: Vec<(Vec<(usize, f64)>, f64)> = self
            .golden
            .iter()
            .chain(self.acquired.iter())
            .map(|(q, y)| (features(q.text(), self.feature_dim), label_target(*y)))
            .collect();
        let n = examples.len();
        for (m, member) in self.members.iter_mut().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                self.seed,
                (m as u64) << 20 | refit_round,
            ));
            let mut order: Vec<usize> = (0..n).collect();
            for _ in 0..REFIT_EPOCHS {
                order.shuffle(&mut rng);
                for &i in &order {
                    member.sgd_step(&examples[i].0, examples[i].1, REFIT_LR);
                }
            }
        }
    }

    /// Versioned checkpoint: feature_dim, l, member weights + bias as
    /// little-endian f32.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(9 + self.members.len() * (self.feature_dim + 1) * 4);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.feature_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.ensemble_size as u32).to_le_bytes());
        for m in &self.members {
            for w in &m.weights {
                out.extend_from_slice(&(*w as f32).to_le_bytes());
            }
            out.extend_from_slice(&(m.bias as f32).to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let err = || Error::Codec("model checkpoint malformed".into());
        if bytes.len() < 9 || bytes[0] != CHECKPOINT_VERSION {
            return Err(err());
        }
        let feature_dim = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        let l = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let per_member = (feature_dim + 1) * 4;
        if bytes.len() != 9 + l * per_member || !feature_dim.is_power_of_two() || l < 2 {
            return Err(err());
        }
        let mut members = Vec::with_capacity(l);
        for m in 0..l {
            let base = 9 + m * per_member;
            let mut member = Member::new(feature_dim);
            for i in 0..feature_dim {
                let off = base + i * 4;
                member.weights[i] =
                    f64::from(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            }
            let off = base + feature_dim * 4;
            member.bias = f64::from(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
            members.push(member);
        }
        Ok(Self {
            members,
            feature_dim,
            ensemble_size: l,
            seed: 0,
            refit_every: DEFAULT_REFIT_EVERY,
            golden: Vec::new(),
            acquired: Vec::new(),
            training_log: Vec::new(),
            steps: 0,
        })
    }

    #[cfg(test)]
    fn with_fixed_members(biases: &[f64]) -> Self {
        // members with only a bias, so predict equals sigmoid(bias)
        Self {
            members: biases
                .iter()
                .map(|&b| Member {
                    weights: vec![0.0; 16],
                    bias: b,
                })
                .collect(),
            feature_dim: 16,
            ensemble_size: biases.len(),
            seed: 0,
            refit_every: DEFAULT_REFIT_EVERY,
            golden: Vec::new(),
            acquired: Vec::new(),
            training_log: Vec::new(),
            steps: 0,
        }
    }
}

/// 1 - p_hat where p_hat is the posterior of the most likely class.
pub fn least_confidence(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(1.0 - p.max(1.0 - p))
}

/// Margin between the two class posteriors; minimized by uncertainty
/// sampling, so acquisition negates it.
pub fn margin(p: f64) -> Result<f64> {
    check_prob(p)?;
    let top = p.max(1.0 - p);
    Ok(top - (1.0 - top))
}

/// Shannon entropy of the ensemble-mean probability, in nats.
pub fn entropy(p: f64) -> Result<f64> {
    check_prob(p)?;
    Ok(-(p * p.ln()) - (1.0 - p) * (1.0 - p).ln())
}

fn check_prob(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability must be in (0, 1), got {p}")));
    }
    Ok(())
}

fn acquisition_score(strategy: Strategy, p: f64) -> f64 {
    match strategy {
        Strategy::LeastConfidence => least_confidence(p).expect("clamped probability"),
        Strategy::Margin => -margin(p).expect("clamped probability"),
        Strategy::Entropy => entropy(p).expect("clamped probability"),
    }
}

/// Pick the unreleased pool entry maximizing the strategy's acquisition
/// score (deterministic hash tie-break); None when the pool is exhausted.
pub fn next_example(pool: &RankedExamplePool, model: &Model, strategy: Strategy) -> Option<usize> {
    pool.remaining()
        .map(|i| {
            let entry = &pool.entries()[i];
            let score = acquisition_score(strategy, model.predict_proba(&entry.query));
            (i, score, entry.query.id_hash())
        })
        .max_by(|a, b| {
            a.1.partial_cmp(&b.1)
                .unwrap()
                .then_with(|| b.2.cmp(&a.2)) // ascending hash wins ties
        })
        .map(|(i, _, _)| i)
}
