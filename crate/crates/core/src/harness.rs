//! Experiment harness: wires corpus generation, sketching, subsampling,
//! the k-anonymous pool, the learner, and the simulated annotator into
//! single runs and (beta, k, seed) grids, then renders the report files.
//!
//! Sub-RNGs are derived per channel from the run seed so every cell of a
//! grid sharing a seed sees the same partition, subsample, and sketches;
//! only the k gate differs. Wall time is reported in summary.json but kept
//! out of the CSVs so repeated runs are byte-identical.

use crate::annotator::{Annotator, OracleConfig};
use crate::error::{Error, Result};
use crate::hash::derive_seed;
use crate::learner::{next_example, Model, Strategy};
use crate::pipeline::{build_pool, subsample, Label, Query};
use crate::privacy::{self, base_delta_for_k, GuaranteeCell};
use crate::sketch::{CountMeanMin, HyperLogLog};
use crate::workload::{Corpus, CorpusSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

/// Which stream feeds the frequency sketch used by the k gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreqScope {
    /// Frequencies of the full original stream (default).
    FullStream,
    /// Frequencies of the retained subsample only.
    Subsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusSpec,
    /// Optional TSV path; when set it overrides generated corpora.
    pub corpus_path: Option<std::path::PathBuf>,
    pub betas: Vec<f64>,
    pub ks: Vec<u32>,
    pub seeds: Vec<u64>,
    pub master_seed: u64,
    pub bootstrap_size: usize,
    pub eval_fraction: f64,
    pub strategy: Strategy,
    pub ensemble: usize,
    pub budget_cap: Option<u64>,
    pub eval_every: u64,
    pub refit_every: u64,
    pub report_epsilon: f64,
    pub n_max: u64,
    pub hll_bits: u8,
    pub cmm_depth: usize,
    pub cmm_width: usize,
    pub feature_dim: usize,
    pub freq_scope: FreqScope,
    pub oracle: OracleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            corpus_path: None,
            betas: vec![0.1, 0.3, 0.6, 0.9],
            ks: vec![1, 20, 100, 200, 500],
            seeds: vec![1, 2, 3, 4, 5],
            master_seed: 0,
            bootstrap_size: 1_000,
            eval_fraction: 0.1,
            strategy: Strategy::LeastConfidence,
            ensemble: 10,
            budget_cap: None,
            eval_every: 250,
            // desk scale affords frequent full refits, which average out
            // annotator label noise far better than lone gradient steps
            refit_every: 50,
            report_epsilon: 1.0,
            n_max: 1_000_000,
            hll_bits: 14,
            cmm_depth: 4,
            cmm_width: 16_384,
            feature_dim: crate::learner::DEFAULT_FEATURE_DIM,
            freq_scope: FreqScope::FullStream,
            oracle: OracleConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.betas.is_empty() || self.ks.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("betas, ks, seeds must be non-empty".into()));
        }
        for &b in &self.betas {
            if !(b > 0.0 && b <= 1.0) {
                return Err(Error::Config(format!("beta {b} outside (0, 1]")));
            }
        }
        if self.ks.contains(&0) {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.bootstrap_size < 2 {
            return Err(Error::Config("bootstrap_size must be >= 2".into()));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config("eval_fraction must be in (0, 1)".into()));
        }
        if self.ensemble < 2 {
            return Err(Error::Config("ensemble size must be >= 2".into()));
        }
        if self.eval_every == 0 || self.refit_every == 0 {
            return Err(Error::Config("eval_every/refit_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Resolve the corpus for one grid seed.
    pub fn corpus_for_seed(&self, seed: u64) -> Result<Corpus> {
        if let Some(path) = &self.corpus_path {
            return Corpus::read_tsv(path);
        }
        let spec = CorpusSpec {
            seed: derive_seed(self.master_seed, seed),
            ..self.corpus
        };
        crate::workload::generate(&spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub beta: f64,
    pub k: u32,
    pub seed: u64,
    pub pool_size: u64,
    /// True when privacy settings filtered out every candidate and the
    /// metrics are bootstrap-only.
    pub empty_pool: bool,
    pub labels_purchased: u64,
    /// Final held-out accuracy, percent.
    pub accuracy: f64,
    /// (labels purchased, eval accuracy percent) checkpoints, budget curve.
    pub curve: Vec<(u64, f64)>,
    pub epsilon: f64,
    pub delta: f64,
    /// Hashes of released queries, for audit; not serialized.
    #[serde(skip)]
    pub released: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: RunConfig,
    pub runs: Vec<RunResult>,
    pub failures: Vec<CellFailure>,
    pub wall_time_secs: f64,
}

/// Top-1 accuracy on a held-out set, in percent.
pub fn evaluate(model: &Model, eval: &[(Query, Label)]) -> f64 {
    let correct = eval
        .iter()
        .filter(|(q, y)| {
            let predicted = if model.predict_proba(q) > 0.5 {
                Label::Positive
            } else {
                Label::Negative
            };
            predicted == *y
        })
        .count();
    100.0 * correct as f64 / eval.len() as f64
}

/// One active-learning run at fixed (beta, k, seed).
pub fn run_single(config: &RunConfig, corpus: &Corpus, beta: f64, k: u32, seed: u64) -> Result<RunResult> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let distinct = corpus.entries.len();
    let eval_size = ((distinct as f64 * config.eval_fraction) as usize).max(1);
    if config.bootstrap_size + eval_size >= distinct {
        return Err(Error::Config(format!(
            "corpus has {distinct} distinct queries; bootstrap {} + eval {eval_size} leaves no pool",
            config.bootstrap_size
        )));
    }

    // partition distinct queries: golden / eval / pool-eligible (disjoint)
    let mut order: Vec<usize> = (0..distinct).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, 0)));
    let golden: Vec<(Query, Label)> = order[..config.bootstrap_size]
        .iter()
        .map(|&i| (corpus.entries[i].query.clone(), corpus.entries[i].label))
        .collect();
    let eval: Vec<(Query, Label)> = order[config.bootstrap_size..config.bootstrap_size + eval_size]
        .iter()
        .map(|&i| (corpus.entries[i].query.clone(), corpus.entries[i].label))
        .collect();
    let eligible: std::collections::HashSet<u32> = order[config.bootstrap_size + eval_size..]
        .iter()
        .map(|&i| i as u32)
        .collect();

    let truth: HashMap<u64, Label> = corpus
        .entries
        .iter()
        .map(|e| (e.query.id_hash(), e.label))
        .collect();

    // sketches over the configured stream scope
    let mut hll = HyperLogLog::new(config.hll_bits, derive_seed(seed, 2))?;
    let mut cmm = CountMeanMin::new(config.cmm_depth, config.cmm_width, derive_seed(seed, 3))?;
    let eligible_stream: Vec<Query> = corpus
        .stream
        .iter()
        .filter(|i| eligible.contains(i))
        .map(|&i| corpus.entries[i as usize].query.clone())
        .collect();
    let sample = subsample(&eligible_stream, beta, derive_seed(seed, 1))?;
    let sketch_stream = match config.freq_scope {
        FreqScope::FullStream => &eligible_stream,
        FreqScope::Subsample => &sample,
    };
    for q in sketch_stream {
        hll.insert(q.text().as_bytes());
        cmm.update(q.text().as_bytes());
    }

    let mut model = Model::bootstrap(
        &golden,
        config.ensemble,
        derive_seed(seed, 4),
        config.feature_dim,
        config.refit_every,
    )?;
    let mut pool = build_pool(
        &sample,
        k,
        beta,
        &cmm,
        |q| model.predict_members(q),
        config.ensemble,
    )?;
    let pool_size = pool.len() as u64;

    let mut annotator = Annotator::new(OracleConfig {
        seed: derive_seed(seed, 5),
        ..config.oracle
    });
    let mut curve = vec![(0u64, evaluate(&model, &eval))];
    let mut released = Vec::new();
    while let Some(i) = next_example(&pool, &model, config.strategy) {
        if let Some(cap) = config.budget_cap {
            if annotator.ledger().labels_purchased() >= cap {
                break;
            }
        }
        let query = pool.release_one_of_k(i)?.clone();
        let label = annotator.annotate(&query, truth[&query.id_hash()]);
        model.update(&query, label);
        released.push(query.id_hash());
        let bought = annotator.ledger().labels_purchased();
        if bought % config.eval_every == 0 {
            curve.push((bought, evaluate(&model, &eval)));
        }
    }
    let labels_purchased = annotator.ledger().labels_purchased();
    debug_assert_eq!(labels_purchased, model.update_count());
    debug_assert_eq!(labels_purchased, pool.ledger().len());
    if curve.last().map(|&(n, _)| n) != Some(labels_purchased) {
        curve.push((labels_purchased, evaluate(&model, &eval)));
    }

    let delta = base_delta_for_k(k, beta, config.report_epsilon, config.n_max)?;
    // accountant cross-check: the reported pair must be the amplification
    // of the corresponding un-subsampled guarantee
    if delta > 0.0 && delta / beta <= 1.0 {
        let eps1 = ((config.report_epsilon.exp() - 1.0) / beta).ln_1p();
        let (e2, d2) = crate::privacy::amplify(eps1, delta / beta, 1.0, beta)?;
        debug_assert!(
            (e2 - config.report_epsilon).abs() < 1e-9 && (d2 - delta).abs() <= 1e-9 * delta,
            "amplification bookkeeping drifted: ({e2}, {d2}) vs ({}, {delta})",
            config.report_epsilon
        );
    }
    Ok(RunResult {
        beta,
        k,
        seed,
        pool_size,
        empty_pool: pool_size == 0,
        labels_purchased,
        accuracy: curve.last().unwrap().1,
        curve,
        epsilon: config.report_epsilon,
        delta,
        released,
    })
}

/// A grid cell that could not run; the sweep records it and continues.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub beta: f64,
    pub k: u32,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub runs: Vec<RunResult>,
    pub failures: Vec<CellFailure>,
}

/// Full (beta, k, seed) sweep; one corpus per seed, cells in parallel,
/// results in deterministic (seed, beta, k) order. Per-cell failures are
/// recorded and do not abort the sweep.
pub fn run_grid(config: &RunConfig) -> Result<GridOutcome> {
    config.validate()?;
    let mut out = GridOutcome {
        runs: Vec::new(),
        failures: Vec::new(),
    };
    for &seed in &config.seeds {
        let corpus = config.corpus_for_seed(seed)?;
        let cells: Vec<(f64, u32)> = config
            .betas
            .iter()
            .flat_map(|&b| config.ks.iter().map(move |&k| (b, k)))
            .collect();
        let results: Vec<(f64, u32, Result<RunResult>)> = cells
            .into_par_iter()
            .map(|(beta, k)| (beta, k, run_single(config, &corpus, beta, k, seed)))
            .collect();
        for (beta, k, result) in results {
            match result {
                Ok(r) => out.runs.push(r),
                Err(e) => out.failures.push(CellFailure {
                    beta,
                    k,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    Ok(out)
}

/// Reporting-parameter sanity warnings (non-fatal).
pub fn sanity_warnings(config: &RunConfig, runs: &[RunResult]) -> Vec<String> {
    let mut out = Vec::new();
    let n_total = config.corpus.n_total.max(1);
    let floor = 1.0 / n_total as f64;
    let mut seen = std::collections::HashSet::new();
    for r in runs {
        if r.delta >= floor && seen.insert((r.beta.to_bits(), r.k)) {
            out.push(format!(
                "delta {:.3e} at beta={} k={} exceeds 1/n_total = {:.3e}; guarantee is vacuous at this scale",
                r.delta, r.beta, r.k, floor
            ));
        }
    }
    out
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let mx = mean(&rx);
    let my = mean(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn group_runs<'a>(runs: &'a [RunResult], beta: f64, k: u32) -> Vec<&'a RunResult> {
    runs.iter()
        .filter(|r| r.beta == beta && r.k == k)
        .collect()
}

/// Render the four CSV reports and summary.json into `out_dir`.
pub fn emit_reports(
    config: &RunConfig,
    outcome: &GridOutcome,
    wall_time_secs: f64,
    out_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let runs = &outcome.runs;

    let mut acc_csv = String::from("beta,k,seeds,accuracy_mean,accuracy_min,accuracy_max\n");
    let mut budget_csv = String::from("beta,k,seeds,pool_size_mean,labels_mean\n");
    for &beta in &config.betas {
        for &k in &config.ks {
            let group = group_runs(runs, beta, k);
            if group.is_empty() {
                continue;
            }
            let accs: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
            let labels: Vec<f64> = group.iter().map(|r| r.labels_purchased as f64).collect();
            let pools: Vec<f64> = group.iter().map(|r| r.pool_size as f64).collect();
            acc_csv.push_str(&format!(
                "{beta},{k},{},{:.4},{:.4},{:.4}\n",
                group.len(),
                mean(&accs),
                accs.iter().cloned().fold(f64::INFINITY, f64::min),
                accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ));
            budget_csv.push_str(&format!(
                "{beta},{k},{},{:.1},{:.1}\n",
                group.len(),
                mean(&pools),
                mean(&labels),
            ));
        }
    }
    std::fs::write(out_dir.join("accuracy_vs_k.csv"), acc_csv)?;
    std::fs::write(out_dir.join("budget_vs_k.csv"), budget_csv)?;

    let mut curve_csv = String::from("beta,k,seed,labels,accuracy\n");
    for r in runs {
        for &(labels, acc) in &r.curve {
            curve_csv.push_str(&format!("{},{},{},{labels},{acc:.4}\n", r.beta, r.k, r.seed));
        }
    }
    std::fs::write(out_dir.join("budget_accuracy.csv"), curve_csv)?;

    std::fs::write(
        out_dir.join("privacy_table.csv"),
        privacy_table(config, runs)?,
    )?;

    let summary = Summary {
        config: config.clone(),
        runs: runs.clone(),
        failures: outcome.failures.clone(),
        wall_time_secs,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("summary.json"))?);
    f.write_all(serde_json::to_string_pretty(&summary)?.as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Guarantee grid over the configured betas and ks crossed with the
/// canonical epsilon/delta lists, with measured accuracy overlaid where a
/// run exists for the (beta, k) pair.
pub fn privacy_table(config: &RunConfig, runs: &[RunResult]) -> Result<String> {
    let mut cells: Vec<GuaranteeCell> = privacy::grid(
        &config.betas,
        &config.ks,
        &privacy::REPORT_EPSILONS,
        &privacy::REPORT_DELTAS,
        config.n_max,
    )?;
    for cell in &mut cells {
        let group = group_runs(runs, cell.params.beta, cell.params.k);
        if !group.is_empty() {
            let accs: Vec<f64> = group.iter().map(|r| r.accuracy).collect();
            cell.accuracy = Some(mean(&accs));
        }
    }
    Ok(privacy::grid_csv(&cells))
}
