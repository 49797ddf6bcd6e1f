//! Command-line front end: corpus generation, single runs, full sweeps,
//! and the standalone privacy guarantee table.

use clap::{Args, Parser, Subcommand};
use ppal::harness::{self, RunConfig};
use ppal::privacy;
use ppal::workload::{self, CorpusSpec};
use ppal::{Error, Result};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ppal", about = "Privacy-preserving active learning harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct CommonOpts {
    /// JSON run configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Subsampling rate(s) in (0, 1].
    #[arg(long, value_delimiter = ',')]
    beta: Option<Vec<f64>>,
    /// Anonymity threshold(s).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<u32>>,
    /// Run seed(s).
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Corpus TSV produced by `generate`; omitted means synthesize.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Report directory.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Acquisition strategy: least-confidence | margin | entropy.
    #[arg(long)]
    strategy: Option<String>,
    /// Maximum number of labels purchased per run.
    #[arg(long)]
    budget_cap: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a corpus and write it as TSV.
    Generate {
        #[arg(long, default_value_t = 250_000)]
        n_total: u64,
        #[arg(long, default_value_t = 5_800)]
        n_distinct: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "corpus.tsv")]
        out: PathBuf,
    },
    /// One active-learning run per configured (beta, k) pair.
    Run {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Full (beta, k, seed) sweep with reports.
    Sweep {
        #[command(flatten)]
        opts: CommonOpts,
    },
    /// Print the guarantee grid as CSV (no runs).
    PrivacyTable {
        #[command(flatten)]
        opts: CommonOpts,
    },
}

/// Build the run configuration from flags, then let the JSON config file
/// override any field it names.
fn load_config(opts: &CommonOpts) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(betas) = &opts.beta {
        config.betas = betas.clone();
    }
    if let Some(ks) = &opts.k {
        config.ks = ks.clone();
    }
    if let Some(seeds) = &opts.seed {
        config.seeds = seeds.clone();
    }
    if let Some(path) = &opts.corpus {
        config.corpus_path = Some(path.clone());
    }
    if let Some(s) = &opts.strategy {
        config.strategy = s.parse()?;
    }
    if opts.budget_cap.is_some() {
        config.budget_cap = opts.budget_cap;
    }
    if let Some(path) = &opts.config {
        let text = std::fs::read_to_string(path)?;
        let overrides: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
        let mut merged = serde_json::to_value(&config)?;
        match (&mut merged, overrides) {
            (serde_json::Value::Object(base), serde_json::Value::Object(over)) => {
                for (key, value) in over {
                    base.insert(key, value);
                }
            }
            _ => {
                return Err(Error::Config(format!(
                    "config {} must be a JSON object",
                    path.display()
                )))
            }
        }
        config = serde_json::from_value(merged)
            .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))?;
    }
    config.validate()?;
    Ok(config)
}

fn sweep(opts: &CommonOpts) -> Result<()> {
    let config = load_config(opts)?;
    let start = std::time::Instant::now();
    let outcome = harness::run_grid(&config)?;
    for w in harness::sanity_warnings(&config, &outcome.runs) {
        eprintln!("warning: {w}");
    }
    for f in &outcome.failures {
        eprintln!(
            "warning: cell beta={} k={} seed={} failed: {}",
            f.beta, f.k, f.seed, f.error
        );
    }
    harness::emit_reports(&config, &outcome, start.elapsed().as_secs_f64(), &opts.out_dir)?;
    println!(
        "{} runs ({} failed cells) -> {}",
        outcome.runs.len(),
        outcome.failures.len(),
        opts.out_dir.join("summary.json").display()
    );
    Ok(())
}

fn real_main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate {
            n_total,
            n_distinct,
            seed,
            out,
        } => {
            let spec = CorpusSpec {
                n_total,
                n_distinct_target: n_distinct,
                seed,
                ..CorpusSpec::default()
            };
            let corpus = workload::generate(&spec)?;
            corpus.write_tsv(&out)?;
            println!(
                "{} occurrences, {} distinct (singleton fraction {:.3}, s = {:.3}) -> {}",
                corpus.total_occurrences(),
                corpus.distinct_count(),
                corpus.singleton_fraction(),
                corpus.zipf_s,
                out.display()
            );
            Ok(())
        }
        Command::Run { mut opts } => {
            // a run is a sweep over a single seed
            let config = load_config(&opts)?;
            opts.seed = Some(vec![config.seeds[0]]);
            sweep(&opts)
        }
        Command::Sweep { opts } => sweep(&opts),
        Command::PrivacyTable { opts } => {
            let config = load_config(&opts)?;
            let cells = privacy::grid(
                &config.betas,
                &config.ks,
                &privacy::REPORT_EPSILONS,
                &privacy::REPORT_DELTAS,
                config.n_max,
            )?;
            print!("{}", privacy::grid_csv(&cells));
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        let code = match e {
            Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
