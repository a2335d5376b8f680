//! `fit` and `baseline`: single runs on score files, writing matrices to disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use feir_core::baselines::{congestion_alleviation, naive, round_robin, shuffle, CAConfig, RRConfig};
use feir_core::matrix::{write_sidecar, MatrixMeta};
use feir_core::metrics::{evaluate, MetricsRecord};
use feir_core::{fit, save_matrix, top_k, CountMatrix, ScorePair, TrainConfig};

pub const POLICY_FILE: &str = "policy.csv";
pub const COUNTS_FILE: &str = "counts.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq)]
pub enum Baseline {
    Naive,
    Shuffle { depth: usize, seed: u64 },
    Ca(CAConfig),
    Rr(RRConfig),
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::Naive => "naive",
            Baseline::Shuffle { .. } => "shuffle",
            Baseline::Ca(_) => "ca",
            Baseline::Rr(_) => "rr",
        }
    }
}

/// Paths written by a single run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub counts: PathBuf,
    pub policy: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub metrics: PathBuf,
    pub record: MetricsRecord,
}

fn write_matrix(path: PathBuf, matrix: &ndarray::Array2<f64>, meta: &MatrixMeta) -> Result<PathBuf> {
    save_matrix(matrix, &path)?;
    write_sidecar(&path, meta)?;
    Ok(path)
}

fn finish(
    scores: &ScorePair,
    counts: &CountMatrix,
    policy: Option<&ndarray::Array2<f64>>,
    seed: Option<u64>,
    generator: &str,
    out_dir: &Path,
) -> Result<RunOutput> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let meta = |k| MatrixMeta {
        m: scores.users(),
        n: scores.items(),
        k,
        seed,
        generator: Some(generator.to_string()),
    };
    let counts_path = write_matrix(out_dir.join(COUNTS_FILE), &counts.to_f64(), &meta(Some(counts.k())))?;
    let policy = policy
        .map(|p| write_matrix(out_dir.join(POLICY_FILE), p, &meta(None)))
        .transpose()?;
    let record = evaluate(scores, counts)?;
    let metrics = out_dir.join(METRICS_FILE);
    fs::write(&metrics, serde_json::to_string_pretty(&record)?).with_context(|| format!("writing {}", metrics.display()))?;
    Ok(RunOutput {
        counts: counts_path,
        policy,
        trace: None,
        metrics,
        record,
    })
}

/// Trains a policy and writes it, its top-k lists, the loss trace and metrics.
pub fn cmd_fit(scores: &ScorePair, config: &TrainConfig, out_dir: &Path) -> Result<RunOutput> {
    let trace = fit(scores, config)?;
    let counts = top_k(trace.policy.probs().view(), config.k)?;
    let mut out = finish(scores, &counts, Some(trace.policy.probs()), Some(config.seed), "feir", out_dir)?;
    let path = out_dir.join(TRACE_FILE);
    trace.save_csv(&path)?;
    out.trace = Some(path);
    Ok(out)
}

/// Runs one baseline and writes its recommendation counts and metrics. CA
/// also writes its transport plan as the policy.
pub fn cmd_baseline(scores: &ScorePair, baseline: &Baseline, k: usize, out_dir: &Path) -> Result<RunOutput> {
    let u = scores.utility();
    let name = baseline.name();
    match baseline {
        Baseline::Naive => finish(scores, &naive(u, k)?, None, None, name, out_dir),
        Baseline::Shuffle { depth, seed } => finish(scores, &shuffle(u, k, *depth, *seed)?, None, Some(*seed), name, out_dir),
        Baseline::Ca(cfg) => {
            let sol = congestion_alleviation(u, cfg)?;
            let counts = top_k(sol.policy.probs().view(), k)?;
            finish(scores, &counts, Some(sol.policy.probs()), None, name, out_dir)
        }
        Baseline::Rr(cfg) => finish(scores, &round_robin(scores, k, cfg)?, None, Some(cfg.seed), name, out_dir),
    }
}
