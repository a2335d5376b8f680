//! `run`: evaluate every configured strategy at every k.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use feir_core::baselines::{congestion_alleviation, default_shuffle_depth, naive, round_robin, shuffle, CAConfig};
use feir_core::feir::{coarse_learning_rate_search, fit_point, LEARNING_RATE_CANDIDATES, METHOD};
use feir_core::metrics::{evaluate, MetricsRecord};
use feir_core::pareto::{MethodParams, SolutionPoint};
use feir_core::{top_k, CountMatrix, LossWeights, ScorePair, TrainConfig};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, LearningRate};
use crate::solutions::{canonical_cmp, load_solutions, run_key, save_solutions};

pub const SOLUTIONS_FILE: &str = "solutions.csv";

/// Per-run seed: the first eight bytes of SHA-256 over master seed, method, parameters and k.
pub fn run_seed(master: u64, method: &str, params: &MethodParams, k: usize) -> u64 {
    let digest = Sha256::digest(format!("{master}|{method}|{}|{k}", params.label()).as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
enum Job {
    Feir(LossWeights),
    Shuffle(usize),
    Ca(f64),
    Rr(f64),
}

impl Job {
    fn method(&self) -> &'static str {
        match self {
            Job::Feir(_) => METHOD,
            Job::Shuffle(_) => "shuffle",
            Job::Ca(_) => "ca",
            Job::Rr(_) => "rr",
        }
    }

    fn params(&self) -> MethodParams {
        match *self {
            Job::Feir(w) => MethodParams::from_weights(&w),
            Job::Shuffle(d) => MethodParams {
                d: Some(d),
                ..MethodParams::default()
            },
            Job::Ca(eps) => MethodParams {
                epsilon: Some(eps),
                ..MethodParams::default()
            },
            Job::Rr(tau) => MethodParams {
                tau: Some(tau),
                ..MethodParams::default()
            },
        }
    }
}

fn jobs(config: &ExperimentConfig, k: usize, n: usize) -> Vec<Job> {
    let m = &config.methods;
    let mut out = Vec::new();
    if let Some(f) = &m.feir {
        out.extend(f.weight_grid().into_iter().map(Job::Feir));
    }
    if let Some(s) = &m.shuffle {
        let depths = if s.depths.is_empty() {
            vec![default_shuffle_depth(k).min(n)]
        } else {
            s.depths.clone()
        };
        let mut depths: Vec<usize> = depths.into_iter().filter(|&d| d >= k && d <= n).collect();
        depths.sort_unstable();
        depths.dedup();
        out.extend(depths.into_iter().map(Job::Shuffle));
    }
    if let Some(ca) = &m.ca {
        out.extend(ca.epsilons.iter().copied().map(Job::Ca));
    }
    if let Some(rr) = &m.rr {
        out.extend(rr.taus.iter().copied().map(Job::Rr));
    }
    out
}

struct RunContext<'a> {
    config: &'a ExperimentConfig,
    scores: &'a ScorePair,
    k: usize,
    naive: &'a MetricsRecord,
    learning_rate: Option<f64>,
}

fn evaluate_counts(
    ctx: &RunContext<'_>,
    method: &str,
    params: MethodParams,
    seed: u64,
    counts: feir_core::Result<CountMatrix>,
) -> SolutionPoint {
    match counts.and_then(|c| evaluate(ctx.scores, &c)) {
        Ok(record) => SolutionPoint::evaluated(method, params, seed, &record, ctx.naive),
        Err(e) => SolutionPoint::failed(method, params, ctx.k, seed, e),
    }
}

fn execute(ctx: &RunContext<'_>, job: &Job, seed: u64) -> SolutionPoint {
    let (scores, k) = (ctx.scores, ctx.k);
    let params = job.params();
    match *job {
        Job::Feir(weights) => {
            let f = ctx.config.methods.feir.as_ref().expect("FEIR job implies FEIR settings");
            let Some(learning_rate) = ctx.learning_rate else {
                return SolutionPoint::failed(METHOD, params, k, seed, "no usable learning rate");
            };
            let config = TrainConfig {
                learning_rate,
                max_steps: f.max_steps,
                convergence_tol: f.convergence_tol,
                weights,
                parametrization: f.parametrization,
                scaling: f.scaling,
                seed,
                k,
            };
            fit_point(scores, &config, ctx.naive)
        }
        Job::Shuffle(d) => evaluate_counts(ctx, "shuffle", params, seed, shuffle(scores.utility(), k, d, seed)),
        Job::Ca(epsilon) => {
            let s = ctx.config.methods.ca.as_ref().expect("CA job implies CA settings");
            let cfg = CAConfig {
                epsilon,
                max_iters: s.max_iters,
                marginal_tol: s.marginal_tol,
            };
            let counts = congestion_alleviation(scores.utility(), &cfg).and_then(|sol| top_k(sol.policy.probs().view(), k));
            evaluate_counts(ctx, "ca", params, seed, counts)
        }
        Job::Rr(tau) => {
            let s = ctx.config.methods.rr.as_ref().expect("RR job implies RR settings");
            let counts = round_robin(scores, k, &s.config(tau, seed));
            evaluate_counts(ctx, "rr", params, seed, counts)
        }
    }
}

fn learning_rate(config: &ExperimentConfig, scores: &ScorePair, k: usize, seed: u64) -> Option<f64> {
    let f = config.methods.feir.as_ref()?;
    match f.learning_rate {
        LearningRate::Fixed(lr) => Some(lr),
        LearningRate::Auto(_) => {
            let probe = TrainConfig {
                learning_rate: 1.0,
                max_steps: 100,
                convergence_tol: 0.0,
                weights: LossWeights::new(1.0, 1.0, 1.0, 0.0).expect("valid weights"),
                parametrization: f.parametrization,
                scaling: f.scaling,
                seed,
                k,
            };
            coarse_learning_rate_search(scores, &probe, &LEARNING_RATE_CANDIDATES, 100).ok()
        }
    }
}

/// Summary of a finished run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunSummary {
    pub path: PathBuf,
    pub added: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Runs the experiment and writes `solutions.csv` under the output directory.
///
/// Rows already present (same method, parameters, k and seed) are kept and
/// not recomputed. The file is rewritten in canonical order after each k.
pub fn cmd_run(config: &ExperimentConfig, base_dir: &Path) -> Result<RunSummary> {
    config.validate(base_dir)?;
    let scores = config.dataset.load(base_dir)?;
    let out_dir = base_dir.join(&config.output_dir);
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let path = out_dir.join(SOLUTIONS_FILE);
    let mut points = if path.exists() { load_solutions(&path)? } else { Vec::new() };
    let mut done: HashSet<String> = points.iter().map(run_key).collect();
    let (mut added, mut skipped) = (0, 0);

    for k in config.ks(scores.items()) {
        let naive_c = naive(scores.utility(), k)?;
        let naive_rec = evaluate(&scores, &naive_c)?;
        let naive_params = MethodParams::default();
        let naive_seed = run_seed(config.seed, "naive", &naive_params, k);
        let naive_point = SolutionPoint::evaluated("naive", naive_params, naive_seed, &naive_rec, &naive_rec);

        let mut pending: Vec<(Job, u64)> = Vec::new();
        for job in jobs(config, k, scores.items()) {
            let seed = run_seed(config.seed, job.method(), &job.params(), k);
            let key = format!("{}|{}|{k}|{seed}", job.method(), job.params().label());
            if done.insert(key) {
                pending.push((job, seed));
            } else {
                skipped += 1;
            }
        }
        let mut fresh = Vec::new();
        if done.insert(run_key(&naive_point)) {
            fresh.push(naive_point);
        } else {
            skipped += 1;
        }
        let needs_lr = pending.iter().any(|(j, _)| matches!(j, Job::Feir(_)));
        let ctx = RunContext {
            config,
            scores: &scores,
            k,
            naive: &naive_rec,
            learning_rate: if needs_lr { learning_rate(config, &scores, k, config.seed) } else { None },
        };
        fresh.extend(pending.par_iter().map(|(job, seed)| execute(&ctx, job, *seed)).collect::<Vec<_>>());
        added += fresh.len();
        points.extend(fresh);
        points.sort_by(canonical_cmp);
        save_solutions(&points, &path)?;
    }
    let failed = points.iter().filter(|p| !p.is_ok()).count();
    Ok(RunSummary {
        path,
        added,
        skipped,
        failed,
    })
}
