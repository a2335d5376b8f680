//! Gradient-descent post-processing of a score matrix into a fair policy.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::losses::{loss_and_grad, params_to_policy, LossBreakdown, LossScope, LossWeights, Parametrization};
use crate::matrix::{row_softmax, top_k, Policy, ScorePair};
use crate::metrics::{evaluate, MetricsRecord};
use crate::pareto::{MethodParams, SolutionPoint};

/// Which users and items enter the loss at each step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scaling {
    #[default]
    None,
    /// Inferiority from one batch of `batch_size` users per step; batches partition users each epoch.
    Minibatch { batch_size: usize },
    /// All terms over a fresh random subset of `users` users each step.
    UserSample { users: usize },
    /// All terms over a fresh random subset of `items` items each step.
    ItemSample { items: usize },
    UserItemSample { users: usize, items: usize },
}

impl Scaling {
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        let check = |name: &str, v: usize, bound: usize| {
            if v == 0 || v > bound {
                Err(argument(format!("{name} = {v} must lie in 1..={bound}")))
            } else {
                Ok(())
            }
        };
        match *self {
            Scaling::None => Ok(()),
            Scaling::Minibatch { batch_size } => check("batch size", batch_size, m),
            Scaling::UserSample { users } => check("sampled users", users, m),
            Scaling::ItemSample { items } => check("sampled items", items, n),
            Scaling::UserItemSample { users, items } => {
                check("sampled users", users, m)?;
                check("sampled items", items, n)
            }
        }
    }
}

impl fmt::Display for Scaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scaling::None => write!(f, "none"),
            Scaling::Minibatch { batch_size } => write!(f, "minibatch(b={batch_size})"),
            Scaling::UserSample { users } => write!(f, "user_sample(m_s={users})"),
            Scaling::ItemSample { items } => write!(f, "item_sample(n_s={items})"),
            Scaling::UserItemSample { users, items } => write!(f, "user_item_sample(m_s={users}, n_s={items})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Relative change of the total loss over a 10-step window that counts as converged.
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    pub weights: LossWeights,
    #[serde(default)]
    pub parametrization: Parametrization,
    #[serde(default)]
    pub scaling: Scaling,
    #[serde(default)]
    pub seed: u64,
    pub k: usize,
}

fn default_max_steps() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}

/// Steps between the two losses compared by the convergence test.
pub const CONVERGENCE_WINDOW: usize = 10;

impl TrainConfig {
    pub fn new(k: usize, weights: LossWeights, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            max_steps: default_max_steps(),
            convergence_tol: default_tol(),
            weights,
            parametrization: Parametrization::default(),
            scaling: Scaling::None,
            seed: 0,
            k,
        }
    }

    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(argument(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.max_steps == 0 {
            return Err(argument("max_steps must be at least 1"));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(argument("convergence_tol must be non-negative"));
        }
        if self.k == 0 || self.k > n {
            return Err(argument(format!("k = {} must lie in 1..={n}", self.k)));
        }
        self.weights.validate()?;
        self.scaling.validate(m, n)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-step losses and the final policy of one training run.
#[derive(Debug, Clone)]
pub struct TrainTrace {
    /// Loss at the parameters before each step.
    pub losses: Vec<LossBreakdown>,
    pub policy: Policy,
    pub steps: usize,
    /// Seconds.
    pub wall_time: f64,
    pub converged: bool,
}

impl TrainTrace {
    /// Equality of everything but the wall time.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.losses == other.losses
            && self.policy == other.policy
            && self.steps == other.steps
            && self.converged == other.converged
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Numeric(format!("writing trace: {e}"));
        w.write_record(["step", "envy_loss", "inferiority_loss", "neg_utility_loss", "penalty_loss", "total"])
            .map_err(io)?;
        for (step, l) in self.losses.iter().enumerate() {
            w.write_record(&[
                step.to_string(),
                l.envy.to_string(),
                l.inferiority.to_string(),
                l.neg_utility.to_string(),
                l.penalty.to_string(),
                l.total.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::Numeric(format!("writing trace: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Index sets and loss scope of one training step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingView {
    pub users: Vec<usize>,
    pub items: Vec<usize>,
    pub scope: LossScope,
}

/// Produces the training view of each step. Views depend only on the seed and
/// the step number.
#[derive(Debug, Clone)]
pub struct ViewSampler {
    m: usize,
    n: usize,
    scaling: Scaling,
    seed: u64,
    epoch: Option<(usize, Vec<Vec<usize>>)>,
}

impl ViewSampler {
    pub fn new(m: usize, n: usize, scaling: Scaling, seed: u64) -> Result<Self> {
        scaling.validate(m, n)?;
        Ok(Self {
            m,
            n,
            scaling,
            seed,
            epoch: None,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn subset(&self, stream: u64, total: usize, size: usize) -> Vec<usize> {
        let mut idx = sample(&mut self.rng(stream), total, size).into_vec();
        idx.sort_unstable();
        idx
    }

    fn batches(&self, epoch: usize, batch_size: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.m).collect();
        order.shuffle(&mut self.rng(epoch as u64));
        let count = self.m / batch_size;
        let (base, extra) = (self.m / count, self.m % count);
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        for b in 0..count {
            let len = base + usize::from(b < extra);
            let mut batch = order[start..start + len].to_vec();
            batch.sort_unstable();
            out.push(batch);
            start += len;
        }
        out
    }

    pub fn view(&mut self, step: usize) -> TrainingView {
        let all_users: Vec<usize> = (0..self.m).collect();
        let all_items: Vec<usize> = (0..self.n).collect();
        let s = step as u64;
        let (users, items, sources) = match self.scaling {
            Scaling::None => (all_users, all_items, None),
            Scaling::Minibatch { batch_size } => {
                let per_epoch = self.m / batch_size;
                let epoch = step / per_epoch;
                if self.epoch.as_ref().map(|(e, _)| *e) != Some(epoch) {
                    self.epoch = Some((epoch, self.batches(epoch, batch_size)));
                }
                let batch = self.epoch.as_ref().expect("epoch cached").1[step % per_epoch].clone();
                let sources = (batch.len() < self.m).then_some(batch);
                (all_users, all_items, sources)
            }
            Scaling::UserSample { users } => (self.subset(s, self.m, users), all_items, None),
            Scaling::ItemSample { items } => (all_users, self.subset(s, self.n, items), None),
            Scaling::UserItemSample { users, items } => {
                (self.subset(2 * s, self.m, users), self.subset(2 * s + 1, self.n, items), None)
            }
        };
        let scope = LossScope {
            users: users.clone(),
            items: items.clone(),
            inferiority_sources: sources,
        };
        TrainingView { users, items, scope }
    }
}

fn initial_params(scores: &ScorePair, parametrization: Parametrization) -> Result<Array2<f64>> {
    match parametrization {
        Parametrization::Logits => Ok(scores.utility().clone()),
        Parametrization::Direct => row_softmax(scores.utility()),
    }
}

fn final_policy(params: &Array2<f64>, parametrization: Parametrization) -> Result<Policy> {
    match parametrization {
        Parametrization::Logits => Policy::from_logits(params),
        Parametrization::Direct => {
            let mut p = params.clone();
            let n = p.ncols();
            for mut row in p.axis_iter_mut(Axis(0)) {
                let sum = row.sum();
                if sum > 0.0 {
                    row.mapv_inplace(|v| v / sum);
                } else {
                    row.fill(1.0 / n as f64);
                }
            }
            Policy::new(p)
        }
    }
}

/// Trains a policy by gradient descent, starting from the utility scores as logits.
pub fn fit(scores: &ScorePair, config: &TrainConfig) -> Result<TrainTrace> {
    let (m, n) = (scores.users(), scores.items());
    config.validate(m, n)?;
    let start = Instant::now();
    let mut sampler = ViewSampler::new(m, n, config.scaling, config.seed)?;
    let mut params = initial_params(scores, config.parametrization)?;
    let mut losses: Vec<LossBreakdown> = Vec::new();
    let mut converged = false;

    for step in 0..config.max_steps {
        let view = sampler.view(step);
        let (loss, grad) = loss_and_grad(
            scores.utility(),
            scores.suitability(),
            &params,
            config.k,
            &config.weights,
            config.parametrization,
            &view.scope,
        )?;
        if let Some(term) = loss.non_finite_term() {
            return Err(Error::Numeric(format!("non-finite {term} loss at step {step}")));
        }
        losses.push(loss);
        params.scaled_add(-config.learning_rate, &grad);
        if config.parametrization == Parametrization::Direct {
            params.mapv_inplace(|v| v.clamp(0.0, 1.0));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter after step {step}")));
        }
        if losses.len() > CONVERGENCE_WINDOW {
            let now = loss.total;
            let before = losses[losses.len() - 1 - CONVERGENCE_WINDOW].total;
            if (now - before).abs() <= config.convergence_tol * before.abs().max(1e-12) {
                converged = true;
                break;
            }
        }
    }

    Ok(TrainTrace {
        steps: losses.len(),
        losses,
        policy: final_policy(&params, config.parametrization)?,
        wall_time: start.elapsed().as_secs_f64(),
        converged,
    })
}

/// The policy implied by the initial parameters, before any training.
pub fn initial_policy(scores: &ScorePair, parametrization: Parametrization) -> Result<Policy> {
    final_policy(&params_to_policy(&initial_params(scores, parametrization)?, parametrization)?, Parametrization::Direct)
}

/// Method name used for FEIR solution points.
pub const METHOD: &str = "feir";

/// Trains with `config` and evaluates the final policy at top-k against the
/// naive record. A failed run becomes a point with an error status.
pub fn fit_point(scores: &ScorePair, config: &TrainConfig, naive: &MetricsRecord) -> SolutionPoint {
    let params = MethodParams::from_weights(&config.weights);
    let run = || -> Result<SolutionPoint> {
        let trace = fit(scores, config)?;
        let c = top_k(trace.policy.probs().view(), config.k)?;
        let record = evaluate(scores, &c)?;
        Ok(SolutionPoint::evaluated(METHOD, params.clone(), config.seed, &record, naive))
    };
    run().unwrap_or_else(|e| SolutionPoint::failed(METHOD, params.clone(), config.k, config.seed, e))
}

/// Trains once per weight vector and evaluates each final policy at top-k.
///
/// Runs are independent and execute in parallel; the result keeps the grid
/// order. A failed run becomes a point with an error status.
pub fn sweep(scores: &ScorePair, weight_grid: &[LossWeights], base: &TrainConfig) -> Result<Vec<SolutionPoint>> {
    if weight_grid.is_empty() {
        return Err(argument("weight grid is empty"));
    }
    let naive = evaluate(scores, &top_k(scores.utility().view(), base.k)?)?;
    Ok(weight_grid
        .par_iter()
        .map(|w| {
            let config = TrainConfig {
                weights: *w,
                ..base.clone()
            };
            fit_point(scores, &config, &naive)
        })
        .collect())
}

/// `{0, 0.1, 0.3, 1, 3, 10}²` over envy and inferiority weights, utility weight 1, no penalty.
pub fn default_weight_grid() -> Vec<LossWeights> {
    const AXIS: [f64; 6] = [0.0, 0.1, 0.3, 1.0, 3.0, 10.0];
    AXIS.iter()
        .flat_map(|&w1| {
            AXIS.iter().map(move |&w2| LossWeights {
                envy: w1,
                inferiority: w2,
                utility: 1.0,
                penalty: 0.0,
            })
        })
        .collect()
}

/// Learning rates tried by [`coarse_learning_rate_search`].
pub const LEARNING_RATE_CANDIDATES: [f64; 6] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0];

/// Picks the candidate learning rate with the lowest final total loss after
/// `probe_steps` steps. Diverging candidates are skipped.
pub fn coarse_learning_rate_search(
    scores: &ScorePair,
    base: &TrainConfig,
    candidates: &[f64],
    probe_steps: usize,
) -> Result<f64> {
    let results: Vec<Option<f64>> = candidates
        .par_iter()
        .map(|&lr| {
            let config = TrainConfig {
                learning_rate: lr,
                max_steps: probe_steps,
                convergence_tol: 0.0,
                ..base.clone()
            };
            let trace = fit(scores, &config).ok()?;
            let last = trace.losses.last()?.total;
            last.is_finite().then_some(last)
        })
        .collect();
    candidates
        .iter()
        .zip(results)
        .filter_map(|(&lr, loss)| loss.map(|l| (lr, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(lr, _)| lr)
        .ok_or_else(|| Error::Numeric("every candidate learning rate diverged".into()))
}
