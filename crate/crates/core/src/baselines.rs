//! Comparison strategies: naive top-k, shuffle, congestion alleviation and round robin.

use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::matrix::{row_softmax, top_k, top_k_indices, CountMatrix, Policy, ScorePair};

/// Top-k items by utility for every user.
pub fn naive(utility: &Array2<f64>, k: usize) -> Result<CountMatrix> {
    top_k(utility.view(), k)
}

/// Default candidate pool size for [`shuffle`].
pub fn default_shuffle_depth(k: usize) -> usize {
    3 * k
}

/// A uniform random k-subset of each user's top-d items.
pub fn shuffle(utility: &Array2<f64>, k: usize, d: usize, seed: u64) -> Result<CountMatrix> {
    let n = utility.ncols();
    if k == 0 || d < k || d > n {
        return Err(argument(format!("shuffle needs 1 <= k <= d <= n, got k={k}, d={d}, n={n}")));
    }
    let lists: Vec<Vec<usize>> = utility
        .axis_iter(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, row)| {
            let pool = top_k_indices(&row.to_vec(), d);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            sample(&mut rng, d, k).into_iter().map(|a| pool[a]).collect()
        })
        .collect();
    CountMatrix::from_lists(&lists, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CAConfig {
    pub epsilon: f64,
    #[serde(default = "default_ca_iters")]
    pub max_iters: usize,
    /// L1 tolerance on both marginals.
    #[serde(default = "default_marginal_tol")]
    pub marginal_tol: f64,
}

fn default_ca_iters() -> usize {
    10_000
}
fn default_marginal_tol() -> f64 {
    1e-8
}

impl CAConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_iters: default_ca_iters(),
            marginal_tol: default_marginal_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(argument(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.marginal_tol.is_nan() || self.marginal_tol <= 0.0 {
            return Err(argument("marginal_tol must be positive"));
        }
        if self.max_iters == 0 {
            return Err(argument("max_iters must be at least 1"));
        }
        Ok(())
    }
}

/// Converged transport plan and its dual objective after every sweep.
#[derive(Debug, Clone)]
pub struct CaSolution {
    pub policy: Policy,
    pub iterations: usize,
    /// Dual value after each row/column sweep, written for the equivalent
    /// problem of minimizing `−Σ Q·P0 − ε H(Q)`. Non-decreasing; its limit is
    /// the negated primal optimum.
    pub dual_objective: Vec<f64>,
    /// L1 marginal residual at termination.
    pub residual: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropy-regularized transport of unit mass per user onto `m/n` mass per item.
///
/// Maximizes `Σ Q·P0 + ε H(Q)` with `P0 = softmax(U)` by log-domain Sinkhorn
/// scaling. The returned plan is `Q_ij = exp((P0_ij + f_i + g_j)/ε)`.
pub fn congestion_alleviation(utility: &Array2<f64>, config: &CAConfig) -> Result<CaSolution> {
    config.validate()?;
    let (m, n) = utility.dim();
    let eps = config.epsilon;
    let p0 = row_softmax(utility)?;
    let col_mass = m as f64 / n as f64;
    let (log_a, log_b) = (0.0_f64, col_mass.ln());

    let mut f: Array1<f64>;
    let mut g = Array1::<f64>::zeros(n);
    let mut dual = Vec::new();
    let plan = |f: &Array1<f64>, g: &Array1<f64>| {
        Array2::from_shape_fn((m, n), |(i, j)| ((p0[[i, j]] + f[i] + g[j]) / eps).exp())
    };

    for iter in 1..=config.max_iters {
        let new_f: Vec<f64> = (0..m)
            .into_par_iter()
            .map(|i| eps * log_a - eps * log_sum_exp((0..n).map(|j| (p0[[i, j]] + g[j]) / eps)))
            .collect();
        f = Array1::from(new_f);
        let new_g: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|j| eps * log_b - eps * log_sum_exp((0..m).map(|i| (p0[[i, j]] + f[i]) / eps)))
            .collect();
        g = Array1::from(new_g);

        let q = plan(&f, &g);
        dual.push(f.sum() + col_mass * g.sum() - eps * q.sum());
        let row_err: f64 = q.sum_axis(Axis(1)).iter().map(|s| (s - 1.0).abs()).sum();
        let col_err: f64 = q.sum_axis(Axis(0)).iter().map(|s| (s - col_mass).abs()).sum();
        let residual = row_err + col_err;
        if !residual.is_finite() {
            return Err(Error::Numeric(format!("Sinkhorn diverged at iteration {iter}")));
        }
        if residual < config.marginal_tol {
            let mut q = q;
            for mut row in q.axis_iter_mut(Axis(0)) {
                let s = row.sum();
                row.mapv_inplace(|v| v / s);
            }
            return Ok(CaSolution {
                policy: Policy::new(q)?,
                iterations: iter,
                dual_objective: dual,
                residual,
            });
        }
        if iter == config.max_iters {
            return Err(Error::NoConvergence {
                iterations: iter,
                residual,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}

/// Primal objective `Σ Q·P0 + ε H(Q)` of a plan, with `H(Q) = −Σ Q (ln Q − 1)`.
pub fn ca_primal_objective(utility: &Array2<f64>, q: &Array2<f64>, epsilon: f64) -> Result<f64> {
    let p0 = row_softmax(utility)?;
    let entropy: f64 = q.iter().filter(|&&v| v > 0.0).map(|&v| -v * (v.ln() - 1.0)).sum();
    Ok((&p0 * q).sum() + epsilon * entropy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RRConfig {
    /// Suitability threshold in [0, 1).
    pub tau: f64,
    #[serde(default)]
    pub seed: u64,
    /// Each item goes to at most one user.
    #[serde(default = "default_exclusive")]
    pub exclusive: bool,
}

fn default_exclusive() -> bool {
    true
}

impl RRConfig {
    pub fn new(tau: f64, seed: u64) -> Self {
        Self {
            tau,
            seed,
            exclusive: true,
        }
    }
}

/// Round-robin allocation: users, in a seeded random order, each take one item per round.
///
/// A user takes their highest-utility item that is still available and has
/// suitability above `tau`, or the highest-utility available item when none
/// clears the threshold.
pub fn round_robin(scores: &ScorePair, k: usize, config: &RRConfig) -> Result<CountMatrix> {
    let (m, n) = (scores.users(), scores.items());
    if !(0.0..1.0).contains(&config.tau) {
        return Err(argument(format!("tau {} must lie in [0, 1)", config.tau)));
    }
    if k == 0 || k > n {
        return Err(argument(format!("k = {k} must lie in 1..={n}")));
    }
    if config.exclusive && m * k > n {
        return Err(argument(format!(
            "exclusive round robin needs m*k <= n ({m}*{k} > {n}); lower k or disable exclusivity"
        )));
    }
    let (u, s) = (scores.utility(), scores.suitability());
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    // items of each user, by descending utility (ties to the lower index)
    let ranked: Vec<Vec<usize>> = (0..m).map(|i| top_k_indices(&u.row(i).to_vec(), n)).collect();
    let mut taken = vec![false; n];
    let mut lists = vec![Vec::with_capacity(k); m];
    for _ in 0..k {
        for &i in &order {
            let free = |j: &usize| !(config.exclusive && taken[*j]) && !lists[i].contains(j);
            let pick = ranked[i]
                .iter()
                .copied()
                .filter(free)
                .find(|&j| s[[i, j]] > config.tau)
                .or_else(|| ranked[i].iter().copied().find(free))
                .expect("feasibility checked above");
            taken[pick] = true;
            lists[i].push(pick);
        }
    }
    CountMatrix::from_lists(&lists, n)
}
