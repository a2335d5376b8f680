//! Expected utility, envy and inferiority of a probabilistic policy, the
//! combined training loss, its analytic gradient, and two independent checks
//! of those closed forms: central finite differences and Monte-Carlo
//! simulation of the multinomial recommendation process.
//!
//! Each user's list is modelled as `k` independent draws from that user's
//! policy row, so the count of item `j` is multinomial with mean `k·P_ij`.
//! Expected utility and envy are therefore linear in `P`; an item is shared by
//! two users with probability `(1 − (1 − P_ij)^k)(1 − (1 − P_i*j)^k)`, which
//! gives expected inferiority.
//!
//! The system envy loss applies `max(0, ·)` to the *expected* pairwise envy,
//! not inside the expectation. [`mc_estimate`] reports both so the gap can be
//! inspected.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::matrix::{row_softmax, MultinomialSampler};

/// Weights of the envy, inferiority, utility and row-sum penalty terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "w1")]
    pub envy: f64,
    #[serde(rename = "w2")]
    pub inferiority: f64,
    #[serde(rename = "w3")]
    pub utility: f64,
    #[serde(rename = "w4", default)]
    pub penalty: f64,
}

impl LossWeights {
    pub fn new(envy: f64, inferiority: f64, utility: f64, penalty: f64) -> Result<Self> {
        let w = Self {
            envy,
            inferiority,
            utility,
            penalty,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.envy, self.inferiority, self.utility, self.penalty];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(argument(format!("loss weights must be finite and non-negative: {self}")));
        }
        if self.envy + self.inferiority + self.utility <= 0.0 {
            return Err(argument("at least one of the envy, inferiority and utility weights must be positive"));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            envy: self.envy * factor,
            inferiority: self.inferiority * factor,
            utility: self.utility * factor,
            penalty: self.penalty * factor,
        }
    }
}

impl fmt::Display for LossWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.envy, self.inferiority, self.utility, self.penalty)
    }
}

/// Value of each loss term and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    #[serde(rename = "envy_loss")]
    pub envy: f64,
    #[serde(rename = "inferiority_loss")]
    pub inferiority: f64,
    #[serde(rename = "neg_utility_loss")]
    pub neg_utility: f64,
    #[serde(rename = "penalty_loss")]
    pub penalty: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn weighted(envy: f64, inferiority: f64, neg_utility: f64, penalty: f64, w: &LossWeights) -> Self {
        Self {
            envy,
            inferiority,
            neg_utility,
            penalty,
            total: w.envy * envy + w.inferiority * inferiority + w.utility * neg_utility + w.penalty * penalty,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("envy", self.envy),
            ("inferiority", self.inferiority),
            ("utility", self.neg_utility),
            ("penalty", self.penalty),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// How the trained parameters map to a policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parametrization {
    /// Parameters are logits; the policy is their row-wise softmax.
    #[default]
    Logits,
    /// Parameters are the probabilities themselves, kept near the simplex by the penalty term.
    Direct,
}

impl FromStr for Parametrization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logits" => Ok(Self::Logits),
            "direct" => Ok(Self::Direct),
            other => Err(argument(format!("unknown parametrization {other:?} (expected logits or direct)"))),
        }
    }
}

impl fmt::Display for Parametrization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Logits => "logits",
            Self::Direct => "direct",
        })
    }
}

/// `(1 − p)^k` for integer `k`.
pub fn one_minus_pow(p: f64, k: usize) -> f64 {
    (1.0 - p).powi(i32::try_from(k).unwrap_or(i32::MAX))
}

/// Probability that an item with per-draw probability `p` appears at least once in `k` draws.
pub fn hit_probability(p: f64, k: usize) -> f64 {
    1.0 - one_minus_pow(p, k)
}

fn hit_derivative(p: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        k as f64 * one_minus_pow(p, k - 1)
    }
}

fn check_same_dims(a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(())
}

fn check_pair(i: usize, i_star: usize, m: usize) -> Result<()> {
    if i >= m || i_star >= m {
        return Err(argument(format!("user index out of range for {m} users")));
    }
    if i == i_star {
        return Err(argument(format!("pairwise expectation needs two distinct users, got {i} twice")));
    }
    Ok(())
}

pub fn expected_user_utility(i: usize, utility: &Array2<f64>, p: &Array2<f64>, k: usize) -> Result<f64> {
    check_same_dims(utility, p)?;
    if i >= p.nrows() {
        return Err(argument(format!("user index {i} out of range")));
    }
    Ok(k as f64 * p.row(i).dot(&utility.row(i)))
}

/// Signed expected envy of `i` towards `i_star`.
pub fn expected_pair_envy(
    i: usize,
    i_star: usize,
    utility: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
) -> Result<f64> {
    check_same_dims(utility, p)?;
    check_pair(i, i_star, p.nrows())?;
    let s: f64 = (0..p.ncols())
        .map(|j| (p[[i_star, j]] - p[[i, j]]) * utility[[i, j]])
        .sum();
    Ok(k as f64 * s)
}

pub fn expected_pair_inferiority(
    i: usize,
    i_star: usize,
    suitability: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
) -> Result<f64> {
    check_same_dims(suitability, p)?;
    check_pair(i, i_star, p.nrows())?;
    Ok((0..p.ncols())
        .map(|j| {
            (suitability[[i_star, j]] - suitability[[i, j]]).max(0.0)
                * hit_probability(p[[i, j]], k)
                * hit_probability(p[[i_star, j]], k)
        })
        .sum())
}

/// The three system-level expected losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemLosses {
    pub neg_utility: f64,
    pub envy: f64,
    pub inferiority: f64,
}

pub fn system_losses(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
) -> Result<SystemLosses> {
    let w = LossWeights {
        envy: 1.0,
        inferiority: 1.0,
        utility: 1.0,
        penalty: 0.0,
    };
    let b = total_loss(utility, suitability, p, k, &w)?;
    Ok(SystemLosses {
        neg_utility: b.neg_utility,
        envy: b.envy,
        inferiority: b.inferiority,
    })
}

/// `Σ_i (Σ_j P_ij − 1)²`.
pub fn penalty_loss(p_raw: &Array2<f64>) -> f64 {
    p_raw
        .sum_axis(Axis(1))
        .iter()
        .map(|s| (s - 1.0) * (s - 1.0))
        .sum()
}

/// The subset of users, items and inferiority pairs a loss is evaluated on.
///
/// The full scope covers everything; the sampled scopes used for scaling
/// rescale their partial sums so each term keeps the magnitude of the full
/// loss:
///
/// * utility is averaged over the users in scope;
/// * pair sums are multiplied by `m(m−1) / (m_s(m_s−1))`, or by
///   `m_s / |sources|` when inferiority is restricted to a batch of source users;
/// * every term is multiplied by `n / n_s` when items are sampled.
///
/// All ratios are exactly one for the full scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossScope {
    /// Users entering utility, envy and inferiority (as targets). Sorted.
    pub users: Vec<usize>,
    /// Items entering every term. Sorted.
    pub items: Vec<usize>,
    /// When set, inferiority is only taken from these users (a subset of `users`) to all of `users`.
    pub inferiority_sources: Option<Vec<usize>>,
}

impl LossScope {
    pub fn full(users: usize, items: usize) -> Self {
        Self {
            users: (0..users).collect(),
            items: (0..items).collect(),
            inferiority_sources: None,
        }
    }

    fn validate(&self, m: usize, n: usize) -> Result<()> {
        let sorted_in = |v: &[usize], bound: usize| v.windows(2).all(|w| w[0] < w[1]) && v.iter().all(|&x| x < bound);
        if self.users.is_empty() || !sorted_in(&self.users, m) {
            return Err(argument("scope users must be a non-empty sorted set of valid indices"));
        }
        if self.items.is_empty() || !sorted_in(&self.items, n) {
            return Err(argument("scope items must be a non-empty sorted set of valid indices"));
        }
        if let Some(src) = &self.inferiority_sources {
            if src.is_empty() || !sorted_in(src, m) || src.iter().any(|s| self.users.binary_search(s).is_err()) {
                return Err(argument("inferiority sources must be a non-empty sorted subset of the scope users"));
            }
        }
        Ok(())
    }
}

/// Loss over `scope`, and optionally its gradient with respect to `p`.
///
/// `p` need not be row-stochastic (direct parametrization). The envy
/// subgradient at `E[e] = 0` is zero.
pub fn scoped_loss(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
    weights: &LossWeights,
    scope: &LossScope,
    with_grad: bool,
) -> Result<(LossBreakdown, Option<Array2<f64>>)> {
    check_same_dims(utility, p)?;
    check_same_dims(suitability, p)?;
    let (m, n) = p.dim();
    scope.validate(m, n)?;

    let users = &scope.users;
    let items = &scope.items;
    let sources: &[usize] = scope.inferiority_sources.as_deref().unwrap_or(users);
    let ms = users.len();
    let kf = k as f64;
    let mf = m as f64;
    let item_scale = n as f64 / items.len() as f64;
    let pair_ratio = if ms >= 2 {
        (m * (m - 1)) as f64 / (ms * (ms - 1)) as f64
    } else {
        0.0
    };
    let inferiority_ratio = match &scope.inferiority_sources {
        Some(src) => ms as f64 / src.len() as f64,
        None => pair_ratio,
    };

    let own: Vec<f64> = users
        .par_iter()
        .map(|&i| items.iter().map(|&j| p[[i, j]] * utility[[i, j]]).sum())
        .collect();

    // expected envy between users in scope, indexed by position in `users`
    let envy: Vec<Vec<f64>> = users
        .par_iter()
        .map(|&i| {
            users
                .iter()
                .map(|&o| {
                    if o == i {
                        return 0.0;
                    }
                    let s: f64 = items.iter().map(|&j| (p[[o, j]] - p[[i, j]]) * utility[[i, j]]).sum();
                    kf * item_scale * s
                })
                .collect()
        })
        .collect();

    let hit = p.mapv(|x| hit_probability(x, k));
    let inferiority_rows: Vec<f64> = sources
        .par_iter()
        .map(|&i| {
            users
                .iter()
                .filter(|&&o| o != i)
                .map(|&o| {
                    items
                        .iter()
                        .map(|&j| (suitability[[o, j]] - suitability[[i, j]]).max(0.0) * hit[[i, j]] * hit[[o, j]])
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();

    let row_sums = p.sum_axis(Axis(1));
    let neg_utility = -(kf * item_scale / ms as f64) * own.iter().sum::<f64>();
    let positive_envy: f64 = envy.iter().map(|row| row.iter().map(|e| e.max(0.0)).sum::<f64>()).sum();
    let envy_loss = positive_envy * pair_ratio / mf;
    let inferiority_loss = inferiority_rows.iter().sum::<f64>() * inferiority_ratio * item_scale / mf;
    let penalty = row_sums.iter().map(|s| (s - 1.0) * (s - 1.0)).sum();
    let breakdown = LossBreakdown::weighted(envy_loss, inferiority_loss, neg_utility, penalty, weights);

    if !with_grad {
        return Ok((breakdown, None));
    }

    let mut position = vec![None; m];
    for (a, &i) in users.iter().enumerate() {
        position[i] = Some(a);
    }
    let mut is_source = vec![false; m];
    for &i in sources {
        is_source[i] = true;
    }
    let utility_coef = weights.utility * -(kf * item_scale / ms as f64);
    let envy_coef = weights.envy * pair_ratio / mf * kf * item_scale;
    let inferiority_coef = weights.inferiority * inferiority_ratio * item_scale / mf;
    let hit_slope = p.mapv(|x| hit_derivative(x, k));

    let mut grad = Array2::<f64>::zeros((m, n));
    grad.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(r, mut row)| {
            if weights.penalty != 0.0 {
                row.fill(weights.penalty * 2.0 * (row_sums[r] - 1.0));
            }
            let Some(a) = position[r] else { return };
            let envious_of_others = envy[a].iter().filter(|&&e| e > 0.0).count() as f64;
            let envious_of_r: Vec<usize> = (0..ms).filter(|&b| envy[b][a] > 0.0).map(|b| users[b]).collect();
            for &j in items {
                let mut g = utility_coef * utility[[r, j]];
                if envy_coef != 0.0 {
                    let incoming: f64 = envious_of_r.iter().map(|&i| utility[[i, j]]).sum();
                    g += envy_coef * (incoming - envious_of_others * utility[[r, j]]);
                }
                if inferiority_coef != 0.0 {
                    let s_r = suitability[[r, j]];
                    let mut acc = 0.0;
                    if is_source[r] {
                        acc += users
                            .iter()
                            .filter(|&&o| o != r)
                            .map(|&o| (suitability[[o, j]] - s_r).max(0.0) * hit[[o, j]])
                            .sum::<f64>();
                    }
                    acc += sources
                        .iter()
                        .filter(|&&i| i != r)
                        .map(|&i| (s_r - suitability[[i, j]]).max(0.0) * hit[[i, j]])
                        .sum::<f64>();
                    g += inferiority_coef * hit_slope[[r, j]] * acc;
                }
                row[j] += g;
            }
        });
    Ok((breakdown, Some(grad)))
}

/// Weighted total of the system losses.
pub fn total_loss(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let scope = LossScope::full(p.nrows(), p.ncols());
    Ok(scoped_loss(utility, suitability, p, k, weights, &scope, false)?.0)
}

/// Maps a gradient with respect to the policy back to the parameters.
pub fn chain_to_params(p: &Array2<f64>, grad_p: Array2<f64>, parametrization: Parametrization) -> Array2<f64> {
    match parametrization {
        Parametrization::Direct => grad_p,
        Parametrization::Logits => {
            // softmax Jacobian: dZ_ij = P_ij (G_ij − Σ_l P_il G_il)
            let mut out = grad_p;
            for (mut g, prow) in out.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                let inner: f64 = g.iter().zip(prow.iter()).map(|(a, b)| a * b).sum();
                g.zip_mut_with(&prow, |gv, &pv| *gv = pv * (*gv - inner));
            }
            out
        }
    }
}

/// The policy matrix implied by a parameter matrix.
pub fn params_to_policy(params: &Array2<f64>, parametrization: Parametrization) -> Result<Array2<f64>> {
    match parametrization {
        Parametrization::Logits => row_softmax(params),
        Parametrization::Direct => Ok(params.clone()),
    }
}

/// Loss and gradient with respect to the parameters over a scope.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grad(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    params: &Array2<f64>,
    k: usize,
    weights: &LossWeights,
    parametrization: Parametrization,
    scope: &LossScope,
) -> Result<(LossBreakdown, Array2<f64>)> {
    let p = params_to_policy(params, parametrization)?;
    let (loss, grad) = scoped_loss(utility, suitability, &p, k, weights, scope, true)?;
    let grad = grad.expect("gradient requested");
    Ok((loss, chain_to_params(&p, grad, parametrization)))
}

/// Analytic gradient of the total loss with respect to the parameters.
pub fn grad_total_loss(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    params: &Array2<f64>,
    k: usize,
    weights: &LossWeights,
    parametrization: Parametrization,
) -> Result<Array2<f64>> {
    let scope = LossScope::full(params.nrows(), params.ncols());
    Ok(loss_and_grad(utility, suitability, params, k, weights, parametrization, &scope)?.1)
}

/// Total loss as a function of the parameters.
pub fn total_loss_of_params(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    params: &Array2<f64>,
    k: usize,
    weights: &LossWeights,
    parametrization: Parametrization,
) -> Result<f64> {
    let p = params_to_policy(params, parametrization)?;
    Ok(total_loss(utility, suitability, &p, k, weights)?.total)
}

/// Central differences `(f(x + h) − f(x − h)) / 2h` for every coordinate.
pub fn finite_diff_grad<F>(loss: F, params: &Array2<f64>, h: f64) -> Array2<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let mut x = params.clone();
    let mut grad = Array2::zeros(params.dim());
    for idx in 0..params.len() {
        let (i, j) = (idx / params.ncols(), idx % params.ncols());
        let orig = x[[i, j]];
        x[[i, j]] = orig + h;
        let up = loss(&x);
        x[[i, j]] = orig - h;
        let down = loss(&x);
        x[[i, j]] = orig;
        grad[[i, j]] = (up - down) / (2.0 * h);
    }
    grad
}

/// Monte-Carlo estimates of the user- and pair-level expectations.
#[derive(Debug, Clone)]
pub struct McEstimate {
    pub samples: usize,
    pub utility_mean: Array1<f64>,
    pub utility_se: Array1<f64>,
    /// Signed envy `E[e(i, i*)]`, diagonal zero.
    pub envy_mean: Array2<f64>,
    pub envy_se: Array2<f64>,
    /// `E[max(0, e(i, i*))]`, for comparison with `max(0, E[e])`.
    pub positive_envy_mean: Array2<f64>,
    pub inferiority_mean: Array2<f64>,
    pub inferiority_se: Array2<f64>,
}

const MC_CHUNK: usize = 2048;

#[derive(Clone)]
struct Moments {
    n: usize,
    u: Array1<f64>,
    u2: Array1<f64>,
    e: Array2<f64>,
    e2: Array2<f64>,
    epos: Array2<f64>,
    f: Array2<f64>,
    f2: Array2<f64>,
}

impl Moments {
    fn zeros(m: usize) -> Self {
        Self {
            n: 0,
            u: Array1::zeros(m),
            u2: Array1::zeros(m),
            e: Array2::zeros((m, m)),
            e2: Array2::zeros((m, m)),
            epos: Array2::zeros((m, m)),
            f: Array2::zeros((m, m)),
            f2: Array2::zeros((m, m)),
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.n += other.n;
        self.u += &other.u;
        self.u2 += &other.u2;
        self.e += &other.e;
        self.e2 += &other.e2;
        self.epos += &other.epos;
        self.f += &other.f;
        self.f2 += &other.f2;
        self
    }
}

/// Simulates `samples` independent recommendation rounds and averages the
/// deterministic user utility, signed pair envy and pair inferiority.
///
/// Samples are split into fixed chunks of 2048; chunk `c` draws from stream
/// `c` of a ChaCha8 generator seeded with `seed`, so the estimate does not
/// depend on the number of threads.
pub fn mc_estimate(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    p: &Array2<f64>,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_same_dims(utility, p)?;
    check_same_dims(suitability, p)?;
    if samples == 0 {
        return Err(argument("at least one sample is required"));
    }
    let (m, n) = p.dim();
    let sampler = MultinomialSampler::new(p)?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<Moments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = Moments::zeros(m);
            let mut counts = Array2::<u32>::zeros((m, n));
            for _ in 0..count {
                counts.fill(0);
                for i in 0..m {
                    for _ in 0..k {
                        counts[[i, sampler.rows[i].sample(&mut rng)]] += 1;
                    }
                }
                accumulate(&mut acc, utility, suitability, &counts);
            }
            acc
        })
        .collect();
    let total = partials.iter().fold(Moments::zeros(m), Moments::merge);

    let nf = total.n as f64;
    let mean = |s: f64| s / nf;
    let se = |s: f64, s2: f64| {
        if total.n < 2 {
            return 0.0;
        }
        let centered = s2 - s * s / nf;
        // below rounding noise of the raw second moment
        if centered <= 1e-12 * s2.abs() {
            return 0.0;
        }
        let var = centered / (nf - 1.0);
        (var / nf).sqrt()
    };
    Ok(McEstimate {
        samples: total.n,
        utility_mean: total.u.mapv(mean),
        utility_se: ndarray::Zip::from(&total.u).and(&total.u2).map_collect(|&s, &s2| se(s, s2)),
        envy_mean: total.e.mapv(mean),
        envy_se: ndarray::Zip::from(&total.e).and(&total.e2).map_collect(|&s, &s2| se(s, s2)),
        positive_envy_mean: total.epos.mapv(mean),
        inferiority_mean: total.f.mapv(mean),
        inferiority_se: ndarray::Zip::from(&total.f).and(&total.f2).map_collect(|&s, &s2| se(s, s2)),
    })
}

fn accumulate(acc: &mut Moments, utility: &Array2<f64>, suitability: &Array2<f64>, counts: &Array2<u32>) {
    let (m, n) = counts.dim();
    acc.n += 1;
    for i in 0..m {
        let own: f64 = (0..n).map(|j| utility[[i, j]] * f64::from(counts[[i, j]])).sum();
        acc.u[i] += own;
        acc.u2[i] += own * own;
        for o in 0..m {
            if o == i {
                continue;
            }
            let mut e = 0.0;
            let mut f = 0.0;
            for j in 0..n {
                e += utility[[i, j]] * (f64::from(counts[[o, j]]) - f64::from(counts[[i, j]]));
                if counts[[i, j]] > 0 && counts[[o, j]] > 0 {
                    f += (suitability[[o, j]] - suitability[[i, j]]).max(0.0);
                }
            }
            acc.e[[i, o]] += e;
            acc.e2[[i, o]] += e * e;
            acc.epos[[i, o]] += e.max(0.0);
            acc.f[[i, o]] += f;
            acc.f2[[i, o]] += f * f;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn toy_u() -> Array2<f64> {
        array![[0.2, 0.6, 0.9], [0.1, 0.8, 0.7]]
    }

    fn toy_s() -> Array2<f64> {
        array![[0.3, 0.9, 0.4], [0.3, 0.8, 0.8]]
    }

    fn random_instance(m: usize, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = Array2::from_shape_fn((m, n), |_| rng.random_range(0.05..0.95));
        let s = Array2::from_shape_fn((m, n), |_| rng.random_range(0.05..0.95));
        let z = Array2::from_shape_fn((m, n), |_| rng.random_range(-1.5..1.5));
        (u, s, z)
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(LossWeights::new(-1.0, 0.0, 1.0, 0.0).is_err());
        assert!(LossWeights::new(0.0, 0.0, 1.0, 0.0).is_ok());
        assert!("softmax".parse::<Parametrization>().is_err());
        assert_eq!("direct".parse::<Parametrization>().unwrap(), Parametrization::Direct);
    }

    #[test]
    fn pow_helper() {
        assert_eq!(one_minus_pow(0.5, 2), 0.25);
        assert_eq!(one_minus_pow(0.3, 0), 1.0);
        let p = 1.0 - 1e-13;
        let q = 1.0 - p;
        assert_eq!(one_minus_pow(p, 3), q * q * q);
        assert_eq!(one_minus_pow(1.0, 4), 0.0);
    }

    #[test]
    fn expected_utility_examples() {
        let u = toy_u();
        let onehot = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        assert_abs_diff_eq!(expected_user_utility(0, &u, &onehot, 3).unwrap(), 1.8, epsilon = 1e-15);
        let uniform = Array2::from_elem((2, 3), 1.0 / 3.0);
        assert_abs_diff_eq!(expected_user_utility(1, &u, &uniform, 1).unwrap(), 1.6 / 3.0, epsilon = 1e-15);
        let half = array![[0.5, 0.5, 0.0], [1.0, 0.0, 0.0]];
        assert_abs_diff_eq!(expected_user_utility(0, &u, &half, 2).unwrap(), 0.8, epsilon = 1e-15);
    }

    #[test]
    fn expected_envy_examples() {
        let u = toy_u();
        let same = array![[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]];
        assert_eq!(expected_pair_envy(0, 1, &u, &same, 4).unwrap(), 0.0);
        let split = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_abs_diff_eq!(expected_pair_envy(0, 1, &u, &split, 1).unwrap(), 0.4, epsilon = 1e-12);
        assert!(expected_pair_envy(1, 1, &u, &split, 1).is_err());
    }

    #[test]
    fn expected_inferiority_examples() {
        let s = toy_s();
        let both = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        for k in 1..5 {
            assert_abs_diff_eq!(expected_pair_inferiority(0, 1, &s, &both, k).unwrap(), 0.4, epsilon = 1e-12);
        }
        let disjoint = array![[0.0, 0.0, 1.0], [0.5, 0.5, 0.0]];
        assert_eq!(expected_pair_inferiority(0, 1, &s, &disjoint, 3).unwrap(), 0.0);
        let s2 = array![[0.4, 0.5], [0.8, 0.5]];
        let half = array![[0.5, 0.5], [0.5, 0.5]];
        assert_abs_diff_eq!(expected_pair_inferiority(0, 1, &s2, &half, 2).unwrap(), 0.225, epsilon = 1e-12);
    }

    #[test]
    fn system_loss_examples() {
        let one = array![[0.3, 0.7]];
        let l = system_losses(&one, &one, &array![[0.5, 0.5]], 2).unwrap();
        assert_eq!((l.envy, l.inferiority), (0.0, 0.0));

        let u = toy_u();
        let same = array![[0.2, 0.3, 0.5], [0.2, 0.3, 0.5]];
        assert_eq!(system_losses(&u, &toy_s(), &same, 3).unwrap().envy, 0.0);

        let scores = array![[0.1, 0.9, 0.8], [0.4, 0.6, 0.5]];
        let square = array![[0.0, 1.0, 0.0], [0.0, 1.0, 0.0]];
        let l = system_losses(&scores, &scores, &square, 1).unwrap();
        assert_abs_diff_eq!(l.inferiority, 0.15, epsilon = 1e-12);
        assert_abs_diff_eq!(l.neg_utility, -0.75, epsilon = 1e-12);
        assert_eq!(l.envy, 0.0);

        let all = LossWeights::new(1.0, 1.0, 1.0, 0.0).unwrap();
        let t = total_loss(&scores, &scores, &square, 1, &all).unwrap();
        assert_abs_diff_eq!(t.total, -0.6, epsilon = 1e-12);
        let util_only = LossWeights::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let t = total_loss(&scores, &scores, &square, 1, &util_only).unwrap();
        assert_eq!(t.total, t.neg_utility);
        let doubled = total_loss(&scores, &scores, &square, 1, &all.scaled(2.0)).unwrap();
        assert_abs_diff_eq!(doubled.total, -1.2, epsilon = 1e-12);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty_loss(&array![[0.25, 0.75], [0.5, 0.5]]), 0.0);
        assert_abs_diff_eq!(penalty_loss(&array![[1.0, 0.5]]), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(penalty_loss(&array![[0.4, 0.5], [0.6, 0.6]]), 0.05, epsilon = 1e-15);
    }

    #[test]
    fn utility_gradient_is_scaled_utility() {
        let (u, s, z) = random_instance(3, 5, 1);
        let p = row_softmax(&z).unwrap();
        let w = LossWeights::new(0.0, 0.0, 1.0, 0.0).unwrap();
        let g = grad_total_loss(&u, &s, &p, 3, &w, Parametrization::Direct).unwrap();
        let expected = u.mapv(|x| -(3.0 / 3.0) * x);
        for (a, b) in g.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn symmetric_uniform_gradients_cancel_and_match_differences() {
        let row = array![0.2, 0.7, 0.4, 0.9];
        let u = Array2::from_shape_fn((3, 4), |(_, j)| row[j]);
        let p = Array2::from_elem((3, 4), 0.25);
        let w = LossWeights::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let g = grad_total_loss(&u, &u, &p, 2, &w, Parametrization::Direct).unwrap();
        // identical rows: every user's gradient is the same and pair terms cancel
        for i in 1..3 {
            for j in 0..4 {
                assert_abs_diff_eq!(g[[i, j]], g[[0, j]], epsilon = 1e-15);
            }
        }
        let fd = finite_diff_grad(
            |x| total_loss_of_params(&u, &u, x, 2, &w, Parametrization::Direct).unwrap(),
            &p,
            1e-6,
        );
        for (a, b) in g.iter().zip(fd.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn finite_differences_of_simple_functions() {
        let x = array![[1.0]];
        let g = finite_diff_grad(|x| x[[0, 0]] * x[[0, 0]], &x, 1e-5);
        assert_abs_diff_eq!(g[[0, 0]], 2.0, epsilon = 1e-8);
        let g = finite_diff_grad(|_| 3.0, &array![[1.0, 2.0], [3.0, 4.0]], 1e-5);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn relative_error(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradient_matches_finite_differences_both_parametrizations() {
        for seed in 0..6 {
            let (u, s, z) = random_instance(4, 6, 100 + seed);
            let k = 1 + (seed as usize % 3);
            let w = LossWeights::new(0.7, 1.3, 0.5, 0.4).unwrap();
            for (param, x) in [
                (Parametrization::Logits, z.clone()),
                (Parametrization::Direct, row_softmax(&z).unwrap().mapv(|v| v * 1.05)),
            ] {
                let p = params_to_policy(&x, param).unwrap();
                let near_kink = (0..4).any(|i| {
                    (0..4).any(|o| i != o && expected_pair_envy(i, o, &u, &p, k).unwrap().abs() <= 1e-3)
                });
                if near_kink {
                    continue;
                }
                let g = grad_total_loss(&u, &s, &x, k, &w, param).unwrap();
                let fd = finite_diff_grad(|y| total_loss_of_params(&u, &s, y, k, &w, param).unwrap(), &x, 1e-5);
                for (a, b) in g.iter().zip(fd.iter()) {
                    assert!(relative_error(*a, *b) < 1e-5, "{param}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mc_is_exact_for_deterministic_policy() {
        let (u, s) = (toy_u(), toy_s());
        let p = array![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]];
        let mc = mc_estimate(&u, &s, &p, 2, 500, 3).unwrap();
        assert_abs_diff_eq!(mc.utility_mean[0], 1.8, epsilon = 1e-12);
        assert_eq!(mc.utility_se[0], 0.0);
        assert_abs_diff_eq!(mc.inferiority_mean[[0, 1]], 0.4, epsilon = 1e-12);
        assert_eq!(mc.inferiority_se[[0, 1]], 0.0);
        assert_eq!(mc.envy_mean[[0, 1]], 0.0);
    }

    #[test]
    fn mc_shared_item_probability() {
        // both users put half their mass on item 0; P(both hold it) = 0.75²
        let s = array![[0.4, 0.5], [0.8, 0.5]];
        let p = array![[0.5, 0.5], [0.5, 0.5]];
        let mc = mc_estimate(&s, &s, &p, 2, 100_000, 9).unwrap();
        let expected = 0.5625 * 0.4;
        assert!((mc.inferiority_mean[[0, 1]] - expected).abs() < 3.0 * mc.inferiority_se[[0, 1]]);
    }

    #[test]
    fn mc_is_thread_count_independent() {
        let (u, s, z) = random_instance(3, 4, 5);
        let p = row_softmax(&z).unwrap();
        let a = mc_estimate(&u, &s, &p, 2, 5000, 1).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| mc_estimate(&u, &s, &p, 2, 5000, 1).unwrap());
        assert_eq!(a.envy_mean, b.envy_mean);
        assert_eq!(a.inferiority_mean, b.inferiority_mean);
    }
}
