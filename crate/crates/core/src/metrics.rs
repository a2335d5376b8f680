//! Deterministic measures of a realized recommendation (a [`CountMatrix`]).
//!
//! User-level envy and inferiority are pairwise: `user_envy(i, i*)` is how much
//! more user `i` would value `i*`'s list than their own, and
//! `user_inferiority(i, i*)` is how much less suitable `i` is than `i*` for the
//! items both were recommended. System values sum the positive pairwise terms
//! and divide by the number of users (not the number of pairs) unless
//! [`PairNormalizer::Pairs`] is requested.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::matrix::{CountMatrix, ScorePair};

/// System-level utility, envy and inferiority of a recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemMetrics {
    pub utility: f64,
    pub envy: f64,
    pub inferiority: f64,
    pub overall_fairness: f64,
    pub k: usize,
}

/// Per-user and mean competition indicators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetitionMetrics {
    pub mean_rank_per_user: Vec<f64>,
    pub mean_gap_per_user: Vec<f64>,
    pub mean_rank: f64,
    pub mean_gap: f64,
}

/// Metrics divided by those of the naive recommendation at the same `k`.
///
/// A ratio is `None` when the naive value is zero. Envy is never normalized
/// because naive envy is always zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMetrics {
    pub utility: Option<f64>,
    pub envy: f64,
    pub inferiority: Option<f64>,
    pub overall_fairness: Option<f64>,
}

/// Flat record of every deterministic metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub utility: f64,
    pub envy: f64,
    pub inferiority: f64,
    pub overall_fairness: f64,
    pub mean_rank: f64,
    pub mean_gap: f64,
    pub gini: f64,
    pub k: usize,
}

/// Divisor applied to system-level pair sums.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairNormalizer {
    /// `1/m`, as in the original definition.
    #[default]
    Users,
    /// `1/(m(m-1))`, for comparison with measures averaged over ordered pairs.
    Pairs,
}

fn check_dims(a: &Array2<f64>, c: &CountMatrix) -> Result<()> {
    if a.dim() != c.counts().dim() {
        return Err(Error::Dimension {
            expected: a.dim(),
            actual: c.counts().dim(),
        });
    }
    Ok(())
}

fn check_user(i: usize, m: usize) -> Result<()> {
    if i >= m {
        return Err(argument(format!("user index {i} out of range for {m} users")));
    }
    Ok(())
}

fn check_pair(i: usize, i_star: usize, m: usize) -> Result<()> {
    check_user(i, m)?;
    check_user(i_star, m)?;
    if i == i_star {
        return Err(argument(format!("pairwise measure needs two distinct users, got {i} twice")));
    }
    Ok(())
}

/// Sum of the utilities of the items in user `i`'s list.
pub fn user_utility(i: usize, utility: &Array2<f64>, c: &CountMatrix) -> Result<f64> {
    check_dims(utility, c)?;
    check_user(i, c.users())?;
    Ok(c.row_items(i).map(|(j, n)| utility[[i, j]] * f64::from(n)).sum())
}

/// Utility user `i` would get from `i_star`'s list minus the utility of their own. May be negative.
pub fn user_envy(i: usize, i_star: usize, utility: &Array2<f64>, c: &CountMatrix) -> Result<f64> {
    check_dims(utility, c)?;
    check_pair(i, i_star, c.users())?;
    Ok(pair_envy(i, i_star, utility, c))
}

fn pair_envy(i: usize, i_star: usize, utility: &Array2<f64>, c: &CountMatrix) -> f64 {
    let counts = c.counts();
    (0..c.items())
        .map(|j| utility[[i, j]] * (f64::from(counts[[i_star, j]]) - f64::from(counts[[i, j]])))
        .sum()
}

/// Suitability deficit of `i` against `i_star` over items recommended to both, each counted once.
pub fn user_inferiority(
    i: usize,
    i_star: usize,
    suitability: &Array2<f64>,
    c: &CountMatrix,
) -> Result<f64> {
    check_dims(suitability, c)?;
    check_pair(i, i_star, c.users())?;
    let counts = c.counts();
    Ok((0..c.items())
        .filter(|&j| counts[[i, j]] > 0 && counts[[i_star, j]] > 0)
        .map(|j| (suitability[[i_star, j]] - suitability[[i, j]]).max(0.0))
        .sum())
}

/// Users holding each item, in ascending user order.
fn holders(c: &CountMatrix) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); c.items()];
    for ((i, j), &n) in c.counts().indexed_iter() {
        if n > 0 {
            out[j].push(i);
        }
    }
    out
}

/// `Σ_{i*≠i} max(0, e(i, i*))` for every user `i`.
pub fn per_user_envy(utility: &Array2<f64>, c: &CountMatrix) -> Result<Vec<f64>> {
    check_dims(utility, c)?;
    let m = c.users();
    let lists: Vec<Vec<(usize, u32)>> = (0..m).map(|i| c.row_items(i).collect()).collect();
    Ok((0..m)
        .into_par_iter()
        .map(|i| {
            let own: f64 = lists[i].iter().map(|&(j, n)| utility[[i, j]] * f64::from(n)).sum();
            (0..m)
                .filter(|&o| o != i)
                .map(|o| {
                    let other: f64 =
                        lists[o].iter().map(|&(j, n)| utility[[i, j]] * f64::from(n)).sum();
                    (other - own).max(0.0)
                })
                .sum()
        })
        .collect())
}

/// `Σ_{i*≠i} f(i, i*)` for every user `i`.
pub fn per_user_inferiority(suitability: &Array2<f64>, c: &CountMatrix) -> Result<Vec<f64>> {
    check_dims(suitability, c)?;
    let holders = holders(c);
    Ok((0..c.users())
        .into_par_iter()
        .map(|i| {
            c.row_items(i)
                .map(|(j, _)| {
                    let own = suitability[[i, j]];
                    holders[j]
                        .iter()
                        .filter(|&&o| o != i)
                        .map(|&o| (suitability[[o, j]] - own).max(0.0))
                        .sum::<f64>()
                })
                .sum()
        })
        .collect())
}

/// System utility, envy and inferiority with the default `1/m` normalizer.
pub fn system_metrics(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    c: &CountMatrix,
) -> Result<SystemMetrics> {
    system_metrics_with(utility, suitability, c, PairNormalizer::Users)
}

pub fn system_metrics_with(
    utility: &Array2<f64>,
    suitability: &Array2<f64>,
    c: &CountMatrix,
    normalizer: PairNormalizer,
) -> Result<SystemMetrics> {
    check_dims(utility, c)?;
    check_dims(suitability, c)?;
    let m = c.users();
    let mf = m as f64;
    let utility_sum: f64 = (0..m)
        .map(|i| c.row_items(i).map(|(j, n)| utility[[i, j]] * f64::from(n)).sum::<f64>())
        .sum();
    let envy_sum: f64 = per_user_envy(utility, c)?.iter().sum();
    let inferiority_sum: f64 = per_user_inferiority(suitability, c)?.iter().sum();
    let pair_div = match normalizer {
        PairNormalizer::Users => mf,
        PairNormalizer::Pairs if m > 1 => mf * (mf - 1.0),
        PairNormalizer::Pairs => 1.0,
    };
    let envy = envy_sum / pair_div;
    let inferiority = inferiority_sum / pair_div;
    Ok(SystemMetrics {
        utility: utility_sum / mf,
        envy,
        inferiority,
        overall_fairness: envy + inferiority,
        k: c.k(),
    })
}

fn ratio(value: f64, naive: f64) -> Option<f64> {
    (naive != 0.0).then(|| value / naive)
}

pub fn normalized_metrics(metrics: &SystemMetrics, naive: &SystemMetrics) -> NormalizedMetrics {
    NormalizedMetrics {
        utility: ratio(metrics.utility, naive.utility),
        envy: metrics.envy,
        inferiority: ratio(metrics.inferiority, naive.inferiority),
        overall_fairness: ratio(metrics.overall_fairness, naive.overall_fairness),
    }
}

/// Mean rank (number of strictly more suitable co-recipients) and mean
/// suitability gap per user, averaged over the `k` list slots.
pub fn competition_metrics(suitability: &Array2<f64>, c: &CountMatrix) -> Result<CompetitionMetrics> {
    check_dims(suitability, c)?;
    if !c.is_binary() {
        return Err(argument("competition metrics need a binary recommendation matrix"));
    }
    let holders = holders(c);
    let kf = c.k() as f64;
    let per_user: Vec<(f64, f64)> = (0..c.users())
        .into_par_iter()
        .map(|i| {
            let mut rank = 0.0;
            let mut gap = 0.0;
            for (j, _) in c.row_items(i) {
                let own = suitability[[i, j]];
                let mut better = 0usize;
                let mut deficit = 0.0;
                for &o in &holders[j] {
                    let s = suitability[[o, j]];
                    if o != i && s > own {
                        better += 1;
                        deficit += s - own;
                    }
                }
                rank += better as f64;
                gap += deficit / better.max(1) as f64;
            }
            (rank / kf, gap / kf)
        })
        .collect();
    let (mean_rank_per_user, mean_gap_per_user): (Vec<f64>, Vec<f64>) = per_user.into_iter().unzip();
    let mf = mean_rank_per_user.len() as f64;
    Ok(CompetitionMetrics {
        mean_rank: mean_rank_per_user.iter().sum::<f64>() / mf,
        mean_gap: mean_gap_per_user.iter().sum::<f64>() / mf,
        mean_rank_per_user,
        mean_gap_per_user,
    })
}

/// Gini coefficient of item exposure (column sums of `c`); zero when nothing is exposed.
pub fn gini_index(c: &CountMatrix) -> f64 {
    gini(&c.item_exposure().iter().map(|&x| x as f64).collect::<Vec<_>>())
}

/// Gini coefficient `Σ_j Σ_j' |x_j − x_j'| / (2 n Σ x)`, evaluated in sorted form.
pub fn gini(values: &[f64]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = n as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(r, x)| (2.0 * (r + 1) as f64 - nf - 1.0) * x)
        .sum();
    weighted / (nf * total)
}

/// Every deterministic metric of a recommendation in one record.
pub fn evaluate(scores: &ScorePair, c: &CountMatrix) -> Result<MetricsRecord> {
    let sys = system_metrics(scores.utility(), scores.suitability(), c)?;
    let comp = competition_metrics(scores.suitability(), c)?;
    Ok(MetricsRecord {
        utility: sys.utility,
        envy: sys.envy,
        inferiority: sys.inferiority,
        overall_fairness: sys.overall_fairness,
        mean_rank: comp.mean_rank,
        mean_gap: comp.mean_gap,
        gini: gini_index(c),
        k: c.k(),
    })
}

impl MetricsRecord {
    pub fn system(&self) -> SystemMetrics {
        SystemMetrics {
            utility: self.utility,
            envy: self.envy,
            inferiority: self.inferiority,
            overall_fairness: self.overall_fairness,
            k: self.k,
        }
    }
}
