//! Synthetic score matrices drawn from a normal distribution truncated to (0, 1).
//!
//! Entries are sampled by inverting the truncated CDF. Every entry draws its
//! uniform variate from its own position of a ChaCha8 stream (stream chosen by
//! family and matrix, word position by `(i, j)`), so generation is a pure
//! function of the [`GenSpec`] and independent of evaluation order.
//!
//! The structured families add `group_boost` to the location of a block of
//! rows (user groups) or columns (item groups) before truncation. The boosted
//! block is the first `round(group_fraction · m)` rows or
//! `round(group_fraction · n)` columns.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{argument, Error, Result};
use crate::matrix::ScorePair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Random,
    SuPair,
    ItemGroups,
    UserGroups,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Random => "random",
            Family::SuPair => "su_pair",
            Family::ItemGroups => "item_groups",
            Family::UserGroups => "user_groups",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Family::Random, Family::SuPair, Family::ItemGroups, Family::UserGroups]
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| argument(format!("unknown dataset family {s:?}")))
    }
}

/// Parameters of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub family: Family,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub group_fraction: f64,
    #[serde(default = "default_boost")]
    pub group_boost: f64,
    /// Location of the untruncated normal.
    #[serde(default = "default_mean")]
    pub mean: f64,
    /// Scale of the untruncated normal.
    #[serde(default = "default_std")]
    pub std_dev: f64,
}

fn default_fraction() -> f64 {
    0.5
}
fn default_boost() -> f64 {
    0.3
}
fn default_mean() -> f64 {
    0.5
}
fn default_std() -> f64 {
    0.25
}

impl GenSpec {
    /// Family defaults: 50×50 for `su_pair`, 20×100 for the group families, 100×20 for `random`.
    pub fn new(family: Family, seed: u64) -> Self {
        let (m, n) = match family {
            Family::Random => (100, 20),
            Family::SuPair => (50, 50),
            Family::ItemGroups | Family::UserGroups => (20, 100),
        };
        Self {
            family,
            m,
            n,
            seed,
            group_fraction: default_fraction(),
            group_boost: default_boost(),
            mean: default_mean(),
            std_dev: default_std(),
        }
    }

    pub fn with_dims(mut self, m: usize, n: usize) -> Self {
        self.m = m;
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 || self.n < 2 {
            return Err(argument(format!("dataset needs at least 2 users and 2 items, got {}x{}", self.m, self.n)));
        }
        if !(self.group_fraction > 0.0 && self.group_fraction < 1.0) {
            return Err(argument(format!("group_fraction {} must lie in (0, 1)", self.group_fraction)));
        }
        if !(self.group_boost > 0.0 && self.group_boost.is_finite()) {
            return Err(argument(format!("group_boost {} must be positive", self.group_boost)));
        }
        if !(self.std_dev > 0.0 && self.std_dev.is_finite() && self.mean.is_finite()) {
            return Err(argument("normal location must be finite and scale positive"));
        }
        Ok(())
    }

    fn expect_family(&self, family: Family) -> Result<()> {
        if self.family != family {
            return Err(argument(format!("expected a {family} spec, got {}", self.family)));
        }
        self.validate()
    }

    /// Number of boosted rows (user groups) or columns (item groups).
    pub fn boosted_count(&self) -> usize {
        let total = match self.family {
            Family::UserGroups => self.m,
            _ => self.n,
        };
        (self.group_fraction * total as f64).round() as usize
    }
}

/// A generated dataset together with its advantaged group.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scores: ScorePair,
    /// Boosted user rows (`user_groups`) or item columns (`item_groups`); empty otherwise.
    pub boosted: Vec<usize>,
}

/// Inverse-CDF sampler of `Normal(mean, std_dev)` restricted to (0, 1).
struct TruncatedUnitNormal {
    normal: Normal,
    cdf_lo: f64,
    cdf_span: f64,
}

impl TruncatedUnitNormal {
    fn new(mean: f64, std_dev: f64) -> Result<Self> {
        let normal = Normal::new(mean, std_dev).map_err(|e| argument(e.to_string()))?;
        let cdf_lo = normal.cdf(0.0);
        let cdf_span = normal.cdf(1.0) - cdf_lo;
        if cdf_span <= 0.0 {
            return Err(argument(format!("Normal({mean}, {std_dev}) puts no mass on (0, 1)")));
        }
        Ok(Self { normal, cdf_lo, cdf_span })
    }

    fn quantile(&self, u: f64) -> f64 {
        let x = self.normal.inverse_cdf(self.cdf_lo + u * self.cdf_span);
        x.clamp(f64::EPSILON, 1.0 - f64::EPSILON)
    }
}

fn draw_matrix(spec: &GenSpec, stream: u64, boost: impl Fn(usize, usize) -> f64) -> Result<Array2<f64>> {
    let plain = TruncatedUnitNormal::new(spec.mean, spec.std_dev)?;
    let boosted = TruncatedUnitNormal::new(spec.mean + spec.group_boost, spec.std_dev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(stream);
    let n = spec.n;
    Ok(Array2::from_shape_fn((spec.m, n), |(i, j)| {
        // two 32-bit words per f64 draw
        rng.set_word_pos(2 * (i * n + j) as u128);
        let u: f64 = Open01.sample(&mut rng);
        if boost(i, j) > 0.0 {
            boosted.quantile(u)
        } else {
            plain.quantile(u)
        }
    }))
}

const UTILITY_STREAM: u64 = 1;
const SUITABILITY_STREAM: u64 = 2;

/// i.i.d. truncated-normal scores shared as utility and suitability.
pub fn gen_random(spec: &GenSpec) -> Result<Dataset> {
    spec.expect_family(Family::Random)?;
    let u = draw_matrix(spec, UTILITY_STREAM, |_, _| 0.0)?;
    Ok(Dataset {
        scores: ScorePair::shared(u)?,
        boosted: Vec::new(),
    })
}

/// Independent utility and suitability matrices.
pub fn gen_su_pair(spec: &GenSpec) -> Result<Dataset> {
    spec.expect_family(Family::SuPair)?;
    let u = draw_matrix(spec, UTILITY_STREAM, |_, _| 0.0)?;
    let s = draw_matrix(spec, SUITABILITY_STREAM, |_, _| 0.0)?;
    Ok(Dataset {
        scores: ScorePair::new(u, s)?,
        boosted: Vec::new(),
    })
}

/// Shared scores where a block of items scores higher for everyone.
pub fn gen_item_groups(spec: &GenSpec) -> Result<Dataset> {
    spec.expect_family(Family::ItemGroups)?;
    let count = spec.boosted_count();
    let u = draw_matrix(spec, UTILITY_STREAM, |_, j| if j < count { 1.0 } else { 0.0 })?;
    Ok(Dataset {
        scores: ScorePair::shared(u)?,
        boosted: (0..count).collect(),
    })
}

/// Shared scores where a block of users scores higher on every item.
pub fn gen_user_groups(spec: &GenSpec) -> Result<Dataset> {
    spec.expect_family(Family::UserGroups)?;
    let count = spec.boosted_count();
    let u = draw_matrix(spec, UTILITY_STREAM, |i, _| if i < count { 1.0 } else { 0.0 })?;
    Ok(Dataset {
        scores: ScorePair::shared(u)?,
        boosted: (0..count).collect(),
    })
}

pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    match spec.family {
        Family::Random => gen_random(spec),
        Family::SuPair => gen_su_pair(spec),
        Family::ItemGroups => gen_item_groups(spec),
        Family::UserGroups => gen_user_groups(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::top_k;
    use crate::metrics::{gini_index, per_user_inferiority};
    use std::f64::consts::PI;

    /// Mean and variance of Normal(mu, sigma) truncated to (0, 1), from the
    /// closed-form moments with an erf-based CDF written out independently.
    fn truncated_moments(mu: f64, sigma: f64) -> (f64, f64) {
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * PI).sqrt();
        let cdf = |z: f64| 0.5 * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt()));
        let (a, b) = ((0.0 - mu) / sigma, (1.0 - mu) / sigma);
        let z = cdf(b) - cdf(a);
        let mean = mu + sigma * (pdf(a) - pdf(b)) / z;
        let var = sigma * sigma * (1.0 + (a * pdf(a) - b * pdf(b)) / z - ((pdf(a) - pdf(b)) / z).powi(2));
        (mean, var)
    }

    #[test]
    fn random_entries_in_open_unit_interval_and_deterministic() {
        let spec = GenSpec::new(Family::Random, 42).with_dims(100, 20);
        let a = gen_random(&spec).unwrap();
        assert!(a.scores.utility().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(a.scores.is_shared());
        assert_eq!(a, gen_random(&spec).unwrap());
        let other = gen_random(&GenSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.scores.utility(), other.scores.utility());
    }

    #[test]
    fn random_mean_matches_truncated_normal() {
        for (mu, sigma) in [(0.5, 0.25), (0.3, 0.2)] {
            let spec = GenSpec {
                mean: mu,
                std_dev: sigma,
                ..GenSpec::new(Family::Random, 7).with_dims(100, 100)
            };
            let d = gen_random(&spec).unwrap();
            let (mean, var) = truncated_moments(mu, sigma);
            let n = d.scores.utility().len() as f64;
            let sample_mean = d.scores.utility().mean().unwrap();
            let se = (var / n).sqrt();
            assert!((sample_mean - mean).abs() < 4.0 * se, "{sample_mean} vs {mean} ± {se}");
        }
    }

    #[test]
    fn su_pair_is_independent() {
        let d = gen_su_pair(&GenSpec::new(Family::SuPair, 3)).unwrap();
        let (u, s) = (d.scores.utility(), d.scores.suitability());
        assert_eq!(u.dim(), (50, 50));
        assert!(!d.scores.is_shared());
        assert!(u.iter().zip(s.iter()).all(|(a, b)| a != b));
        let (mu, ms) = (u.mean().unwrap(), s.mean().unwrap());
        let cov: f64 = u.iter().zip(s.iter()).map(|(a, b)| (a - mu) * (b - ms)).sum();
        let vu: f64 = u.iter().map(|a| (a - mu).powi(2)).sum();
        let vs: f64 = s.iter().map(|b| (b - ms).powi(2)).sum();
        assert!((cov / (vu * vs).sqrt()).abs() < 0.05);
    }

    #[test]
    fn item_groups_boost_columns() {
        let spec = GenSpec::new(Family::ItemGroups, 11);
        let d = gen_item_groups(&spec).unwrap();
        assert_eq!(d.boosted.len(), 50);
        let u = d.scores.utility();
        let col_mean = |cols: &mut dyn Iterator<Item = usize>| {
            let v: Vec<f64> = cols.map(|j| u.column(j).mean().unwrap()).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let boosted = col_mean(&mut (0..50));
        let rest = col_mean(&mut (50..100));
        assert!(boosted - rest >= spec.group_boost / 2.0);
        assert!(u.iter().all(|&v| v > 0.0 && v < 1.0));
        let fifth = GenSpec {
            group_fraction: 0.2,
            ..spec
        };
        assert_eq!(gen_item_groups(&fifth).unwrap().boosted.len(), 20);
    }

    #[test]
    fn user_groups_disadvantaged_bear_more_inferiority() {
        let spec = GenSpec::new(Family::UserGroups, 5);
        let d = gen_user_groups(&spec).unwrap();
        assert_eq!(d.boosted, (0..10).collect::<Vec<_>>());
        assert_eq!(d, gen_user_groups(&spec).unwrap());
        let u = d.scores.utility();
        let c = top_k(u.view(), 10).unwrap();
        let per_user = per_user_inferiority(u, &c).unwrap();
        let adv: f64 = per_user[..10].iter().sum::<f64>() / 10.0;
        let dis: f64 = per_user[10..].iter().sum::<f64>() / 10.0;
        assert!(per_user.iter().sum::<f64>() > 0.0);
        assert!(dis > adv, "disadvantaged {dis} vs advantaged {adv}");
    }

    #[test]
    fn item_groups_concentrate_exposure() {
        let ig = gen_item_groups(&GenSpec::new(Family::ItemGroups, 1)).unwrap();
        let rnd = gen_random(&GenSpec::new(Family::Random, 1).with_dims(20, 100)).unwrap();
        let g_ig = gini_index(&top_k(ig.scores.utility().view(), 10).unwrap());
        let g_rnd = gini_index(&top_k(rnd.scores.utility().view(), 10).unwrap());
        assert!(g_ig > g_rnd);
    }

    #[test]
    fn spec_validation() {
        assert!(GenSpec::new(Family::Random, 0).with_dims(1, 5).validate().is_err());
        let bad = GenSpec {
            group_fraction: 1.0,
            ..GenSpec::new(Family::UserGroups, 0)
        };
        assert!(bad.validate().is_err());
        assert!(gen_random(&GenSpec::new(Family::SuPair, 0)).is_err());
        assert_eq!("user_groups".parse::<Family>().unwrap(), Family::UserGroups);
    }
}
