//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use feir_core::baselines::RRConfig;
use feir_core::datagen::GenSpec;
use feir_core::feir::default_weight_grid;
use feir_core::matrix::load_scores;
use feir_core::{LossWeights, Parametrization, Scaling, ScorePair};
use serde::{Deserialize, Serialize};

/// Recommendation list lengths used when the config gives none.
pub const DEFAULT_KS: [usize; 6] = [1, 5, 10, 20, 50, 100];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Generate(GenSpec),
    Files {
        utility: PathBuf,
        #[serde(default)]
        suitability: Option<PathBuf>,
    },
}

impl DatasetSource {
    /// Relative file paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<ScorePair> {
        match self {
            DatasetSource::Generate(spec) => Ok(feir_core::datagen::generate(spec)?.scores),
            DatasetSource::Files { utility, suitability } => {
                let u = base.join(utility);
                let s = suitability.as_ref().map(|s| base.join(s));
                load_scores(&u, s.as_deref()).with_context(|| format!("loading scores from {}", u.display()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRate {
    Fixed(f64),
    /// Only `"auto"` is accepted.
    Auto(AutoTag),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

impl Default for LearningRate {
    fn default() -> Self {
        LearningRate::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeirSettings {
    /// Defaults to the 36-point grid of [`default_weight_grid`].
    #[serde(default)]
    pub weights: Option<Vec<LossWeights>>,
    #[serde(default)]
    pub learning_rate: LearningRate,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_tol")]
    pub convergence_tol: f64,
    #[serde(default)]
    pub parametrization: Parametrization,
    #[serde(default)]
    pub scaling: Scaling,
}

fn default_max_steps() -> usize {
    2000
}
fn default_tol() -> f64 {
    1e-6
}

impl Default for FeirSettings {
    fn default() -> Self {
        Self {
            weights: None,
            learning_rate: LearningRate::default(),
            max_steps: default_max_steps(),
            convergence_tol: default_tol(),
            parametrization: Parametrization::default(),
            scaling: Scaling::None,
        }
    }
}

impl FeirSettings {
    pub fn weight_grid(&self) -> Vec<LossWeights> {
        self.weights.clone().unwrap_or_else(default_weight_grid)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShuffleSettings {
    /// Candidate pool sizes; `3k` when empty. Values below k or above n are skipped.
    #[serde(default)]
    pub depths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaSettings {
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_ca_iters")]
    pub max_iters: usize,
    #[serde(default = "default_marginal_tol")]
    pub marginal_tol: f64,
}

fn default_epsilons() -> Vec<f64> {
    vec![1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1]
}
fn default_ca_iters() -> usize {
    10_000
}
fn default_marginal_tol() -> f64 {
    1e-8
}

impl Default for CaSettings {
    fn default() -> Self {
        Self {
            epsilons: default_epsilons(),
            max_iters: default_ca_iters(),
            marginal_tol: default_marginal_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrSettings {
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default = "default_true")]
    pub exclusive: bool,
}

fn default_taus() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75]
}
fn default_true() -> bool {
    true
}

impl Default for RrSettings {
    fn default() -> Self {
        Self {
            taus: default_taus(),
            exclusive: true,
        }
    }
}

impl RrSettings {
    pub fn config(&self, tau: f64, seed: u64) -> RRConfig {
        RRConfig {
            tau,
            seed,
            exclusive: self.exclusive,
        }
    }
}

/// Methods to run. Absent entries are disabled; naive always runs as the normalizer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Methods {
    #[serde(default)]
    pub feir: Option<FeirSettings>,
    #[serde(default)]
    pub shuffle: Option<ShuffleSettings>,
    #[serde(default)]
    pub ca: Option<CaSettings>,
    #[serde(default)]
    pub rr: Option<RrSettings>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub ks: Option<Vec<usize>>,
    #[serde(default)]
    pub methods: Methods,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// The k values to run, clipped to the item count and deduplicated.
    pub fn ks(&self, items: usize) -> Vec<usize> {
        let mut ks: Vec<usize> = match &self.ks {
            Some(ks) => ks.clone(),
            None => DEFAULT_KS.to_vec(),
        };
        ks.retain(|&k| k >= 1 && k <= items);
        if ks.is_empty() && self.ks.is_none() {
            ks.push(items);
        }
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Checks method settings and that referenced files exist. `base` is the
    /// directory relative file paths resolve against.
    pub fn validate(&self, base: &Path) -> Result<()> {
        if let DatasetSource::Files { utility, suitability } = &self.dataset {
            for p in std::iter::once(utility).chain(suitability.iter()) {
                let full = base.join(p);
                ensure!(full.is_file(), "dataset file {} does not exist", full.display());
            }
        }
        if let DatasetSource::Generate(spec) = &self.dataset {
            spec.validate()?;
        }
        if let Some(ks) = &self.ks {
            ensure!(!ks.is_empty(), "ks must not be empty");
            ensure!(ks.iter().all(|&k| k >= 1), "every k must be at least 1");
        }
        if let Some(f) = &self.methods.feir {
            let grid = f.weight_grid();
            ensure!(!grid.is_empty(), "FEIR weight grid is empty");
            for w in &grid {
                w.validate()?;
            }
            if let LearningRate::Fixed(lr) = f.learning_rate {
                ensure!(lr > 0.0 && lr.is_finite(), "learning rate {lr} must be positive");
            }
            ensure!(f.max_steps >= 1, "max_steps must be at least 1");
        }
        if let Some(ca) = &self.methods.ca {
            ensure!(!ca.epsilons.is_empty(), "CA epsilon grid is empty");
            if let Some(e) = ca.epsilons.iter().find(|&&e| e.is_nan() || e <= 0.0) {
                bail!("CA epsilon {e} must be positive");
            }
        }
        if let Some(rr) = &self.methods.rr {
            ensure!(!rr.taus.is_empty(), "RR tau grid is empty");
            if let Some(t) = rr.taus.iter().find(|&&t| !(0.0..1.0).contains(&t)) {
                bail!("RR tau {t} must lie in [0, 1)");
            }
        }
        Ok(())
    }
}
