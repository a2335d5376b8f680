//! Post-processing of recommender score matrices for fair recommendation of
//! limited resources.
//!
//! A recommender's score matrix is reinterpreted as a probabilistic policy and
//! reshaped by gradient descent on a weighted sum of expected envy, expected
//! inferiority and negative expected utility. The crate also provides the
//! deterministic measures used to evaluate top-k lists, the comparison
//! baselines, synthetic data generators and Pareto-front tooling.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`matrix`] | score pairs, policies, count matrices, CSV I/O, softmax, top-k |
//! | [`metrics`] | deterministic utility, envy, inferiority, competition, Gini |
//! | [`losses`] | expected (differentiable) losses, gradients, Monte-Carlo oracle |
//! | [`feir`] | the gradient-descent optimizer, scaling views, weight sweeps |
//! | [`baselines`] | naive, shuffle, congestion alleviation, round robin |
//! | [`datagen`] | synthetic truncated-normal datasets |
//! | [`pareto`] | solution points, Pareto fronts, hypervolume |

pub mod baselines;
pub mod datagen;
pub mod error;
pub mod feir;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod pareto;

pub use error::{Error, Result};
pub use feir::{fit, sweep, Scaling, TrainConfig, TrainTrace};
pub use losses::{LossBreakdown, LossWeights, Parametrization};
pub use matrix::{
    load_matrix, row_softmax, sample_recommendations, save_matrix, top_k, CountMatrix, Policy,
    ScorePair,
};
pub use metrics::{CompetitionMetrics, SystemMetrics};
pub use pareto::{Front2D, Metric, SolutionPoint};
