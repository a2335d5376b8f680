//! Benchmark fixtures.

use feir_core::datagen::{generate, Family, GenSpec};
use feir_core::{row_softmax, ScorePair};
use ndarray::Array2;

/// Distinct utility and suitability of the given size.
pub fn scores(m: usize, n: usize, seed: u64) -> ScorePair {
    generate(&GenSpec::new(Family::SuPair, seed).with_dims(m, n))
        .expect("valid fixture spec")
        .scores
}

/// Softmax of the utility matrix, the starting policy of training.
pub fn initial_policy(scores: &ScorePair) -> Array2<f64> {
    row_softmax(scores.utility()).expect("finite scores")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_requested_shape() {
        let s = scores(7, 9, 1);
        assert_eq!((s.users(), s.items()), (7, 9));
        let p = initial_policy(&s);
        assert!(p.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
    }
}
