//! `check`: quick numerical self-tests of the loss implementation.

use std::fmt;

use anyhow::Result;
use feir_core::datagen::{generate, Family, GenSpec};
use feir_core::losses::{
    expected_pair_envy, expected_pair_inferiority, expected_user_utility, finite_diff_grad, grad_total_loss,
    mc_estimate, total_loss_of_params,
};
use feir_core::metrics::{user_envy, user_inferiority};
use feir_core::{row_softmax, CountMatrix, LossWeights, Parametrization};
use ndarray::{array, Array2};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn instance(seed: u64, m: usize, n: usize) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>)> {
    let data = generate(&GenSpec::new(Family::SuPair, seed).with_dims(m, n))?;
    let z = generate(&GenSpec::new(Family::Random, seed.wrapping_add(1)).with_dims(m, n))?;
    let logits = z.scores.utility().mapv(|v| 3.0 * v - 1.5);
    Ok((data.scores.utility().clone(), data.scores.suitability().clone(), logits))
}

/// Closed-form expectations against Monte-Carlo means, within four standard errors.
pub fn monte_carlo(seed: u64, samples: usize) -> Result<CheckOutcome> {
    let (mut checked, mut worst) = (0usize, 0.0f64);
    for t in 0..3u64 {
        let (m, n, k) = (3, 5, 2);
        let (u, s, z) = instance(seed.wrapping_add(10 * t), m, n)?;
        let p = row_softmax(&z)?;
        let mc = mc_estimate(&u, &s, &p, k, samples, seed.wrapping_add(t))?;
        let mut z_score = |exact: f64, mean: f64, se: f64| {
            checked += 1;
            let dev = (exact - mean).abs();
            worst = worst.max(if se > 0.0 { dev / se } else if dev > 1e-9 { f64::INFINITY } else { 0.0 });
        };
        for i in 0..m {
            z_score(expected_user_utility(i, &u, &p, k)?, mc.utility_mean[i], mc.utility_se[i]);
            for o in (0..m).filter(|&o| o != i) {
                z_score(expected_pair_envy(i, o, &u, &p, k)?, mc.envy_mean[[i, o]], mc.envy_se[[i, o]]);
                z_score(
                    expected_pair_inferiority(i, o, &s, &p, k)?,
                    mc.inferiority_mean[[i, o]],
                    mc.inferiority_se[[i, o]],
                );
            }
        }
    }
    Ok(CheckOutcome {
        name: "monte-carlo",
        pass: worst <= 4.0,
        detail: format!("{checked} expectations, largest deviation {worst:.2} SE over {samples} samples"),
    })
}

/// Analytic gradients against central finite differences in both parametrizations.
pub fn gradient(seed: u64) -> Result<CheckOutcome> {
    let (u, s, z) = instance(seed, 4, 6)?;
    let w = LossWeights::new(1.0, 0.7, 0.5, 0.3)?;
    let k = 2;
    let direct = row_softmax(&z)?.mapv(|v| v * 1.05);
    let mut worst = 0.0f64;
    for (param, x) in [(Parametrization::Logits, z), (Parametrization::Direct, direct)] {
        let g = grad_total_loss(&u, &s, &x, k, &w, param)?;
        let fd = finite_diff_grad(|y| total_loss_of_params(&u, &s, y, k, &w, param).unwrap_or(f64::NAN), &x, 1e-5);
        for (a, b) in g.iter().zip(fd.iter()) {
            let err = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
    }
    Ok(CheckOutcome {
        name: "gradient",
        pass: worst < 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    })
}

/// Hand-computed envy and inferiority on a two-user, three-item example.
pub fn toy() -> Result<CheckOutcome> {
    let u = array![[0.2, 0.6, 0.9], [0.1, 0.8, 0.7]];
    let s = array![[0.3, 0.9, 0.4], [0.3, 0.8, 0.8]];
    let same = CountMatrix::from_lists(&[vec![2], vec![2]], 3)?;
    let split = CountMatrix::from_lists(&[vec![0], vec![1]], 3)?;
    let cases = [
        ("shared item envy", user_envy(0, 1, &u, &same)?, 0.0),
        ("shared item inferiority", user_inferiority(0, 1, &s, &same)?, 0.4),
        ("split envy", user_envy(0, 1, &u, &split)?, 0.4),
        ("split inferiority", user_inferiority(0, 1, &s, &split)?, 0.0),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-12)
        .map(|(what, got, want)| format!("{what}: {got} != {want}"))
        .collect();
    Ok(CheckOutcome {
        name: "toy",
        pass: bad.is_empty(),
        detail: if bad.is_empty() { format!("{} values exact", cases.len()) } else { bad.join("; ") },
    })
}

pub fn cmd_check(seed: u64, samples: usize) -> Result<Vec<CheckOutcome>> {
    Ok(vec![toy()?, gradient(seed)?, monte_carlo(seed, samples)?])
}
