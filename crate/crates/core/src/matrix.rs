//! Shared data model: score matrices, recommendation policies, count matrices,
//! matrix file I/O and the two ways of turning a policy into lists (top-k
//! rounding and multinomial sampling).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// Tolerance on policy row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// Utility and suitability matrices for `m` users and `n` items.
///
/// Row `i` holds user `i`, column `j` holds item `j`. Every entry lies in the
/// open interval (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePair {
    utility: Array2<f64>,
    suitability: Array2<f64>,
    shared: bool,
}

impl ScorePair {
    /// Builds a pair with distinct utility and suitability matrices.
    pub fn new(utility: Array2<f64>, suitability: Array2<f64>) -> Result<Self> {
        if utility.dim() != suitability.dim() {
            return Err(Error::Dimension {
                expected: utility.dim(),
                actual: suitability.dim(),
            });
        }
        check_open_unit("utility", &utility)?;
        check_open_unit("suitability", &suitability)?;
        let shared = utility == suitability;
        Ok(Self {
            utility,
            suitability,
            shared,
        })
    }

    /// Builds a pair where one score matrix serves as both utility and suitability.
    pub fn shared(scores: Array2<f64>) -> Result<Self> {
        check_open_unit("scores", &scores)?;
        Ok(Self {
            suitability: scores.clone(),
            utility: scores,
            shared: true,
        })
    }

    pub fn utility(&self) -> &Array2<f64> {
        &self.utility
    }

    pub fn suitability(&self) -> &Array2<f64> {
        &self.suitability
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }

    pub fn users(&self) -> usize {
        self.utility.nrows()
    }

    pub fn items(&self) -> usize {
        self.utility.ncols()
    }
}

fn check_open_unit(name: &str, m: &Array2<f64>) -> Result<()> {
    if m.is_empty() {
        return Err(Error::Range(format!("{name} matrix is empty")));
    }
    for ((i, j), &v) in m.indexed_iter() {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Range(format!(
                "{name}[{i},{j}] = {v} is outside the open interval (0, 1)"
            )));
        }
    }
    Ok(())
}

/// A row-stochastic matrix of per-user recommendation probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Array2<f64>,
}

impl Policy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(argument("policy matrix is empty"));
        }
        for (i, row) in probs.axis_iter(Axis(0)).enumerate() {
            if let Some(j) = row.iter().position(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::Range(format!(
                    "policy entry [{i},{j}] = {} is not a probability",
                    row[j]
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Range(format!("policy row {i} sums to {sum}")));
            }
        }
        Ok(Self { probs })
    }

    /// Row-wise softmax of a logit matrix.
    pub fn from_logits(logits: &Array2<f64>) -> Result<Self> {
        Ok(Self {
            probs: row_softmax(logits)?,
        })
    }

    /// Uniform distribution over items for every user.
    pub fn uniform(users: usize, items: usize) -> Self {
        Self {
            probs: Array2::from_elem((users, items), 1.0 / items as f64),
        }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.probs
    }

    pub fn users(&self) -> usize {
        self.probs.nrows()
    }

    pub fn items(&self) -> usize {
        self.probs.ncols()
    }
}

/// Number of occurrences of each item in each user's list; every row sums to `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountMatrix {
    counts: Array2<u32>,
    k: usize,
}

impl CountMatrix {
    pub fn new(counts: Array2<u32>, k: usize) -> Result<Self> {
        for (i, row) in counts.axis_iter(Axis(0)).enumerate() {
            let sum: u64 = row.iter().map(|&c| u64::from(c)).sum();
            if sum != k as u64 {
                return Err(argument(format!(
                    "count row {i} sums to {sum}, expected k = {k}"
                )));
            }
        }
        Ok(Self { counts, k })
    }

    /// Builds a binary count matrix from per-user item lists.
    pub fn from_lists(lists: &[Vec<usize>], items: usize) -> Result<Self> {
        let k = lists.first().map_or(0, Vec::len);
        let mut counts = Array2::zeros((lists.len(), items));
        for (i, list) in lists.iter().enumerate() {
            for &j in list {
                if j >= items {
                    return Err(argument(format!("item {j} out of range for {items} items")));
                }
                counts[[i, j]] += 1;
            }
        }
        Self::new(counts, k)
    }

    pub fn counts(&self) -> &Array2<u32> {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn users(&self) -> usize {
        self.counts.nrows()
    }

    pub fn items(&self) -> usize {
        self.counts.ncols()
    }

    pub fn is_binary(&self) -> bool {
        self.counts.iter().all(|&c| c <= 1)
    }

    /// Items with a nonzero count in user `i`'s list, with their counts.
    pub fn row_items(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.counts
            .row(i)
            .into_iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(j, &c)| (j, c))
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Total count of each item over all lists.
    pub fn item_exposure(&self) -> Vec<u64> {
        self.counts
            .axis_iter(Axis(1))
            .map(|col| col.iter().map(|&c| u64::from(c)).sum())
            .collect()
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.counts.mapv(f64::from)
    }
}

/// Row-wise softmax with row-max subtraction.
pub fn row_softmax(logits: &Array2<f64>) -> Result<Array2<f64>> {
    if let Some(((i, j), v)) = logits.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {v} at [{i},{j}]")));
    }
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|z| (z - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|e| e / sum);
    }
    Ok(out)
}

/// Sets the `k` largest entries of each row to one. Ties go to the lower column index.
pub fn top_k(scores: ArrayView2<'_, f64>, k: usize) -> Result<CountMatrix> {
    let (m, n) = scores.dim();
    if k == 0 || k > n {
        return Err(argument(format!("k = {k} must lie in 1..={n}")));
    }
    let mut counts = Array2::<u32>::zeros((m, n));
    counts
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(scores.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut out, row)| {
            for j in top_k_indices(&row.to_vec(), k) {
                out[j] = 1;
            }
        });
    CountMatrix::new(counts, k)
}

/// Indices of the `k` largest values, ordered by descending value then ascending index.
pub fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    let cmp = |&a: &usize, &b: &usize| row[b].total_cmp(&row[a]).then(a.cmp(&b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

/// Draws `k` items with replacement for every user from that user's policy row.
///
/// Each row uses its own ChaCha stream of the seeded generator, so the result
/// does not depend on evaluation order.
pub fn sample_recommendations(policy: &Policy, k: usize, seed: u64) -> Result<CountMatrix> {
    let sampler = MultinomialSampler::new(policy.probs())?;
    let mut counts = Array2::<u32>::zeros(policy.probs().dim());
    counts
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for _ in 0..k {
                row[sampler.rows[i].sample(&mut rng)] += 1;
            }
        });
    CountMatrix::new(counts, k)
}

/// Per-row categorical samplers; one multinomial draw is `k` independent picks.
pub(crate) struct MultinomialSampler {
    pub(crate) rows: Vec<WeightedIndex<f64>>,
}

impl MultinomialSampler {
    pub(crate) fn new(probs: &Array2<f64>) -> Result<Self> {
        let rows = probs
            .axis_iter(Axis(0))
            .enumerate()
            .map(|(i, row)| {
                WeightedIndex::new(row.iter().copied())
                    .map_err(|e| argument(format!("policy row {i} cannot be sampled: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

/// Reads a headerless CSV of decimals.
pub fn load_matrix(path: impl AsRef<Path>, expected_dims: Option<(usize, usize)>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let m = parse_matrix(&text, path)?;
    if let Some(expected) = expected_dims {
        if m.dim() != expected {
            return Err(Error::Dimension {
                expected,
                actual: m.dim(),
            });
        }
    }
    Ok(m)
}

fn parse_matrix(text: &str, path: &Path) -> Result<Array2<f64>> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let lines: Vec<&str> = text
        .trim_end_matches(['\n', '\r'])
        .split('\n')
        .map(|l| l.trim_end_matches('\r'))
        .collect();
    if lines.iter().all(|l| l.trim().is_empty()) {
        return Err(format("file contains no rows".into()));
    }
    let mut data = Vec::new();
    let mut width = None;
    for (r, line) in lines.iter().enumerate() {
        let mut count = 0;
        for (c, token) in line.split(',').enumerate() {
            let token = token.trim();
            let v: f64 = token.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row: r + 1,
                column: c + 1,
                token: token.to_string(),
            })?;
            data.push(v);
            count += 1;
        }
        match width {
            None => width = Some(count),
            Some(w) if w != count => {
                return Err(format(format!(
                    "ragged rows: row 1 has {w} values but row {} has {count}",
                    r + 1
                )))
            }
            _ => {}
        }
    }
    let n = width.unwrap_or(0);
    Array2::from_shape_vec((lines.len(), n), data).map_err(|e| format(e.to_string()))
}

/// Writes a matrix as headerless CSV using the shortest round-trip representation.
pub fn save_matrix(matrix: &Array2<f64>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if matrix.is_empty() {
        return Err(argument("cannot save an empty matrix"));
    }
    fs::write(path, format_matrix(matrix)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn format_matrix(matrix: &Array2<f64>) -> String {
    let mut out = String::new();
    for (i, row) in matrix.axis_iter(Axis(0)).enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").expect("writing to a String");
        }
    }
    out
}

/// Loads a score pair from CSV. Without a suitability file the utility
/// matrix is shared.
pub fn load_scores(utility: impl AsRef<Path>, suitability: Option<&Path>) -> Result<ScorePair> {
    let u = load_matrix(utility, None)?;
    match suitability {
        Some(path) => {
            let s = load_matrix(path, Some(u.dim()))?;
            ScorePair::new(u, s)
        }
        None => ScorePair::shared(u),
    }
}

/// Sidecar metadata written next to a matrix file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub m: usize,
    pub n: usize,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub generator: Option<String>,
}

/// `dir/name.csv` → `dir/name.meta.json`.
pub fn sidecar_path(matrix_path: &Path) -> PathBuf {
    let stem = matrix_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    matrix_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_sidecar(matrix_path: &Path, meta: &MatrixMeta) -> Result<()> {
    let path = sidecar_path(matrix_path);
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&path, json).map_err(|source| Error::Io { path, source })
}

pub fn read_sidecar(matrix_path: &Path) -> Result<Option<MatrixMeta>> {
    let path = sidecar_path(matrix_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
    Ok(Some(serde_json::from_str(&text)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), content).unwrap();
        f
    }

    #[test]
    fn load_toy_utility() {
        let f = write_tmp("0.2,0.6,0.9\n0.1,0.8,0.7");
        let m = load_matrix(f.path(), Some((2, 3))).unwrap();
        assert_eq!(m, array![[0.2, 0.6, 0.9], [0.1, 0.8, 0.7]]);
    }

    #[test]
    fn load_rejects_malformed_input() {
        let empty = write_tmp("");
        assert!(matches!(load_matrix(empty.path(), None), Err(Error::Format { .. })));

        let ragged = write_tmp("0.1,0.2,0.3\n0.4,0.5\n");
        let err = load_matrix(ragged.path(), None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(err.to_string().contains("ragged"));

        let bad = write_tmp("0.1,0.2\n0.3,abc\n");
        match load_matrix(bad.path(), None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (2, 2)),
            other => panic!("unexpected {other:?}"),
        }

        let ok = write_tmp("0.1,0.2\n");
        assert!(matches!(
            load_matrix(ok.path(), Some((2, 2))),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn save_roundtrip_and_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = array![[0.1, 1.0 / 3.0, 0.9], [std::f64::consts::PI / 4.0, 0.8, 1e-7]];
        save_matrix(&m, &p).unwrap();
        let back = load_matrix(&p, None).unwrap();
        for (a, b) in m.iter().zip(back.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        save_matrix(&array![[0.5]], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0.5");

        assert!(matches!(save_matrix(&m, dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("utility.csv");
        assert_eq!(sidecar_path(&p), dir.path().join("utility.meta.json"));
        let meta = MatrixMeta {
            m: 2,
            n: 3,
            k: None,
            seed: Some(7),
            generator: Some("random".into()),
        };
        write_sidecar(&p, &meta).unwrap();
        assert_eq!(read_sidecar(&p).unwrap(), Some(meta));
    }

    #[test]
    fn score_pair_rejects_out_of_range() {
        assert!(ScorePair::shared(array![[0.5, 1.0]]).is_err());
        assert!(ScorePair::shared(array![[0.0, 0.5]]).is_err());
        assert!(ScorePair::new(array![[0.5, 0.5]], array![[0.5], [0.5]]).is_err());
        let p = ScorePair::new(array![[0.5, 0.4]], array![[0.5, 0.4]]).unwrap();
        assert!(p.is_shared());
    }

    #[test]
    fn softmax_examples() {
        let z = array![[0.0, 0.0, 0.0], [0.0, 2f64.ln(), 3f64.ln()], [20.0, 0.0, 0.0]];
        let p = row_softmax(&z).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(p[[0, j]], 1.0 / 3.0, epsilon = 1e-15);
            assert_abs_diff_eq!(p[[1, j]], (j + 1) as f64 / 6.0, epsilon = 1e-15);
        }
        assert!(p[[2, 0]] > 0.999_999);
        assert!(row_softmax(&array![[0.0, f64::NAN]]).is_err());
    }

    #[test]
    fn top_k_examples() {
        let c = top_k(array![[0.2, 0.6, 0.9]].view(), 1).unwrap();
        assert_eq!(c.counts(), &array![[0, 0, 1]]);
        let c = top_k(array![[0.5, 0.5, 0.1]].view(), 1).unwrap();
        assert_eq!(c.counts(), &array![[1, 0, 0]]);
        let c = top_k(array![[0.1, 0.9, 0.8]].view(), 2).unwrap();
        assert_eq!(c.counts(), &array![[0, 1, 1]]);
        assert!(top_k(array![[0.1, 0.9]].view(), 3).is_err());
        assert!(top_k(array![[0.1, 0.9]].view(), 0).is_err());
    }

    #[test]
    fn sampling_degenerate_and_deterministic() {
        let p = Policy::new(array![[1.0, 0.0, 0.0], [0.25, 0.25, 0.5]]).unwrap();
        let c = sample_recommendations(&p, 3, 11).unwrap();
        assert_eq!(c.counts().row(0).to_vec(), vec![3, 0, 0]);
        assert_eq!(c, sample_recommendations(&p, 3, 11).unwrap());
    }

    #[test]
    fn sampling_uniform_frequencies() {
        // 10^5 single draws from a uniform row over four items: each frequency
        // has binomial standard error sqrt(0.25 * 0.75 / 1e5) ~ 0.0014.
        let p = Policy::uniform(1, 4);
        let mut freq = [0usize; 4];
        let draws = 100_000;
        for seed in 0..draws {
            let c = sample_recommendations(&p, 1, seed).unwrap();
            let j = c.counts().row(0).iter().position(|&x| x == 1).unwrap();
            freq[j] += 1;
        }
        for f in freq {
            assert!((f as f64 / draws as f64 - 0.25).abs() < 0.01);
        }
    }

    fn score_matrix() -> impl Strategy<Value = Array2<f64>> {
        (1usize..6, 1usize..8).prop_flat_map(|(m, n)| {
            proptest::collection::vec(-5.0f64..5.0, m * n)
                .prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(z in score_matrix(), shift in -50.0f64..50.0) {
            let p = row_softmax(&z).unwrap();
            for row in p.axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            }
            let shifted = row_softmax(&z.mapv(|v| v + shift)).unwrap();
            for (a, b) in p.iter().zip(shifted.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softmax_preserves_top_k(z in score_matrix(), k in 1usize..8) {
            let k = k.min(z.ncols());
            let p = row_softmax(&z).unwrap();
            let direct = top_k(z.view(), k).unwrap();
            let via_policy = top_k(p.view(), k).unwrap();
            prop_assert_eq!(direct.counts().sum(), (k * z.nrows()) as u32);
            // exp can merge nearly equal logits into one float; compare only rows without near ties
            for i in 0..z.nrows() {
                let mut sorted = z.row(i).to_vec();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let gap_ok = sorted.windows(2).all(|w| w[0] - w[1] > 1e-9);
                if gap_ok {
                    prop_assert_eq!(direct.counts().row(i), via_policy.counts().row(i));
                }
            }
        }

        #[test]
        fn sampled_rows_sum_to_k(z in score_matrix(), k in 1usize..6, seed in any::<u64>()) {
            let p = Policy::from_logits(&z).unwrap();
            let c = sample_recommendations(&p, k, seed).unwrap();
            for row in c.counts().axis_iter(Axis(0)) {
                prop_assert_eq!(row.sum() as usize, k);
            }
        }
    }
}
