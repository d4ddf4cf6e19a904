//! Exhaustive nearest-neighbor assignment, reciprocal pairs and CSLS
//! retrieval.
//!
//! Every search is brute force over all targets. Dot products are computed a
//! block of queries at a time with a matrix product; the winner is then
//! re-scored from the raw rows so the result equals a plain double loop,
//! with ties going to the lowest target index.

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// How translations are retrieved for a mapped source word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Retrieval {
    /// Plain cosine nearest neighbor.
    Nn,
    Csls,
}

impl std::fmt::Display for Retrieval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Retrieval::Nn => "nn",
            Retrieval::Csls => "csls",
        })
    }
}

/// The two directional matchings between a source and a target set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrespondenceMap {
    /// For every source row, the matched target index.
    pub f_x: Vec<usize>,
    /// For every target row, the matched source index.
    pub f_y: Vec<usize>,
}

impl CorrespondenceMap {
    pub fn is_valid(&self) -> bool {
        let (n, m) = (self.f_x.len(), self.f_y.len());
        self.f_x.iter().all(|&j| j < m) && self.f_y.iter().all(|&i| i < n)
    }
}

/// Source/target pairs that are matched in both directions, ascending by
/// source index.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReciprocalPairs {
    pub pairs: Vec<(usize, usize)>,
}

impl ReciprocalPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn reciprocal_pairs(map: &CorrespondenceMap) -> ReciprocalPairs {
    let pairs = map
        .f_x
        .iter()
        .enumerate()
        .filter(|&(i, &j)| map.f_y.get(j) == Some(&i))
        .map(|(i, &j)| (i, j))
        .collect();
    ReciprocalPairs { pairs }
}

/// Row-major copy used for exact re-scoring.
struct Rows {
    data: Vec<f64>,
    cols: usize,
}

impl Rows {
    fn new(m: &DMatrix<f64>) -> Self {
        Rows {
            data: m.transpose().as_slice().to_vec(),
            cols: m.ncols(),
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity with zero-norm vectors scoring 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Rows scaled to unit length; zero rows stay zero. Returns the count of
/// zero rows.
pub(crate) fn normalize_rows(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let mut out = m.clone();
    let mut zeros = 0;
    for mut row in out.row_iter_mut() {
        let n = row.norm();
        if n == 0.0 {
            zeros += 1;
        } else {
            row /= n;
        }
    }
    (out, zeros)
}

fn check_dims(queries: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if targets.nrows() == 0 {
        return Err(Error::EmptyTargets);
    }
    if queries.ncols() != targets.ncols() {
        return Err(Error::DimensionMismatch {
            expected: targets.ncols(),
            found: queries.ncols(),
        });
    }
    Ok(())
}

/// Runs `f(query_index, dots)` for every query, where `dots[j]` is the
/// product of the query with target `j`. Results are in query order.
fn for_each_query<T, F>(queries: &DMatrix<f64>, targets: &DMatrix<f64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &[f64]) -> T + Sync,
{
    let (n, m) = (queries.nrows(), targets.nrows());
    let chunk = ((1usize << 20) / m.max(1)).clamp(8, 512);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    starts
        .into_par_iter()
        .flat_map_iter(|start| {
            let len = chunk.min(n - start);
            // m × len, so each query's dot products are contiguous.
            let block = targets * queries.rows(start, len).transpose();
            (0..len)
                .map(|c| f(start + c, block.column(c).as_slice()))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Screening slack for block dot products before exact re-scoring.
const SCREEN_TOL: f64 = 1e-9;

/// Index of the nearest target for every query row.
pub fn nearest_neighbors(
    queries: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    metric: Metric,
) -> Result<Vec<usize>> {
    check_dims(queries, targets)?;
    let q_rows = Rows::new(queries);
    let t_rows = Rows::new(targets);
    match metric {
        Metric::Euclidean => {
            let t_sq: Vec<f64> = targets.row_iter().map(|r| r.norm_squared()).collect();
            let t_max = t_sq.iter().copied().fold(0.0, f64::max);
            Ok(for_each_query(queries, targets, |i, dots| {
                let q = q_rows.row(i);
                let q_sq = dot(q, q);
                // ‖t‖² − 2q·t ranks targets like ‖q − t‖².
                let approx = |j: usize| t_sq[j] - 2.0 * dots[j];
                let best = (0..dots.len()).map(approx).fold(f64::INFINITY, f64::min);
                let slack = SCREEN_TOL * (q_sq + t_max) + f64::MIN_POSITIVE;
                let mut winner = (usize::MAX, f64::INFINITY);
                for j in 0..dots.len() {
                    if approx(j) <= best + slack {
                        let d = sq_dist(q, t_rows.row(j));
                        if d < winner.1 {
                            winner = (j, d);
                        }
                    }
                }
                winner.0
            }))
        }
        Metric::Cosine => {
            let (qn, _) = normalize_rows(queries);
            let (tn, _) = normalize_rows(targets);
            Ok(for_each_query(&qn, &tn, |i, dots| {
                let q = q_rows.row(i);
                let best = dots.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut winner = (usize::MAX, f64::NEG_INFINITY);
                for (j, &d) in dots.iter().enumerate() {
                    if d >= best - SCREEN_TOL {
                        let c = cosine(q, t_rows.row(j));
                        if c > winner.1 {
                            winner = (j, c);
                        }
                    }
                }
                winner.0
            }))
        }
    }
}

fn mean_top_k(values: &mut [f64], k: usize) -> f64 {
    let m = values.len();
    if k < m {
        values.select_nth_unstable_by(m - k, |a, b| a.total_cmp(b));
    }
    values[m - k..].iter().sum::<f64>() / k as f64
}

/// Mean cosine similarity between each query and its `k` most similar
/// targets. Zero-norm queries get 0.
pub fn avg_knn_cosine(queries: &DMatrix<f64>, targets: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    check_dims(queries, targets)?;
    if k == 0 || k > targets.nrows() {
        return Err(Error::KTooLarge {
            k,
            available: targets.nrows(),
        });
    }
    let (qn, q_zero) = normalize_rows(queries);
    let (tn, t_zero) = normalize_rows(targets);
    if q_zero + t_zero > 0 {
        warn!("{q_zero} zero-norm queries and {t_zero} zero-norm targets score cosine 0");
    }
    let zero_query: Vec<bool> = qn.row_iter().map(|r| r.norm_squared() == 0.0).collect();
    Ok(for_each_query(&qn, &tn, |i, dots| {
        if zero_query[i] {
            return 0.0;
        }
        let mut v = dots.to_vec();
        mean_top_k(&mut v, k)
    }))
}

/// Precomputed CSLS state for one (mapped source, target) pairing.
///
/// Holds the hubness penalties `r` for both sides so repeated retrievals
/// against the same pairing reuse them.
pub struct CslsScorer {
    queries: DMatrix<f64>,
    targets: DMatrix<f64>,
    q_rows: Rows,
    t_rows: Rows,
    /// `r(q)`: mean cosine of each query to its k nearest targets.
    pub r_queries: Vec<f64>,
    /// `r(y)`: mean cosine of each target to its k nearest queries.
    pub r_targets: Vec<f64>,
}

impl CslsScorer {
    /// `mapped_queries` must already be transformed into the target space.
    pub fn new(mapped_queries: &DMatrix<f64>, targets: &DMatrix<f64>, k: usize) -> Result<Self> {
        check_dims(mapped_queries, targets)?;
        if mapped_queries.nrows() == 0 {
            return Err(Error::EmptyTargets);
        }
        let r_queries = avg_knn_cosine(mapped_queries, targets, k)?;
        let r_targets = avg_knn_cosine(targets, mapped_queries, k)?;
        Self::from_parts(mapped_queries, targets, r_queries, r_targets)
    }

    /// Scorer with penalties computed elsewhere, e.g. `r(y)` taken against
    /// a larger query pool than the rows being retrieved.
    pub fn from_parts(
        mapped_queries: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        r_queries: Vec<f64>,
        r_targets: Vec<f64>,
    ) -> Result<Self> {
        check_dims(mapped_queries, targets)?;
        if r_queries.len() != mapped_queries.nrows() || r_targets.len() != targets.nrows() {
            return Err(Error::DimensionMismatch {
                expected: mapped_queries.nrows(),
                found: r_queries.len(),
            });
        }
        let (queries, _) = normalize_rows(mapped_queries);
        let (targets_n, _) = normalize_rows(targets);
        Ok(CslsScorer {
            queries,
            targets: targets_n,
            q_rows: Rows::new(mapped_queries),
            t_rows: Rows::new(targets),
            r_queries,
            r_targets,
        })
    }

    pub fn score(&self, query: usize, target: usize) -> f64 {
        2.0 * cosine(self.q_rows.row(query), self.t_rows.row(target))
            - self.r_queries[query]
            - self.r_targets[target]
    }

    /// Best target and its score for every query.
    pub fn best(&self) -> (Vec<usize>, Vec<f64>) {
        for_each_query(&self.queries, &self.targets, |i, dots| {
            let approx = |j: usize| 2.0 * dots[j] - self.r_targets[j];
            let best = (0..dots.len()).map(approx).fold(f64::NEG_INFINITY, f64::max);
            let mut winner = (usize::MAX, f64::NEG_INFINITY);
            for j in 0..dots.len() {
                if approx(j) >= best - SCREEN_TOL {
                    let s = self.score(i, j);
                    if s > winner.1 {
                        winner = (j, s);
                    }
                }
            }
            winner
        })
        .into_iter()
        .unzip()
    }

    /// Best target for a subset of queries.
    pub fn best_for(&self, rows: &[usize]) -> Vec<usize> {
        self.top_k_for(rows, 1).into_iter().map(|v| v[0].0).collect()
    }

    /// The `k` highest-scoring targets for each listed query, best first.
    pub fn top_k_for(&self, rows: &[usize], k: usize) -> Vec<Vec<(usize, f64)>> {
        let sub = self.queries.select_rows(rows);
        for_each_query(&sub, &self.targets, |c, dots| {
            let i = rows[c];
            let scores: Vec<f64> = dots
                .iter()
                .zip(&self.r_targets)
                .map(|(d, r)| 2.0 * d - self.r_queries[i] - r)
                .collect();
            top_k_desc(&scores, k)
        })
    }
}

/// CSLS retrieval: for each mapped query, the target maximizing
/// `2·cos(q, y) − r(q) − r(y)`, together with that score.
pub fn csls_match(
    mapped_queries: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    k: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    Ok(CslsScorer::new(mapped_queries, targets, k)?.best())
}

/// The `k` most cosine-similar targets for each listed query, best first.
pub fn top_k_cosine(
    queries: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    rows: &[usize],
    k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    check_dims(queries, targets)?;
    let (qn, _) = normalize_rows(&queries.select_rows(rows));
    let (tn, _) = normalize_rows(targets);
    Ok(for_each_query(&qn, &tn, |_, dots| top_k_desc(dots, k)))
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
fn top_k_desc(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let k = k.min(scores.len());
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < idx.len() && k > 0 {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_by(cmp);
    idx.truncate(k);
    idx.into_iter().map(|j| (j, scores[j])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    #[test]
    fn self_match_is_identity() {
        let x = m(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 3.0, -2.0, 1.0]);
        assert_eq!(nearest_neighbors(&x, &x, Metric::Euclidean).unwrap(), [0, 1, 2, 3]);
    }

    #[test]
    fn small_euclidean_case() {
        let q = m(1, 2, &[0.0, 0.0]);
        let t = m(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        assert_eq!(nearest_neighbors(&q, &t, Metric::Euclidean).unwrap(), [0]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let q = m(1, 2, &[0.0, 0.0]);
        let t = m(3, 2, &[0.0, 2.0, 1.0, 0.0, -1.0, 0.0]);
        assert_eq!(nearest_neighbors(&q, &t, Metric::Euclidean).unwrap(), [1]);
        let t = m(3, 2, &[1.0, 1.0, 2.0, 2.0, -1.0, 0.0]);
        let q = m(1, 2, &[3.0, 3.0]);
        assert_eq!(nearest_neighbors(&q, &t, Metric::Cosine).unwrap(), [0]);
    }

    #[test]
    fn errors() {
        let q = m(1, 2, &[0.0, 0.0]);
        assert!(matches!(
            nearest_neighbors(&q, &DMatrix::zeros(0, 2), Metric::Euclidean),
            Err(Error::EmptyTargets)
        ));
        assert!(matches!(
            nearest_neighbors(&q, &DMatrix::zeros(2, 3), Metric::Euclidean),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            avg_knn_cosine(&q, &DMatrix::zeros(2, 2), 3),
            Err(Error::KTooLarge { k: 3, available: 2 })
        ));
    }

    #[test]
    fn reciprocal_examples() {
        let map = |fx: &[usize], fy: &[usize]| CorrespondenceMap {
            f_x: fx.to_vec(),
            f_y: fy.to_vec(),
        };
        assert_eq!(reciprocal_pairs(&map(&[0, 1], &[0, 1])).pairs, [(0, 0), (1, 1)]);
        assert_eq!(reciprocal_pairs(&map(&[1, 0], &[1, 0])).pairs, [(0, 1), (1, 0)]);
        assert_eq!(reciprocal_pairs(&map(&[0, 0], &[0, 1])).pairs, [(0, 0)]);
    }

    #[test]
    fn knn_cosine_extremes() {
        let q = m(1, 3, &[1.0, 2.0, 0.0]);
        let same = m(3, 3, &[2.0, 4.0, 0.0, 0.5, 1.0, 0.0, 1.0, 2.0, 0.0]);
        for k in 1..=3 {
            let r = avg_knn_cosine(&q, &same, k).unwrap();
            assert!((r[0] - 1.0).abs() < 1e-12);
        }
        let ortho = m(2, 3, &[0.0, 0.0, 1.0, 0.0, 0.0, -4.0]);
        assert_eq!(avg_knn_cosine(&q, &ortho, 2).unwrap(), [0.0]);
    }

    #[test]
    fn zero_norm_query_scores_zero() {
        let q = m(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let t = m(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(avg_knn_cosine(&q, &t, 1).unwrap(), [0.0, 1.0]);
    }

    #[test]
    fn csls_hand_computed() {
        // One query q = (1, 0); targets a = (1, 1), b = (0.9, -0.1).
        // cos(q,a) = 1/√2 ≈ 0.70711, cos(q,b) = 0.9/√0.82 ≈ 0.99388.
        // k = 1: r(q) = 0.99388; r(a) = 0.70711, r(b) = 0.99388 (only one query).
        // csls(a) = 2·0.70711 − 0.99388 − 0.70711 = −0.28677
        // csls(b) = 2·0.99388 − 0.99388 − 0.99388 = 0
        // so b wins.
        let q = m(1, 2, &[1.0, 0.0]);
        let t = m(2, 2, &[1.0, 1.0, 0.9, -0.1]);
        let (idx, score) = csls_match(&q, &t, 1).unwrap();
        assert_eq!(idx, [1]);
        assert!(score[0].abs() < 1e-12);

        // Two queries make r(y) informative: a hub target close to both
        // queries gets penalized.
        // q0 = (1, 0), q1 = (0.8, 0.6); hub h = (1, 0.3); t = (0.98, 0.2).
        let q = m(2, 2, &[1.0, 0.0, 0.8, 0.6]);
        let t = m(2, 2, &[1.0, 0.3, 0.98, 0.2]);
        let scorer = CslsScorer::new(&q, &t, 1).unwrap();
        let manual = |qi: usize, tj: usize| {
            let qs = [[1.0, 0.0], [0.8, 0.6]];
            let ts = [[1.0, 0.3], [0.98, 0.2]];
            let c = |a: &[f64; 2], b: &[f64; 2]| {
                (a[0] * b[0] + a[1] * b[1]) / ((a[0] * a[0] + a[1] * a[1]).sqrt() * (b[0] * b[0] + b[1] * b[1]).sqrt())
            };
            let rq = c(&qs[qi], &ts[0]).max(c(&qs[qi], &ts[1]));
            let rt = c(&ts[tj], &qs[0]).max(c(&ts[tj], &qs[1]));
            2.0 * c(&qs[qi], &ts[tj]) - rq - rt
        };
        let (idx, _) = scorer.best();
        for i in 0..2 {
            let expect = if manual(i, 0) >= manual(i, 1) { 0 } else { 1 };
            assert_eq!(idx[i], expect);
            assert!((scorer.score(i, 0) - manual(i, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn csls_with_constant_penalties_is_cosine_argmax() {
        // k = m: r(q) is constant per query, and with targets of identical
        // direction r(y) is identical for all y.
        let q = m(3, 2, &[1.0, 0.2, -0.3, 1.0, 0.5, 0.5]);
        let t = m(2, 2, &[2.0, 2.0, 0.5, 0.5]);
        let (idx, _) = csls_match(&q, &t, 2).unwrap();
        let nn = nearest_neighbors(&q, &t, Metric::Cosine).unwrap();
        assert_eq!(idx, nn);
    }

    #[test]
    fn csls_invariant_to_row_rescaling() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let q = crate::linalg::gaussian_matrix(30, 6, &mut rng);
        let t = crate::linalg::gaussian_matrix(40, 6, &mut rng);
        let (base, _) = csls_match(&q, &t, 5).unwrap();
        let mut q2 = q.clone();
        q2.row_mut(3).scale_mut(7.3);
        let mut t2 = t.clone();
        t2.row_mut(11).scale_mut(7.3);
        let (scaled, _) = csls_match(&q2, &t2, 5).unwrap();
        assert_eq!(base, scaled);
    }

    #[test]
    fn top_k_ordering() {
        let s = [0.1, 0.5, 0.5, -1.0, 0.9];
        assert_eq!(top_k_desc(&s, 3), [(4, 0.9), (1, 0.5), (2, 0.5)]);
        assert_eq!(top_k_desc(&s, 10).len(), 5);
    }
}
