//! Translation retrieval and precision@k against a gold lexicon.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::TransformPair;
use crate::io::{EmbeddingSet, Lexicon};
use crate::matching::{avg_knn_cosine, top_k_cosine, CslsScorer, Retrieval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: Retrieval,
    pub k: Vec<usize>,
    /// `precision[i]` is precision@`k[i]`.
    pub precision: Vec<f64>,
    pub n_evaluated: usize,
    /// Lexicon entries whose source word, or every gold target, is missing
    /// from the vocabularies.
    pub n_oov: usize,
}

impl EvalReport {
    pub fn precision_at(&self, k: usize) -> Option<f64> {
        self.k.iter().position(|&x| x == k).map(|i| self.precision[i])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "metric {}  evaluated {}  oov {}",
            self.metric, self.n_evaluated, self.n_oov
        )?;
        writeln!(f, "{:>6}  {:>9}", "k", "precision")?;
        for (k, p) in self.k.iter().zip(&self.precision) {
            writeln!(f, "{k:>6}  {:>8.2}%", 100.0 * p)?;
        }
        Ok(())
    }
}

/// Best `k` target rows for each listed source row, best first.
pub fn rank_targets(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    transform: &TransformPair,
    rows: &[usize],
    metric: Retrieval,
    k: usize,
    csls_k: usize,
) -> Result<Vec<Vec<(usize, f64)>>> {
    if source.ncols() != transform.dim() || target.ncols() != transform.dim() {
        return Err(Error::DimensionMismatch {
            expected: transform.dim(),
            found: if source.ncols() != transform.dim() { source.ncols() } else { target.ncols() },
        });
    }
    if rows.is_empty() {
        return Ok(Vec::new());
    }
    let mapped = transform.map_source(source);
    match metric {
        Retrieval::Nn => top_k_cosine(&mapped, target, rows, k),
        Retrieval::Csls => {
            let queries = mapped.select_rows(rows);
            let r_targets = avg_knn_cosine(target, &mapped, csls_k)?;
            let r_queries = avg_knn_cosine(&queries, target, csls_k)?;
            let scorer = CslsScorer::from_parts(&queries, target, r_queries, r_targets)?;
            let all: Vec<usize> = (0..rows.len()).collect();
            Ok(scorer.top_k_for(&all, k))
        }
    }
}

/// Precision@k for each `k` in `k_list`: a source word is a hit at `k` when
/// any of its gold translations is among the top `k` retrieved targets.
pub fn evaluate(
    source: &EmbeddingSet,
    target: &EmbeddingSet,
    transform: &TransformPair,
    lexicon: &Lexicon,
    metric: Retrieval,
    k_list: &[usize],
    csls_k: usize,
) -> Result<EvalReport> {
    let mut k_list: Vec<usize> = k_list.to_vec();
    k_list.sort_unstable();
    k_list.dedup();
    if k_list.is_empty() || k_list[0] == 0 {
        return Err(Error::InvalidConfig("k values must be positive".into()));
    }

    let mut rows = Vec::new();
    let mut gold = Vec::new();
    for (src, targets) in &lexicon.entries {
        let Some(i) = source.index_of(src) else { continue };
        let known: Vec<usize> = targets.iter().filter_map(|t| target.index_of(t)).collect();
        if !known.is_empty() {
            rows.push(i);
            gold.push(known);
        }
    }
    if rows.is_empty() {
        return Err(Error::NoEvaluableWords);
    }
    let max_k = *k_list.last().unwrap();
    let ranked = rank_targets(
        source.vectors(),
        target.vectors(),
        transform,
        &rows,
        metric,
        max_k,
        csls_k,
    )?;

    let mut hits = vec![0usize; k_list.len()];
    for (cands, gold) in ranked.iter().zip(&gold) {
        // Rank of the first correct candidate, if any.
        if let Some(rank) = cands.iter().position(|(j, _)| gold.contains(j)) {
            for (h, &k) in hits.iter_mut().zip(&k_list) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    let n = rows.len();
    Ok(EvalReport {
        metric,
        precision: hits.iter().map(|&h| h as f64 / n as f64).collect(),
        k: k_list,
        n_evaluated: n,
        n_oov: lexicon.len() - n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub word: String,
    /// `(target word, score)`, best first.
    pub candidates: Vec<(String, f64)>,
}

/// Top-`k` translations for `words` (every source word when `None`).
/// Words missing from the source vocabulary are returned separately.
pub fn translate(
    source: &EmbeddingSet,
    target: &EmbeddingSet,
    transform: &TransformPair,
    words: Option<&[String]>,
    metric: Retrieval,
    k: usize,
    csls_k: usize,
) -> Result<(Vec<Translation>, Vec<String>)> {
    let mut rows = Vec::new();
    let mut unknown = Vec::new();
    match words {
        Some(words) => {
            for w in words {
                match source.index_of(w) {
                    Some(i) => rows.push(i),
                    None => unknown.push(w.clone()),
                }
            }
        }
        None => rows.extend(0..source.len()),
    }
    let ranked = rank_targets(
        source.vectors(),
        target.vectors(),
        transform,
        &rows,
        metric,
        k,
        csls_k,
    )?;
    let out = rows
        .iter()
        .zip(ranked)
        .map(|(&i, cands)| Translation {
            word: source.word(i).to_string(),
            candidates: cands
                .into_iter()
                .map(|(j, s)| (target.word(j).to_string(), s))
                .collect(),
        })
        .collect();
    Ok((out, unknown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(prefix: &str, m: DMatrix<f64>) -> EmbeddingSet {
        let words = (0..m.nrows()).map(|i| format!("{prefix}{i}")).collect();
        EmbeddingSet::new(words, m).unwrap()
    }

    #[test]
    fn identity_alignment_is_perfect() {
        let m = gaussian_matrix(60, 8, &mut ChaCha8Rng::seed_from_u64(1));
        let (src, tgt) = (set("w", m.clone()), set("w", m));
        let mut lex = Lexicon::default();
        for i in 0..60 {
            lex.insert(format!("w{i}"), format!("w{i}"));
        }
        lex.insert("missing", "w1");
        lex.insert("w2", "absent");
        for metric in [Retrieval::Nn, Retrieval::Csls] {
            let r = evaluate(&src, &tgt, &TransformPair::identity(8), &lex, metric, &[1, 5], 10).unwrap();
            assert_eq!(r.precision, [1.0, 1.0]);
            assert_eq!(r.n_evaluated, 60);
            assert_eq!(r.n_oov, 1);
            assert_eq!(r.n_evaluated + r.n_oov, lex.len());
        }
    }

    #[test]
    fn any_gold_translation_counts() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.1]);
        let (src, tgt) = (set("s", m.clone()), set("t", m));
        let mut lex = Lexicon::default();
        lex.insert("s0", "t2");
        lex.insert("s0", "t0");
        let r = evaluate(&src, &tgt, &TransformPair::identity(2), &lex, Retrieval::Nn, &[1], 1).unwrap();
        assert_eq!(r.precision, [1.0]);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let (src, tgt) = (set("s", m.clone()), set("t", m));
        let mut lex = Lexicon::default();
        lex.insert("x", "y");
        assert!(matches!(
            evaluate(&src, &tgt, &TransformPair::identity(2), &lex, Retrieval::Nn, &[1], 1),
            Err(Error::NoEvaluableWords)
        ));
    }

    #[test]
    fn precision_grows_with_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = gaussian_matrix(80, 4, &mut rng);
        let y = &x + gaussian_matrix(80, 4, &mut rng) * 0.6;
        let (src, tgt) = (set("w", x), set("w", y));
        let mut lex = Lexicon::default();
        for i in 0..80 {
            lex.insert(format!("w{i}"), format!("w{i}"));
        }
        let r = evaluate(&src, &tgt, &TransformPair::identity(4), &lex, Retrieval::Csls, &[10, 1, 5], 10).unwrap();
        assert_eq!(r.k, [1, 5, 10]);
        assert!(r.precision.windows(2).all(|w| w[0] <= w[1]));
        assert!(r.precision[0] < 1.0);
    }

    #[test]
    fn json_keys() {
        let r = EvalReport {
            metric: Retrieval::Csls,
            k: vec![1],
            precision: vec![0.5],
            n_evaluated: 2,
            n_oov: 0,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in ["metric", "k", "precision", "n_evaluated", "n_oov"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert_eq!(v["metric"], "csls");
    }

    #[test]
    fn translate_reports_unknown_words() {
        let m = gaussian_matrix(20, 3, &mut ChaCha8Rng::seed_from_u64(2));
        let (src, tgt) = (set("w", m.clone()), set("w", m));
        let words = vec!["w7".to_string(), "nope".to_string()];
        let (out, unknown) =
            translate(&src, &tgt, &TransformPair::identity(3), Some(&words), Retrieval::Csls, 5, 10).unwrap();
        assert_eq!(unknown, ["nope"]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].candidates.len(), 5);
        assert_eq!(out[0].candidates[0].0, "w7");
    }
}
