//! Iterative Procrustes refinement on a large vocabulary.
//!
//! Each iteration and each direction: map the sources with the current
//! transform, match the most frequent words both ways, keep mutual matches,
//! and solve an orthonormal map from them.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::icp::TransformPair;
use crate::linalg::procrustes;
use crate::matching::{avg_knn_cosine, nearest_neighbors, CslsScorer, Metric, Retrieval};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub iterations: usize,
    /// Neighbor search spans at most this many words per side.
    pub vocab_limit: usize,
    pub match_metric: Retrieval,
    /// Candidate pairs come from this many most frequent words per side.
    pub dictionary_size: usize,
    pub csls_k: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            iterations: 5,
            vocab_limit: 200_000,
            match_metric: Retrieval::Csls,
            dictionary_size: 10_000,
            csls_k: 10,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("fine-tuning needs at least one iteration".into()));
        }
        if self.vocab_limit == 0 || self.dictionary_size == 0 || self.csls_k == 0 {
            return Err(Error::InvalidConfig(
                "vocabulary limit, dictionary size and CSLS k must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finetuned {
    pub transforms: TransformPair,
    /// Reciprocal pairs used per iteration, `(x→y, y→x)`.
    pub pairs_per_iteration: Vec<(usize, usize)>,
    /// No reciprocal pairs survived the first iteration; `transforms` is the
    /// unchanged input.
    pub no_pairs: bool,
}

/// Mutually matched `(source, target)` rows between `mapped` sources and
/// `targets`, drawn from the first `dictionary_size` rows of each side.
fn reciprocal_dictionary(
    mapped: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    config: &FinetuneConfig,
) -> Result<Vec<(usize, usize)>> {
    let ds = config.dictionary_size.min(mapped.nrows());
    let dt = config.dictionary_size.min(targets.nrows());
    let head_s = mapped.rows(0, ds).into_owned();
    let head_t = targets.rows(0, dt).into_owned();

    let (forward, backward) = match config.match_metric {
        Retrieval::Nn => (
            nearest_neighbors(&head_s, targets, Metric::Cosine)?,
            nearest_neighbors(&head_t, mapped, Metric::Cosine)?,
        ),
        Retrieval::Csls => {
            let k = config.csls_k;
            let r_src = avg_knn_cosine(mapped, targets, k)?;
            let r_tgt = avg_knn_cosine(targets, mapped, k)?;
            let fwd = CslsScorer::from_parts(&head_s, targets, r_src[..ds].to_vec(), r_tgt.clone())?;
            let bwd = CslsScorer::from_parts(&head_t, mapped, r_tgt[..dt].to_vec(), r_src)?;
            (fwd.best().0, bwd.best().0)
        }
    };
    Ok(forward
        .iter()
        .enumerate()
        .filter(|&(i, &j)| j < dt && backward[j] == i)
        .map(|(i, &j)| (i, j))
        .collect())
}

/// Orthonormal `T` with `targets ≈ T·sources` on the given pairs.
fn solve(sources: &DMatrix<f64>, targets: &DMatrix<f64>, pairs: &[(usize, usize)]) -> Result<DMatrix<f64>> {
    let s: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let t: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    Ok(procrustes(&sources.select_rows(&s), &targets.select_rows(&t))?.w.transpose())
}

pub fn finetune(
    x_full: &DMatrix<f64>,
    y_full: &DMatrix<f64>,
    init: &TransformPair,
    config: &FinetuneConfig,
) -> Result<Finetuned> {
    config.validate()?;
    let d = init.dim();
    for found in [x_full.ncols(), y_full.ncols()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    let x = x_full.rows(0, config.vocab_limit.min(x_full.nrows())).into_owned();
    let y = y_full.rows(0, config.vocab_limit.min(y_full.nrows())).into_owned();

    let mut current = init.clone();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let xy_pairs = reciprocal_dictionary(&current.map_source(&x), &y, config)?;
        let yx_pairs = reciprocal_dictionary(&current.map_target(&y), &x, config)?;
        history.push((xy_pairs.len(), yx_pairs.len()));
        if xy_pairs.is_empty() || yx_pairs.is_empty() {
            warn!("fine-tuning iteration {it}: no reciprocal pairs survived");
            if it == 0 {
                return Ok(Finetuned {
                    transforms: init.clone(),
                    pairs_per_iteration: history,
                    no_pairs: true,
                });
            }
            break;
        }
        let t_xy = solve(&x, &y, &xy_pairs)?;
        let t_yx = solve(&y, &x, &yx_pairs)?;
        current = TransformPair { t_xy, t_yx };
    }
    Ok(Finetuned {
        transforms: current,
        pairs_per_iteration: history,
        no_pairs: false,
    })
}
