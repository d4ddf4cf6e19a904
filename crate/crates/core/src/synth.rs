//! Synthetic embedding pairs with a known rotation and known word
//! correspondence.
//!
//! Source rows are zero-mean Gaussian with a diagonal covariance given by
//! the spectrum. The first `overlap · n` source rows are rotated, perturbed
//! and placed at shuffled positions in the target set; the rest of the
//! target rows are fresh, unrotated draws from the same distribution.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::icp::TransformPair;
use crate::io::{save_transform, EmbeddingSet, Lexicon};
use crate::linalg::random_rotation;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `Q` with `y = Q·x + noise` for every matched pair.
    pub rotation: DMatrix<f64>,
    /// `(source row, target row)` for every matched pair, by source row.
    pub ground_truth: Vec<(usize, usize)>,
    pub noise_sigma: f64,
    pub overlap_fraction: f64,
    source_words: Vec<String>,
    target_words: Vec<String>,
}

/// Variances decreasing linearly from `high` to `low` over `d` axes.
pub fn linear_spectrum(d: usize, high: f64, low: f64) -> Vec<f64> {
    if d == 1 {
        return vec![high];
    }
    (0..d)
        .map(|i| high + (low - high) * i as f64 / (d - 1) as f64)
        .collect()
}

fn check_spectrum(d: usize, spectrum: &[f64]) -> Result<()> {
    if d < 2 {
        return Err(Error::InvalidSpectrum(format!("dimension must be at least 2, got {d}")));
    }
    if spectrum.len() != d {
        return Err(Error::InvalidSpectrum(format!(
            "expected {d} variances, got {}",
            spectrum.len()
        )));
    }
    if spectrum.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidSpectrum("variances must be positive and finite".into()));
    }
    if spectrum.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidSpectrum("variances must be non-increasing".into()));
    }
    Ok(())
}

fn word(prefix: char, i: usize) -> String {
    format!("{prefix}{:06}", i + 1)
}

pub fn generate(
    n: usize,
    d: usize,
    noise_sigma: f64,
    overlap_fraction: f64,
    spectrum: &[f64],
    seed: u64,
) -> Result<SyntheticPair> {
    check_spectrum(d, spectrum)?;
    if n == 0 {
        return Err(Error::InvalidConfig("need at least one point".into()));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::InvalidConfig("noise must be non-negative".into()));
    }
    if !(overlap_fraction > 0.0 && overlap_fraction <= 1.0) {
        return Err(Error::InvalidConfig("overlap must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Vec<f64> = spectrum.iter().map(|v| v.sqrt()).collect();
    let draw = |rows: usize, rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..rows * d)
            .map(|k| std[k % d] * rng.sample::<f64, _>(StandardNormal))
            .collect();
        DMatrix::from_row_slice(rows, d, &data)
    };

    let x = draw(n, &mut rng);
    let rotation = random_rotation(d, &mut rng);
    let shared = ((overlap_fraction * n as f64).round() as usize).clamp(1, n);

    let mut rows = x.rows(0, shared) * rotation.transpose();
    if noise_sigma > 0.0 {
        let noise: Vec<f64> = (0..shared * d)
            .map(|_| noise_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        rows += DMatrix::from_row_slice(shared, d, &noise);
    }
    let distractors = draw(n - shared, &mut rng);

    let mut position: Vec<usize> = (0..n).collect();
    position.shuffle(&mut rng);
    let mut y = DMatrix::zeros(n, d);
    let mut target_words = vec![String::new(); n];
    for r in 0..n {
        let (src, name) = if r < shared {
            (rows.row(r), word('w', r))
        } else {
            (distractors.row(r - shared), word('d', r - shared))
        };
        y.row_mut(position[r]).copy_from(&src);
        target_words[position[r]] = name;
    }

    Ok(SyntheticPair {
        x,
        y,
        rotation,
        ground_truth: (0..shared).map(|i| (i, position[i])).collect(),
        noise_sigma,
        overlap_fraction,
        source_words: (0..n).map(|i| word('w', i)).collect(),
        target_words,
    })
}

impl SyntheticPair {
    pub fn source_set(&self) -> EmbeddingSet {
        EmbeddingSet::new(self.source_words.clone(), self.x.clone()).expect("valid synthetic set")
    }

    pub fn target_set(&self) -> EmbeddingSet {
        EmbeddingSet::new(self.target_words.clone(), self.y.clone()).expect("valid synthetic set")
    }

    /// Each shared word translates to itself.
    pub fn gold_lexicon(&self) -> Lexicon {
        let mut lex = Lexicon::default();
        for &(i, _) in &self.ground_truth {
            lex.insert(self.source_words[i].clone(), self.source_words[i].clone());
        }
        lex
    }

    pub fn truth_transforms(&self) -> TransformPair {
        TransformPair {
            t_xy: self.rotation.clone(),
            t_yx: self.rotation.transpose(),
        }
    }

    /// Fraction of ground-truth pairs for which `f_x` picks the right target.
    pub fn accuracy(&self, f_x: &[usize]) -> f64 {
        let hits = self.ground_truth.iter().filter(|&&(i, j)| f_x.get(i) == Some(&j)).count();
        hits as f64 / self.ground_truth.len() as f64
    }

    /// Writes `src.vec`, `tgt.vec`, `gold.txt` and `truth.transform`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.source_set().write_vec(&dir.join("src.vec"))?;
        self.target_set().write_vec(&dir.join("tgt.vec"))?;
        let gold: String = self
            .ground_truth
            .iter()
            .map(|&(i, _)| format!("{w} {w}\n", w = self.source_words[i]))
            .collect();
        let path = dir.join("gold.txt");
        fs::write(&path, gold).map_err(|e| Error::io(&path, e))?;
        save_transform(&self.truth_transforms(), &dir.join("truth.transform"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::procrustes;

    #[test]
    fn noiseless_full_overlap_is_a_permuted_rotation() {
        let s = generate(200, 5, 0.0, 1.0, &linear_spectrum(5, 5.0, 1.0), 3).unwrap();
        let back = &s.y * &s.rotation;
        for &(i, j) in &s.ground_truth {
            for c in 0..5 {
                assert!((back[(j, c)] - s.x[(i, c)]).abs() < 1e-12);
            }
        }
        let mut seen: Vec<usize> = s.ground_truth.iter().map(|p| p.1).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn procrustes_on_true_pairs_recovers_rotation() {
        let s = generate(100, 4, 0.0, 1.0, &linear_spectrum(4, 4.0, 1.0), 8).unwrap();
        let src: Vec<usize> = s.ground_truth.iter().map(|p| p.0).collect();
        let tgt: Vec<usize> = s.ground_truth.iter().map(|p| p.1).collect();
        let w = procrustes(&s.x.select_rows(&src), &s.y.select_rows(&tgt)).unwrap().w;
        assert!((w.transpose() - &s.rotation).amax() < 1e-8);
    }

    #[test]
    fn deterministic_per_seed() {
        let sp = linear_spectrum(6, 6.0, 1.0);
        assert_eq!(generate(50, 6, 0.1, 0.8, &sp, 1).unwrap(), generate(50, 6, 0.1, 0.8, &sp, 1).unwrap());
        assert_ne!(generate(50, 6, 0.1, 0.8, &sp, 1).unwrap().x, generate(50, 6, 0.1, 0.8, &sp, 2).unwrap().x);
    }

    #[test]
    fn partial_overlap_has_distractors() {
        let s = generate(100, 3, 0.0, 0.8, &linear_spectrum(3, 3.0, 1.0), 1).unwrap();
        assert_eq!(s.ground_truth.len(), 80);
        let tgt = s.target_set();
        assert_eq!(tgt.words().iter().filter(|w| w.starts_with('d')).count(), 20);
        assert_eq!(s.gold_lexicon().len(), 80);
        let truth: Vec<usize> = {
            let mut f = vec![0; 100];
            for &(i, j) in &s.ground_truth {
                f[i] = j;
            }
            f
        };
        assert_eq!(s.accuracy(&truth), 1.0);
    }

    #[test]
    fn invalid_spectra() {
        assert!(matches!(generate(10, 1, 0.0, 1.0, &[1.0], 0), Err(Error::InvalidSpectrum(_))));
        assert!(matches!(generate(10, 2, 0.0, 1.0, &[1.0], 0), Err(Error::InvalidSpectrum(_))));
        assert!(matches!(generate(10, 2, 0.0, 1.0, &[1.0, 2.0], 0), Err(Error::InvalidSpectrum(_))));
        assert!(matches!(generate(10, 2, 0.0, 1.0, &[1.0, 0.0], 0), Err(Error::InvalidSpectrum(_))));
        assert!(generate(10, 2, 0.0, 1.0, &[1.0, 1.0], 0).is_ok());
    }
}
