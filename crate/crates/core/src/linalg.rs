//! Centering, randomized PCA and the orthogonal Procrustes solver.
//!
//! All matrices hold one observation per row.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Subtracts the column means. Returns the centered matrix and the means.
pub fn center(matrix: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n = matrix.nrows().max(1) as f64;
    let mean = DVector::from_iterator(
        matrix.ncols(),
        matrix.column_iter().map(|c| c.iter().sum::<f64>() / n),
    );
    let mut centered = matrix.clone();
    for (mut col, m) in centered.column_iter_mut().zip(mean.iter()) {
        col.add_scalar_mut(-m);
    }
    (centered, mean)
}

/// Sketch parameters for [`randomized_pca`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcaOptions {
    /// Extra sketch columns beyond `p`.
    pub oversampling: usize,
    /// Subspace power iterations applied to the sketch.
    pub power_iters: usize,
}

impl Default for PcaOptions {
    fn default() -> Self {
        PcaOptions {
            oversampling: 10,
            power_iters: 2,
        }
    }
}

/// A fitted projection onto the leading principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `dim × p`, orthonormal columns sorted by decreasing variance.
    pub basis: DMatrix<f64>,
    /// Singular values of the centered data for each kept component.
    pub singular_values: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn p(&self) -> usize {
        self.basis.ncols()
    }

    /// `(matrix - mean) · basis`.
    pub fn project(&self, matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if matrix.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: matrix.ncols(),
            });
        }
        let mut shifted = matrix.clone();
        for (mut col, m) in shifted.column_iter_mut().zip(self.mean.iter()) {
            col.add_scalar_mut(-m);
        }
        Ok(shifted * &self.basis)
    }
}

pub fn project(model: &PcaModel, matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    model.project(matrix)
}

/// Fills a `rows × cols` matrix with standard normal draws in row-major
/// order, so the result depends only on the RNG state.
pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn orthonormal_range(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Randomized PCA: Gaussian range sketch of width `p + oversampling`,
/// `power_iters` re-orthonormalized power iterations, then an exact SVD of
/// the small projected matrix.
///
/// Component signs are whatever the sketch produces. Components whose
/// singular value is numerically zero are dropped, so the returned model may
/// have fewer than `p` columns on rank-deficient data.
pub fn randomized_pca(
    matrix: &DMatrix<f64>,
    p: usize,
    seed: u64,
    options: PcaOptions,
) -> Result<PcaModel> {
    let (n, dim) = matrix.shape();
    let max = n.min(dim);
    if n < 2 {
        return Err(Error::InvalidConfig("randomized PCA needs at least two rows".into()));
    }
    if p == 0 || p > max {
        return Err(Error::InvalidP { requested: p, max });
    }
    let (a, mean) = center(matrix);
    let width = (p + options.oversampling).min(max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = gaussian_matrix(dim, width, &mut rng);
    let mut q = orthonormal_range(&a * omega);
    for _ in 0..options.power_iters {
        let z = orthonormal_range(a.tr_mul(&q));
        q = orthonormal_range(&a * z);
    }

    // B = Qᵀ A is width × dim; its right singular vectors are the axes.
    let b = q.tr_mul(&a);
    let svd = b.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let sv = svd.singular_values;

    let top = sv.iter().copied().fold(0.0, f64::max);
    let tol = top * (n.max(dim) as f64) * f64::EPSILON;
    let kept = sv.iter().take(p).take_while(|&&s| s > tol).count();
    if kept < p {
        warn!("data has rank {kept} < requested {p} components; returning {kept}");
    }
    let mut basis = v_t.rows(0, kept).transpose();
    for mut col in basis.column_iter_mut() {
        if rng.random_bool(0.5) {
            col.neg_mut();
        }
    }
    Ok(PcaModel {
        mean,
        basis,
        singular_values: sv.iter().take(kept).copied().collect(),
    })
}

/// Result of [`procrustes`].
#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    /// Orthonormal `d × d` matrix minimizing `‖Y − X·W‖_F`.
    pub w: DMatrix<f64>,
    /// `XᵀY` was entirely zero; `w` is the identity.
    pub degenerate: bool,
}

/// Orthogonal Procrustes: `W = U·Vᵀ` from the SVD of `XᵀY`.
pub fn procrustes(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Procrustes> {
    if x.shape() != y.shape() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            found: y.ncols(),
        });
    }
    let d = x.ncols();
    let m = x.tr_mul(y);
    if m.iter().all(|&v| v == 0.0) {
        warn!("procrustes: cross-covariance is zero, returning identity");
        return Ok(Procrustes {
            w: DMatrix::identity(d, d),
            degenerate: true,
        });
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V");
    Ok(Procrustes {
        w: u * v_t,
        degenerate: false,
    })
}

/// Unconstrained least-squares linear map `T` minimizing
/// `Σ_i ‖targets_i − T·inputs_i‖²` (column-vector convention), via the
/// pseudo-inverse of the input Gram matrix.
pub fn fit_linear_map(inputs: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::DimensionMismatch {
            expected: inputs.nrows(),
            found: targets.nrows(),
        });
    }
    let gram = inputs.tr_mul(inputs);
    let cross = targets.tr_mul(inputs);
    let scale = gram.diagonal().iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let pinv = gram
        .pseudo_inverse(scale * 1e-12)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(cross * pinv)
}

/// Root-mean-square row norm, `sqrt(Σ‖row‖² / n)`.
pub fn rms_row_norm(matrix: &DMatrix<f64>) -> f64 {
    if matrix.nrows() == 0 {
        return 0.0;
    }
    (matrix.norm_squared() / matrix.nrows() as f64).sqrt()
}

/// Max absolute entry of `MᵀM − I`.
pub fn orthonormality_error(m: &DMatrix<f64>) -> f64 {
    let g = m.tr_mul(m);
    let id = DMatrix::<f64>::identity(g.nrows(), g.ncols());
    (g - id).amax()
}

/// Random orthonormal matrix from the QR factorization of a Gaussian matrix.
pub fn random_rotation<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = gaussian_matrix(d, d, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Sign fix makes the distribution Haar.
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}
