//! Mini-batch cycle ICP.
//!
//! Two unconstrained linear maps are learned jointly: `t_xy` takes source
//! vectors into the target space and `t_yx` goes back. Vectors are rows of
//! the data matrices but the maps act on column vectors, so a mapped source
//! matrix is `X · t_xyᵀ`.
//!
//! Each epoch matches every point to its nearest mapped counterpart once,
//! then takes one shuffled pass of mini-batch SGD on
//!
//! ```text
//! Σ_j ‖y_j − T_xy x_{f_y(j)}‖ + Σ_i ‖x_i − T_yx y_{f_x(i)}‖
//!   + λ Σ_i ‖x_i − T_yx T_xy x_i‖ + λ Σ_j ‖y_j − T_xy T_yx y_j‖
//! ```
//!
//! where each source row contributes its own matching and cycle terms, and
//! likewise for target rows. The norm is squared by default for training
//! and plain Euclidean for the reported reconstruction loss.

use log::debug;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{fit_linear_map, procrustes, rms_row_norm};
use crate::matching::{nearest_neighbors, reciprocal_pairs, CorrespondenceMap, Metric};

/// The learned pair of directional linear maps.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformPair {
    pub t_xy: DMatrix<f64>,
    pub t_yx: DMatrix<f64>,
}

impl TransformPair {
    pub fn new(t_xy: DMatrix<f64>, t_yx: DMatrix<f64>) -> Result<Self> {
        if !t_xy.is_square() || t_xy.shape() != t_yx.shape() {
            return Err(Error::InvalidConfig(format!(
                "transforms must be square and equal-sized, got {:?} and {:?}",
                t_xy.shape(),
                t_yx.shape()
            )));
        }
        if t_xy.iter().chain(t_yx.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("transform contains non-finite values".into()));
        }
        Ok(TransformPair { t_xy, t_yx })
    }

    pub fn identity(d: usize) -> Self {
        TransformPair {
            t_xy: DMatrix::identity(d, d),
            t_yx: DMatrix::identity(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.t_xy.nrows()
    }

    /// Source rows mapped into the target space.
    pub fn map_source(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x * self.t_xy.transpose()
    }

    /// Target rows mapped into the source space.
    pub fn map_target(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        y * self.t_yx.transpose()
    }

    fn max_abs(&self) -> f64 {
        self.t_xy.iter().chain(self.t_yx.iter()).fold(0.0, |a, v| {
            if v.is_finite() {
                a.max(v.abs())
            } else {
                f64::INFINITY
            }
        })
    }

    fn rescaled(&self, xy: f64, yx: f64) -> TransformPair {
        TransformPair {
            t_xy: &self.t_xy * xy,
            t_yx: &self.t_yx * yx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IcpMode {
    /// Mini-batch SGD with cycle terms.
    Mbc,
    /// Full-batch orthogonal Procrustes per direction, no cycle terms.
    Picp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossNorm {
    Squared,
    Euclidean,
}

impl LossNorm {
    fn value(self, sq: f64) -> f64 {
        match self {
            LossNorm::Squared => sq,
            LossNorm::Euclidean => sq.sqrt(),
        }
    }

    /// d‖r‖/dr = weight · r.
    fn weight(self, sq: f64) -> f64 {
        match self {
            LossNorm::Squared => 2.0,
            LossNorm::Euclidean if sq > 0.0 => 1.0 / sq.sqrt(),
            LossNorm::Euclidean => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    /// Cycle-consistency weight.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// First epoch (0-based) whose matching terms use only reciprocal pairs.
    pub reciprocal_from_epoch: Option<usize>,
    pub learning_rate: f64,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub mode: IcpMode,
    pub training_norm: LossNorm,
    pub report_norm: LossNorm,
    /// A run is abandoned once any transform entry exceeds this magnitude.
    pub divergence_limit: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            lambda: 0.1,
            batch_size: 128,
            epochs: 100,
            reciprocal_from_epoch: None,
            learning_rate: 0.5,
            lr_decay: 0.98,
            mode: IcpMode::Mbc,
            training_norm: LossNorm::Squared,
            report_norm: LossNorm::Euclidean,
            divergence_limit: 1e6,
        }
    }
}

impl IcpConfig {
    /// Defaults for the full-dimensional stage: reciprocal pairs from epoch 50.
    pub fn raw_stage() -> Self {
        IcpConfig {
            reciprocal_from_epoch: Some(50),
            ..IcpConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be a non-negative number");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning-rate decay must lie in (0, 1]");
        }
        if let Some(r) = self.reciprocal_from_epoch {
            if r > self.epochs {
                return bad("reciprocal-from epoch exceeds the epoch count");
            }
        }
        Ok(())
    }

    fn reciprocal_active(&self, epoch: usize) -> bool {
        self.reciprocal_from_epoch.is_some_and(|r| epoch >= r)
    }
}

/// The four terms of the training objective. Cycle terms include λ.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    /// `Σ_j ‖y_j − T_xy x_{f_y(j)}‖`
    pub match_xy: f64,
    /// `Σ_i ‖x_i − T_yx y_{f_x(i)}‖`
    pub match_yx: f64,
    /// `λ Σ_i ‖x_i − T_yx T_xy x_i‖`
    pub cycle_x: f64,
    /// `λ Σ_j ‖y_j − T_xy T_yx y_j‖`
    pub cycle_y: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.match_xy + self.match_yx + self.cycle_x + self.cycle_y
    }

    fn is_finite(&self) -> bool {
        self.total().is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Normalized reconstruction loss at epoch start.
    pub reconstruction_loss: f64,
    pub n_reciprocal: usize,
    /// Training objective at epoch start, summed over all points.
    pub terms: LossTerms,
}

/// Which matching terms take part in the objective.
#[derive(Debug, Clone)]
pub struct MatchMask {
    pub source: Vec<bool>,
    pub target: Vec<bool>,
}

impl MatchMask {
    pub fn all(n: usize, m: usize) -> Self {
        MatchMask {
            source: vec![true; n],
            target: vec![true; m],
        }
    }

    /// Only rows that belong to a reciprocal pair of `map`.
    pub fn reciprocal(map: &CorrespondenceMap) -> Self {
        let mut mask = MatchMask {
            source: vec![false; map.f_x.len()],
            target: vec![false; map.f_y.len()],
        };
        for (i, j) in reciprocal_pairs(map).pairs {
            mask.source[i] = true;
            mask.target[j] = true;
        }
        mask
    }
}

fn check_shapes(state: &TransformPair, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    let d = state.dim();
    for found in [x.ncols(), y.ncols()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(Error::EmptyTargets);
    }
    Ok(())
}

/// `f_y` matches each target to the nearest mapped source, `f_x` each source
/// to the nearest mapped target.
pub fn correspondences(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<CorrespondenceMap> {
    check_shapes(state, x, y)?;
    let f_y = nearest_neighbors(y, &state.map_source(x), Metric::Euclidean)?;
    let f_x = nearest_neighbors(x, &state.map_target(y), Metric::Euclidean)?;
    Ok(CorrespondenceMap { f_x, f_y })
}

/// Residual rows `a − b`, their summed norm, and the per-row gradient factor.
fn residual(a: DMatrix<f64>, b: &DMatrix<f64>, norm: LossNorm) -> (f64, DMatrix<f64>) {
    let mut r = a - b;
    let mut loss = 0.0;
    for mut row in r.row_iter_mut() {
        let sq = row.norm_squared();
        loss += norm.value(sq);
        row *= norm.weight(sq);
    }
    (loss, r)
}

/// Objective and gradient over the listed source and target rows.
///
/// Returns the summed terms and `(∂/∂t_xy, ∂/∂t_yx)` of their sum.
#[allow(clippy::too_many_arguments)]
pub fn objective_gradient(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    map: &CorrespondenceMap,
    mask: &MatchMask,
    lambda: f64,
    norm: LossNorm,
    source_rows: &[usize],
    target_rows: &[usize],
) -> (LossTerms, DMatrix<f64>, DMatrix<f64>) {
    let (a, b) = (&state.t_yx, &state.t_xy);
    let d = state.dim();
    let mut g_xy = DMatrix::zeros(d, d);
    let mut g_yx = DMatrix::zeros(d, d);
    let mut terms = LossTerms::default();

    if !source_rows.is_empty() {
        let active: Vec<usize> = source_rows.iter().copied().filter(|&i| mask.source[i]).collect();
        if !active.is_empty() {
            let xa = x.select_rows(&active);
            let matched: Vec<usize> = active.iter().map(|&i| map.f_x[i]).collect();
            let yf = y.select_rows(&matched);
            let (loss, g) = residual(xa, &(&yf * a.transpose()), norm);
            terms.match_yx = loss;
            g_yx -= g.tr_mul(&yf);
        }
        if lambda > 0.0 {
            let xs = x.select_rows(source_rows);
            let z = &xs * b.transpose();
            let (loss, g) = residual(xs.clone(), &(&z * a.transpose()), norm);
            terms.cycle_x = lambda * loss;
            g_yx -= g.tr_mul(&z) * lambda;
            g_xy -= (&g * a).tr_mul(&xs) * lambda;
        }
    }

    if !target_rows.is_empty() {
        let active: Vec<usize> = target_rows.iter().copied().filter(|&j| mask.target[j]).collect();
        if !active.is_empty() {
            let ya = y.select_rows(&active);
            let matched: Vec<usize> = active.iter().map(|&j| map.f_y[j]).collect();
            let xf = x.select_rows(&matched);
            let (loss, g) = residual(ya, &(&xf * b.transpose()), norm);
            terms.match_xy = loss;
            g_xy -= g.tr_mul(&xf);
        }
        if lambda > 0.0 {
            let ys = y.select_rows(target_rows);
            let z = &ys * a.transpose();
            let (loss, g) = residual(ys.clone(), &(&z * b.transpose()), norm);
            terms.cycle_y = lambda * loss;
            g_xy -= g.tr_mul(&z) * lambda;
            g_yx -= (&g * b).tr_mul(&ys) * lambda;
        }
    }

    (terms, g_xy, g_yx)
}

/// The full four-term objective over every row.
pub fn objective(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    map: &CorrespondenceMap,
    mask: &MatchMask,
    lambda: f64,
    norm: LossNorm,
) -> LossTerms {
    let src: Vec<usize> = (0..x.nrows()).collect();
    let tgt: Vec<usize> = (0..y.nrows()).collect();
    objective_gradient(state, x, y, map, mask, lambda, norm, &src, &tgt).0
}

/// Matching-only reconstruction loss divided by `n + m`.
pub fn reconstruction_loss_with(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    map: &CorrespondenceMap,
    norm: LossNorm,
) -> f64 {
    let mask = MatchMask::all(x.nrows(), y.nrows());
    let t = objective(state, x, y, map, &mask, 0.0, norm);
    (t.match_xy + t.match_yx) / (x.nrows() + y.nrows()) as f64
}

/// [`reconstruction_loss_with`] under the Euclidean norm.
pub fn reconstruction_loss(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    map: &CorrespondenceMap,
) -> f64 {
    reconstruction_loss_with(state, x, y, map, LossNorm::Euclidean)
}

fn epoch_start(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &IcpConfig,
    epoch: usize,
) -> Result<(CorrespondenceMap, MatchMask, EpochReport)> {
    let map = correspondences(state, x, y)?;
    let n_reciprocal = reciprocal_pairs(&map).len();
    let mask = if config.reciprocal_active(epoch) {
        MatchMask::reciprocal(&map)
    } else {
        MatchMask::all(x.nrows(), y.nrows())
    };
    let lambda = match config.mode {
        IcpMode::Mbc => config.lambda,
        IcpMode::Picp => 0.0,
    };
    let terms = objective(state, x, y, &map, &mask, lambda, config.training_norm);
    let reconstruction = reconstruction_loss_with(state, x, y, &map, config.report_norm);
    if !terms.is_finite() || !reconstruction.is_finite() {
        return Err(Error::NonFiniteLoss { epoch });
    }
    let report = EpochReport {
        epoch,
        reconstruction_loss: reconstruction,
        n_reciprocal,
        terms,
    };
    Ok((map, mask, report))
}

fn check_divergence(state: &TransformPair, config: &IcpConfig, epoch: usize) -> Result<()> {
    if state.max_abs() > config.divergence_limit {
        return Err(Error::NonFiniteLoss { epoch });
    }
    Ok(())
}

/// One MBC-ICP epoch: match once, then one shuffled pass of mini-batch SGD.
///
/// The shuffle draws from `rng`; the report's losses are measured before any
/// update.
pub fn icp_epoch<R: Rng>(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &IcpConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<(TransformPair, EpochReport)> {
    let (map, mask, report) = epoch_start(state, x, y, config, epoch)?;
    let n = x.nrows();
    let mut order: Vec<usize> = (0..n + y.nrows()).collect();
    order.shuffle(rng);

    let lr = config.learning_rate * config.lr_decay.powi(epoch as i32);
    let mut next = state.clone();
    for batch in order.chunks(config.batch_size) {
        let (src, tgt): (Vec<usize>, Vec<usize>) = batch.iter().partition(|&&k| k < n);
        let tgt: Vec<usize> = tgt.into_iter().map(|k| k - n).collect();
        let (_, g_xy, g_yx) = objective_gradient(
            &next,
            x,
            y,
            &map,
            &mask,
            config.lambda,
            config.training_norm,
            &src,
            &tgt,
        );
        let step = lr / batch.len() as f64;
        next.t_xy -= g_xy * step;
        next.t_yx -= g_yx * step;
    }
    check_divergence(&next, config, epoch)?;
    Ok((next, report))
}

/// One P-ICP epoch: match once, then replace each map with the orthogonal
/// Procrustes solution on its matched pairs.
pub fn p_icp_epoch(
    state: &TransformPair,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &IcpConfig,
    epoch: usize,
) -> Result<(TransformPair, EpochReport)> {
    let (map, mask, report) = epoch_start(state, x, y, config, epoch)?;

    let targets: Vec<usize> = (0..y.nrows()).filter(|&j| mask.target[j]).collect();
    let sources: Vec<usize> = (0..x.nrows()).filter(|&i| mask.source[i]).collect();
    if targets.is_empty() || sources.is_empty() {
        return Ok((state.clone(), report));
    }
    let xf = x.select_rows(&targets.iter().map(|&j| map.f_y[j]).collect::<Vec<_>>());
    let xy = procrustes(&xf, &y.select_rows(&targets))?;
    let yf = y.select_rows(&sources.iter().map(|&i| map.f_x[i]).collect::<Vec<_>>());
    let yx = procrustes(&yf, &x.select_rows(&sources))?;
    // Row convention Y ≈ X·W means T = Wᵀ.
    let next = TransformPair {
        t_xy: xy.w.transpose(),
        t_yx: yx.w.transpose(),
    };
    Ok((next, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    /// On the leading principal components, from identity maps.
    Pca,
    /// On the full vectors, from the reduced stage's correspondences.
    Raw,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Pca => "pca",
            Stage::Raw => "raw",
        })
    }
}

/// Starting point for [`run_stage`].
#[derive(Debug, Clone)]
pub enum StageInit {
    Transforms(TransformPair),
    /// Least-squares fit of both maps to these matches.
    Correspondences(CorrespondenceMap),
}

/// Outcome of one optimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub stage: Stage,
    pub transforms: TransformPair,
    pub map: CorrespondenceMap,
    /// Normalized reconstruction loss after the last epoch.
    pub final_loss: f64,
    /// Finite loss and the divergence guard never tripped.
    pub converged: bool,
    pub trace: Vec<EpochReport>,
}

/// Least-squares maps for a given matching: `t_xy` from `(x_{f_y(j)}, y_j)`
/// and `t_yx` from `(y_{f_x(i)}, x_i)`.
pub fn fit_to_correspondences(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    map: &CorrespondenceMap,
) -> Result<TransformPair> {
    if map.f_x.len() != x.nrows() || map.f_y.len() != y.nrows() || !map.is_valid() {
        return Err(Error::InvalidConfig("correspondence map does not fit the data".into()));
    }
    let t_xy = fit_linear_map(&x.select_rows(&map.f_y), y)?;
    let t_yx = fit_linear_map(&y.select_rows(&map.f_x), x)?;
    Ok(TransformPair { t_xy, t_yx })
}

/// Runs `config.epochs` epochs from `init`.
///
/// Each side is rescaled to unit RMS row norm for the optimization, so the
/// learning rate does not depend on the embedding scale; losses in the
/// record are measured in those units, and the returned transforms act on
/// the original vectors. A divergent or non-finite run comes back with
/// `converged = false`.
pub fn run_stage(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    init: StageInit,
    config: &IcpConfig,
    stage: Stage,
    seed: u64,
) -> Result<RunRecord> {
    config.validate()?;
    let sx = positive_or_one(rms_row_norm(x));
    let sy = positive_or_one(rms_row_norm(y));
    let xn = x / sx;
    let yn = y / sy;

    let (init_original, mut state) = match init {
        StageInit::Transforms(t) => {
            check_shapes(&t, x, y)?;
            let scaled = t.rescaled(sx / sy, sy / sx);
            (t, scaled)
        }
        StageInit::Correspondences(map) => {
            let fitted = fit_to_correspondences(&xn, &yn, &map)?;
            (fitted.rescaled(sy / sx, sx / sy), fitted)
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(config.epochs);
    let mut converged = true;
    for epoch in 0..config.epochs {
        let step = match config.mode {
            IcpMode::Mbc => icp_epoch(&state, &xn, &yn, config, epoch, &mut rng),
            IcpMode::Picp => p_icp_epoch(&state, &xn, &yn, config, epoch),
        };
        match step {
            Ok((next, report)) => {
                trace.push(report);
                state = next;
            }
            Err(Error::NonFiniteLoss { epoch }) => {
                debug!("seed {seed}: diverged at epoch {epoch}");
                converged = false;
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let (map, final_loss) = if converged {
        let map = correspondences(&state, &xn, &yn)?;
        let loss = reconstruction_loss_with(&state, &xn, &yn, &map, config.report_norm);
        (map, loss)
    } else {
        (
            CorrespondenceMap {
                f_x: vec![0; x.nrows()],
                f_y: vec![0; y.nrows()],
            },
            f64::INFINITY,
        )
    };
    let converged = converged && final_loss.is_finite();

    let transforms = if trace.is_empty() {
        init_original
    } else {
        state.rescaled(sy / sx, sx / sy)
    };
    Ok(RunRecord {
        seed,
        stage,
        transforms,
        map,
        final_loss,
        converged,
        trace,
    })
}

fn positive_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}
