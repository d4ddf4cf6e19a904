//! Many seeded runs of the reduced-dimension stage, unsupervised selection
//! of the best one, and the full alignment pipeline built on top.
//!
//! Run `k` uses seed `master_seed + k`. Each run seed is split into
//! independent streams for the two PCA sketches and the mini-batch order, so
//! either source of randomness can be frozen on its own.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::icp::{run_stage, IcpConfig, Stage, StageInit, TransformPair};
use crate::io::{save_map, save_transform, EmbeddingSet};
use crate::linalg::{randomized_pca, PcaModel, PcaOptions};

pub use crate::icp::RunRecord;

/// Which sources of run-to-run randomness are enabled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StochasticityPolicy {
    pub randomize_pca: bool,
    pub randomize_order: bool,
}

impl Default for StochasticityPolicy {
    fn default() -> Self {
        StochasticityPolicy {
            randomize_pca: true,
            randomize_order: true,
        }
    }
}

/// Every knob of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Most frequent words used for the unsupervised stages.
    pub vocab: usize,
    pub pca_dim: usize,
    /// Caps the reduced dimension at this fraction of the input dimension.
    pub pca_dim_cap: Option<f64>,
    pub pca: PcaOptions,
    pub pca_stage: IcpConfig,
    pub raw_stage: IcpConfig,
    pub runs: usize,
    pub master_seed: u64,
    pub policy: StochasticityPolicy,
    /// Reporting label: a run counts as converged below this fraction of
    /// the cohort median loss.
    pub convergence_ratio: f64,
    pub finetune: FinetuneConfig,
    pub csls_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            vocab: 5000,
            pca_dim: 50,
            pca_dim_cap: None,
            pca: PcaOptions::default(),
            pca_stage: IcpConfig::default(),
            raw_stage: IcpConfig::raw_stage(),
            runs: 500,
            master_seed: 0,
            policy: StochasticityPolicy::default(),
            convergence_ratio: 0.5,
            finetune: FinetuneConfig::default(),
            csls_k: 10,
        }
    }
}

impl PipelineConfig {
    /// Scaled-down settings for small machines and CI. The reduced
    /// dimension keeps the 50-of-300 ratio on lower-dimensional inputs.
    pub fn desk() -> Self {
        PipelineConfig {
            vocab: 1000,
            runs: 50,
            pca_dim_cap: Some(1.0 / 6.0),
            ..PipelineConfig::default()
        }
    }

    /// Reduced dimension used for inputs of dimension `dim`.
    pub fn effective_pca_dim(&self, dim: usize) -> usize {
        match self.pca_dim_cap {
            Some(c) => self.pca_dim.min(((dim as f64 * c).floor() as usize).max(1)),
            None => self.pca_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidConfig("at least one run is required".into()));
        }
        if self.vocab < 2 {
            return Err(Error::InvalidConfig("vocabulary must hold at least two words".into()));
        }
        if self.csls_k == 0 {
            return Err(Error::InvalidConfig("CSLS k must be positive".into()));
        }
        if self.pca_dim == 0 {
            return Err(Error::InvalidConfig("PCA dimension must be positive".into()));
        }
        if let Some(c) = self.pca_dim_cap {
            if !(c > 0.0 && c <= 1.0) {
                return Err(Error::InvalidConfig("PCA dimension cap must lie in (0, 1]".into()));
            }
        }
        self.pca_stage.validate()?;
        self.raw_stage.validate()?;
        self.finetune.validate()
    }
}

/// A reproducible child seed on its own ChaCha stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_PCA_X: u64 = 1;
const STREAM_PCA_Y: u64 = 2;
const STREAM_ORDER: u64 = 3;
const STREAM_RAW: u64 = 4;

fn fit_pcas(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    p: usize,
    seed: u64,
    options: PcaOptions,
) -> Result<(PcaModel, PcaModel)> {
    let mut px = randomized_pca(x, p, derive_seed(seed, STREAM_PCA_X), options)?;
    let mut py = randomized_pca(y, p, derive_seed(seed, STREAM_PCA_Y), options)?;
    let common = px.p().min(py.p());
    for m in [&mut px, &mut py] {
        if m.p() > common {
            m.basis = m.basis.columns(0, common).into_owned();
            m.singular_values.truncate(common);
        }
    }
    Ok((px, py))
}

fn one_run(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &PipelineConfig,
    policy: StochasticityPolicy,
    shared: Option<&(DMatrix<f64>, DMatrix<f64>)>,
    k: usize,
) -> Result<RunRecord> {
    let seed = config.master_seed.wrapping_add(k as u64);
    let owned;
    let (px, py) = match shared {
        Some((px, py)) => (px, py),
        None => {
            let (mx, my) = fit_pcas(x, y, config.effective_pca_dim(x.ncols()), seed, config.pca)?;
            owned = (mx.project(x)?, my.project(y)?);
            (&owned.0, &owned.1)
        }
    };
    let order_seed = if policy.randomize_order {
        derive_seed(seed, STREAM_ORDER)
    } else {
        derive_seed(config.master_seed, STREAM_ORDER)
    };
    let init = StageInit::Transforms(TransformPair::identity(px.ncols()));
    let mut record = run_stage(px, py, init, &config.pca_stage, Stage::Pca, order_seed)?;
    record.seed = seed;
    Ok(record)
}

fn shared_projection(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    config: &PipelineConfig,
    policy: StochasticityPolicy,
) -> Result<Option<(DMatrix<f64>, DMatrix<f64>)>> {
    if policy.randomize_pca {
        return Ok(None);
    }
    let (mx, my) = fit_pcas(x, y, config.effective_pca_dim(x.ncols()), config.master_seed, config.pca)?;
    Ok(Some((mx.project(x)?, my.project(y)?)))
}

/// Runs `n_runs` independent reduced-dimension stages, returned in seed
/// order. `parallelism` bounds the worker threads (all cores when `None`).
pub fn run_many(
    x_raw: &DMatrix<f64>,
    y_raw: &DMatrix<f64>,
    config: &PipelineConfig,
    n_runs: usize,
    policy: StochasticityPolicy,
    parallelism: Option<usize>,
) -> Result<Vec<RunRecord>> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    if !policy.randomize_pca && !policy.randomize_order && n_runs > 1 {
        warn!("both randomization sources are disabled; all {n_runs} runs will be identical");
    }
    let shared = shared_projection(x_raw, y_raw, config, policy)?;
    let work = || -> Result<Vec<RunRecord>> {
        (0..n_runs)
            .into_par_iter()
            .map(|k| one_run(x_raw, y_raw, config, policy, shared.as_ref(), k))
            .collect()
    };
    let records = match parallelism {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?
            .install(work)?,
        None => work()?,
    };
    if records.iter().all(|r| !r.converged) {
        return Err(Error::AllRunsFailed(records.len()));
    }
    Ok(records)
}

/// Stop rule for serial search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopPolicy {
    pub threshold_ratio: f64,
    pub min_runs: usize,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        EarlyStopPolicy {
            threshold_ratio: 0.5,
            min_runs: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Poll {
    Continue,
    Stop,
}

/// Stop once at least `min_runs` runs are done and one of them is below
/// `threshold_ratio` times the running median.
pub fn early_stop_poll(records: &[RunRecord], policy: &EarlyStopPolicy) -> Poll {
    if records.len() < policy.min_runs {
        return Poll::Continue;
    }
    let losses = converged_losses(records);
    match (median(&losses), losses.iter().copied().reduce(f64::min)) {
        (Some(med), Some(best)) if best < policy.threshold_ratio * med => Poll::Stop,
        _ => Poll::Continue,
    }
}

/// Runs seeds one at a time until [`early_stop_poll`] says stop or
/// `max_runs` is reached. Produces the same records as [`run_many`] for the
/// seeds it visits.
pub fn run_serial(
    x_raw: &DMatrix<f64>,
    y_raw: &DMatrix<f64>,
    config: &PipelineConfig,
    max_runs: usize,
    policy: StochasticityPolicy,
    stop: &EarlyStopPolicy,
) -> Result<Vec<RunRecord>> {
    let shared = shared_projection(x_raw, y_raw, config, policy)?;
    let mut records = Vec::new();
    for k in 0..max_runs {
        records.push(one_run(x_raw, y_raw, config, policy, shared.as_ref(), k)?);
        if early_stop_poll(&records, stop) == Poll::Stop {
            info!("early stop after {} runs", records.len());
            break;
        }
    }
    if records.iter().all(|r| !r.converged) {
        return Err(Error::AllRunsFailed(records.len()));
    }
    Ok(records)
}

fn converged_losses(records: &[RunRecord]) -> Vec<f64> {
    records.iter().filter(|r| r.converged).map(|r| r.final_loss).collect()
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}

/// The chosen run and how clearly it stands out from the cohort.
#[derive(Debug, Clone, Copy)]
pub struct Selection<'a> {
    pub record: &'a RunRecord,
    pub median: f64,
    /// `best / median`.
    pub ratio: f64,
    /// At least two converged runs and `ratio ≤ 0.5`.
    pub confident: bool,
}

/// Lowest final loss among converged runs; ties go to the smaller seed.
pub fn select_best(records: &[RunRecord]) -> Result<Selection<'_>> {
    let best = records
        .iter()
        .filter(|r| r.converged)
        .min_by(|a, b| a.final_loss.total_cmp(&b.final_loss).then(a.seed.cmp(&b.seed)))
        .ok_or(Error::AllRunsFailed(records.len()))?;
    let losses = converged_losses(records);
    let median = median(&losses).unwrap_or(best.final_loss);
    let ratio = if median > 0.0 { best.final_loss / median } else { 1.0 };
    Ok(Selection {
        record: best,
        median,
        ratio,
        confident: losses.len() >= 2 && ratio <= 0.5,
    })
}

/// Reporting label per record: converged and below `ratio` × cohort median.
pub fn convergence_labels(records: &[RunRecord], ratio: f64) -> Vec<bool> {
    let med = median(&converged_losses(records));
    records
        .iter()
        .map(|r| r.converged && med.is_some_and(|m| r.final_loss < ratio * m))
        .collect()
}

/// CSV with `seed,stage,final_loss,converged`, one row per record.
pub fn export_run_stats(records: &[RunRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "seed,stage,final_loss,converged")?;
        for r in records {
            writeln!(out, "{},{},{},{}", r.seed, r.stage, r.final_loss, r.converged)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Writes `seed_<seed>.transform` and `seed_<seed>.map` for each converged
/// record.
pub fn write_checkpoints(records: &[RunRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in records.iter().filter(|r| r.converged) {
        save_transform(&r.transforms, &dir.join(format!("seed_{}.transform", r.seed)))?;
        save_map(&r.map, &dir.join(format!("seed_{}.map", r.seed)))?;
    }
    Ok(())
}

/// Everything produced by [`align`].
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Reduced-stage runs in seed order.
    pub records: Vec<RunRecord>,
    /// Index of the selected run in `records`.
    pub selected: usize,
    pub median_loss: f64,
    pub confident: bool,
    /// Full-dimensional stage seeded from the selected run.
    pub raw: RunRecord,
}

impl Alignment {
    pub fn transforms(&self) -> &TransformPair {
        &self.raw.transforms
    }

    pub fn selected_record(&self) -> &RunRecord {
        &self.records[self.selected]
    }
}

/// Full-dimensional stage started from the correspondences of a reduced
/// run, on the same rows that run saw.
pub fn refine_run(x: &DMatrix<f64>, y: &DMatrix<f64>, record: &RunRecord, config: &PipelineConfig) -> Result<RunRecord> {
    let mut raw = run_stage(
        x,
        y,
        StageInit::Correspondences(record.map.clone()),
        &config.raw_stage,
        Stage::Raw,
        derive_seed(record.seed, STREAM_RAW),
    )?;
    raw.seed = record.seed;
    Ok(raw)
}

/// Truncate both vocabularies, run the reduced stage many times, pick the
/// best run, then refine on the full vectors from its correspondences.
pub fn align(
    source: &EmbeddingSet,
    target: &EmbeddingSet,
    config: &PipelineConfig,
    parallelism: Option<usize>,
) -> Result<Alignment> {
    config.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            found: target.dim(),
        });
    }
    let x = source.truncated(config.vocab).vectors().clone();
    let y = target.truncated(config.vocab).vectors().clone();

    let records = run_many(&x, &y, config, config.runs, config.policy, parallelism)?;
    let selection = select_best(&records)?;
    let best = selection.record;
    info!(
        "selected seed {} with loss {:.6} ({:.3} of median{})",
        best.seed,
        best.final_loss,
        selection.ratio,
        if selection.confident { "" } else { ", low confidence" }
    );
    let raw = refine_run(&x, &y, best, config)?;
    if !raw.converged {
        return Err(Error::NonFiniteLoss { epoch: raw.trace.len() });
    }
    let selected = records.iter().position(|r| std::ptr::eq(r, best)).expect("selected from records");
    Ok(Alignment {
        median_loss: selection.median,
        confident: selection.confident,
        selected,
        records,
        raw,
    })
}
