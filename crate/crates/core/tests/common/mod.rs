//! Exhaustive reference implementations shared by the integration tests.
//! They work row by row on plain slices and share no code with the library.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

pub fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cos(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest target per query; ties keep the lowest index.
pub fn brute_nn(q: &DMatrix<f64>, t: &DMatrix<f64>, cosine: bool) -> Vec<usize> {
    let (q, t) = (rows(q), rows(t));
    q.iter()
        .map(|a| {
            let mut best = 0;
            let mut best_v = f64::NAN;
            for (j, b) in t.iter().enumerate() {
                let v = if cosine { -cos(a, b) } else { sq_dist(a, b) };
                if j == 0 || v < best_v {
                    best = j;
                    best_v = v;
                }
            }
            best
        })
        .collect()
}

pub fn brute_knn_cos(q: &DMatrix<f64>, t: &DMatrix<f64>, k: usize) -> Vec<f64> {
    let (q, t) = (rows(q), rows(t));
    q.iter()
        .map(|a| {
            let mut sims: Vec<f64> = t.iter().map(|b| cos(a, b)).collect();
            sims.sort_by(|x, y| y.partial_cmp(x).unwrap());
            sims[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// Argmax of `2cos − r(q) − r(t)` per query, with `r` over the other set.
pub fn brute_csls(q: &DMatrix<f64>, t: &DMatrix<f64>, k: usize) -> (Vec<usize>, Vec<f64>) {
    let rq = brute_knn_cos(q, t, k);
    let rt = brute_knn_cos(t, q, k);
    let (qr, tr) = (rows(q), rows(t));
    let mut idx = Vec::new();
    let mut score = Vec::new();
    for (i, a) in qr.iter().enumerate() {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, b) in tr.iter().enumerate() {
            let v = 2.0 * cos(a, b) - rq[i] - rt[j];
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        idx.push(best);
        score.push(best_v);
    }
    (idx, score)
}

fn apply(t: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (0..t.nrows()).map(|r| (0..t.ncols()).map(|c| t[(r, c)] * v[c]).sum()).collect()
}

fn norm_term(a: &[f64], b: &[f64], squared: bool) -> f64 {
    let s = sq_dist(a, b);
    if squared {
        s
    } else {
        s.sqrt()
    }
}

/// The four-term objective written out term by term.
#[allow(clippy::too_many_arguments)]
pub fn naive_objective(
    t_xy: &DMatrix<f64>,
    t_yx: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    f_x: &[usize],
    f_y: &[usize],
    lambda: f64,
    squared: bool,
) -> f64 {
    let (xr, yr) = (rows(x), rows(y));
    let mut total = 0.0;
    for (j, yj) in yr.iter().enumerate() {
        total += norm_term(yj, &apply(t_xy, &xr[f_y[j]]), squared);
    }
    for (i, xi) in xr.iter().enumerate() {
        total += norm_term(xi, &apply(t_yx, &yr[f_x[i]]), squared);
    }
    for xi in &xr {
        total += lambda * norm_term(xi, &apply(t_yx, &apply(t_xy, xi)), squared);
    }
    for yj in &yr {
        total += lambda * norm_term(yj, &apply(t_xy, &apply(t_yx, yj)), squared);
    }
    total
}

/// Central differences of [`naive_objective`] in every entry of both maps.
#[allow(clippy::too_many_arguments)]
pub fn fd_gradient(
    t_xy: &DMatrix<f64>,
    t_yx: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    f_x: &[usize],
    f_y: &[usize],
    lambda: f64,
    squared: bool,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = t_xy.nrows();
    let mut g_xy = DMatrix::zeros(d, d);
    let mut g_yx = DMatrix::zeros(d, d);
    for r in 0..d {
        for c in 0..d {
            let (mut p, mut m) = (t_xy.clone(), t_xy.clone());
            p[(r, c)] += h;
            m[(r, c)] -= h;
            g_xy[(r, c)] = (naive_objective(&p, t_yx, x, y, f_x, f_y, lambda, squared)
                - naive_objective(&m, t_yx, x, y, f_x, f_y, lambda, squared))
                / (2.0 * h);
            let (mut p, mut m) = (t_yx.clone(), t_yx.clone());
            p[(r, c)] += h;
            m[(r, c)] -= h;
            g_yx[(r, c)] = (naive_objective(t_xy, &p, x, y, f_x, f_y, lambda, squared)
                - naive_objective(t_xy, &m, x, y, f_x, f_y, lambda, squared))
                / (2.0 * h);
        }
    }
    (g_xy, g_yx)
}

/// Largest entrywise `|a − b| / max(|a|, |b|)`, with entries below `floor`
/// in both compared absolutely against `floor`.
pub fn max_rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Rotation from the QR factorization of a Gaussian matrix, signs fixed so
/// the factorization is unique.
pub fn qr_rotation(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let qr = random_matrix(d, d, rng).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            q.column_mut(c).neg_mut();
        }
    }
    q
}
