mod common;

use std::collections::HashSet;
use std::io::Cursor;

use common::{brute_nn, random_matrix, rng};
use embalign::eval::evaluate;
use embalign::icp::{icp_epoch, run_stage, IcpConfig, Stage, StageInit};
use embalign::io::{read_transform, read_vec, write_transform, EmbeddingSet, Lexicon};
use embalign::linalg::{center, orthonormality_error, procrustes};
use embalign::matching::{csls_match, nearest_neighbors, reciprocal_pairs, CorrespondenceMap, Metric};
use embalign::orchestrator::{select_best, RunRecord};
use embalign::{Retrieval, TransformPair};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0f64..10.0, rows * cols).prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

fn sized_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| matrix(r, c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loaded_vocabularies_never_repeat(lines in prop::collection::vec(("[ab]{1,2}", -5.0f64..5.0, -5.0f64..5.0), 1..40)) {
        let mut text = format!("{} 2\n", lines.len());
        for (w, a, b) in &lines {
            text.push_str(&format!("{w} {a} {b}\n"));
        }
        let (set, stats) = read_vec(Cursor::new(text), None).unwrap();
        let unique: HashSet<&String> = set.words().iter().collect();
        prop_assert_eq!(unique.len(), set.len());
        prop_assert_eq!(set.len() + stats.duplicates, lines.len());
        let first = &lines[0];
        prop_assert_eq!(set.word(0), first.0.as_str());
        prop_assert_eq!(set.vectors()[(0, 0)], first.1);
    }

    #[test]
    fn transform_files_round_trip_exactly(d in 1usize..6, seed in any::<u64>()) {
        let mut r = rng(seed);
        let pair = TransformPair {
            t_xy: random_matrix(d, d, &mut r) * 1e3,
            t_yx: random_matrix(d, d, &mut r) * 1e-7,
        };
        let mut buf = Vec::new();
        write_transform(&pair, &mut buf).unwrap();
        let back = read_transform(Cursor::new(buf)).unwrap();
        prop_assert_eq!((&back.t_xy - &pair.t_xy).amax(), 0.0);
        prop_assert_eq!((&back.t_yx - &pair.t_yx).amax(), 0.0);
    }

    #[test]
    fn procrustes_is_always_orthonormal(x in sized_matrix(12, 5), seed in any::<u64>()) {
        let y = random_matrix(x.nrows(), x.ncols(), &mut rng(seed));
        let w = procrustes(&x, &y).unwrap().w;
        prop_assert!(orthonormality_error(&w) < 1e-8);
    }

    #[test]
    fn centering_is_idempotent(x in sized_matrix(10, 6)) {
        let (once, _) = center(&x);
        let (twice, mean) = center(&once);
        prop_assert!((&twice - &once).amax() < 1e-12);
        prop_assert!(mean.amax() < 1e-10);
    }

    #[test]
    fn reciprocal_pairs_are_exactly_the_mutual_matches(
        (n, m, f_x, f_y) in (1usize..12, 1usize..12).prop_flat_map(|(n, m)| (
            Just(n), Just(m), prop::collection::vec(0..m, n), prop::collection::vec(0..n, m),
        ))
    ) {
        let map = CorrespondenceMap { f_x, f_y };
        let pairs = reciprocal_pairs(&map).pairs;
        prop_assert!(pairs.len() <= n.min(m));
        prop_assert!(pairs.windows(2).all(|w| w[0].0 < w[1].0));
        let expected: Vec<(usize, usize)> =
            (0..n).filter(|&i| map.f_y[map.f_x[i]] == i).map(|i| (i, map.f_x[i])).collect();
        prop_assert_eq!(pairs, expected);
    }

    #[test]
    fn nearest_neighbors_is_exhaustive(q in sized_matrix(20, 4), seed in any::<u64>(), m in 1usize..15) {
        let t = random_matrix(m, q.ncols(), &mut rng(seed));
        prop_assert_eq!(nearest_neighbors(&q, &t, Metric::Euclidean).unwrap(), brute_nn(&q, &t, false));
        prop_assert_eq!(nearest_neighbors(&q, &t, Metric::Cosine).unwrap(), brute_nn(&q, &t, true));
    }

    #[test]
    fn csls_ignores_row_scale(seed in any::<u64>(), row in 0usize..8, scale in 0.1f64..20.0) {
        let mut r = rng(seed);
        let q = random_matrix(8, 3, &mut r);
        let t = random_matrix(9, 3, &mut r);
        let (base, _) = csls_match(&q, &t, 3).unwrap();
        let mut q2 = q.clone();
        q2.row_mut(row).scale_mut(scale);
        let mut t2 = t.clone();
        t2.row_mut(row).scale_mut(7.3);
        let (scaled, _) = csls_match(&q2, &t2, 3).unwrap();
        prop_assert_eq!(base, scaled);
    }

    #[test]
    fn selection_ignores_input_order(losses in prop::collection::vec(0.0f64..10.0, 1..20), shuffle_seed in any::<u64>()) {
        let records: Vec<RunRecord> = losses.iter().enumerate().map(|(i, &l)| record(i as u64, l)).collect();
        let best = select_best(&records).unwrap().record.seed;
        let mut shuffled = records.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng(shuffle_seed));
        prop_assert_eq!(select_best(&shuffled).unwrap().record.seed, best);
    }

    #[test]
    fn precision_grows_with_k_and_counts_add_up(seed in any::<u64>(), noise in 0.0f64..1.0, extra in 0usize..5) {
        let mut r = rng(seed);
        let x = random_matrix(30, 4, &mut r);
        let y = &x + random_matrix(30, 4, &mut r) * noise;
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).collect();
        let src = EmbeddingSet::new(words.clone(), x).unwrap();
        let tgt = EmbeddingSet::new(words, y).unwrap();
        let mut lex = Lexicon::default();
        for i in 0..30 {
            lex.insert(format!("w{i}"), format!("w{i}"));
        }
        for e in 0..extra {
            lex.insert(format!("oov{e}"), "w0");
        }
        for metric in [Retrieval::Nn, Retrieval::Csls] {
            let rep = evaluate(&src, &tgt, &TransformPair::identity(4), &lex, metric, &[1, 3, 10], 5).unwrap();
            prop_assert!(rep.precision.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(rep.precision.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert_eq!(rep.n_evaluated + rep.n_oov, lex.len());
        }
    }
}

fn record(seed: u64, loss: f64) -> RunRecord {
    RunRecord {
        seed,
        stage: Stage::Pca,
        transforms: TransformPair::identity(1),
        map: CorrespondenceMap { f_x: vec![0], f_y: vec![0] },
        final_loss: loss,
        converged: true,
        trace: Vec::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exact_solution_is_a_fixed_point(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_matrix(40, 3, &mut r);
        let q = common::qr_rotation(3, &mut r);
        let y = &x * q.transpose();
        let state = TransformPair { t_xy: q.clone(), t_yx: q.transpose() };
        let (next, report) = icp_epoch(&state, &x, &y, &IcpConfig::default(), 0, &mut rng(seed ^ 1)).unwrap();
        prop_assert!((&next.t_xy - &state.t_xy).amax() < 1e-8);
        prop_assert!((&next.t_yx - &state.t_yx).amax() < 1e-8);
        prop_assert!(report.terms.total() < 1e-20);
    }

    #[test]
    fn epoch_matching_depends_only_on_state(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_matrix(30, 3, &mut r);
        let y = random_matrix(25, 3, &mut r);
        let state = TransformPair::identity(3);
        let config = IcpConfig::default();
        let (_, a) = icp_epoch(&state, &x, &y, &config, 0, &mut rng(1)).unwrap();
        let (_, b) = icp_epoch(&state, &x, &y, &config, 0, &mut rng(2)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loss_terms_sum_to_total(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_matrix(30, 3, &mut r);
        let y = random_matrix(30, 3, &mut r);
        let config = IcpConfig { epochs: 5, ..IcpConfig::default() };
        let rec = run_stage(&x, &y, StageInit::Transforms(TransformPair::identity(3)), &config, Stage::Pca, seed).unwrap();
        prop_assert_eq!(rec.trace.len(), 5);
        for rep in &rec.trace {
            let t = rep.terms;
            let sum = t.match_xy + t.match_yx + t.cycle_x + t.cycle_y;
            prop_assert!((t.total() - sum).abs() <= 1e-6 * sum.max(1e-300));
            prop_assert!(rep.reconstruction_loss >= 0.0);
        }
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_matrix(40, 4, &mut r);
        let y = random_matrix(40, 4, &mut r);
        let config = IcpConfig { epochs: 4, ..IcpConfig::default() };
        let init = || StageInit::Transforms(TransformPair::identity(4));
        let a = run_stage(&x, &y, init(), &config, Stage::Pca, seed).unwrap();
        let b = run_stage(&x, &y, init(), &config, Stage::Pca, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
