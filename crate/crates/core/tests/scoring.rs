mod common;

use common::oracles::{cv_brute, frobenius_brute, frobenius_trace_brute, pca_oracle, rel_close, rpr_brute};
use nalgebra::DMatrix;
use ocnna_core::inference::ActivationCapture;
use ocnna_core::scoring::{frobenius_norm_trace, kept_count};
use ocnna_core::{coefficient_of_variation, frobenius_norm, pca_95, rpr, score_layer, select_filters, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    // Columns with different scales give uneven spectra, so the retained
    // component count varies from case to case.
    let scales: Vec<f32> = (0..cols).map(|_| rng.random_range(0.05f32..2.0)).collect();
    let data = (0..rows * cols).map(|i| rng.random_range(-1.0f32..1.0) * scales[i % cols]).collect();
    Matrix::new(rows, cols, data).unwrap()
}

#[test]
fn pca_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut counts = std::collections::BTreeSet::new();
    for _ in 0..150 {
        let (rows, cols) = (rng.random_range(2..12), rng.random_range(1..10));
        let m = random_matrix(&mut rng, rows, cols);
        let got = pca_95(&m).unwrap();
        let want = pca_oracle(rows, cols, m.data());
        assert_eq!(got.component_count, want.count);
        for (g, w) in got.explained_variance_ratio.iter().zip(&want.explained) {
            assert!((g - w).abs() <= 1e-6, "{g} vs {w}");
        }
        assert!(rel_close(frobenius_norm(&got.scores), want.projection_norm, 1e-6));
        counts.insert(got.component_count);
    }
    assert!(counts.len() >= 3, "oracle inputs should exercise several component counts: {counts:?}");
}

#[test]
fn pca_components_are_orthonormal_and_retain_enough() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..150 {
        let (rows, cols) = (rng.random_range(3..16), rng.random_range(2..12));
        let m = random_matrix(&mut rng, rows, cols);
        let p = pca_95(&m).unwrap();
        let gram = p.components.transpose() * &p.components;
        let eye = DMatrix::<f64>::identity(p.component_count, p.component_count);
        assert!((gram - eye).abs().max() <= 1e-6);
        assert!(p.retained_variance_ratio >= 0.95 - 1e-12);
        let sum: f64 = p.explained_variance_ratio.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(p.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn rank_one_input_has_one_component() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let (rows, cols) = (rng.random_range(2..10), rng.random_range(2..10));
        let u: Vec<f32> = (0..rows).map(|i| i as f32 + rng.random_range(0.1f32..0.9)).collect();
        let v: Vec<f32> = (0..cols).map(|_| rng.random_range(0.5f32..2.0)).collect();
        let data = (0..rows * cols).map(|i| u[i / cols] * v[i % cols]).collect();
        let p = pca_95(&Matrix::new(rows, cols, data).unwrap()).unwrap();
        assert_eq!(p.component_count, 1);
    }
}

#[test]
fn constant_map_has_no_components_and_zero_norm() {
    let p = pca_95(&Matrix::new(3, 4, vec![2.5; 12]).unwrap()).unwrap();
    assert_eq!(p.component_count, 0);
    assert_eq!(frobenius_norm(&p.scores), 0.0);
    let z = pca_95(&Matrix::new(2, 2, vec![0.0; 4]).unwrap()).unwrap();
    assert_eq!(z.component_count, 0);
}

#[test]
fn pca_sign_convention_is_stable() {
    let m = Matrix::new(4, 2, vec![1., -2., 2., -4.1, 3., -6., 4., -8.2]).unwrap();
    let p = pca_95(&m).unwrap();
    let c = p.components.column(0);
    let pivot = if c[0].abs() >= c[1].abs() { c[0] } else { c[1] };
    assert!(pivot > 0.0);
}

#[test]
fn frobenius_forms_agree_with_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..150 {
        let (rows, cols) = (rng.random_range(1..9), rng.random_range(1..9));
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = DMatrix::from_row_slice(rows, cols, &data);
        let brute = frobenius_brute(rows, cols, &data);
        assert!(rel_close(frobenius_norm(&m), brute, 1e-6));
        assert!(rel_close(frobenius_norm_trace(&m), frobenius_trace_brute(rows, cols, &data), 1e-6));
        assert!(rel_close(frobenius_norm(&m), frobenius_norm_trace(&m), 1e-6));
    }
}

#[test]
fn frobenius_hand_examples() {
    assert_eq!(frobenius_norm(&DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 4.0])), 5.0);
    assert_eq!(frobenius_norm(&DMatrix::from_row_slice(1, 1, &[0.0])), 0.0);
}

#[test]
fn cv_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..150 {
        let n = rng.random_range(1..40);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        assert!(rel_close(coefficient_of_variation(&xs).unwrap(), cv_brute(&xs), 1e-6));
    }
    assert_eq!(coefficient_of_variation(&[5.0, 5.0, 5.0]).unwrap(), 0.0);
    assert_eq!(coefficient_of_variation(&[0.0, 0.0]).unwrap(), 0.0);
    assert!((coefficient_of_variation(&[1.0, 3.0]).unwrap() - 0.5).abs() < 1e-12);
    assert!(coefficient_of_variation(&[]).is_err());
    assert!(coefficient_of_variation(&[1.0, f64::NAN]).is_err());
    assert!(coefficient_of_variation(&[1.0, -1.0]).is_err());
}

#[test]
fn rpr_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..150 {
        let np_o = rng.random_range(1..10_000_000usize);
        let np_s = rng.random_range(0..=np_o);
        assert!(rel_close(rpr(np_o, np_s).unwrap(), rpr_brute(np_o, np_s), 1e-6));
    }
}

#[test]
fn selection_keeps_ceil_share() {
    let scores: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let r = select_filters(0, &scores, 40.0).unwrap();
    assert_eq!(r.kept(), vec![4, 5, 6, 7, 8, 9]);
    assert!((r.threshold - 0.4).abs() < 1e-12);
    assert_eq!(kept_count(10, 0.0), 10);
    assert_eq!(kept_count(16, 40.0), 10);
    assert_eq!(kept_count(3, 99.0), 1);
    assert!(select_filters(0, &scores, 100.0).is_err());
    assert!(select_filters(0, &scores, -1.0).is_err());
}

#[test]
fn ties_prefer_lower_index() {
    let r = select_filters(0, &[1.0, 1.0, 1.0, 1.0], 50.0).unwrap();
    assert_eq!(r.kept(), vec![0, 1]);
}

fn random_capture(rng: &mut ChaCha8Rng, filters: usize, images: usize) -> ActivationCapture {
    let per_filter = (0..filters)
        .map(|m| {
            let spread = 0.1 + m as f32 * 0.3;
            (0..images)
                .map(|_| {
                    let gain = rng.random_range(1.0 - spread.min(0.9)..1.0 + spread);
                    let data = (0..20).map(|_| rng.random_range(0.0f32..1.0) * gain).collect();
                    Matrix::new(4, 5, data).unwrap()
                })
                .collect()
        })
        .collect();
    ActivationCapture {
        layer_index: 0,
        per_filter,
    }
}

#[test]
fn score_layer_is_worker_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let cap = random_capture(&mut rng, 12, 9);
    let one = score_layer(&cap, 1).unwrap();
    for w in [2, 3, 8, 32] {
        assert_eq!(score_layer(&cap, w).unwrap(), one);
    }
}

#[test]
fn dead_filter_scores_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(28);
    let mut cap = random_capture(&mut rng, 3, 5);
    cap.per_filter[1] = (0..5).map(|_| Matrix::new(4, 5, vec![0.0; 20]).unwrap()).collect();
    let scores = score_layer(&cap, 2).unwrap();
    assert_eq!(scores[1], 0.0);
    assert!(scores[0] > 0.0 && scores[2] > 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn keep_mask_is_scale_invariant(seed in 0u64..10_000, scale in prop::sample::select(vec![0.5f32, 2.0, 3.7, 0.01, 100.0])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cap = random_capture(&mut rng, 8, 6);
        let scaled = ActivationCapture {
            layer_index: 0,
            per_filter: cap.per_filter.iter().map(|f| f.iter().map(|m| m.scaled(scale)).collect()).collect(),
        };
        let a = select_filters(0, &score_layer(&cap, 1).unwrap(), 40.0).unwrap();
        let b = select_filters(0, &score_layer(&scaled, 1).unwrap(), 40.0).unwrap();
        prop_assert_eq!(a.keep_mask, b.keep_mask);
    }

    #[test]
    fn kept_sets_are_nested(scores in prop::collection::vec(0.0f64..5.0, 1..40), k1 in 0.0f64..99.0, k2 in 0.0f64..99.0) {
        let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
        let a = select_filters(0, &scores, lo).unwrap();
        let b = select_filters(0, &scores, hi).unwrap();
        prop_assert!(b.kept().iter().all(|i| a.keep_mask[*i]));
        prop_assert_eq!(a.kept_count(), kept_count(scores.len(), lo));
        prop_assert!(b.kept().iter().all(|&i| scores[i] >= b.threshold));
        prop_assert!((0..scores.len()).filter(|i| !b.keep_mask[*i]).all(|i| scores[i] <= b.threshold));
    }
}
