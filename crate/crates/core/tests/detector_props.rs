mod common;

use common::*;
use mmod::dataset::{load_dataset, save_dataset};
use mmod::detector::{detect, greedy_detect, Model, ScanOptions};
use mmod::features::{FeatureMapConfig, GrayImage};
use mmod::geom::{LossWeights, OverlapRule, Rect};
use mmod::loss_aug::loss_augmented_select;
use mmod::persistence::{load_model, save_model};
use mmod::synthetic::{square_corpus, SquaresConfig};
use proptest::prelude::*;

fn rect() -> impl Strategy<Value = Rect> {
    (0i64..20, 0i64..20, 1i64..14, 1i64..14).prop_map(|(l, t, w, h)| Rect::new(l, t, w, h))
}

fn scored() -> impl Strategy<Value = Vec<(Rect, f64)>> {
    prop::collection::vec((rect(), -3.0f64..3.0), 0..12)
}

proptest! {
    #[test]
    fn greedy_output_is_valid_and_positive(cands in scored()) {
        let out = greedy_detect(&cands, 0.0, &OverlapRule::default());
        let rects: Vec<Rect> = out.iter().map(|p| p.0).collect();
        prop_assert!(is_valid_labeling(&rects, 0.5));
        prop_assert!(out.iter().all(|p| p.1 > 0.0));
        prop_assert!(out.windows(2).all(|p| p[0].1 >= p[1].1));
        // Every positive candidate left out overlaps a kept one.
        for (r, s) in &cands {
            if *s > 0.0 && !rects.contains(r) {
                prop_assert!(rects.iter().any(|k| iou(k, r) >= 0.5));
            }
        }
    }

    #[test]
    fn greedy_ignores_input_order(mut cands in scored()) {
        // Distinct scores make the ranking unique.
        for (i, c) in cands.iter_mut().enumerate() {
            c.1 += i as f64 * 1e-6;
        }
        let rule = OverlapRule::default();
        let a = greedy_detect(&cands, 0.0, &rule);
        cands.reverse();
        prop_assert_eq!(a, greedy_detect(&cands, 0.0, &rule));
    }

    #[test]
    fn loss_augmented_output_is_a_labeling(cands in scored(), truth in prop::collection::vec(rect(), 0..3)) {
        let rule = OverlapRule::default();
        prop_assume!(is_valid_labeling(&truth, 0.5));
        let lw = LossWeights::default();
        let mut ranked: Vec<(Rect, f64)> = cands.into_iter().filter(|c| c.1 > -lw.l_fa).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        let sel = loss_augmented_select(&ranked, &truth, &lw, &rule);
        let rects: Vec<Rect> = sel.iter().map(|&i| ranked[i].0).collect();
        prop_assert!(is_valid_labeling(&rects, 0.5));
        prop_assert!(sel.windows(2).all(|p| p[0] < p[1]));
    }
}

#[test]
fn detections_survive_save_and_load() {
    let data = square_corpus(&SquaresConfig::default(), 2, 9);
    let cfg = FeatureMapConfig::hog_filter(40, 40, 10);
    let w: Vec<f64> = (0..cfg.dim())
        .map(|i| ((i * 7919) % 101) as f64 / 100.0 - 0.5)
        .collect();
    let model = Model::new(cfg, w).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.mmod");
    save_model(&model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let opts = ScanOptions::default();
    for li in &data {
        let a = detect(&li.image, &model, -0.5, &opts).unwrap();
        let b = detect(&li.image, &loaded, -0.5, &opts).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b);
    }
}

#[test]
fn blank_image_at_infinite_threshold_detects_nothing() {
    let cfg = FeatureMapConfig::hog_filter(20, 20, 10);
    let model = Model::new(cfg.clone(), vec![1.0; cfg.dim()]).unwrap();
    let img = GrayImage::filled(64, 48, 0.0);
    assert!(detect(&img, &model, f64::INFINITY, &ScanOptions::default())
        .unwrap()
        .is_empty());
}

#[test]
fn dataset_files_round_trip() {
    let data = square_corpus(&SquaresConfig::default(), 3, 4);
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("set").join("manifest.jsonl");
    std::fs::create_dir_all(manifest.parent().unwrap()).unwrap();
    save_dataset(&data, &manifest).unwrap();
    let back = load_dataset(&manifest, &OverlapRule::default()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.truth.rects(), b.truth.rects());
        assert_eq!(a.image.width(), b.image.width());
        // PNG stores 8-bit luma.
        for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
            assert!((p.clamp(0.0, 255.0).round() - q).abs() < 1e-9);
        }
    }
}
