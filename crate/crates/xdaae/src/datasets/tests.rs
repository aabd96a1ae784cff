use super::idx::*;
use super::preprocess::*;
use super::synth::*;
use super::*;
use crate::nets::IMAGE_PIXELS;
use std::io::Write;

fn fixture_images() -> IdxImages {
    let mut pixels = Vec::new();
    for i in 0..4u32 {
        for p in 0..28 * 28 {
            pixels.push(((i * 37 + p) % 256) as u8);
        }
    }
    IdxImages { n: 4, rows: 28, cols: 28, pixels }
}

#[test]
fn idx_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let img = fixture_images();
    let ipath = dir.path().join("imgs.idx");
    write_idx_images(&ipath, &img).unwrap();
    let back = load_idx_images(&ipath).unwrap();
    assert_eq!(img, back);
    assert_eq!(back.n, 4);
    assert_eq!((back.rows, back.cols), (28, 28));

    let labels = IdxLabels { labels: vec![0, 3, 9, 1] };
    let lpath = dir.path().join("labels.idx");
    write_idx_labels(&lpath, &labels).unwrap();
    assert_eq!(load_idx_labels(&lpath).unwrap(), labels);

    // raw byte round trip too
    let raw1 = std::fs::read(&ipath).unwrap();
    write_idx_images(&ipath, &back).unwrap();
    let raw2 = std::fs::read(&ipath).unwrap();
    assert_eq!(raw1, raw2);
}

#[test]
fn idx_truncated_payload_names_lengths() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trunc.idx");
    let img = fixture_images();
    write_idx_images(&path, &img).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::File::create(&path).unwrap().write_all(&bytes[..bytes.len() - 100]).unwrap();
    let err = load_idx_images(&path).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("expected 3136") && msg.contains("got 3036"), "{msg}");
    assert!(msg.contains("byte 16"), "{msg}");
}

#[test]
fn idx_bad_magic_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.idx");
    std::fs::write(&path, [0u8, 0, 8, 2, 0, 0, 0, 1]).unwrap();
    let err = load_idx_images(&path).unwrap_err();
    assert!(err.to_string().contains("bad magic"), "{err}");
}

#[test]
fn out_of_range_label_fails_downstream() {
    // a labels file may hold any byte; the range check fires when the labels
    // meet a K-class consumer
    let set = DomainSet::new(vec![0.0; 2 * IMAGE_PIXELS], 2, vec![0, 10], Domain::A).unwrap();
    let err = semisup_split(&set, 1, 10, 0).unwrap_err();
    assert!(err.to_string().contains("label 10 out of range"), "{err}");
}

#[test]
fn preprocess_zero_image_is_minus_one_with_identical_channels() {
    let raw = IdxImages { n: 2, rows: 28, cols: 28, pixels: vec![0; 2 * 28 * 28] };
    let out = preprocess(&raw, Rule::Mnist).unwrap();
    assert_eq!(out.len(), 2 * IMAGE_PIXELS);
    assert!(out.iter().all(|v| *v == -1.0));

    let raw = IdxImages { n: 1, rows: 28, cols: 28, pixels: (0..28 * 28).map(|v| (v % 251) as u8).collect() };
    let out = preprocess(&raw, Rule::Mnist).unwrap();
    let plane = 32 * 32;
    assert_eq!(out[..plane], out[plane..2 * plane]);
    assert_eq!(out[..plane], out[2 * plane..3 * plane]);
    assert!(out.iter().all(|v| *v >= -1.0 && *v <= 1.0));
}

#[test]
fn usps_rule_pads_then_resizes() {
    let raw = IdxImages { n: 1, rows: 16, cols: 16, pixels: vec![255; 256] };
    let out = preprocess(&raw, Rule::Usps).unwrap();
    let side = 32;
    // 3 dark padding pixels pre-resize become a dark band of about 4 pixels;
    // corners stay at the zero-pad value, the middle stays bright.
    let at = |y: usize, x: usize| out[y * side + x];
    assert!(at(0, 0) < -0.9, "corner {}", at(0, 0));
    assert!(at(1, 16) < -0.5, "border band {}", at(1, 16));
    assert!(at(16, 16) > 0.9, "center {}", at(16, 16));
    assert!(at(16, 1) < -0.5);

    let bad = IdxImages { n: 1, rows: 20, cols: 20, pixels: vec![0; 400] };
    assert!(preprocess(&bad, Rule::Usps).is_err());
}

#[test]
fn passthrough_requires_native_geometry() {
    let ok = IdxImages { n: 1, rows: 32, cols: 32, pixels: vec![128; 1024] };
    let out = preprocess(&ok, Rule::Passthrough).unwrap();
    assert!(out.iter().all(|v| (*v - (128.0 / 127.5 - 1.0)).abs() < 1e-6));
    let bad = IdxImages { n: 1, rows: 28, cols: 28, pixels: vec![0; 784] };
    assert!(preprocess(&bad, Rule::Passthrough).is_err());
}

#[test]
fn domain_batch_validates_range_and_labels() {
    assert!(DomainBatch::new(vec![0.0; IMAGE_PIXELS], 1, None, Domain::A).is_ok());
    assert!(DomainBatch::new(vec![1.5; IMAGE_PIXELS], 1, None, Domain::A).is_err());
    assert!(DomainBatch::new(vec![0.0; IMAGE_PIXELS], 1, Some(vec![1, 2]), Domain::A).is_err());
}

fn tiny_pair() -> DatasetPair {
    synth_pair(&SynthSpec { k: 4, n_train_per_class: 12, n_test_per_class: 4, seed: 5 }).unwrap()
}

#[test]
fn semisup_split_counts_and_determinism() {
    let pair = tiny_pair();
    let s1 = semisup_split(&pair.train_a, 5, 4, 42).unwrap();
    let s2 = semisup_split(&pair.train_a, 5, 4, 42).unwrap();
    assert_eq!(s1.labeled_idx, s2.labeled_idx);
    assert_eq!(s1.labeled.n, 5 * 4);
    assert_eq!(s1.unlabeled.n, pair.train_a.n - 20);
    assert!(!s1.unlabeled.is_labeled());
    // per-class exactness
    for c in 0..4u8 {
        assert_eq!(s1.labeled.labels.iter().filter(|l| **l == c).count(), 5);
    }
    // union restores the original index set, intersection is empty
    let mut all: Vec<usize> = s1.labeled_idx.iter().chain(&s1.unlabeled_idx).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..pair.train_a.n).collect::<Vec<_>>());

    let s3 = semisup_split(&pair.train_a, 5, 4, 43).unwrap();
    assert_ne!(s1.labeled_idx, s3.labeled_idx);

    // per-class = 0 gives an empty labeled set
    let s0 = semisup_split(&pair.train_a, 0, 4, 0).unwrap();
    assert_eq!(s0.labeled.n, 0);
    assert_eq!(s0.unlabeled.n, pair.train_a.n);

    // 100 per class, K=10, two domains: 2000 labeled in total
    let big = synth_pair(&SynthSpec { k: 10, n_train_per_class: 110, n_test_per_class: 1, seed: 0 }).unwrap();
    let la = semisup_split(&big.train_a, 100, 10, 1).unwrap();
    let lb = semisup_split(&big.train_b, 100, 10, 2).unwrap();
    assert_eq!(la.labeled.n + lb.labeled.n, 2000);
}

#[test]
fn synth_pair_is_deterministic_with_exact_counts() {
    let spec = SynthSpec { k: 5, n_train_per_class: 7, n_test_per_class: 3, seed: 9 };
    let p1 = synth_pair(&spec).unwrap();
    let p2 = synth_pair(&spec).unwrap();
    assert_eq!(p1.train_a.images, p2.train_a.images);
    assert_eq!(p1.test_b.images, p2.test_b.images);
    assert_eq!(p1.train_a.n, 35);
    assert_eq!(p1.test_a.n, 15);
    for c in 0..5u8 {
        assert_eq!(p1.train_b.labels.iter().filter(|l| **l == c).count(), 7);
    }
    assert!(synth_pair(&SynthSpec { k: 5, n_train_per_class: 0, n_test_per_class: 1, seed: 0 }).is_err());
    assert!(synth_pair(&SynthSpec { k: 1, n_train_per_class: 5, n_test_per_class: 1, seed: 0 }).is_err());
}

#[test]
fn synth_domains_are_trivially_separable() {
    let pair = tiny_pair();
    assert!(domain_separability(&pair) >= 0.99);
}

#[test]
fn synth_b_is_never_a_pixel_copy_of_a() {
    let pair = tiny_pair();
    for i in 0..pair.train_b.n {
        for j in 0..pair.train_a.n {
            assert_ne!(pair.train_b.image(i), pair.train_a.image(j));
        }
    }
}

#[test]
fn synth_values_cover_the_legal_range_only() {
    let pair = tiny_pair();
    for set in [&pair.train_a, &pair.train_b, &pair.test_a, &pair.test_b] {
        assert!(set.images.iter().all(|v| *v >= -1.0 && *v <= 1.0));
    }
}

#[test]
fn synth_idx_export_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let pair = tiny_pair();
    let idx = to_idx(&pair.test_a);
    let path = dir.path().join("synth.idx");
    write_idx_images(&path, &idx).unwrap();
    assert_eq!(load_idx_images(&path).unwrap(), idx);
}
