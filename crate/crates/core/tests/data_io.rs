use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aio_stereo::config::DataConfig;
use aio_stereo::data::pfm::{decode_pfm, encode_pfm};
use aio_stereo::data::{build_dataset, gen_rds, scene_for, DatasetManifest, Gray8, SceneSpec, Split};
use aio_stereo::{Error, StereoSample, Tensor};

/// Counts valid pixels and those violating `right(x - gt(x)) == left(x)`.
fn stereo_violations(s: &StereoSample) -> (usize, usize) {
    let (h, w) = (s.height(), s.width());
    let gt = s.gt().unwrap();
    let valid = s.valid.as_ref().unwrap();
    let (mut n, mut bad) = (0, 0);
    for y in 0..h {
        for x in 0..w {
            if valid.at(&[y, x]) == 0.0 {
                continue;
            }
            n += 1;
            let d = gt.at(&[y, x]);
            let xr = x as f32 - d;
            if xr < 0.0 || xr.fract() != 0.0 || s.right.at(&[0, y, xr as usize]) != s.left.at(&[0, y, x]) {
                bad += 1;
            }
        }
    }
    (n, bad)
}

#[test]
fn generated_samples_satisfy_the_stereo_constraint_everywhere_valid() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    for i in 0..100u64 {
        let cfg = DataConfig {
            height: 4 * r.gen_range(4..=12),
            width: 4 * r.gen_range(8..=24),
            d_max: r.gen_range(1..=12),
            density: r.gen_range(0.05..=1.0),
            max_layers: r.gen_range(1..=4),
            ..DataConfig::default()
        };
        let s = gen_rds(&SceneSpec::random(1000 + i, &cfg), format!("p{i}")).unwrap();
        let (n, bad) = stereo_violations(&s);
        assert!(n > 0);
        assert_eq!(bad, 0, "scene {i}: {bad} of {n} valid pixels violate the constraint");
        let gt = s.gt().unwrap();
        assert!(gt.data().iter().all(|&d| d >= 0.0 && d <= cfg.d_max as f32));
    }
}

#[test]
fn stereo_constraint_survives_the_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        dir: dir.path().to_path_buf(),
        n_train: 6,
        n_val: 3,
        ..DataConfig::default()
    };
    let (train, val) = build_dataset(&cfg).unwrap();
    assert_eq!((train.len(), val.len()), (6, 3));
    for m in [&train, &val] {
        for s in m.load_all().unwrap() {
            assert_eq!(s.left.shape(), &[3, 48, 96]);
            assert_eq!(stereo_violations(&s).1, 0);
        }
    }
    let reloaded = DatasetManifest::load(dir.path().join("val.json")).unwrap();
    assert_eq!(reloaded.items, val.items);
    let (id, spec) = scene_for(&cfg, Split::Val, 2);
    assert_eq!(reloaded.load_sample(2).unwrap().gt_disparity, gen_rds(&spec, id).unwrap().gt_disparity);
}

#[test]
fn dataset_generation_is_deterministic_and_splits_differ() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mk = |p: &std::path::Path| DataConfig {
        dir: p.to_path_buf(),
        n_train: 3,
        n_val: 3,
        ..DataConfig::default()
    };
    build_dataset(&mk(a.path())).unwrap();
    build_dataset(&mk(b.path())).unwrap();
    for f in ["train/train_0001_left.pgm", "val/val_0002_gt.pfm", "train.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
    assert_ne!(
        std::fs::read(a.path().join("train/train_0000_left.pgm")).unwrap(),
        std::fs::read(a.path().join("val/val_0000_left.pgm")).unwrap()
    );
}

#[test]
fn invalid_density_fails_before_touching_disk() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("never");
    let cfg = DataConfig {
        dir: root.clone(),
        density: 0.0,
        ..DataConfig::default()
    };
    assert!(matches!(build_dataset(&cfg), Err(Error::Config(_))));
    assert!(!root.exists());
}

#[test]
fn manifest_with_missing_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DataConfig {
        dir: dir.path().to_path_buf(),
        n_train: 2,
        n_val: 1,
        ..DataConfig::default()
    };
    build_dataset(&cfg).unwrap();
    std::fs::remove_file(dir.path().join("train/train_0001_right.pgm")).unwrap();
    assert!(matches!(DatasetManifest::load(dir.path().join("train.json")), Err(Error::Io { .. })));
}

const EDGE_VALUES: [f32; 9] = [
    0.0,
    -0.0,
    f32::MIN_POSITIVE,
    1e-45,
    f32::MAX,
    f32::MIN,
    -1e-45,
    f32::EPSILON,
    65504.0,
];

#[test]
fn pfm_round_trip_is_bit_exact_on_random_maps() {
    let mut r = ChaCha8Rng::seed_from_u64(77);
    for i in 0..100 {
        let (h, w) = (r.gen_range(1..20), r.gen_range(1..20));
        let mut t = Tensor::from_fn(&[h, w], |_| f32::from_bits(r.gen::<u32>() & 0x7f7f_ffff) * if r.gen() { 1.0 } else { -1.0 });
        for (k, &e) in EDGE_VALUES.iter().enumerate() {
            let n = t.numel();
            t.data_mut()[(k * 7 + i) % n] = e;
        }
        let back = decode_pfm(&encode_pfm(&t).unwrap()).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t), "map {i}");
    }
}

#[test]
fn pfm_rejects_non_finite_values() {
    for bad in [f32::NAN, f32::INFINITY, f32::NEG_INFINITY] {
        let t = Tensor::new(&[1, 2], vec![1.0, bad]).unwrap();
        assert!(matches!(encode_pfm(&t), Err(Error::Contract(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pgm_round_trip(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let g = Gray8 { width: w, height: h, data: (0..h * w).map(|_| r.gen()).collect() };
        prop_assert_eq!(Gray8::decode(&g.encode()).unwrap(), g);
    }

    #[test]
    fn pfm_round_trip_any_finite_bits(h in 1usize..6, w in 1usize..6, words in prop::collection::vec(any::<u32>(), 36)) {
        let vals: Vec<f32> = words[..h * w].iter().map(|&b| f32::from_bits(b)).map(|v| if v.is_finite() { v } else { 0.0 }).collect();
        let t = Tensor::new(&[h, w], vals).unwrap();
        let back = decode_pfm(&encode_pfm(&t).unwrap()).unwrap();
        let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back), bits(&t));
    }
}
