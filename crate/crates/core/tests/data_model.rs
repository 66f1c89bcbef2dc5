use std::collections::{HashMap, HashSet};
use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use targan::data_model::{
    generate_phantom_dataset, load_dataset, read_image_png, sample_training_batch, write_image_png, DatasetManifest,
    ImageTensor, PhantomSpec, Split,
};
use targan::Error;

fn small_spec() -> PhantomSpec {
    PhantomSpec { resolution: 16, n_anatomies: 10, ..PhantomSpec::default() }
}

#[test]
fn counts_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom_dataset(&small_spec(), 4, dir.path()).unwrap();
    assert_eq!(manifest.samples.len(), 30);
    let ds = load_dataset(&manifest.path()).unwrap();
    for m in 0..3 {
        assert_eq!(ds.samples.iter().filter(|s| s.modality.id == m).count(), 10);
    }
    let first = &manifest.samples[0];
    let from_disk = read_image_png(&dir.path().join(&first.image)).unwrap();
    assert_eq!(ds.samples[0].x, from_disk);
    let rewritten = dir.path().join("copy.png");
    write_image_png(&rewritten, &from_disk).unwrap();
    assert_eq!(read_image_png(&rewritten).unwrap(), from_disk);
}

#[test]
fn generation_is_bitwise_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_phantom_dataset(&small_spec(), 9, a.path()).unwrap();
    generate_phantom_dataset(&small_spec(), 9, b.path()).unwrap();
    for rec in &ma.samples {
        for rel in [&rec.image, &rec.mask] {
            assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel}");
        }
    }
    assert_eq!(fs::read(ma.path()).unwrap(), fs::read(b.path().join("manifest.json")).unwrap());
}

#[test]
fn splits_partition_and_masks_are_shared() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom_dataset(&small_spec(), 2, dir.path()).unwrap();
    let ds = load_dataset(&manifest.path()).unwrap();
    let train: HashSet<usize> = ds.train_indices().iter().copied().collect();
    let test: HashSet<usize> = ds.test_indices().iter().copied().collect();
    assert!(train.is_disjoint(&test));
    assert_eq!(train.len() + test.len(), ds.samples.len());
    let mut split_of_id: HashMap<&str, Split> = HashMap::new();
    for s in &ds.samples {
        assert_eq!(*split_of_id.entry(&s.id).or_insert(s.split), s.split, "anatomy split across train and test");
        for m in 0..3 {
            assert_eq!(ds.counterpart(&s.id, m).unwrap().y, s.y);
        }
    }
}

#[test]
fn missing_image_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom_dataset(&small_spec(), 1, dir.path()).unwrap();
    let victim = dir.path().join(&manifest.samples[3].image);
    fs::remove_file(&victim).unwrap();
    match load_dataset(&manifest.path()) {
        Err(Error::MissingFile(p)) => assert_eq!(p, victim),
        other => panic!("expected a missing-file error, got {other:?}"),
    }
    assert!(matches!(DatasetManifest::read(&dir.path().join("nope.json")), Err(Error::MissingFile(_))));
}

#[test]
fn corrupt_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom_dataset(&small_spec(), 1, dir.path()).unwrap();
    fs::write(dir.path().join(&manifest.samples[0].mask), b"not a png").unwrap();
    assert!(matches!(load_dataset(&manifest.path()), Err(Error::CorruptImage { .. })));
}

#[test]
fn sampler_is_uniform_over_targets_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_phantom_dataset(&small_spec(), 5, dir.path()).unwrap();
    let ds = load_dataset(&manifest.path()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = [0usize; 3];
    for _ in 0..2500 {
        let b = sample_training_batch(&ds, 4, &mut rng);
        assert_eq!(b.len(), 4);
        assert_eq!(b.x_s.shape(), [4, 1, 16, 16]);
        for item in &b.items {
            assert!(ds.train_indices().contains(&item.sample));
            assert_eq!(ds.samples[item.sample].modality.id, item.source);
            counts[item.target] += 1;
        }
    }
    for c in counts {
        assert!((c as f64 / 10_000.0 - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
    }
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..5).map(|_| sample_training_batch(&ds, 4, &mut rng).items).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn png_round_trip_is_exact_on_the_16_bit_grid(codes in proptest::collection::vec(0u16..=u16::MAX, 16)) {
        let values: Vec<f64> = codes.iter().map(|&c| f64::from(c) / 65535.0 * 2.0 - 1.0).collect();
        let img = ImageTensor::new(4, 4, values).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        write_image_png(&path, &img).unwrap();
        prop_assert_eq!(read_image_png(&path).unwrap(), img);
    }
}
