use std::fs;
use std::path::Path;

use ageres::dataset::synth::{generate_corpus, synth_filename, SynthConfig};
use ageres::dataset::*;

/// Empty files carrying only labelled names; indexing never opens them.
fn touch_corpus(dir: &Path, n: usize) {
    for i in 0..n {
        fs::write(dir.join(synth_filename((i % 117) as u32, (i % 2) as u8, (i % 5) as u8, i)), b"").unwrap();
    }
}

#[test]
fn full_corpus_split_counts() {
    let dir = tempfile::tempdir().unwrap();
    touch_corpus(dir.path(), REFERENCE_CORPUS);
    let index = DatasetIndex::scan(dir.path(), 42).unwrap();
    assert_eq!(index.records.len(), 23705);
    assert_eq!((index.train_ids.len(), index.test_ids.len()), (16593, 7112));
    assert!(disjoint(&index.train_ids, &index.test_ids));
    let again = DatasetIndex::scan(dir.path(), 42).unwrap();
    assert_eq!(again.train_ids, index.train_ids);
}

#[test]
fn malformed_names_are_skipped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    touch_corpus(dir.path(), 97);
    for bad in ["abc_1_2_x.jpg", "200_0_0_1.jpg", "12_1.jpg"] {
        fs::write(dir.path().join(bad), b"").unwrap();
    }
    let index = DatasetIndex::scan(dir.path(), 1).unwrap();
    assert_eq!(index.records.len(), 97);
    assert_eq!(index.skipped.len(), 3);
    assert_eq!(index.summary(), "total=97 train=68 test=29 skipped=3");
}

#[test]
fn empty_or_missing_directories_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(DatasetIndex::scan(dir.path(), 0), Err(ageres::Error::Config(_))));
    assert!(DatasetIndex::scan(&dir.path().join("nope"), 0).is_err());
}

#[test]
fn manifest_round_trip_and_stability() {
    let dir = tempfile::tempdir().unwrap();
    touch_corpus(dir.path(), 40);
    let index = DatasetIndex::scan(dir.path(), 9).unwrap();
    let m = dir.path().join("m.tsv");
    index.write_manifest(&m).unwrap();
    let bytes = fs::read(&m).unwrap();
    DatasetIndex::scan(dir.path(), 9).unwrap().write_manifest(&m).unwrap();
    assert_eq!(fs::read(&m).unwrap(), bytes);
    let back = DatasetIndex::read_manifest(&m).unwrap();
    assert_eq!(back.records, index.records);
    assert_eq!(back.train_ids, index.train_ids);
    assert_eq!(back.test_ids, index.test_ids);
    let first = String::from_utf8(bytes).unwrap();
    let cols: Vec<&str> = first.lines().next().unwrap().split('\t').collect();
    assert_eq!(cols.len(), 3);
    assert!(cols[2] == "train" || cols[2] == "test");
}

#[test]
fn synthetic_samples_respect_ranges_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    generate_corpus(dir.path(), SynthConfig { count: 30, size: 24, seed: 3 }).unwrap();
    // one undecodable file with a valid name, one bad name
    fs::write(dir.path().join("33_0_0_20170101.png"), b"not a png").unwrap();
    fs::write(dir.path().join("readme.txt"), b"x").unwrap();
    let files = fs::read_dir(dir.path()).unwrap().count();
    let index = DatasetIndex::scan(dir.path(), 0).unwrap();
    let data = Dataset::load(&index, (32, 32));
    let skipped = index.skipped.len() + (index.records.len() - data.loaded());
    assert_eq!(skipped + data.loaded(), files);
    assert_eq!(data.loaded(), 30);
    for id in 0..index.records.len() {
        let Some(s) = data.get(id) else { continue };
        assert_eq!(s.image.shape(), [3, 32, 32]);
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(s.age <= MAX_AGE);
        assert_eq!(s.age, index.records[id].age);
    }
    let ids = data.available(&index.train_ids);
    let (images, ages) = data.batch(&ids[..4]).unwrap();
    assert_eq!(images.shape(), [4, 3, 32, 32]);
    assert_eq!(ages.shape(), [4, 1]);
}

#[test]
fn decoded_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let white = dir.path().join("10_0_0_1.png");
    image::RgbImage::from_pixel(5, 3, image::Rgb([255, 255, 255])).save(&white).unwrap();
    let s = load_and_normalize(&white, (3, 5)).unwrap();
    assert!(s.image.data().iter().all(|&v| v == 1.0));
    assert_eq!(s.age, 10);
    let black = dir.path().join("11_0_0_1.png");
    image::RgbImage::new(4, 4).save(&black).unwrap();
    let s = load_and_normalize(&black, (2, 2)).unwrap();
    assert!(s.image.data().iter().all(|&v| v == 0.0));
}

#[test]
fn channel_order_is_rgb() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("1_0_0_1.png");
    image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 51])).save(&p).unwrap();
    let s = load_and_normalize(&p, (2, 2)).unwrap();
    assert_eq!(&s.image.data()[0..4], &[1.0; 4]);
    assert_eq!(&s.image.data()[4..8], &[0.0; 4]);
    assert!((s.image.data()[8] - 0.2).abs() < 1e-7);
}

#[test]
fn batches_are_deterministic_partitions() {
    let ids: Vec<usize> = (0..70).collect();
    for epoch in 0..3 {
        let a = batches(&ids, 32, 5, epoch);
        assert_eq!(a, batches(&ids, 32, 5, epoch));
        assert_eq!(a.iter().map(Vec::len).collect::<Vec<_>>(), vec![32, 32, 6]);
        let mut all = a.concat();
        all.sort_unstable();
        assert_eq!(all, ids);
    }
}
