use proptest::prelude::*;
use speckle_cs::dataset::{
    encode_idx_images, encode_idx_labels, load_split, mean_sparsity, parse_idx_images, parse_idx_labels,
    pick_one_per_class, write_idx_images, write_idx_labels, LabeledSample, Split, TEST_IMAGES, TEST_LABELS,
};
use speckle_cs::image::GrayImage;
use speckle_cs::Error;

fn idx3(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for v in [count, rows, cols] {
        out.extend(v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn labeled(labels: &[u8]) -> Vec<LabeledSample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| LabeledSample::new(GrayImage::new(2, 1, vec![i as f64 / 255.0, 0.0]).unwrap(), l).unwrap())
        .collect()
}

#[test]
fn handwritten_idx_file_decodes() {
    let bytes = idx3(2, 2, 3, &[0, 255, 51, 102, 0, 0, 255, 255, 255, 0, 0, 1]);
    let images = parse_idx_images(&bytes).unwrap();
    assert_eq!(images.len(), 2);
    assert_eq!((images[0].width(), images[0].height()), (3, 2));
    assert_eq!(images[0].pixels(), &[0.0, 1.0, 0.2, 0.4, 0.0, 0.0]);
    assert_eq!(images[1].get(1, 2), 1.0 / 255.0);
    assert_eq!(encode_idx_images(&images).unwrap(), bytes);
}

#[test]
fn malformed_idx_files_are_rejected() {
    let good = idx3(1, 2, 2, &[1, 2, 3, 4]);
    assert!(matches!(parse_idx_images(&good[..good.len() - 1]), Err(Error::Truncated { .. })));
    let mut magic = good.clone();
    magic[3] = 1;
    assert!(matches!(parse_idx_images(&magic), Err(Error::BadMagic { .. })));
    assert!(parse_idx_labels(&good).is_err());
    assert!(parse_idx_labels(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]).is_err());
}

#[test]
fn split_directory_loads() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<GrayImage> = (0..20).map(|i| GrayImage::new(4, 4, vec![(i % 3) as f64 / 2.0; 16]).unwrap()).collect();
    let labels: Vec<u8> = (0..20).map(|i| (i % 10) as u8).collect();
    write_idx_images(&dir.path().join(TEST_IMAGES), &images).unwrap();
    write_idx_labels(&dir.path().join(TEST_LABELS), &labels).unwrap();
    let samples = load_split(dir.path(), Split::Test).unwrap();
    assert_eq!(samples.len(), 20);
    assert_eq!(samples[13].label, 3);
    assert_eq!(samples[13].image, GrayImage::new(4, 4, vec![0.5; 16]).unwrap().map(|v| (v * 255.0).round() / 255.0));
    assert!(load_split(dir.path(), Split::Train).is_err());

    write_idx_labels(&dir.path().join(TEST_LABELS), &labels[..19]).unwrap();
    assert!(load_split(dir.path(), Split::Test).is_err());
}

#[test]
fn one_sample_per_class() {
    let labels: Vec<u8> = (0..200).map(|i| ((i * 7) % 10) as u8).collect();
    let samples = labeled(&labels);
    let picks = pick_one_per_class(&samples, 4).unwrap();
    assert_eq!(picks.len(), 10);
    for (class, pick) in picks.iter().enumerate() {
        assert_eq!(usize::from(pick.label), class);
        assert!(samples.contains(pick));
    }
    assert_eq!(picks, pick_one_per_class(&samples, 4).unwrap());
    let others: Vec<_> = (5..15).map(|s| pick_one_per_class(&samples, s).unwrap()).collect();
    assert!(others.iter().any(|p| *p != picks));
}

#[test]
fn missing_class_is_reported() {
    let samples = labeled(&[0, 1, 2, 3, 4, 5, 6, 8, 9, 0]);
    assert!(matches!(pick_one_per_class(&samples, 0), Err(Error::MissingClass(7))));
    assert!(LabeledSample::new(GrayImage::zeros(1, 1), 10).is_err());
}

#[test]
fn sparsity_counts_bright_pixels() {
    let a = GrayImage::new(2, 2, vec![0.0, 0.5, 1.0, 0.1]).unwrap();
    let b = GrayImage::new(2, 2, vec![0.0; 4]).unwrap();
    assert_eq!(mean_sparsity(&[a.clone(), b], 0.1).unwrap(), 0.25);
    assert_eq!(mean_sparsity(&[a], 0.0).unwrap(), 0.75);
    assert!(mean_sparsity(&[], 0.1).is_err());
}

proptest! {
    #[test]
    fn idx_bytes_round_trip(count in 1usize..5, rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let pixels: Vec<u8> = (0..count * rows * cols).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
        let bytes = idx3(count as u32, rows as u32, cols as u32, &pixels);
        let images = parse_idx_images(&bytes).unwrap();
        prop_assert_eq!(encode_idx_images(&images).unwrap(), bytes);
    }

    #[test]
    fn label_bytes_round_trip(labels in prop::collection::vec(0u8..10, 0..50)) {
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }
}
