use std::io::Cursor;

use msbprune::error::DataError;
use msbprune::io::{
    dataset_stats, load_idx_images, load_idx_labels, read_csv, write_csv, MnistSet, ReportRow,
    Split, TensorData, WeightContainer, WeightRecord,
};

fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for word in [0x0803, n, rows, cols] {
        v.extend_from_slice(&u32::to_be_bytes(word));
    }
    v.extend_from_slice(pixels);
    v
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut v = Vec::new();
    for word in [0x0801, labels.len() as u32] {
        v.extend_from_slice(&u32::to_be_bytes(word));
    }
    v.extend_from_slice(labels);
    v
}

#[test]
fn idx_files_on_disk_load_as_a_set() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..3 * 784).map(|i| (i % 251) as u8).collect();
    std::fs::write(
        dir.path().join("t10k-images-idx3-ubyte"),
        idx_images(3, 28, 28, &pixels),
    )
    .unwrap();
    std::fs::write(
        dir.path().join("t10k-labels-idx1-ubyte"),
        idx_labels(&[7, 2, 1]),
    )
    .unwrap();

    let set = MnistSet::load(dir.path(), Split::Test).unwrap();
    assert_eq!(set.len(), 3);
    assert_eq!(set.labels, vec![7, 2, 1]);
    assert_eq!(set.image(1), &pixels[784..1568]);
    assert!(MnistSet::load(dir.path(), Split::Train).is_err());
}

#[test]
fn idx_header_errors() {
    let mut bad = idx_images(1, 2, 2, &[0; 4]);
    bad[3] = 0x01;
    assert!(matches!(
        load_idx_images(Cursor::new(bad)),
        Err(DataError::BadMagic { found: 0x0801, .. })
    ));
    let short = idx_images(2, 2, 2, &[0; 5]);
    assert!(matches!(
        load_idx_images(Cursor::new(short)),
        Err(DataError::Truncated { .. })
    ));
    assert!(matches!(
        load_idx_labels(Cursor::new(idx_labels(&[3, 10]))),
        Err(DataError::LabelOutOfRange { .. })
    ));
    let images = load_idx_images(Cursor::new(idx_images(2, 1, 1, &[0, 0]))).unwrap();
    assert!(matches!(
        MnistSet::new(images, vec![1]),
        Err(DataError::CountMismatch { .. })
    ));
}

#[test]
fn weight_container_file_round_trip() {
    let mut c = WeightContainer::new();
    c.push(WeightRecord::int32(
        "c1.weight",
        &[2, 1, 1, 2],
        vec![1, -2, i32::MAX, i32::MIN],
    ))
    .unwrap();
    c.push(WeightRecord::float32("c1.bias", &[2], vec![0.5, -0.0]))
        .unwrap();
    c.push(WeightRecord::int32("scalar", &[], vec![9])).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.lnw");
    c.save(&path).unwrap();
    let back = WeightContainer::load(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(
        back.require("c1.bias").unwrap().data,
        TensorData::Float32(vec![0.5, -0.0])
    );

    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"LNW1");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 3);

    let mut corrupt = bytes.clone();
    corrupt[0] = b'X';
    assert!(matches!(
        WeightContainer::from_bytes(&corrupt),
        Err(DataError::BadContainerMagic(_))
    ));
    assert!(WeightContainer::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(matches!(
        c.push(WeightRecord::int32("scalar", &[1], vec![1])),
        Err(DataError::DuplicateName(_))
    ));
    assert!(matches!(
        back.require("missing"),
        Err(DataError::MissingRecord(_))
    ));
}

#[test]
fn stats_against_direct_computation() {
    let pixels: Vec<u8> = (0..50 * 784)
        .map(|i| {
            if (i * 7919) % 5 < 4 {
                0
            } else {
                (i % 256) as u8
            }
        })
        .collect();
    let s = dataset_stats(&pixels, 784).unwrap();
    let zeros: Vec<f64> = pixels
        .chunks(784)
        .map(|c| c.iter().filter(|&&p| p == 0).count() as f64)
        .collect();
    let mean = zeros.iter().sum::<f64>() / 50.0;
    let std = (zeros.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / 50.0).sqrt();
    assert!((s.mean_zero_pixels - mean).abs() < 1e-9);
    assert!((s.std_zero_pixels - std).abs() < 1e-9);
    assert!((s.zero_fraction - mean / 784.0).abs() < 1e-12);
    let pm = pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / pixels.len() as f64;
    assert!((s.pixel_mean - pm).abs() < 1e-9);
}

#[test]
fn report_csv_round_trip() {
    let rows = vec![
        ReportRow {
            layer: "C1".into(),
            mode: "approx".into(),
            threshold: "f:0.3".into(),
            exact: 86400.0,
            nonzero: 22424.5,
            performed: 10853.25,
            sparsity: Some(0.5),
            accuracy: None,
        },
        ReportRow {
            layer: "total".into(),
            mode: "exact".into(),
            threshold: String::new(),
            exact: 270720.0,
            nonzero: 1.0,
            performed: 270720.0,
            sparsity: None,
            accuracy: Some(0.9854),
        },
    ];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    write_csv(&path, &rows).unwrap();
    assert_eq!(read_csv(&path).unwrap(), rows);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("layer,mode,threshold,exact,nonzero,performed,sparsity,accuracy"));
}
