mod common;

use std::collections::HashSet;

use corinfomax::config::{ChannelNorm, DatasetConfig, DatasetKind};
use corinfomax::data::{
    batch_stream, denormalize_cifar, epoch_permutation, load_cifar, load_dataset, load_idx, CifarVariant,
};
use corinfomax::{Error, Split};

use common::{dataset_dir, fixtures};

fn expect_data_error<T: std::fmt::Debug>(res: corinfomax::Result<T>, needle: &str) {
    match res {
        Err(Error::Data { message, .. }) => assert!(message.contains(needle), "{message:?} lacks {needle:?}"),
        other => panic!("expected a data error, got {other:?}"),
    }
}

#[test]
fn idx_golden_values() {
    let f = fixtures();
    let ds = load_idx(
        &f.join("tiny-images-idx3-ubyte"),
        &f.join("tiny-labels-idx1-ubyte"),
        Split::Train,
    )
    .unwrap();
    assert_eq!(ds.images.dim(), (4, 3));
    assert_eq!(ds.labels, vec![7, 0, 9]);
    assert_eq!(ds.num_classes, 10);
    let expected = [
        [0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0],
        [10.0, 20.0, 30.0, 40.0].map(|v| v / 255.0),
        [1.0, 1.0, 0.0, 0.0],
    ];
    for (j, col) in expected.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            assert_eq!(ds.images[[i, j]], *v);
        }
    }
}

#[test]
fn gzip_matches_raw() {
    let f = fixtures();
    let labels = f.join("tiny-labels-idx1-ubyte");
    let raw = load_idx(&f.join("tiny-images-idx3-ubyte"), &labels, Split::Test).unwrap();
    let gz = load_idx(&f.join("tiny-images-idx3-ubyte.gz"), &labels, Split::Test).unwrap();
    assert_eq!(raw, gz);
}

#[test]
fn idx_rejects_bad_magic() {
    let f = fixtures();
    expect_data_error(
        load_idx(
            &f.join("tiny-images-idx3-ubyte"),
            &f.join("bad-magic-labels-idx1-ubyte"),
            Split::Train,
        ),
        "bad magic",
    );
    // Image and label files swapped.
    expect_data_error(
        load_idx(
            &f.join("tiny-labels-idx1-ubyte"),
            &f.join("tiny-images-idx3-ubyte"),
            Split::Train,
        ),
        "bad magic",
    );
}

#[test]
fn idx_rejects_truncation_and_count_mismatch() {
    let f = fixtures();
    expect_data_error(
        load_idx(
            &f.join("truncated-images-idx3-ubyte"),
            &f.join("tiny-labels-idx1-ubyte"),
            Split::Train,
        ),
        "truncated",
    );
    expect_data_error(
        load_idx(
            &f.join("tiny-images-idx3-ubyte"),
            &f.join("short-labels-idx1-ubyte"),
            Split::Train,
        ),
        "2 labels for 3 images",
    );
    expect_data_error(
        load_idx(
            &f.join("tiny-images-idx3-ubyte"),
            &f.join("bad-label-idx1-ubyte"),
            Split::Train,
        ),
        "label 10",
    );
}

#[test]
fn missing_file_is_a_data_error() {
    let f = fixtures();
    assert!(matches!(
        load_idx(&f.join("no-such-file"), &f.join("tiny-labels-idx1-ubyte"), Split::Train),
        Err(Error::Data { .. })
    ));
}

#[test]
fn cifar10_golden_values() {
    let norm = ChannelNorm::default();
    let ds = load_cifar(
        &[fixtures().join("cifar10-two.bin")],
        CifarVariant::Cifar10,
        &norm,
        Split::Test,
    )
    .unwrap();
    assert_eq!(ds.images.dim(), (3072, 2));
    assert_eq!(ds.labels, vec![3, 9]);
    // Pixel i of the first record is i mod 256; 1024 + 5 is green.
    let v = ds.images[[1024 + 5, 0]];
    let expected = ((1029 % 256) as f64 / 255.0 - norm.mean[1]) / norm.std[1];
    assert!((v - expected).abs() < 1e-12);
    let back = denormalize_cifar(&ds.images, &norm);
    for i in 0..3072 {
        assert!((back[[i, 0]] - (i % 256) as f64 / 255.0).abs() < 1e-12);
        assert!((back[[i, 1]] - ((3 * i + 1) % 256) as f64 / 255.0).abs() < 1e-12);
    }
}

#[test]
fn cifar100_uses_fine_label() {
    let ds = load_cifar(
        &[fixtures().join("cifar100-two.bin")],
        CifarVariant::Cifar100,
        &ChannelNorm::default(),
        Split::Test,
    )
    .unwrap();
    assert_eq!(ds.labels, vec![42, 99]);
    assert_eq!(ds.num_classes, 100);
}

#[test]
fn cifar_rejects_partial_record() {
    expect_data_error(
        load_cifar(
            &[fixtures().join("cifar10-truncated.bin")],
            CifarVariant::Cifar10,
            &ChannelNorm::default(),
            Split::Test,
        ),
        "truncated record",
    );
}

#[test]
fn load_dataset_reports_missing_directory() {
    let cfg = DatasetConfig {
        kind: DatasetKind::Mnist,
        dir: fixtures().join("absent"),
        train_limit: None,
        test_limit: None,
        eval_batch_size: 100,
        normalization: ChannelNorm::default(),
    };
    expect_data_error(load_dataset(&cfg, Split::Train), "train-images");
}

fn mnist_config() -> Option<DatasetConfig> {
    dataset_dir(DatasetKind::Mnist).map(|dir| DatasetConfig {
        kind: DatasetKind::Mnist,
        dir,
        train_limit: None,
        test_limit: None,
        eval_batch_size: 1000,
        normalization: ChannelNorm::default(),
    })
}

#[test]
fn mnist_shapes_when_present() {
    let Some(cfg) = mnist_config() else {
        eprintln!("MNIST not found, skipping");
        return;
    };
    let train = load_dataset(&cfg, Split::Train).unwrap();
    assert_eq!(train.images.dim(), (784, 60000));
    let max = train.images.iter().fold(0.0f64, |a, &b| a.max(b));
    assert_eq!(max, 1.0);
    assert!(train.images.iter().all(|&v| (0.0..=1.0).contains(&v)));
    let test = load_dataset(&cfg, Split::Test).unwrap();
    assert_eq!(test.images.dim(), (784, 10000));

    let stream = batch_stream::<f32>(&train, 20, 1, 0);
    assert_eq!(stream.len(), 3000);
}

#[test]
fn epoch_orders_differ_across_ten_epochs() {
    let orders: HashSet<Vec<usize>> = (0..10).map(|e| epoch_permutation(60000, 1, e)).collect();
    assert_eq!(orders.len(), 10);
    assert_eq!(epoch_permutation(60000, 1, 3), epoch_permutation(60000, 1, 3));
}
