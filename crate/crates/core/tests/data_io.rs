//! IDX parsing, partitioning, checkpoints and trace files.

mod common;

use std::path::PathBuf;

use common::*;
use proptest::prelude::*;
use vfu::attacks::GradientTrace;
use vfu::data::{
    load_checkpoint, load_idx, load_mnist, read_trace, save_checkpoint, synth_blobs, vertical_partition, write_idx,
    write_trace, IdxArray, IDX_IMAGES_MAGIC,
};
use vfu::numcore::Tensor;
use vfu::protocol::{accuracy, train, TrainConfig};
use vfu::Error;

fn mnist_dir() -> Option<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

#[test]
fn official_mnist_headers() {
    let Some(dir) = mnist_dir() else {
        eprintln!("MNIST files not found; skipping");
        return;
    };
    let images = load_idx(&dir.join("train-images-idx3-ubyte")).unwrap();
    assert_eq!(images.shape(), &[60000, 28, 28]);
    assert!(images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    let labels = load_idx(&dir.join("train-labels-idx1-ubyte")).unwrap();
    assert_eq!(labels.shape(), &[60000]);
    assert!(labels.data().iter().all(|&y| y.fract() == 0.0 && (0.0..=9.0).contains(&y)));
    let (train, test) = load_mnist(&dir).unwrap();
    assert_eq!((train.len(), test.len()), (60000, 10000));
    assert_eq!(train.features.cols(), 784);
}

#[test]
fn idx_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad");
    std::fs::write(&bad, [0xDE, 0xAD, 0xBE, 0xEF, 0, 0, 0, 1, 0]).unwrap();
    assert!(matches!(load_idx(&bad), Err(Error::Format(_))));

    let good = dir.path().join("good");
    let array = IdxArray {
        magic: IDX_IMAGES_MAGIC,
        dims: vec![2, 2, 2],
        bytes: vec![0, 255, 51, 102, 0, 0, 255, 255],
    };
    write_idx(&good, &array).unwrap();
    let t = load_idx(&good).unwrap();
    assert_eq!(t.shape(), &[2, 2, 2]);
    assert_eq!(&t.data()[..4], &[0.0, 1.0, 0.2, 0.4]);

    let raw = std::fs::read(&good).unwrap();
    let cut = dir.path().join("cut");
    std::fs::write(&cut, &raw[..raw.len() - 3]).unwrap();
    assert!(matches!(load_idx(&cut), Err(Error::Length { .. })));
    assert!(matches!(load_idx(&dir.path().join("missing")), Err(Error::Io { .. })));
}

#[test]
fn partition_examples() {
    let widths = |d: usize, k: usize| {
        vertical_partition(&Tensor::zeros(vec![3, d]), k)
            .unwrap()
            .iter()
            .map(|t| t.cols())
            .collect::<Vec<_>>()
    };
    assert_eq!(widths(784, 2), vec![392, 392]);
    assert_eq!(widths(784, 4), vec![196; 4]);
    assert_eq!(widths(5, 2), vec![2, 3]);
    assert!(vertical_partition(&Tensor::zeros(vec![3, 2]), 3).is_err());
}

proptest! {
    #[test]
    fn partition_is_lossless(rows in 1usize..6, d in 1usize..20, k in 1usize..6, seed in 0u64..1000) {
        prop_assume!(k <= d);
        let x = random_matrix(rows, d, 5.0, &mut rng(seed));
        let parts = vertical_partition(&x, k).unwrap();
        let refs: Vec<&Tensor> = parts.iter().collect();
        prop_assert_eq!(Tensor::hcat(&refs).unwrap(), x);
    }
}

#[test]
fn blobs_control_cases() {
    let a = synth_blobs(2, 50, 2, 10.0, 3).unwrap();
    assert_eq!(a.features, synth_blobs(2, 50, 2, 10.0, 3).unwrap().features);
    assert!(synth_blobs(2, 5, 0, 1.0, 0).is_err());

    // s = 0: a trained model cannot beat chance by much
    let ds = blobs(2, 300, 2, 0.0, 5, 1);
    let test = blobs(2, 300, 2, 0.0, 6, 1);
    let mut fed = federation(&ds, 2, &[], 1);
    train(&mut fed, &ds, None, &TrainConfig { epochs: 3, ..TrainConfig::default() }, &mut rng(0)).unwrap();
    let rows: Vec<usize> = (0..test.len()).collect();
    let acc = accuracy(&fed, &test, &rows).unwrap();
    assert!((acc - 50.0).abs() <= 10.0, "{acc}");
}

#[test]
fn checkpoint_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let ds = blobs(3, 40, 6, 3.0, 1, 3);
    let mut fed = federation(&ds, 4, &[7], 2);
    train(&mut fed, &ds, None, &TrainConfig { epochs: 1, ..TrainConfig::default() }, &mut rng(0)).unwrap();
    let first = dir.path().join("a.ckpt");
    let meta = save_checkpoint(&fed, 77, &first).unwrap();
    assert_eq!(meta.parties, 3);
    let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.ckpt.json")).unwrap()).unwrap();
    assert_eq!(side["seed"], 77);
    let (loaded, seed) = load_checkpoint(&first).unwrap();
    assert_eq!(seed, 77);
    let rows: Vec<usize> = (0..ds.len()).collect();
    let bits = |t: Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(fed.dataset_logits(&ds, &rows).unwrap()), bits(loaded.dataset_logits(&ds, &rows).unwrap()));

    let second = dir.path().join("b.ckpt");
    save_checkpoint(&loaded, seed, &second).unwrap();
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let mut raw = std::fs::read(&first).unwrap();
    raw[4] = 9;
    let tampered = dir.path().join("c.ckpt");
    std::fs::write(&tampered, &raw).unwrap();
    assert!(matches!(load_checkpoint(&tampered), Err(Error::Incompatible { found: 9, .. })));
    let empty = dir.path().join("d.ckpt");
    std::fs::write(&empty, []).unwrap();
    assert!(matches!(load_checkpoint(&empty), Err(Error::Format(_))));
}

#[test]
fn trace_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = random_matrix(5, 3, 1.0, &mut rng(1));
    for labels in [Some(vec![0, 1, 1, 0, 2]), None] {
        let t = GradientTrace::new("two_class ga".into(), 2, vec![4, 8, 15, 16, 23], labels, g.clone()).unwrap();
        let path = dir.path().join("t.trace");
        write_trace(&path, &t).unwrap();
        assert_eq!(read_trace(&path).unwrap(), t);
    }
}
