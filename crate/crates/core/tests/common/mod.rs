#![allow(dead_code, clippy::needless_range_loop)]

use std::path::PathBuf;

use dpqhd::datasets::{load, BlobParams, DataSource, Split, Standardizer};
use dpqhd::hdc::Dataset;
use dpqhd::rng::SeededRng;
use dpqhd::tensor::DenseMatrix;

/// `DPQ_DATA_DIR`, else `<workspace>/data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os("DPQ_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn idx_source(name: &str) -> Option<DataSource> {
    let dir = data_dir().join(name);
    if !dir.join("train-images-idx3-ubyte").is_file() {
        eprintln!("skipping: {} not found", dir.display());
        return None;
    }
    Some(match name {
        "mnist" => DataSource::Mnist { dir },
        _ => DataSource::FashionMnist { dir },
    })
}

pub fn mnist_source() -> Option<DataSource> {
    idx_source("mnist")
}

pub fn fashion_source() -> Option<DataSource> {
    idx_source("fashion-mnist")
}

pub fn isolet_source() -> Option<DataSource> {
    let dir = data_dir().join("isolet");
    if !dir.join("isolet1+2+3+4.data").is_file() || !dir.join("isolet5.data").is_file() {
        eprintln!("skipping: {} not found", dir.display());
        return None;
    }
    Some(DataSource::Isolet { dir })
}

/// Train and test splits standardized with training statistics.
pub fn standardized(src: &DataSource) -> (Standardizer, Dataset, Dataset) {
    let train = load(src, Split::Train).unwrap();
    let test = load(src, Split::Test).unwrap();
    let std = Standardizer::fit(train.features());
    let train = std.apply_dataset(&train).unwrap();
    let test = std.apply_dataset(&test).unwrap();
    (std, train, test)
}

pub fn blobs(classes: usize, features: usize, per_class: usize, sep: f64, seed: u64) -> BlobParams {
    BlobParams {
        classes,
        features,
        samples_per_class: per_class,
        separation: sep,
        seed,
    }
}

pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = SeededRng::new(seed);
    DenseMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.next_f64() - 1.0)
}

pub fn naive_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    naive_dot(a, b) / (naive_dot(a, a).sqrt() * naive_dot(b, b).sqrt())
}

/// Row vector times matrix by the textbook triple loop.
pub fn naive_vecmat(x: &[f64], m: &DenseMatrix) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out[j] += x[i] * m.get(i, j);
        }
    }
    out
}

pub fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(a.rows(), b.cols(), |i, j| {
        (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
    })
}

pub fn to_na(m: &DenseMatrix) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Singular values from nalgebra, descending.
pub fn oracle_singular_values(m: &DenseMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = to_na(m).singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
