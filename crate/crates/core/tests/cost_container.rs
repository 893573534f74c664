mod common;

use common::*;
use dpqhd::compression::{quantize_mse, run_pipeline, CompressionConfig};
use dpqhd::container::ModelBundle;
use dpqhd::cost::{account, speedup_proxy, Baseline};
use dpqhd::datasets::{synthetic_blobs, Split, Standardizer};
use dpqhd::hdc::{train_centroid, Encoder, HdcModel, Matrix};
use dpqhd::tensor::{gen_gaussian_matrix, DenseMatrix};
use dpqhd::{Error, Exec};

const MNIST: Baseline = Baseline {
    features: 784,
    dim: 10_000,
    classes: 10,
};

fn q(rows: usize, cols: usize, bits: u8, seed: u64) -> Matrix {
    Matrix::quantized(
        quantize_mse(
            Exec::default(),
            &gen_gaussian_matrix(rows, cols, seed).unwrap(),
            bits,
        )
        .unwrap(),
    )
}

#[test]
fn uncompressed_mnist_bytes() {
    let enc = Encoder::full(DenseMatrix::zeros(784, 10_000)).unwrap();
    let model = HdcModel::new(
        DenseMatrix::from_fn(10, 10_000, |i, _| i as f64 + 1.0),
        None,
    )
    .unwrap();
    let r = account(&enc, &model, MNIST);
    assert_eq!(r.encoder_bytes, 31_360_000);
    assert_eq!(r.model_bytes, 400_000);
    assert_eq!(r.scale_bytes, 0);
    assert_eq!(r.total_bytes, 31_760_000);
    assert_eq!(r.reduction_vs_baseline, 1.0);
    assert_eq!(r.encode_macs, 7_840_000);
    assert_eq!(r.similarity_macs_full, 100_000);
    assert_eq!(speedup_proxy(&r, &r, r.similarity_macs_full as f64), 1.0);
}

#[test]
fn compressed_mnist_bytes() {
    let enc = Encoder::decomposed(q(784, 256, 3, 1), q(256, 3000, 3, 2)).unwrap();
    let model = HdcModel::new(q(10, 3000, 3, 3), Some(8)).unwrap();
    let r = account(&enc, &model, MNIST);
    let packed_enc = (784u64 * 256 * 3).div_ceil(8) + (256u64 * 3000 * 3).div_ceil(8);
    assert_eq!(r.encoder_bytes, packed_enc);
    assert_eq!(r.model_bytes, (10u64 * 3000 * 3).div_ceil(8));
    assert_eq!(r.scale_bytes, 4 * (784 + 256 + 10));
    assert_eq!(
        r.total_bytes,
        r.encoder_bytes + r.model_bytes + r.scale_bytes
    );
    assert_eq!(r.total_bytes, 75_264 + 288_000 + 11_250 + 4_200);
    assert!(
        r.reduction_vs_baseline >= 20.0,
        "{}",
        r.reduction_vs_baseline
    );
    assert_eq!(r.encode_macs, 968_704);
    assert_eq!(r.similarity_macs_full, 30_000);

    let base = account(
        &Encoder::full(DenseMatrix::zeros(784, 10_000)).unwrap(),
        &HdcModel::new(DenseMatrix::from_fn(10, 10_000, |_, _| 1.0), None).unwrap(),
        MNIST,
    );
    let static_ratio = speedup_proxy(&base, &r, r.similarity_macs_full as f64);
    let want =
        (784.0 * 10_000.0 + 10.0 * 10_000.0) / (784.0 * 256.0 + 256.0 * 3000.0 + 10.0 * 3000.0);
    assert!((static_ratio - want).abs() < 1e-12);
    assert!((static_ratio - 7.95).abs() < 0.01);
    assert!(speedup_proxy(&base, &r, 0.25 * 30_000.0) > static_ratio);
}

fn bundles() -> Vec<ModelBundle> {
    let p = blobs(3, 6, 40, 4.0, 1);
    let train = synthetic_blobs(&p, Split::Train).unwrap();
    let std = Standardizer::fit(train.features());
    let train = std.apply_dataset(&train).unwrap();
    let enc = Encoder::full(gen_gaussian_matrix(6, 90, 2).unwrap()).unwrap();
    let model = train_centroid(Exec::default(), &enc, &train).unwrap();
    let mut out = vec![ModelBundle::new(Some(std.clone()), enc.clone(), model.clone()).unwrap()];
    for bits in [2, 3, 5, 8] {
        let cfg = CompressionConfig::new(4, 0.3, bits);
        let art = run_pipeline(Exec::default(), &enc, &model, &cfg, &train, None).unwrap();
        out.push(ModelBundle::new(Some(std.clone()), art.encoder, art.model).unwrap());
    }
    let mut cfg = CompressionConfig::new(5, 0.5, 4);
    cfg.targets.p2 = false;
    let art = run_pipeline(Exec::default(), &enc, &model, &cfg, &train, None).unwrap();
    out.push(ModelBundle::new(None, art.encoder, art.model).unwrap());
    out
}

#[test]
fn cost_bytes_equal_serialized_payload() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, b) in bundles().into_iter().enumerate() {
        let path = tmp.path().join(format!("m{i}.dpqh"));
        b.save(&path).unwrap();
        let file = std::fs::read(&path).unwrap();
        let base = Baseline {
            features: b.encoder.input_dim(),
            dim: 90,
            classes: b.model.num_classes(),
        };
        let r = account(&b.encoder, &b.model, base);
        assert_eq!(
            file.len() - b.header_len(),
            r.total_bytes as usize,
            "bundle {i}"
        );

        let loaded = ModelBundle::load(&path).unwrap();
        loaded.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), file, "bundle {i} round trip");
        assert_eq!(loaded.standardizer, b.standardizer);
        assert_eq!(loaded.encoder.rank(), b.encoder.rank());
        assert_eq!(loaded.model.query_bits(), b.model.query_bits());
    }
}

#[test]
fn loaded_quantized_bundle_predicts_identically() {
    let b = bundles().remove(2);
    let loaded = ModelBundle::from_bytes(&b.to_bytes(), "mem".as_ref()).unwrap();
    // quantized tensors survive exactly; f32 scale rounding is the only change
    let x = uniform_matrix(50, 6, 3);
    for i in 0..50 {
        let h1 = b.encoder.encode(x.row(i)).unwrap();
        let h2 = loaded.encoder.encode(x.row(i)).unwrap();
        assert!(max_abs_diff(&h1, &h2) <= 1e-5 * naive_dot(&h1, &h1).sqrt());
    }
    match (b.model.class_hvs(), loaded.model.class_hvs()) {
        (Matrix::Quantized { q: a, .. }, Matrix::Quantized { q: c, .. }) => {
            assert_eq!(a.values(), c.values());
        }
        _ => panic!("expected quantized class hypervectors"),
    }
}

#[test]
fn malformed_files_name_a_byte_offset() {
    let bytes = bundles().remove(1).to_bytes();
    let p = std::path::Path::new("x.dpqh");
    let err = |b: &[u8]| match ModelBundle::from_bytes(b, p) {
        Err(e @ Error::Parse { .. }) => e.to_string(),
        other => panic!("expected a parse error, got {other:?}"),
    };
    assert!(err(b"NOPE").contains("byte 0"));
    let mut v = bytes.clone();
    v[4] = 9;
    assert!(err(&v).contains("byte 4"));
    assert!(err(&bytes[..bytes.len() - 3]).contains("truncated"));
    let mut v = bytes.clone();
    v.push(0);
    assert!(err(&v).contains("trailing"));
    let mut v = bytes.clone();
    v[22] = 1; // first tensor tag
    assert!(err(&v).contains("byte 22"));
    assert!(err(&bytes[..10]).contains("x.dpqh"));
}

#[test]
fn missing_file_is_an_io_error_with_the_path() {
    let e = ModelBundle::load("/no/such/model.dpqh".as_ref()).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert!(e.is_data_error());
    assert!(e.to_string().contains("/no/such/model.dpqh"));
}

#[test]
fn bundle_rejects_mismatched_parts() {
    let enc = Encoder::full(DenseMatrix::identity(4)).unwrap();
    let model = HdcModel::new(DenseMatrix::identity(3), None).unwrap();
    assert!(ModelBundle::new(None, enc.clone(), model).is_err());
    let model = HdcModel::new(DenseMatrix::identity(4), None).unwrap();
    assert!(ModelBundle::new(Some(Standardizer::identity(5)), enc, model).is_err());
}
