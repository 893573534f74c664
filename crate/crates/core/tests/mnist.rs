//! Tests on the real image datasets. Each one returns early, with a note on
//! stderr, when its files are not under `DPQ_DATA_DIR` (default `data/`).

mod common;

use std::time::Instant;

use common::*;
use dpqhd::calibration::{
    calibrate_threshold, draw_subsets, select_prune_ratio, select_rank, CalibrationPlan,
};
use dpqhd::compression::{decompose_encoder, DecompositionMode, Factorization};
use dpqhd::datasets::{synthetic_blobs, Split, Standardizer};
use dpqhd::hdc::{accuracy, train_adaptive, train_centroid, Dataset, Encoder, HdcModel};
use dpqhd::rng::derive_seed;
use dpqhd::tensor::gen_gaussian_matrix;
use dpqhd::Exec;

const EX: Exec = Exec::Sequential;
const D: usize = 10_000;

fn projection(f: usize, seed: u64) -> Encoder {
    Encoder::full(gen_gaussian_matrix(f, D, derive_seed(seed, "projection")).unwrap()).unwrap()
}

fn pool(data: &Dataset, seed: u64) -> Dataset {
    let s = draw_subsets(data, 128, 5, seed).unwrap();
    data.subset(&s.concat())
}

fn default_plan(seed: u64) -> CalibrationPlan {
    CalibrationPlan {
        seed,
        ..CalibrationPlan::default()
    }
}

#[test]
fn adaptive_training_beats_centroid_on_mnist() {
    let Some(src) = mnist_source() else { return };
    let (_, train, test) = standardized(&src);
    let enc = projection(784, 1);
    let t = Instant::now();
    let centroid = train_centroid(Exec::default(), &enc, &train).unwrap();
    let adaptive = train_adaptive(Exec::default(), &enc, &train, 0.035, 5).unwrap();
    let a0 = accuracy(Exec::default(), &enc, &centroid, &test).unwrap();
    let a1 = accuracy(Exec::default(), &enc, &adaptive, &test).unwrap();
    eprintln!("centroid {a0:.4} adaptive {a1:.4} ({:.1?})", t.elapsed());
    assert!(a1 > a0);
}

#[test]
fn fresh_random_rank_256_stays_within_two_points() {
    let Some(src) = mnist_source() else { return };
    let (_, train, _) = standardized(&src);
    let enc = projection(784, 1);
    let model = train_centroid(EX, &enc, &train).unwrap();
    let calib = pool(&train, 5);
    let base = accuracy(EX, &enc, &model, &calib).unwrap();
    let (dec, rebuilt) = decompose_encoder(
        EX,
        &enc,
        256,
        DecompositionMode::FreshRandom,
        3,
        Some(&train),
    )
    .unwrap();
    let acc = accuracy(EX, &dec, &rebuilt.unwrap(), &calib).unwrap();
    eprintln!("full {base:.4} fresh-random r=256 {acc:.4}");
    assert!(acc >= base - 0.02, "full {base:.4} fresh-random {acc:.4}");
}

/// Mean top-1 minus top-2 cosine, recomputed from scratch.
fn margin_oracle(enc: &Encoder, model: &HdcModel, data: &Dataset) -> f64 {
    let w = model.class_hvs().dense();
    let mut total = 0.0;
    for i in 0..data.len() {
        let h = enc.encode(data.features().row(i)).unwrap();
        let mut s: Vec<f64> = (0..w.rows()).map(|c| naive_cosine(&h, w.row(c))).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        total += s[0] - s[1];
    }
    total / data.len() as f64
}

#[test]
fn threshold_on_128_mnist_samples_matches_direct_mean() {
    let Some(src) = mnist_source() else { return };
    let (_, train, _) = standardized(&src);
    let enc = projection(784, 2);
    let model = train_centroid(EX, &enc, &train).unwrap();
    let sample = train.subset(&draw_subsets(&train, 128, 1, 4).unwrap()[0]);
    let tau = calibrate_threshold(EX, &enc, &model, &sample).unwrap();
    let want = margin_oracle(&enc, &model, &sample);
    assert!((tau - want).abs() <= 1e-12, "{tau} vs {want}");
    assert!(tau > 0.0);
}

#[test]
fn mnist_rank_sweep_reports_every_candidate() {
    let Some(src) = mnist_source() else { return };
    let (_, train, _) = standardized(&src);
    let enc = projection(784, 1);
    let model = train_centroid(EX, &enc, &train).unwrap();
    let plan = default_plan(7);
    let fact = Factorization::new(
        Exec::default(),
        &enc,
        512,
        DecompositionMode::SvdApprox,
        0,
        None,
    )
    .unwrap();
    let (rank, table) = select_rank(Exec::default(), &fact, &model, &train, None, &plan).unwrap();
    assert_eq!(table.len(), 4);
    let ranks: Vec<usize> = table.iter().map(|r| r.value as usize).collect();
    assert_eq!(ranks, vec![64, 128, 256, 512]);
    for row in &table {
        assert_eq!(row.accuracies.len(), 5);
        assert!(row.mean.is_finite() && row.std.is_finite());
    }
    let best = table
        .iter()
        .map(|r| r.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(
        rank,
        table.iter().find(|r| r.mean >= best - 1.0).unwrap().value as usize
    );
    eprintln!("{table:?}");
}

fn chosen_ratio(enc: &Encoder, model: &HdcModel, data: &Dataset, plan: &CalibrationPlan) -> f64 {
    let (ratio, table, base) = select_prune_ratio(EX, enc, model, data, plan).unwrap();
    eprintln!(
        "base {base:.2} table {:?}",
        table.iter().map(|r| (r.value, r.mean)).collect::<Vec<_>>()
    );
    ratio
}

#[test]
fn fashion_tolerates_more_pruning_than_a_harder_task() {
    let Some(src) = fashion_source() else { return };
    let plan = default_plan(3);

    let (_, train, _) = standardized(&src);
    let enc = projection(784, 1);
    let model = train_centroid(EX, &enc, &train).unwrap();
    let fashion = chosen_ratio(&enc, &model, &train, &plan);

    // 26 close classes in 512 dimensions: pruning visibly costs accuracy here
    let hard = synthetic_blobs(&blobs(26, 512, 30, 1.5, 9), Split::Train).unwrap();
    let std = Standardizer::fit(hard.features());
    let hard = std.apply_dataset(&hard).unwrap();
    let enc = projection(512, 1);
    let model = train_centroid(EX, &enc, &hard).unwrap();
    let harder = chosen_ratio(&enc, &model, &hard, &plan);

    eprintln!("fashion {fashion} harder {harder}");
    assert!(harder < 0.9, "the synthetic task should limit pruning");
    assert!(fashion >= harder);
}
