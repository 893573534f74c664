use std::fs;
use std::path::{Path, PathBuf};

use dpqhd::adaptive::{measure_ops_reduction, AdaptiveConfig, OpsReport};
use dpqhd::calibration::{
    calibrate_and_compress, calibrate_threshold, draw_subsets, CalibrationReport,
};
use dpqhd::compression::{run_pipeline, CompressionConfig, StageRecord};
use dpqhd::container::{write_atomic, ModelBundle};
use dpqhd::cost::{account, speedup_proxy, Baseline, CostReport};
use dpqhd::datasets::{load, Split, Standardizer};
use dpqhd::hdc::{accuracy, train_adaptive, train_centroid, Dataset, Encoder};
use dpqhd::rng::derive_seed;
use dpqhd::tensor::gen_gaussian_matrix;
use dpqhd::Exec;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{RunConfig, TrainMode};
use crate::report::{pct, table, Metrics};
use crate::{CliError, Common, CompressArgs, EvalArgs, EvalMode};

pub const MODEL_FILE: &str = "model.dpqh";
pub const COMPRESSED_FILE: &str = "compressed.dpqh";
pub const SIDECAR_FILE: &str = "compressed.json";
pub const CALIBRATION_FILE: &str = "calibration.jsonl";

/// Calibration pool used when no `[calibration]` section asks for a sweep.
const POOL_SUBSETS: usize = 5;
const POOL_SUBSET_SIZE: usize = 128;

#[derive(Debug, Serialize)]
pub struct TrainOutcome {
    pub path: PathBuf,
    pub test_accuracy: f64,
    pub cost: CostReport,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Sidecar {
    pub tau: f64,
    pub config: CompressionConfig,
    pub baseline: CostReport,
    pub compressed: CostReport,
    pub provenance: Vec<StageRecord>,
    pub calibration: Option<CalibrationReport>,
}

#[derive(Debug, Serialize)]
pub struct EvalOutcome {
    pub mode: &'static str,
    pub tau: Option<f64>,
    pub ops: OpsReport,
    pub cost: CostReport,
}

fn exec() -> Exec {
    Exec::default()
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))
}

fn baseline_of(enc: &Encoder, classes: usize) -> Baseline {
    Baseline {
        features: enc.input_dim(),
        dim: enc.output_dim(),
        classes,
    }
}

/// Round-trip through the on-disk form, so in-memory values match what a
/// later `load` sees.
fn persist(bundle: &ModelBundle, path: &Path) -> Result<ModelBundle, CliError> {
    let bytes = bundle.to_bytes();
    write_atomic(path, &bytes)?;
    Ok(ModelBundle::from_bytes(&bytes, path)?)
}

fn standardized(bundle: &ModelBundle, data: &Dataset) -> Result<Dataset, CliError> {
    Ok(match &bundle.standardizer {
        Some(s) => s.apply_dataset(data)?,
        None => data.clone(),
    })
}

pub fn train(cfg: &RunConfig, common: &Common) -> Result<TrainOutcome, CliError> {
    let exec = exec();
    let src = cfg.source(&common.data_dir);
    let train = load(&src, Split::Train)?;
    let test = load(&src, Split::Test)?;
    let std = Standardizer::fit(train.features());
    let train = std.apply_dataset(&train)?;

    let p = gen_gaussian_matrix(
        train.num_features(),
        cfg.dim,
        derive_seed(cfg.seed, "projection"),
    )?;
    let enc = Encoder::full(p)?;
    let model = match cfg.train.mode {
        TrainMode::Centroid => train_centroid(exec, &enc, &train)?,
        TrainMode::Adaptive => train_adaptive(exec, &enc, &train, cfg.train.lr, cfg.train.epochs)?,
    };

    ensure_dir(&common.out)?;
    let path = common.out.join(MODEL_FILE);
    let bundle = persist(&ModelBundle::new(Some(std), enc, model)?, &path)?;
    let test = standardized(&bundle, &test)?;
    let test_accuracy = accuracy(exec, &bundle.encoder, &bundle.model, &test)?;
    let cost = account(
        &bundle.encoder,
        &bundle.model,
        baseline_of(&bundle.encoder, bundle.model.num_classes()),
    );

    println!("wrote {}", path.display());
    println!("test accuracy {}", pct(test_accuracy));
    println!("{cost}");
    let out = TrainOutcome {
        path,
        test_accuracy,
        cost,
    };
    let mut m = Metrics::default();
    m.push("train", &out);
    m.write(common.metrics.as_deref())?;
    Ok(out)
}

pub fn compress(
    cfg: &RunConfig,
    common: &Common,
    args: &CompressArgs,
) -> Result<Sidecar, CliError> {
    let exec = exec();
    let model_path = args
        .model
        .clone()
        .unwrap_or_else(|| common.out.join(MODEL_FILE));
    let full = ModelBundle::load(&model_path)?;
    let train = load(&cfg.source(&common.data_dir), Split::Train)?;
    let train = standardized(&full, &train)?;
    let ccfg = cfg.compression_config();
    let classes = full.model.num_classes();
    let baseline = account(
        &full.encoder,
        &full.model,
        baseline_of(&full.encoder, classes),
    );

    let (art, calibration, pool) = match cfg.calibration_plan() {
        Some(plan) => {
            let subsets = draw_subsets(&train, plan.subset_size, plan.num_subsets, plan.seed)?;
            let pool = train.subset(&subsets.concat());
            let (art, rep) = calibrate_and_compress(
                exec,
                &full.encoder,
                &full.model,
                &train,
                Some(&train),
                &ccfg,
                &plan,
            )?;
            (art, Some(rep), pool)
        }
        None => {
            let pool = if train.len() >= POOL_SUBSETS * POOL_SUBSET_SIZE {
                let seed = derive_seed(cfg.seed, "calibration");
                let subsets = draw_subsets(&train, POOL_SUBSET_SIZE, POOL_SUBSETS, seed)?;
                train.subset(&subsets.concat())
            } else {
                train.clone()
            };
            let art = run_pipeline(exec, &full.encoder, &full.model, &ccfg, &pool, Some(&train))?;
            (art, None, pool)
        }
    };

    ensure_dir(&common.out)?;
    let path = common.out.join(COMPRESSED_FILE);
    let bundle = persist(
        &ModelBundle::new(full.standardizer.clone(), art.encoder, art.model)?,
        &path,
    )?;
    let tau = match cfg.adaptive.tau {
        Some(t) => t,
        // recomputed on the stored (f32-rounded) tensors
        None => calibrate_threshold(exec, &bundle.encoder, &bundle.model, &pool)?,
    };
    let compressed = account(&bundle.encoder, &bundle.model, baseline.baseline);
    let sidecar = Sidecar {
        tau,
        config: art.config,
        baseline,
        compressed,
        provenance: art.provenance,
        calibration,
    };
    let sidecar_text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    write_atomic(&common.out.join(SIDECAR_FILE), sidecar_text.as_bytes())?;
    if let Some(rep) = &sidecar.calibration {
        let mut lines = String::new();
        for (kind, rows) in [("rank", &rep.rank_table), ("prune_ratio", &rep.prune_table)] {
            for row in rows {
                let mut v = serde_json::to_value(row).expect("row serializes");
                v["sweep"] = json!(kind);
                lines.push_str(&v.to_string());
                lines.push('\n');
            }
        }
        write_atomic(&common.out.join(CALIBRATION_FILE), lines.as_bytes())?;
    }

    let base_acc = accuracy(exec, &full.encoder, &full.model, &pool)?;
    let mut rows = vec![vec![
        "baseline".to_string(),
        pct(base_acc),
        sidecar.baseline.total_bytes.to_string(),
        sidecar.baseline.encode_macs.to_string(),
        sidecar.baseline.similarity_macs_full.to_string(),
    ]];
    for r in &sidecar.provenance {
        rows.push(vec![
            r.stage.label().to_string(),
            pct(r.accuracy),
            r.total_bytes.to_string(),
            r.encode_macs.to_string(),
            r.similarity_macs.to_string(),
        ]);
    }
    println!("wrote {}", path.display());
    println!(
        "rank {}  prune ratio {}  bits {}  mode {:?}  tau {:.4}",
        sidecar.config.rank,
        sidecar.config.prune_ratio,
        sidecar.config.bitwidth,
        sidecar.config.mode,
        tau
    );
    println!(
        "{}",
        table(
            &["stage", "calib acc", "bytes", "encode MACs", "sim MACs"],
            &rows
        )
    );
    println!(
        "memory reduction {:.2}x",
        sidecar.compressed.reduction_vs_baseline
    );

    let mut m = Metrics::default();
    m.push("compress", &sidecar);
    m.write(common.metrics.as_deref())?;
    Ok(sidecar)
}

fn sidecar_tau(model: &Path) -> Option<f64> {
    let text = fs::read_to_string(model.with_file_name(SIDECAR_FILE)).ok()?;
    serde_json::from_str::<serde_json::Value>(&text).ok()?["tau"].as_f64()
}

pub fn eval(cfg: &RunConfig, common: &Common, args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let exec = exec();
    let path = args
        .model
        .clone()
        .unwrap_or_else(|| common.out.join(COMPRESSED_FILE));
    let bundle = ModelBundle::load(&path)?;
    let test = load(&cfg.source(&common.data_dir), Split::Test)?;
    let test = standardized(&bundle, &test)?;

    let (acfg, tau) = match args.mode {
        EvalMode::Full => (AdaptiveConfig::disabled(), None),
        EvalMode::Adaptive => {
            let tau = args
                .tau
                .or(cfg.adaptive.tau)
                .or_else(|| sidecar_tau(&path))
                .ok_or_else(|| {
                    CliError::usage(format!(
                        "no threshold for {}: pass --tau or run compress first",
                        path.display()
                    ))
                })?;
            let acfg = AdaptiveConfig {
                tau,
                elimination: cfg.adaptive.elimination,
                early_exit: cfg.adaptive.early_exit,
            };
            (acfg, Some(tau))
        }
    };
    let ops = measure_ops_reduction(exec, &bundle.encoder, &bundle.model, &test, &acfg)?;
    let cost = account(
        &bundle.encoder,
        &bundle.model,
        baseline_of(&bundle.encoder, bundle.model.num_classes()),
    );
    let out = EvalOutcome {
        mode: match args.mode {
            EvalMode::Full => "full",
            EvalMode::Adaptive => "adaptive",
        },
        tau,
        ops,
        cost,
    };

    println!("{} on {} test samples", path.display(), out.ops.samples);
    if let Some(t) = tau {
        println!("tau {t:.4}");
    }
    println!("accuracy (full)      {}", pct(out.ops.accuracy_full));
    if args.mode == EvalMode::Adaptive {
        println!("accuracy (adaptive)  {}", pct(out.ops.accuracy_adaptive));
        println!("MAC reduction        {:.2}%", out.ops.reduction_percent);
        println!("early exit rate      {}", pct(out.ops.early_exit_rate));
    }
    let mut m = Metrics::default();
    m.push("eval", &out);
    m.write(common.metrics.as_deref())?;
    Ok(out)
}

pub fn bench(cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    let trained = train(cfg, common)?;
    let no_overrides = CompressArgs {
        model: Some(trained.path.clone()),
        rank: None,
        prune: None,
        bits: None,
    };
    let side = compress(cfg, common, &no_overrides)?;
    let ev = eval(
        cfg,
        common,
        &EvalArgs {
            model: None,
            mode: EvalMode::Adaptive,
            tau: Some(side.tau),
        },
    )?;
    let speedup = speedup_proxy(&side.baseline, &side.compressed, ev.ops.mean_macs);

    let record = json!({
        "dataset": cfg.data.kind,
        "seed": cfg.seed,
        "dim": cfg.dim,
        "rank": side.config.rank,
        "prune_ratio": side.config.prune_ratio,
        "bitwidth": side.config.bitwidth,
        "decomposition": side.config.mode,
        "tau": side.tau,
        "baseline_test_accuracy": trained.test_accuracy,
        "compressed_test_accuracy": ev.ops.accuracy_full,
        "adaptive_test_accuracy": ev.ops.accuracy_adaptive,
        "baseline": side.baseline,
        "compressed": side.compressed,
        "ops": ev.ops,
        "speedup_proxy": speedup,
    });
    println!("speedup proxy {speedup:.2}x");
    let mut m = Metrics::default();
    m.push("train", &trained);
    m.push("compress", &side);
    m.push("eval", &ev);
    m.push("bench", &record);
    m.write(common.metrics.as_deref())?;
    Ok(())
}
