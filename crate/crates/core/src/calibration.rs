//! Rank, prune ratio and early-exit threshold chosen from small labeled
//! subsets.
//!
//! Candidates are scored on `num_subsets` disjoint, class-stratified subsets
//! of `subset_size` samples. Accuracies in the tables are percentages, and
//! the tolerance is in percentage points.

use serde::{Deserialize, Serialize};

use crate::compression::{
    prune, pruned_dim, run_pipeline_with, CompressionConfig, Factorization, PipelineArtifacts,
};
use crate::error::{Error, Result};
use crate::hdc::{predict_dataset, Dataset, Encoder, HdcModel};
use crate::par::Exec;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    pub subset_size: usize,
    pub num_subsets: usize,
    pub rank_grid: Vec<usize>,
    pub prune_grid: Vec<f64>,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for CalibrationPlan {
    fn default() -> Self {
        Self {
            subset_size: 128,
            num_subsets: 5,
            rank_grid: vec![64, 128, 256, 512],
            prune_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            tolerance: 1.0,
            seed: 0,
        }
    }
}

impl CalibrationPlan {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.subset_size < classes {
            return Err(Error::config(format!(
                "subset size {} is below the class count {classes}",
                self.subset_size
            )));
        }
        if self.num_subsets == 0 {
            return Err(Error::config("need at least one calibration subset"));
        }
        if self.rank_grid.is_empty() || self.prune_grid.is_empty() {
            return Err(Error::config("calibration grids must be nonempty"));
        }
        if !self.rank_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("rank grid must be strictly increasing"));
        }
        if !self.prune_grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::config("prune grid must be strictly increasing"));
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            return Err(Error::config("tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// Mean and spread of one candidate's subset accuracies (percent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
    pub accuracies: Vec<f64>,
}

impl CandidateRow {
    fn new(value: f64, accuracies: Vec<f64>) -> Self {
        let n = accuracies.len() as f64;
        let mean = accuracies.iter().sum::<f64>() / n;
        let var = if accuracies.len() > 1 {
            accuracies.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            value,
            mean,
            std: var.sqrt(),
            accuracies,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub chosen_rank: usize,
    pub chosen_prune_ratio: f64,
    pub tau: f64,
    /// Mean subset accuracy of the decomposed, unpruned encoder at the chosen rank.
    pub unpruned_mean: f64,
    pub rank_table: Vec<CandidateRow>,
    pub prune_table: Vec<CandidateRow>,
}

/// Disjoint subsets of sample indices, each stratified by class.
///
/// Every class's indices are shuffled once; each subset then takes its quota
/// from the front of each class pool. Quotas follow class frequencies, with
/// leftover slots going to the largest fractional shares (lower class first
/// on ties).
pub fn draw_subsets(
    data: &Dataset,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let n = data.len();
    if size * count > n {
        return Err(Error::config(format!(
            "{count} subsets of {size} need {} samples, only {n} available",
            size * count
        )));
    }
    let mut rng = SeededRng::new(derive_seed(seed, "calibration-subsets"));
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); data.num_classes()];
    for (i, &l) in data.labels().iter().enumerate() {
        pools[l].push(i);
    }
    for pool in &mut pools {
        rng.shuffle(pool);
    }

    let counts: Vec<usize> = pools.iter().map(Vec::len).collect();
    let mut quota: Vec<usize> = counts.iter().map(|&c| size * c / n).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // fractional part of size·c/n, compared as integers
    order.sort_by_key(|&c| (std::cmp::Reverse(size * counts[c] % n), c));
    let mut left = size - quota.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        quota[c] += 1;
        left -= 1;
    }

    let mut cursor = vec![0usize; pools.len()];
    let mut subsets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut s = Vec::with_capacity(size);
        for (c, &q) in quota.iter().enumerate() {
            let take = q.min(pools[c].len() - cursor[c]);
            s.extend_from_slice(&pools[c][cursor[c]..cursor[c] + take]);
            cursor[c] += take;
        }
        // a class ran dry: fill from the remaining pools in class order
        for c in 0..pools.len() {
            while s.len() < size && cursor[c] < pools[c].len() {
                s.push(pools[c][cursor[c]]);
                cursor[c] += 1;
            }
        }
        s.sort_unstable();
        subsets.push(s);
    }
    Ok(subsets)
}

/// Percent accuracy on each subset.
fn subset_accuracies(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    data: &Dataset,
    subsets: &[Vec<usize>],
) -> Result<Vec<f64>> {
    let all: Vec<usize> = subsets.concat();
    let preds = predict_dataset(exec, enc, model, &data.subset(&all))?;
    let mut out = Vec::with_capacity(subsets.len());
    let mut at = 0;
    for s in subsets {
        let correct = s
            .iter()
            .zip(&preds[at..at + s.len()])
            .filter(|(&i, p)| p.class == data.labels()[i])
            .count();
        out.push(100.0 * correct as f64 / s.len() as f64);
        at += s.len();
    }
    Ok(out)
}

/// Smallest rank whose mean accuracy is within tolerance of the best rank.
pub fn select_rank(
    exec: Exec,
    fact: &Factorization,
    model: &HdcModel,
    data: &Dataset,
    train: Option<&Dataset>,
    plan: &CalibrationPlan,
) -> Result<(usize, Vec<CandidateRow>)> {
    plan.validate(model.num_classes())?;
    let subsets = draw_subsets(data, plan.subset_size, plan.num_subsets, plan.seed)?;
    let mut table = Vec::with_capacity(plan.rank_grid.len());
    for &r in &plan.rank_grid {
        let (enc, rebuilt) = fact.decompose(exec, r, train)?;
        let m = rebuilt.as_ref().unwrap_or(model);
        table.push(CandidateRow::new(
            r as f64,
            subset_accuracies(exec, &enc, m, data, &subsets)?,
        ));
    }
    let best = table
        .iter()
        .map(|row| row.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let chosen = table
        .iter()
        .find(|row| row.mean >= best - plan.tolerance)
        .expect("the best row always qualifies");
    Ok((chosen.value as usize, table))
}

/// Largest prune ratio whose mean accuracy is within tolerance of the
/// unpruned accuracy; the smallest ratio in the grid if none is.
///
/// Returns the ratio, the table, and the unpruned mean accuracy.
pub fn select_prune_ratio(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    data: &Dataset,
    plan: &CalibrationPlan,
) -> Result<(f64, Vec<CandidateRow>, f64)> {
    plan.validate(model.num_classes())?;
    for &ratio in &plan.prune_grid {
        pruned_dim(enc.output_dim(), ratio, model.num_classes())?;
    }
    let subsets = draw_subsets(data, plan.subset_size, plan.num_subsets, plan.seed)?;
    let base = CandidateRow::new(0.0, subset_accuracies(exec, enc, model, data, &subsets)?).mean;
    let mut table = Vec::with_capacity(plan.prune_grid.len());
    for &ratio in &plan.prune_grid {
        let (e, m) = prune(enc, model, ratio)?;
        table.push(CandidateRow::new(
            ratio,
            subset_accuracies(exec, &e, &m, data, &subsets)?,
        ));
    }
    let chosen = table
        .iter()
        .rev()
        .find(|row| row.mean >= base - plan.tolerance)
        .map_or(plan.prune_grid[0], |row| row.value);
    Ok((chosen, table, base))
}

/// Mean top-1 minus top-2 cosine margin over every sample.
pub fn calibrate_threshold(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    data: &Dataset,
) -> Result<f64> {
    let preds = predict_dataset(exec, enc, model, data)?;
    Ok(preds.iter().map(|p| p.margin).sum::<f64>() / preds.len() as f64)
}

/// Pick rank and prune ratio, compress with them, and set `τ` on the
/// compressed model. Stage accuracies and `τ` use the union of the
/// calibration subsets drawn from `calib`. `cfg` supplies bitwidth, mode, targets and seed; its
/// rank and prune ratio are replaced by the calibrated ones.
pub fn calibrate_and_compress(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    calib: &Dataset,
    train: Option<&Dataset>,
    cfg: &CompressionConfig,
    plan: &CalibrationPlan,
) -> Result<(PipelineArtifacts, CalibrationReport)> {
    plan.validate(model.num_classes())?;
    let r_max = *plan.rank_grid.last().expect("validated nonempty");
    let fact = Factorization::new(exec, enc, r_max, cfg.mode, cfg.seed, train)?;
    let (rank, rank_table) = select_rank(exec, &fact, model, calib, train, plan)?;

    let (enc_r, rebuilt) = fact.decompose(exec, rank, train)?;
    let model_r = rebuilt.unwrap_or_else(|| model.clone());
    let (ratio, prune_table, unpruned_mean) =
        select_prune_ratio(exec, &enc_r, &model_r, calib, plan)?;

    let mut cfg = cfg.clone();
    cfg.rank = rank;
    cfg.prune_ratio = ratio;
    let subsets = draw_subsets(calib, plan.subset_size, plan.num_subsets, plan.seed)?;
    let pool = calib.subset(&subsets.concat());
    let art = run_pipeline_with(exec, &fact, model, &cfg, &pool, train)?;
    let tau = calibrate_threshold(exec, &art.encoder, &art.model, &pool)?;
    Ok((
        art,
        CalibrationReport {
            chosen_rank: rank,
            chosen_prune_ratio: ratio,
            tau,
            unpruned_mean,
            rank_table,
            prune_table,
        },
    ))
}
