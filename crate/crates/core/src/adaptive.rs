//! Chunked similarity with class elimination and early exit.
//!
//! Dot products are built `L = ⌈D′/C⌉` dimensions at a time for the active
//! classes only. After each chunk the partial cosines (normalized by full
//! norms) rank the active set: while more than `C/2` classes remain the two
//! weakest are dropped, afterwards one, never leaving fewer than two. Once at
//! most `⌈C/2⌉` classes remain, a top-1 minus top-2 gap of at least `τ` ends
//! the query. The loop also stops when two classes remain or the dimensions
//! run out, and the answer is the best partial cosine among survivors. Only
//! when no chunk was processed at all (`C ≤ 2`) are the survivors' dot
//! products computed over every dimension.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdc::{for_each_encoded, top_two, Dataset, Encoder, HdcModel, PartialDot};
use crate::par::{self, Exec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveConfig {
    pub tau: f64,
    pub elimination: bool,
    pub early_exit: bool,
}

impl AdaptiveConfig {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            elimination: true,
            early_exit: true,
        }
    }

    /// Both mechanisms off: equivalent to full evaluation.
    pub fn disabled() -> Self {
        Self {
            tau: f64::INFINITY,
            elimination: false,
            early_exit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(Error::config(format!(
                "threshold {} must be >= 0",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveOutcome {
    pub class: usize,
    pub macs: u64,
    pub exited_early: bool,
    pub rounds: usize,
}

/// State after one round of chunk accumulation and elimination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: usize,
    pub active: usize,
    pub dims: usize,
    pub margin: f64,
    pub exited_early: bool,
}

pub fn predict_adaptive(m: &HdcModel, h: &[f64], cfg: &AdaptiveConfig) -> Result<AdaptiveOutcome> {
    run(m, h, cfg, None)
}

pub fn predict_adaptive_traced(
    m: &HdcModel,
    h: &[f64],
    cfg: &AdaptiveConfig,
    trace: &mut Vec<TraceRecord>,
) -> Result<AdaptiveOutcome> {
    run(m, h, cfg, Some(trace))
}

fn run(
    m: &HdcModel,
    h: &[f64],
    cfg: &AdaptiveConfig,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<AdaptiveOutcome> {
    cfg.validate()?;
    let q = m.prepare(h)?;
    let (c, d_total, l) = (m.num_classes(), m.dim(), m.chunk_len());
    let half = c as f64 / 2.0;
    let exit_guard = c.div_ceil(2);

    let mut active: Vec<usize> = (0..c).collect();
    let mut z: Vec<PartialDot> = vec![m.zero_dot(&q); c];
    let mut d = 0;
    let mut macs = 0u64;
    let mut rounds = 0;
    let mut exited = false;

    while active.len() > 2 && d < d_total {
        let end = (d + l).min(d_total);
        for &i in &active {
            m.accumulate(i, &q, d..end, &mut z[i]);
        }
        macs += (active.len() * (end - d)) as u64;
        d = end;
        rounds += 1;

        if cfg.elimination {
            let k = if active.len() as f64 > half { 2 } else { 1 };
            let k = k.min(active.len() - 2);
            let mut ranked: Vec<(f64, usize)> = active
                .iter()
                .map(|&i| (m.cosine_of(i, &q, z[i]), i))
                .collect();
            // weakest first; among equals the higher index goes first
            ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            let dropped: Vec<usize> = ranked[..k].iter().map(|&(_, i)| i).collect();
            active.retain(|i| !dropped.contains(i));
        }

        let scores: Vec<f64> = active.iter().map(|&i| m.cosine_of(i, &q, z[i])).collect();
        let margin = top_two(&scores).margin;
        if cfg.early_exit && active.len() <= exit_guard && margin >= cfg.tau {
            exited = true;
        }
        if let Some(t) = trace.as_deref_mut() {
            t.push(TraceRecord {
                round: rounds,
                active: active.len(),
                dims: d,
                margin,
                exited_early: exited,
            });
        }
        if exited {
            break;
        }
    }

    if d == 0 {
        for start in (0..d_total).step_by(l) {
            let end = (start + l).min(d_total);
            for &i in &active {
                m.accumulate(i, &q, start..end, &mut z[i]);
            }
        }
        macs += (active.len() * d_total) as u64;
    }

    let scores: Vec<f64> = active.iter().map(|&i| m.cosine_of(i, &q, z[i])).collect();
    let best = top_two(&scores).class;
    Ok(AdaptiveOutcome {
        class: active[best],
        macs,
        exited_early: exited,
        rounds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpsReport {
    pub samples: usize,
    /// `100·(1 − Σ adaptive MACs / Σ full MACs)`.
    pub reduction_percent: f64,
    pub accuracy_adaptive: f64,
    pub accuracy_full: f64,
    pub mean_macs: f64,
    pub p50_macs: u64,
    pub p90_macs: u64,
    pub p99_macs: u64,
    pub full_macs_per_sample: u64,
    pub early_exit_rate: f64,
}

/// Run full and adaptive prediction over `data` and compare cost and accuracy.
pub fn measure_ops_reduction(
    exec: Exec,
    enc: &Encoder,
    m: &HdcModel,
    data: &Dataset,
    cfg: &AdaptiveConfig,
) -> Result<OpsReport> {
    cfg.validate()?;
    let mut outcomes = Vec::with_capacity(data.len());
    for_each_encoded(exec, enc, data.features(), |_, hs| {
        let batch = par::map_range(exec, hs.rows(), |i| -> Result<_> {
            let h = hs.row(i);
            Ok((predict_adaptive(m, h, cfg)?, m.predict_full(h)?.class))
        });
        for r in batch {
            outcomes.push(r?);
        }
        Ok(())
    })?;

    let n = outcomes.len();
    let full = m.similarity_macs();
    let mut macs: Vec<u64> = outcomes.iter().map(|(o, _)| o.macs).collect();
    let total: u64 = macs.iter().sum();
    macs.sort_unstable();
    let pct = |p: f64| macs[(((n - 1) as f64) * p).round() as usize];
    let labels = data.labels();
    let hits = |f: &dyn Fn(&(AdaptiveOutcome, usize)) -> usize| {
        outcomes
            .iter()
            .zip(labels)
            .filter(|(o, &l)| f(o) == l)
            .count() as f64
            / n as f64
    };
    Ok(OpsReport {
        samples: n,
        reduction_percent: 100.0 * (1.0 - total as f64 / (full * n as u64) as f64),
        accuracy_adaptive: hits(&|o| o.0.class),
        accuracy_full: hits(&|o| o.1),
        mean_macs: total as f64 / n as f64,
        p50_macs: pct(0.5),
        p90_macs: pct(0.9),
        p99_macs: pct(0.99),
        full_macs_per_sample: full,
        early_exit_rate: outcomes.iter().filter(|(o, _)| o.exited_early).count() as f64 / n as f64,
    })
}
