//! Static memory and multiply-accumulate accounting.
//!
//! Real matrices cost 4 bytes per entry (32-bit floats). A quantized matrix
//! costs its bit-packed payload, `⌈rows·cols·b/8⌉` bytes, plus one 4-byte scale
//! per row. Class norms are derived data and are not stored. These are exactly
//! the payload sizes written by [`crate::container`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::hdc::{Encoder, HdcModel, Matrix};
use crate::tensor::BitPackedBuffer;

pub const FLOAT_BYTES: u64 = 4;
pub const SCALE_BYTES: u64 = 4;

/// Bytes for a matrix's values, and separately for its scales.
pub fn matrix_bytes(m: &Matrix) -> (u64, u64) {
    match m.as_quantized() {
        None => ((m.rows() * m.cols()) as u64 * FLOAT_BYTES, 0),
        Some(q) => (
            BitPackedBuffer::byte_len_for(q.rows() * q.cols(), q.bitwidth()) as u64,
            q.rows() as u64 * SCALE_BYTES,
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    /// Encoder values, scales excluded.
    pub encoder_bytes: u64,
    /// Class hypervector values, scales excluded.
    pub model_bytes: u64,
    /// All per-row scales of encoder and model.
    pub scale_bytes: u64,
}

impl Footprint {
    pub fn total_bytes(&self) -> u64 {
        self.encoder_bytes + self.model_bytes + self.scale_bytes
    }
}

pub fn footprint(enc: &Encoder, model: &HdcModel) -> Footprint {
    let mats: Vec<&Matrix> = match enc {
        Encoder::Full { p } => vec![p],
        Encoder::Decomposed { p1, p2 } => vec![p1, p2],
    };
    let (mut encoder_bytes, mut scale_bytes) = (0, 0);
    for m in mats {
        let (v, s) = matrix_bytes(m);
        encoder_bytes += v;
        scale_bytes += s;
    }
    let (model_bytes, ms) = matrix_bytes(model.class_hvs());
    Footprint {
        encoder_bytes,
        model_bytes,
        scale_bytes: scale_bytes + ms,
    }
}

/// The uncompressed reference: full `F × D` float projection and `C × D` float model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Baseline {
    pub features: usize,
    pub dim: usize,
    pub classes: usize,
}

impl Baseline {
    pub fn total_bytes(&self) -> u64 {
        ((self.features + self.classes) * self.dim) as u64 * FLOAT_BYTES
    }

    pub fn encode_macs(&self) -> u64 {
        (self.features * self.dim) as u64
    }

    pub fn similarity_macs(&self) -> u64 {
        (self.classes * self.dim) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub encoder_bytes: u64,
    pub model_bytes: u64,
    pub scale_bytes: u64,
    pub total_bytes: u64,
    pub encode_macs: u64,
    pub similarity_macs_full: u64,
    /// Baseline total bytes over this report's total bytes.
    pub reduction_vs_baseline: f64,
    pub baseline: Baseline,
}

pub fn account(enc: &Encoder, model: &HdcModel, baseline: Baseline) -> CostReport {
    let fp = footprint(enc, model);
    CostReport {
        encoder_bytes: fp.encoder_bytes,
        model_bytes: fp.model_bytes,
        scale_bytes: fp.scale_bytes,
        total_bytes: fp.total_bytes(),
        encode_macs: enc.encode_macs(),
        similarity_macs_full: model.similarity_macs(),
        reduction_vs_baseline: baseline.total_bytes() as f64 / fp.total_bytes() as f64,
        baseline,
    }
}

/// MAC-count stand-in for an end-to-end speedup:
/// `(encode + similarity of the baseline) / (encode of the compressed + mean adaptive MACs)`.
pub fn speedup_proxy(
    baseline: &CostReport,
    compressed: &CostReport,
    adaptive_macs_mean: f64,
) -> f64 {
    (baseline.encode_macs + baseline.similarity_macs_full) as f64
        / (compressed.encode_macs as f64 + adaptive_macs_mean)
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = &self.baseline;
        writeln!(f, "{:<24}{:>14}", "encoder bytes", self.encoder_bytes)?;
        writeln!(f, "{:<24}{:>14}", "model bytes", self.model_bytes)?;
        writeln!(f, "{:<24}{:>14}", "scale bytes", self.scale_bytes)?;
        writeln!(f, "{:<24}{:>14}", "total bytes", self.total_bytes)?;
        writeln!(f, "{:<24}{:>14}", "encode MACs", self.encode_macs)?;
        writeln!(
            f,
            "{:<24}{:>14}",
            "similarity MACs", self.similarity_macs_full
        )?;
        writeln!(
            f,
            "{:<24}{:>13.2}x",
            "memory reduction", self.reduction_vs_baseline
        )?;
        write!(
            f,
            "baseline: F={} D={} C={} float32, {} bytes",
            b.features,
            b.dim,
            b.classes,
            b.total_bytes()
        )
    }
}
