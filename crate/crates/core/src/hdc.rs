//! Linear random-projection HDC classifier.
//!
//! Projection matrices are stored feature-major: `P` is `F × D` with one row
//! per input feature, so encoding is `h = xᵀP`, accumulated row by row. The
//! decomposed encoder stores `P1` (`F × r`) and `P2` (`r × D′`) and computes
//! `h = (xᵀP1)P2`. There is no nonlinearity after projection.
//!
//! Similarity is cosine, accumulated over fixed chunks of `L = ⌈D′/C⌉`
//! dimensions. [`HdcModel::predict_full`] and the adaptive engine share the
//! chunked kernel, so with elimination and early exit disabled the two agree
//! exactly. When the model carries `query_bits`, queries are quantized per
//! vector with the MSE grid and dot products run on integers.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::tensor::{
    axpy, dot, gemm, norm, quantize_row_mse, vecmat, DenseMatrix, QuantizedTensor,
};

/// Rows encoded per batched product.
pub const ENCODE_BATCH: usize = 256;

/// A real matrix or a per-row quantized one.
///
/// The quantized variant keeps its dequantized image alongside, which is what
/// every real-valued kernel reads.
#[derive(Debug, Clone, PartialEq)]
pub enum Matrix {
    Real(DenseMatrix),
    Quantized {
        q: QuantizedTensor,
        dense: DenseMatrix,
    },
}

impl Matrix {
    pub fn quantized(q: QuantizedTensor) -> Self {
        let dense = q.dequantize();
        Matrix::Quantized { q, dense }
    }

    pub fn rows(&self) -> usize {
        self.dense().rows()
    }

    pub fn cols(&self) -> usize {
        self.dense().cols()
    }

    /// Real values, dequantized if needed.
    pub fn dense(&self) -> &DenseMatrix {
        match self {
            Matrix::Real(m) => m,
            Matrix::Quantized { dense, .. } => dense,
        }
    }

    pub fn as_quantized(&self) -> Option<&QuantizedTensor> {
        match self {
            Matrix::Real(_) => None,
            Matrix::Quantized { q, .. } => Some(q),
        }
    }

    pub fn bitwidth(&self) -> Option<u8> {
        self.as_quantized().map(QuantizedTensor::bitwidth)
    }
}

impl From<DenseMatrix> for Matrix {
    fn from(m: DenseMatrix) -> Self {
        Matrix::Real(m)
    }
}

impl From<QuantizedTensor> for Matrix {
    fn from(q: QuantizedTensor) -> Self {
        Matrix::quantized(q)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Encoder {
    Full { p: Matrix },
    Decomposed { p1: Matrix, p2: Matrix },
}

impl Encoder {
    pub fn full(p: impl Into<Matrix>) -> Result<Self> {
        let p = p.into();
        if p.rows() == 0 || p.cols() == 0 {
            return Err(Error::dim("projection matrix must be nonempty"));
        }
        Ok(Encoder::Full { p })
    }

    pub fn decomposed(p1: impl Into<Matrix>, p2: impl Into<Matrix>) -> Result<Self> {
        let (p1, p2) = (p1.into(), p2.into());
        if p1.cols() != p2.rows() {
            return Err(Error::dim(format!(
                "P1 is {}x{} but P2 is {}x{}",
                p1.rows(),
                p1.cols(),
                p2.rows(),
                p2.cols()
            )));
        }
        if p1.rows() == 0 || p1.cols() == 0 || p2.cols() == 0 {
            return Err(Error::dim("decomposed factors must be nonempty"));
        }
        Ok(Encoder::Decomposed { p1, p2 })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Full { p } => p.rows(),
            Encoder::Decomposed { p1, .. } => p1.rows(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Full { p } => p.cols(),
            Encoder::Decomposed { p2, .. } => p2.cols(),
        }
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            Encoder::Full { .. } => None,
            Encoder::Decomposed { p1, .. } => Some(p1.cols()),
        }
    }

    pub fn is_decomposed(&self) -> bool {
        matches!(self, Encoder::Decomposed { .. })
    }

    /// Multiply-accumulates for one encode: `F·D`, or `F·r + r·D′`.
    pub fn encode_macs(&self) -> u64 {
        match self {
            Encoder::Full { p } => (p.rows() * p.cols()) as u64,
            Encoder::Decomposed { p1, p2 } => {
                (p1.rows() * p1.cols() + p2.rows() * p2.cols()) as u64
            }
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "encoder expects {} features, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        match self {
            Encoder::Full { p } => vecmat(x, p.dense()),
            Encoder::Decomposed { p1, p2 } => vecmat(&vecmat(x, p1.dense())?, p2.dense()),
        }
    }

    /// Encode every row of `x`. Row `i` of the result is bit-identical to
    /// `encode(x.row(i))`.
    pub fn encode_batch(&self, exec: Exec, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::dim(format!(
                "encoder expects {} features, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(match self {
            Encoder::Full { p } => gemm(exec, x, p.dense()),
            Encoder::Decomposed { p1, p2 } => gemm(exec, &gemm(exec, x, p1.dense()), p2.dense()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::dim("dataset has no samples"));
        }
        if labels.len() != features.rows() {
            return Err(Error::dim(format!(
                "{} samples but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::dim(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn into_parts(self) -> (DenseMatrix, Vec<usize>) {
        (self.features, self.labels)
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class: usize,
    /// Top-1 minus top-2 cosine.
    pub margin: f64,
}

/// A query ready for chunked scoring against one model.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    kind: QueryKind,
    norm: f64,
}

#[derive(Debug, Clone)]
enum QueryKind {
    Real(Vec<f64>),
    Int { codes: Vec<i8>, scale: f64 },
}

/// Running dot product of a query with one class, in the query's arithmetic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartialDot {
    Real(f64),
    Int(i64),
}

/// Class hypervectors (`C × D′`), their norms, and the query precision.
#[derive(Debug, Clone, PartialEq)]
pub struct HdcModel {
    class_hvs: Matrix,
    norms: Vec<f64>,
    query_bits: Option<u8>,
}

impl HdcModel {
    pub fn new(class_hvs: impl Into<Matrix>, query_bits: Option<u8>) -> Result<Self> {
        let class_hvs = class_hvs.into();
        if class_hvs.rows() < 2 {
            return Err(Error::config(format!(
                "model needs at least 2 classes, got {}",
                class_hvs.rows()
            )));
        }
        if class_hvs.cols() == 0 {
            return Err(Error::dim("class hypervectors have zero dimensions"));
        }
        if let Some(b) = query_bits {
            crate::tensor::check_bitwidth(b)?;
            if class_hvs.as_quantized().is_none() {
                return Err(Error::config(
                    "integer queries need quantized class hypervectors",
                ));
            }
        }
        let norms: Vec<f64> = class_hvs.dense().row_iter().map(norm).collect();
        if let Some(c) = norms.iter().position(|&n| n == 0.0) {
            return Err(Error::Degenerate(format!(
                "class {c} hypervector has zero norm"
            )));
        }
        Ok(Self {
            class_hvs,
            norms,
            query_bits,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_hvs.rows()
    }

    pub fn dim(&self) -> usize {
        self.class_hvs.cols()
    }

    pub fn class_hvs(&self) -> &Matrix {
        &self.class_hvs
    }

    pub fn class_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn query_bits(&self) -> Option<u8> {
        self.query_bits
    }

    /// Chunk length `⌈D′/C⌉` shared by full and adaptive scoring.
    pub fn chunk_len(&self) -> usize {
        self.dim().div_ceil(self.num_classes())
    }

    /// Multiply-accumulates for one full similarity pass, `C·D′`.
    pub fn similarity_macs(&self) -> u64 {
        (self.num_classes() * self.dim()) as u64
    }

    pub fn prepare(&self, h: &[f64]) -> Result<PreparedQuery> {
        if h.len() != self.dim() {
            return Err(Error::dim(format!(
                "model has {} dimensions, query has {}",
                self.dim(),
                h.len()
            )));
        }
        let kind = match self.query_bits {
            None => QueryKind::Real(h.to_vec()),
            Some(b) => {
                let (codes, scale) = quantize_row_mse(h, b)?;
                QueryKind::Int { codes, scale }
            }
        };
        let n = match &kind {
            QueryKind::Real(v) => norm(v),
            QueryKind::Int { codes, scale } => {
                let ss: i64 = codes.iter().map(|&c| c as i64 * c as i64).sum();
                (ss as f64).sqrt() * scale
            }
        };
        if n == 0.0 {
            return Err(Error::Degenerate("query hypervector has zero norm".into()));
        }
        Ok(PreparedQuery { kind, norm: n })
    }

    pub fn zero_dot(&self, q: &PreparedQuery) -> PartialDot {
        match q.kind {
            QueryKind::Real(_) => PartialDot::Real(0.0),
            QueryKind::Int { .. } => PartialDot::Int(0),
        }
    }

    /// Add the dot product of `q` and class `c` over `dims` into `acc`.
    pub fn accumulate(
        &self,
        c: usize,
        q: &PreparedQuery,
        dims: Range<usize>,
        acc: &mut PartialDot,
    ) {
        match (&q.kind, acc) {
            (QueryKind::Real(h), PartialDot::Real(z)) => {
                let w = &self.class_hvs.dense().row(c)[dims.clone()];
                *z += dot(&h[dims], w);
            }
            (QueryKind::Int { codes, .. }, PartialDot::Int(z)) => {
                let w = &self
                    .class_hvs
                    .as_quantized()
                    .expect("integer queries imply a quantized model")
                    .row_values(c)[dims.clone()];
                *z += codes[dims]
                    .iter()
                    .zip(w)
                    .map(|(&a, &b)| a as i64 * b as i64)
                    .sum::<i64>();
            }
            _ => unreachable!("accumulator kind follows the query kind"),
        }
    }

    /// Cosine implied by a (possibly partial) dot, normalized by full norms.
    pub fn cosine_of(&self, c: usize, q: &PreparedQuery, acc: PartialDot) -> f64 {
        let z = match (acc, &q.kind) {
            (PartialDot::Real(z), _) => z,
            (PartialDot::Int(z), QueryKind::Int { scale, .. }) => {
                let sc = self.class_hvs.as_quantized().expect("quantized").scale(c);
                z as f64 * scale * sc
            }
            (PartialDot::Int(_), QueryKind::Real(_)) => unreachable!(),
        };
        z / (q.norm * self.norms[c])
    }

    /// Cosine against every class, accumulated chunk by chunk.
    pub fn cosines(&self, h: &[f64]) -> Result<Vec<f64>> {
        let q = self.prepare(h)?;
        Ok(self.cosines_prepared(&q))
    }

    pub(crate) fn cosines_prepared(&self, q: &PreparedQuery) -> Vec<f64> {
        let (d, l) = (self.dim(), self.chunk_len());
        (0..self.num_classes())
            .map(|c| {
                let mut acc = self.zero_dot(q);
                for start in (0..d).step_by(l) {
                    self.accumulate(c, q, start..(start + l).min(d), &mut acc);
                }
                self.cosine_of(c, q, acc)
            })
            .collect()
    }

    pub fn predict_full(&self, h: &[f64]) -> Result<Prediction> {
        Ok(top_two(&self.cosines(h)?))
    }
}

/// Argmax with lowest-index tie-break, and the top-1 minus top-2 gap.
pub fn top_two(scores: &[f64]) -> Prediction {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    let second = scores
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &s)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    Prediction {
        class: best,
        margin: scores[best] - second,
    }
}

fn check_training_data(enc: &Encoder, data: &Dataset) -> Result<()> {
    if data.num_features() != enc.input_dim() {
        return Err(Error::dim(format!(
            "encoder expects {} features, dataset has {}",
            enc.input_dim(),
            data.num_features()
        )));
    }
    if data.num_classes() < 2 {
        return Err(Error::Training("need at least 2 classes".into()));
    }
    if let Some(c) = data.class_counts().iter().position(|&n| n == 0) {
        return Err(Error::Training(format!(
            "class {c} has no training samples"
        )));
    }
    Ok(())
}

/// Sum of encoded samples per class.
///
/// The encoder is linear, so inputs are summed per class first and each sum is
/// encoded once.
pub fn train_centroid(exec: Exec, enc: &Encoder, data: &Dataset) -> Result<HdcModel> {
    check_training_data(enc, data)?;
    let f = data.num_features();
    let mut sums = DenseMatrix::zeros(data.num_classes(), f);
    for (x, &l) in data.features().row_iter().zip(data.labels()) {
        axpy(1.0, x, sums.row_mut(l));
    }
    HdcModel::new(enc.encode_batch(exec, &sums)?, None)
}

/// Mispredict-driven refinement on top of the centroid model.
///
/// For each sample in order, when the predicted class `p` differs from the
/// label `t`: `W[t] += lr·(1−δt)·h` and `W[p] −= lr·(1−δp)·h`, where `δ` are
/// cosines using the norms from the start of the epoch. Norms are refreshed
/// after every epoch.
///
/// The encoder is linear (`h = xᵀP`), so the updates are tracked in input
/// space: `W = W₀ + A·P` with `A` of shape `C×F`, and every dot product goes
/// through `B = P·W₀ᵀ` and the Gram matrix `G = P·Pᵀ`. A sample then costs
/// `F²` multiply-accumulates instead of `F·D`, and nothing is re-encoded.
pub fn train_adaptive(
    exec: Exec,
    enc: &Encoder,
    data: &Dataset,
    lr: f64,
    epochs: usize,
) -> Result<HdcModel> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::config(format!(
            "learning rate {lr} must be finite and >= 0"
        )));
    }
    let base = train_centroid(exec, enc, data)?;
    if epochs == 0 || lr == 0.0 {
        return Ok(base);
    }
    let (c, f) = (data.num_classes(), data.num_features());
    // effective projection, row i = encode(e_i)
    let p = enc.encode_batch(exec, &DenseMatrix::identity(f))?;
    let pt = p.transpose();
    let gram = gemm(exec, &p, &pt);
    let w0 = base.class_hvs.dense().clone();
    let b = gemm(exec, &p, &w0.transpose()).transpose(); // C×F, row k = P·W₀[k]
    let mut a = DenseMatrix::zeros(c, f);
    let mut norms = base.norms;
    let mut sims = vec![0.0; c];

    let explicit = |a: &DenseMatrix| -> DenseMatrix {
        let mut w = gemm(exec, a, &p);
        w.as_mut_slice()
            .iter_mut()
            .zip(w0.as_slice())
            .for_each(|(v, w0)| *v += w0);
        w
    };

    for _ in 0..epochs {
        for start in (0..data.len()).step_by(ENCODE_BATCH) {
            let idx: Vec<usize> = (start..(start + ENCODE_BATCH).min(data.len())).collect();
            let xs = data.features().select_rows(&idx);
            let us = gemm(exec, &xs, &gram);
            for ((x, u), &i) in xs.row_iter().zip(us.row_iter()).zip(&idx) {
                let hn2 = dot(x, u);
                if hn2 <= 0.0 {
                    continue;
                }
                let hn = hn2.sqrt();
                for (k, s) in sims.iter_mut().enumerate() {
                    *s = (dot(x, b.row(k)) + dot(u, a.row(k))) / (hn * norms[k]);
                }
                let pred = top_two(&sims).class;
                let t = data.labels()[i];
                if pred != t {
                    axpy(lr * (1.0 - sims[t]), x, a.row_mut(t));
                    axpy(-lr * (1.0 - sims[pred]), x, a.row_mut(pred));
                }
            }
        }
        norms = explicit(&a).row_iter().map(norm).collect();
        if let Some(k) = norms.iter().position(|&n| n == 0.0 || !n.is_finite()) {
            return Err(Error::Training(format!(
                "class {k} hypervector collapsed during training"
            )));
        }
    }
    HdcModel::new(explicit(&a), None)
}

/// Encode `data` in batches and hand each batch's hypervectors to `f` with
/// the index of its first sample.
pub fn for_each_encoded(
    exec: Exec,
    enc: &Encoder,
    features: &DenseMatrix,
    mut f: impl FnMut(usize, &DenseMatrix) -> Result<()>,
) -> Result<()> {
    let n = features.rows();
    for start in (0..n).step_by(ENCODE_BATCH) {
        let idx: Vec<usize> = (start..(start + ENCODE_BATCH).min(n)).collect();
        let hs = enc.encode_batch(exec, &features.select_rows(&idx))?;
        f(start, &hs)?;
    }
    Ok(())
}

/// Full-similarity predictions for every sample.
pub fn predict_dataset(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    data: &Dataset,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(data.len());
    for_each_encoded(exec, enc, data.features(), |_, hs| {
        let preds = par::map_range(exec, hs.rows(), |i| model.predict_full(hs.row(i)));
        for p in preds {
            out.push(p?);
        }
        Ok(())
    })?;
    Ok(out)
}

/// Fraction of samples classified correctly, in `[0, 1]`.
pub fn accuracy(exec: Exec, enc: &Encoder, model: &HdcModel, data: &Dataset) -> Result<f64> {
    let preds = predict_dataset(exec, enc, model, data)?;
    let correct = preds
        .iter()
        .zip(data.labels())
        .filter(|(p, &l)| p.class == l)
        .count();
    Ok(correct as f64 / data.len() as f64)
}
