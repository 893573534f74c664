//! Decomposition, pruning and quantization of a trained encoder/model pair.
//!
//! Stages always run in the order D, P, Q:
//!
//! * **D** replaces `P` (`F × D`) by `P1 · P2` of rank `r`.
//! * **P** keeps the leading `D′ = round(D·(1 − ratio))` output dimensions of
//!   `P2` and of every class hypervector.
//! * **Q** quantizes `P1`, `P2` and `W` row by row with the MSE grid search in
//!   [`quantize_row_mse`].

use serde::{Deserialize, Serialize};

use crate::cost;
use crate::error::{Error, Result};
use crate::hdc::{accuracy, train_centroid, Dataset, Encoder, HdcModel, Matrix};
use crate::par::{self, Exec};
use crate::rng::derive_seed;
use crate::tensor::{
    gemm, gen_gaussian_matrix, norm, truncated_svd_with, DenseMatrix, QuantizedTensor,
};

pub use crate::tensor::quantize_row_mse as quantize_vector_mse;

/// Default precision of quantized query hypervectors.
pub const DEFAULT_QUERY_BITS: u8 = 8;

/// How `P1`, `P2` are obtained from `P`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecompositionMode {
    /// Truncated SVD of `P`: `P1 = U·diag(S)`, `P2 = Vᵀ`. Keeps the trained model.
    #[default]
    SvdApprox,
    /// Fresh seeded Gaussian factors; the model is rebuilt by one centroid pass.
    FreshRandom,
    /// Truncated SVD in the metric of the training inputs: minimizes
    /// `‖X·P − X·P1·P2‖_F` instead of `‖P − P1·P2‖_F`. Keeps the trained model.
    WeightedSvd,
}

impl DecompositionMode {
    pub fn needs_train_data(self) -> bool {
        !matches!(self, DecompositionMode::SvdApprox)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantizeTargets {
    pub p1: bool,
    pub p2: bool,
    pub w: bool,
}

impl Default for QuantizeTargets {
    fn default() -> Self {
        Self {
            p1: true,
            p2: true,
            w: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionConfig {
    pub rank: usize,
    pub prune_ratio: f64,
    pub bitwidth: u8,
    #[serde(default)]
    pub mode: DecompositionMode,
    #[serde(default)]
    pub targets: QuantizeTargets,
    #[serde(default = "default_query_bits")]
    pub query_bits: u8,
    #[serde(default)]
    pub seed: u64,
}

fn default_query_bits() -> u8 {
    DEFAULT_QUERY_BITS
}

impl CompressionConfig {
    pub fn new(rank: usize, prune_ratio: f64, bitwidth: u8) -> Self {
        Self {
            rank,
            prune_ratio,
            bitwidth,
            mode: DecompositionMode::default(),
            targets: QuantizeTargets::default(),
            query_bits: DEFAULT_QUERY_BITS,
            seed: 0,
        }
    }

    pub fn with_mode(mut self, mode: DecompositionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self, input_dim: usize, dim: usize, classes: usize) -> Result<()> {
        check_rank(self.rank, input_dim, dim)?;
        crate::tensor::check_bitwidth(self.bitwidth)?;
        crate::tensor::check_bitwidth(self.query_bits)?;
        pruned_dim(dim, self.prune_ratio, classes).map(|_| ())
    }
}

fn check_rank(r: usize, f: usize, d: usize) -> Result<()> {
    let max = f.min(d);
    if r == 0 || r > max {
        return Err(Error::dim(format!("rank {r} outside [1, {max}]")));
    }
    Ok(())
}

/// `D′ = round(D·(1 − ratio))`, which must be at least the class count.
pub fn pruned_dim(d: usize, ratio: f64, classes: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::config(format!("prune ratio {ratio} outside [0, 1)")));
    }
    let kept = (d as f64 * (1.0 - ratio)).round() as usize;
    if kept < classes {
        return Err(Error::config(format!(
            "pruning {d} dimensions by {ratio} leaves {kept}, fewer than {classes} classes"
        )));
    }
    Ok(kept)
}

/// Rank-`r_max` factors of a full encoder; any rank up to `r_max` is read off
/// by truncation, so a rank sweep factorizes once.
#[derive(Debug, Clone)]
pub struct Factorization {
    mode: DecompositionMode,
    left: DenseMatrix,
    right: DenseMatrix,
}

impl Factorization {
    pub fn new(
        exec: Exec,
        enc: &Encoder,
        r_max: usize,
        mode: DecompositionMode,
        seed: u64,
        train: Option<&Dataset>,
    ) -> Result<Self> {
        let p = match enc {
            Encoder::Full { p: Matrix::Real(p) } => p,
            _ => {
                return Err(Error::Usage(
                    "decomposition needs a full, unquantized encoder".into(),
                ))
            }
        };
        let (f, d) = (p.rows(), p.cols());
        check_rank(r_max, f, d)?;
        if mode.needs_train_data() && train.is_none() {
            return Err(Error::Usage(format!(
                "{mode:?} decomposition needs training data"
            )));
        }
        let (left, right) = match mode {
            DecompositionMode::SvdApprox => {
                let svd = truncated_svd_with(exec, p, r_max)?;
                let mut left = svd.u;
                for i in 0..left.rows() {
                    left.row_mut(i)
                        .iter_mut()
                        .zip(&svd.s)
                        .for_each(|(v, s)| *v *= s);
                }
                (left, svd.vt)
            }
            DecompositionMode::FreshRandom => {
                // Generated so that leading columns of P1 and leading rows of
                // P2 do not depend on `r_max`.
                let p1t = gen_gaussian_matrix(r_max, f, derive_seed(seed, "p1"))?;
                let p2 = gen_gaussian_matrix(r_max, d, derive_seed(seed, "p2"))?;
                (p1t.transpose(), p2)
            }
            DecompositionMode::WeightedSvd => {
                let x = train.expect("checked above").features();
                weighted_factors(exec, p, x, r_max)?
            }
        };
        Ok(Self { mode, left, right })
    }

    pub fn max_rank(&self) -> usize {
        self.left.cols()
    }

    pub fn mode(&self) -> DecompositionMode {
        self.mode
    }

    /// Rank-`r` encoder, plus a rebuilt model when the encoded space changed.
    pub fn decompose(
        &self,
        exec: Exec,
        r: usize,
        train: Option<&Dataset>,
    ) -> Result<(Encoder, Option<HdcModel>)> {
        if r == 0 || r > self.max_rank() {
            return Err(Error::dim(format!(
                "rank {r} outside [1, {}]",
                self.max_rank()
            )));
        }
        let enc = Encoder::decomposed(self.left.leading_cols(r), self.right.leading_rows(r))?;
        let model = match self.mode {
            DecompositionMode::FreshRandom => {
                let data = train.ok_or_else(|| {
                    Error::Usage("FreshRandom decomposition needs training data".into())
                })?;
                Some(train_centroid(exec, &enc, data)?)
            }
            _ => None,
        };
        Ok((enc, model))
    }
}

/// Factors minimizing `‖X(P − P1·P2)‖_F` for the input second-moment matrix
/// `G = XᵀX/N + λI = QΛQᵀ`: with `M = Λ^{1/2}QᵀP ≈ U_r S_r V_rᵀ`,
/// `P1 = QΛ^{-1/2}U_r S_r` and `P2 = V_rᵀ`.
fn weighted_factors(
    exec: Exec,
    p: &DenseMatrix,
    x: &DenseMatrix,
    r: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let f = p.rows();
    let mut g = second_moment(exec, x);
    let trace: f64 = (0..f).map(|i| g.get(i, i)).sum();
    // Small ridge keeps Λ invertible for constant features.
    let lambda = if trace > 0.0 {
        1e-6 * trace / f as f64
    } else {
        1.0
    };
    for i in 0..f {
        g.set(i, i, g.get(i, i) + lambda);
    }
    // G is symmetric positive definite, so its SVD is its eigendecomposition.
    let eig = truncated_svd_with(exec, &g, f)?;
    let q = eig.u;
    let sqrt_l: Vec<f64> = eig.s.iter().map(|l| l.sqrt()).collect();

    let mut m = gemm(exec, &q.transpose(), p);
    m.scale_rows(&sqrt_l);
    let svd = truncated_svd_with(exec, &m, r)?;

    let mut qs = q;
    let inv: Vec<f64> = sqrt_l.iter().map(|s| 1.0 / s).collect();
    for i in 0..f {
        qs.row_mut(i)
            .iter_mut()
            .zip(&inv)
            .for_each(|(v, s)| *v *= s);
    }
    let mut left = gemm(exec, &qs, &svd.u);
    for i in 0..f {
        left.row_mut(i)
            .iter_mut()
            .zip(&svd.s)
            .for_each(|(v, s)| *v *= s);
    }
    Ok((left, svd.vt))
}

/// `XᵀX / N`, accumulated over row blocks.
fn second_moment(exec: Exec, x: &DenseMatrix) -> DenseMatrix {
    const BLOCK: usize = 512;
    let (n, f) = (x.rows(), x.cols());
    let mut g = DenseMatrix::zeros(f, f);
    for start in (0..n).step_by(BLOCK) {
        let idx: Vec<usize> = (start..(start + BLOCK).min(n)).collect();
        let xb = x.select_rows(&idx);
        let part = gemm(exec, &xb.transpose(), &xb);
        g.as_mut_slice()
            .iter_mut()
            .zip(part.as_slice())
            .for_each(|(a, b)| *a += b);
    }
    g.as_mut_slice().iter_mut().for_each(|v| *v /= n as f64);
    g
}

/// One-shot decomposition at rank `r`.
pub fn decompose_encoder(
    exec: Exec,
    enc: &Encoder,
    r: usize,
    mode: DecompositionMode,
    seed: u64,
    train: Option<&Dataset>,
) -> Result<(Encoder, Option<HdcModel>)> {
    Factorization::new(exec, enc, r, mode, seed, train)?.decompose(exec, r, train)
}

fn real(m: &Matrix, what: &str) -> Result<DenseMatrix> {
    match m {
        Matrix::Real(d) => Ok(d.clone()),
        Matrix::Quantized { .. } => Err(Error::config(format!(
            "{what} is already quantized; prune before quantizing"
        ))),
    }
}

/// Drop trailing output dimensions of the encoder and the model.
pub fn prune(enc: &Encoder, model: &HdcModel, ratio: f64) -> Result<(Encoder, HdcModel)> {
    let d = enc.output_dim();
    if model.dim() != d {
        return Err(Error::dim(format!(
            "encoder outputs {d} dimensions, model has {}",
            model.dim()
        )));
    }
    let kept = pruned_dim(d, ratio, model.num_classes())?;
    if kept == d {
        return Ok((enc.clone(), model.clone()));
    }
    let enc = match enc {
        Encoder::Full { p } => Encoder::full(real(p, "P")?.leading_cols(kept))?,
        Encoder::Decomposed { p1, p2 } => {
            Encoder::decomposed(p1.clone(), real(p2, "P2")?.leading_cols(kept))?
        }
    };
    let w = real(model.class_hvs(), "W")?.leading_cols(kept);
    Ok((enc, HdcModel::new(w, model.query_bits())?))
}

/// Row-wise MSE grid quantization of a whole matrix.
pub fn quantize_mse(exec: Exec, t: &DenseMatrix, bits: u8) -> Result<QuantizedTensor> {
    crate::tensor::check_bitwidth(bits)?;
    let rows = par::map_range(exec, t.rows(), |i| quantize_vector_mse(t.row(i), bits));
    let mut values = Vec::with_capacity(t.rows() * t.cols());
    let mut scales = Vec::with_capacity(t.rows());
    for r in rows {
        let (v, s) = r?;
        values.extend(v);
        scales.push(s);
    }
    QuantizedTensor::new(t.rows(), t.cols(), values, scales, bits)
}

/// Quantize the selected tensors of a decomposed encoder and its model.
pub fn quantize(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    bits: u8,
    targets: QuantizeTargets,
    query_bits: u8,
) -> Result<(Encoder, HdcModel)> {
    let q = |m: &Matrix, on: bool, what: &str| -> Result<Matrix> {
        if !on {
            return Ok(m.clone());
        }
        Ok(Matrix::quantized(quantize_mse(
            exec,
            &real(m, what)?,
            bits,
        )?))
    };
    let enc = match enc {
        Encoder::Decomposed { p1, p2 } => {
            Encoder::decomposed(q(p1, targets.p1, "P1")?, q(p2, targets.p2, "P2")?)?
        }
        Encoder::Full { .. } => {
            return Err(Error::Usage(
                "quantization expects a decomposed encoder".into(),
            ))
        }
    };
    let w = q(model.class_hvs(), targets.w, "W")?;
    let qb = targets.w.then_some(query_bits);
    Ok((enc, HdcModel::new(w, qb)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "D")]
    Decompose,
    #[serde(rename = "P")]
    Prune,
    #[serde(rename = "Q")]
    Quantize,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Decompose => "D",
            Stage::Prune => "D+P",
            Stage::Quantize => "D+P+Q",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub accuracy: f64,
    pub total_bytes: u64,
    pub encode_macs: u64,
    pub similarity_macs: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineArtifacts {
    pub encoder: Encoder,
    pub model: HdcModel,
    pub config: CompressionConfig,
    pub provenance: Vec<StageRecord>,
}

fn record(
    exec: Exec,
    stage: Stage,
    enc: &Encoder,
    model: &HdcModel,
    calib: &Dataset,
) -> Result<StageRecord> {
    let c = cost::footprint(enc, model);
    Ok(StageRecord {
        stage,
        accuracy: accuracy(exec, enc, model, calib)?,
        total_bytes: c.total_bytes(),
        encode_macs: enc.encode_macs(),
        similarity_macs: model.similarity_macs(),
    })
}

/// Decompose, prune and quantize, scoring each stage on `calib`.
pub fn run_pipeline(
    exec: Exec,
    enc: &Encoder,
    model: &HdcModel,
    cfg: &CompressionConfig,
    calib: &Dataset,
    train: Option<&Dataset>,
) -> Result<PipelineArtifacts> {
    let fact = Factorization::new(exec, enc, cfg.rank, cfg.mode, cfg.seed, train)?;
    run_pipeline_with(exec, &fact, model, cfg, calib, train)
}

/// [`run_pipeline`] reusing an existing factorization of rank ≥ `cfg.rank`.
pub fn run_pipeline_with(
    exec: Exec,
    fact: &Factorization,
    model: &HdcModel,
    cfg: &CompressionConfig,
    calib: &Dataset,
    train: Option<&Dataset>,
) -> Result<PipelineArtifacts> {
    if fact.mode() != cfg.mode {
        return Err(Error::config("factorization mode differs from the config"));
    }
    cfg.validate(fact.left.rows(), fact.right.cols(), model.num_classes())?;
    let mut provenance = Vec::with_capacity(3);

    let (enc, rebuilt) = fact.decompose(exec, cfg.rank, train)?;
    let model = rebuilt.unwrap_or_else(|| model.clone());
    provenance.push(record(exec, Stage::Decompose, &enc, &model, calib)?);

    let (enc, model) = prune(&enc, &model, cfg.prune_ratio)?;
    provenance.push(record(exec, Stage::Prune, &enc, &model, calib)?);

    let (enc, model) = quantize(
        exec,
        &enc,
        &model,
        cfg.bitwidth,
        cfg.targets,
        cfg.query_bits,
    )?;
    provenance.push(record(exec, Stage::Quantize, &enc, &model, calib)?);

    Ok(PipelineArtifacts {
        encoder: enc,
        model,
        config: cfg.clone(),
        provenance,
    })
}

/// Error norms for quantizing after zeroing trailing dimensions.
///
/// With `s` keeping the first `keep` entries and `q` the single-channel MSE
/// quantizer, returns `(‖x − q(s(x))‖, ‖x − q(x)‖ + ‖x − s(x)‖)`.
pub fn composed_error_norms(x: &[f64], keep: usize, bits: u8) -> Result<(f64, f64)> {
    if keep == 0 || keep > x.len() {
        return Err(Error::dim(format!("keep {keep} outside [1, {}]", x.len())));
    }
    let requant = |v: &[f64]| -> Result<Vec<f64>> {
        let (codes, s) = quantize_vector_mse(v, bits)?;
        Ok(codes.iter().map(|&c| c as f64 * s).collect())
    };
    let mut sx = x.to_vec();
    sx[keep..].iter_mut().for_each(|v| *v = 0.0);
    let diff = |a: &[f64], b: &[f64]| -> f64 {
        norm(&a.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>())
    };
    let lhs = diff(x, &requant(&sx)?);
    let eq = diff(x, &requant(x)?);
    let es = diff(x, &sx);
    Ok((lhs, eq + es))
}
