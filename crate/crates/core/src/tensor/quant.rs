use crate::error::{Error, Result};

use super::{pack_bits, unpack_bits, BitPackedBuffer, DenseMatrix};

pub const MIN_BITS: u8 = 2;
pub const MAX_BITS: u8 = 8;

pub fn check_bitwidth(bits: u8) -> Result<()> {
    if (MIN_BITS..=MAX_BITS).contains(&bits) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "bitwidth {bits} outside [{MIN_BITS}, {MAX_BITS}]"
        )))
    }
}

/// Largest code magnitude used by the symmetric quantizer, `2^(b-1) - 1`.
pub fn qmax(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Number of candidate scales searched per channel.
pub const SCALE_CANDIDATES: usize = 10;

/// The `k`-th candidate scale (`k` in `1..=10`) for a channel with base scale `s`.
pub fn candidate_scale(s: f64, k: usize) -> f64 {
    s * k as f64 / SCALE_CANDIDATES as f64
}

/// Codes for `row` at `scale`: round half away from zero, clip to `±qmax`.
pub fn quantize_with_scale(row: &[f64], scale: f64, bits: u8) -> Vec<i8> {
    let q = qmax(bits) as f64;
    row.iter()
        .map(|&x| (x / scale).round().clamp(-q, q) as i8)
        .collect()
}

/// Mean squared reconstruction error of `codes * scale` against `row`.
pub fn reconstruction_mse(row: &[f64], codes: &[i8], scale: f64) -> f64 {
    if row.is_empty() {
        return 0.0;
    }
    let sse: f64 = row
        .iter()
        .zip(codes)
        .map(|(&x, &c)| {
            let e = x - c as f64 * scale;
            e * e
        })
        .sum();
    sse / row.len() as f64
}

/// MSE grid search for one channel.
///
/// Base scale `s = max|row| / qmax`; candidates are `s·k/10` for `k = 1..=10`,
/// searched in increasing order with a strict `<`, so the smallest candidate
/// wins ties. An all-zero row gets scale 1.0 and zero codes.
pub fn quantize_row_mse(row: &[f64], bits: u8) -> Result<(Vec<i8>, f64)> {
    check_bitwidth(bits)?;
    let amax = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !amax.is_finite() {
        let index = row.iter().position(|x| !x.is_finite()).unwrap_or(0);
        return Err(Error::NonFinite { index });
    }
    if amax == 0.0 {
        return Ok((vec![0; row.len()], 1.0));
    }
    let s = amax / qmax(bits) as f64;
    let mut best: Option<(f64, Vec<i8>, f64)> = None;
    for k in 1..=SCALE_CANDIDATES {
        let scale = candidate_scale(s, k);
        let codes = quantize_with_scale(row, scale, bits);
        let mse = reconstruction_mse(row, &codes, scale);
        if best.as_ref().is_none_or(|(m, _, _)| mse < *m) {
            best = Some((mse, codes, scale));
        }
    }
    let (_, codes, scale) = best.expect("at least one candidate");
    Ok((codes, scale))
}

/// Signed integer values with one positive scale per row.
///
/// Row `i` dequantizes to `values[i, j] * scales[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    values: Vec<i8>,
    scales: Vec<f64>,
    bitwidth: u8,
}

impl QuantizedTensor {
    pub fn new(
        rows: usize,
        cols: usize,
        values: Vec<i8>,
        scales: Vec<f64>,
        bitwidth: u8,
    ) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        if values.len() != rows * cols || scales.len() != rows {
            return Err(Error::dim(format!(
                "quantized {rows}x{cols} needs {} values and {rows} scales, got {} and {}",
                rows * cols,
                values.len(),
                scales.len()
            )));
        }
        let lo = -(1i16 << (bitwidth - 1));
        let hi = (1i16 << (bitwidth - 1)) - 1;
        if let Some(&v) = values.iter().find(|&&v| !(lo..=hi).contains(&(v as i16))) {
            return Err(Error::Range {
                value: v as i64,
                bits: bitwidth,
            });
        }
        if let Some(i) = scales.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::config(format!(
                "scale {} of row {i} is not a positive finite number",
                scales[i]
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            scales,
            bitwidth,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bitwidth(&self) -> u8 {
        self.bitwidth
    }

    pub fn values(&self) -> &[i8] {
        &self.values
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn row_values(&self, i: usize) -> &[i8] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&self, i: usize) -> f64 {
        self.scales[i]
    }

    pub fn dequantized_row(&self, i: usize) -> Vec<f64> {
        let s = self.scales[i];
        self.row_values(i).iter().map(|&q| q as f64 * s).collect()
    }

    pub fn dequantize(&self) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.values.len());
        for i in 0..self.rows {
            let s = self.scales[i];
            data.extend(self.row_values(i).iter().map(|&q| q as f64 * s));
        }
        DenseMatrix::from_raw(self.rows, self.cols, data)
    }

    /// Whole-tensor row-major stream, `ceil(rows*cols*b/8)` bytes.
    pub fn pack(&self) -> BitPackedBuffer {
        pack_bits(&self.values, self.bitwidth).expect("values validated at construction")
    }

    pub fn from_packed(
        rows: usize,
        cols: usize,
        packed: &BitPackedBuffer,
        scales: Vec<f64>,
    ) -> Result<Self> {
        if packed.logical_len() != rows * cols {
            return Err(Error::dim("packed length does not match shape"));
        }
        Self::new(rows, cols, unpack_bits(packed), scales, packed.bitwidth())
    }
}
