//! Sub-byte two's-complement packing.
//!
//! Layout: value `i` occupies stream bits `[i*b, (i+1)*b)`, least significant
//! bit first, where stream bit `k` is bit `k % 8` of byte `k / 8`. Unused high
//! bits of the final byte are zero.

use crate::error::{Error, Result};

use super::check_bitwidth;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPackedBuffer {
    bitwidth: u8,
    logical_len: usize,
    bytes: Vec<u8>,
}

impl BitPackedBuffer {
    pub fn byte_len_for(len: usize, bitwidth: u8) -> usize {
        (len * bitwidth as usize).div_ceil(8)
    }

    pub fn from_bytes(bitwidth: u8, logical_len: usize, bytes: Vec<u8>) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        let want = Self::byte_len_for(logical_len, bitwidth);
        if bytes.len() != want {
            return Err(Error::dim(format!(
                "{logical_len} values at {bitwidth} bits need {want} bytes, got {}",
                bytes.len()
            )));
        }
        Ok(Self {
            bitwidth,
            logical_len,
            bytes,
        })
    }

    pub fn bitwidth(&self) -> u8 {
        self.bitwidth
    }

    pub fn logical_len(&self) -> usize {
        self.logical_len
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

pub fn pack_bits(values: &[i8], bitwidth: u8) -> Result<BitPackedBuffer> {
    check_bitwidth(bitwidth)?;
    let lo = -(1i16 << (bitwidth - 1));
    let hi = (1i16 << (bitwidth - 1)) - 1;
    let mask = ((1u16 << bitwidth) - 1) as u64;
    let mut bytes = vec![0u8; BitPackedBuffer::byte_len_for(values.len(), bitwidth)];

    let mut acc: u64 = 0;
    let mut acc_bits = 0u32;
    let mut out = 0usize;
    for &v in values {
        if !(lo..=hi).contains(&(v as i16)) {
            return Err(Error::Range {
                value: v as i64,
                bits: bitwidth,
            });
        }
        acc |= ((v as i64 as u64) & mask) << acc_bits;
        acc_bits += bitwidth as u32;
        while acc_bits >= 8 {
            bytes[out] = acc as u8;
            out += 1;
            acc >>= 8;
            acc_bits -= 8;
        }
    }
    if acc_bits > 0 {
        bytes[out] = acc as u8;
    }
    Ok(BitPackedBuffer {
        bitwidth,
        logical_len: values.len(),
        bytes,
    })
}

pub fn unpack_bits(buf: &BitPackedBuffer) -> Vec<i8> {
    let b = buf.bitwidth as u32;
    let mask = (1u64 << b) - 1;
    let sign = 1u64 << (b - 1);
    let mut out = Vec::with_capacity(buf.logical_len);
    let mut acc: u64 = 0;
    let mut acc_bits = 0u32;
    let mut bytes = buf.bytes.iter();
    for _ in 0..buf.logical_len {
        while acc_bits < b {
            // Length was validated at construction.
            acc |= (*bytes.next().expect("packed buffer too short") as u64) << acc_bits;
            acc_bits += 8;
        }
        let raw = acc & mask;
        acc >>= b;
        acc_bits -= b;
        // sign-extend
        let v = if raw & sign != 0 {
            raw as i64 - (1i64 << b)
        } else {
            raw as i64
        };
        out.push(v as i8);
    }
    out
}
