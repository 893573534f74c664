//! Binary container for an encoder, a model and the input standardization.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "DPQH"
//! version      u16      1
//! F, r, D', C  u32 × 4  r = 0 for a full encoder
//! tensor tags  u8 × k   one per tensor (P, or P1 and P2, then W):
//!                       0 = f32 values, b in 2..=8 = b-bit packed
//! query bits   u8       0 = real-valued queries
//! std flag     u8       1 if standardization stats follow
//! stats        f64 × 2F means, then stds (only when flagged)
//! payload len  u64
//! payload               tensors in tag order; f32 tensors are row-major
//!                       values, packed tensors are the bit stream of all
//!                       values followed by one f32 scale per row
//! ```
//!
//! Class norms are recomputed on load. Values are held as `f64` in memory and
//! rounded to `f32` when written, so loading and saving again reproduces the
//! file byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::datasets::Standardizer;
use crate::error::{Error, Result};
use crate::hdc::{Encoder, HdcModel, Matrix};
use crate::tensor::{BitPackedBuffer, DenseMatrix, QuantizedTensor};

pub const MAGIC: &[u8; 4] = b"DPQH";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub standardizer: Option<Standardizer>,
    pub encoder: Encoder,
    pub model: HdcModel,
}

impl ModelBundle {
    pub fn new(
        standardizer: Option<Standardizer>,
        encoder: Encoder,
        model: HdcModel,
    ) -> Result<Self> {
        if encoder.output_dim() != model.dim() {
            return Err(Error::dim(format!(
                "encoder outputs {} dimensions, model has {}",
                encoder.output_dim(),
                model.dim()
            )));
        }
        if let Some(s) = &standardizer {
            if s.features() != encoder.input_dim() {
                return Err(Error::dim("standardizer and encoder disagree on F"));
            }
        }
        Ok(Self {
            standardizer,
            encoder,
            model,
        })
    }

    fn tensors(&self) -> Vec<&Matrix> {
        let mut v = match &self.encoder {
            Encoder::Full { p } => vec![p],
            Encoder::Decomposed { p1, p2 } => vec![p1, p2],
        };
        v.push(self.model.class_hvs());
        v
    }

    /// Length of everything before the payload.
    pub fn header_len(&self) -> usize {
        let stats = self.standardizer.as_ref().map_or(0, |s| 16 * s.features());
        4 + 2 + 16 + self.tensors().len() + 1 + 1 + stats + 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for m in self.tensors() {
            match m.as_quantized() {
                None => {
                    for &v in m.dense().as_slice() {
                        payload.extend_from_slice(&(v as f32).to_le_bytes());
                    }
                }
                Some(q) => {
                    payload.extend_from_slice(q.pack().bytes());
                    for &s in q.scales() {
                        payload.extend_from_slice(&(s as f32).to_le_bytes());
                    }
                }
            }
        }

        let mut out = Vec::with_capacity(self.header_len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let dims = [
            self.encoder.input_dim(),
            self.encoder.rank().unwrap_or(0),
            self.model.dim(),
            self.model.num_classes(),
        ];
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for m in self.tensors() {
            out.push(m.bitwidth().unwrap_or(0));
        }
        out.push(self.model.query_bits().unwrap_or(0));
        match &self.standardizer {
            None => out.push(0),
            Some(s) => {
                out.push(1);
                for v in s.mean.iter().chain(&s.std) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        debug_assert_eq!(out.len(), self.header_len());
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        if r.take(4)? != MAGIC {
            return Err(r.fail(0, "bad magic, expected \"DPQH\""));
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(r.fail(4, &format!("unsupported version {version}")));
        }
        let f = r.u32()? as usize;
        let rank = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let classes = r.u32()? as usize;
        let shapes: Vec<(usize, usize)> = if rank == 0 {
            vec![(f, dim), (classes, dim)]
        } else {
            vec![(f, rank), (rank, dim), (classes, dim)]
        };
        let mut tags = Vec::with_capacity(shapes.len());
        for _ in &shapes {
            let at = r.pos;
            let t = r.u8()?;
            if t != 0 && !(2..=8).contains(&t) {
                return Err(r.fail(at, &format!("invalid tensor tag {t}")));
            }
            tags.push(t);
        }
        let qb_at = r.pos;
        let query_bits = match r.u8()? {
            0 => None,
            b @ 2..=8 => Some(b),
            b => return Err(r.fail(qb_at, &format!("invalid query bitwidth {b}"))),
        };
        let flag_at = r.pos;
        let standardizer = match r.u8()? {
            0 => None,
            1 => {
                let mean = (0..f).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let std = (0..f).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                Some(Standardizer { mean, std })
            }
            x => return Err(r.fail(flag_at, &format!("invalid standardizer flag {x}"))),
        };
        let declared = u64::from_le_bytes(r.array()?) as usize;
        let payload_start = r.pos;

        let mut mats = Vec::with_capacity(shapes.len());
        for (&(rows, cols), &tag) in shapes.iter().zip(&tags) {
            let at = r.pos;
            let m = if tag == 0 {
                let data = (0..rows * cols)
                    .map(|_| r.f32().map(f64::from))
                    .collect::<Result<Vec<_>>>()?;
                Matrix::Real(DenseMatrix::new(rows, cols, data).map_err(|e| r.wrap(at, e))?)
            } else {
                let nbytes = BitPackedBuffer::byte_len_for(rows * cols, tag);
                let packed =
                    BitPackedBuffer::from_bytes(tag, rows * cols, r.take(nbytes)?.to_vec())
                        .map_err(|e| r.wrap(at, e))?;
                let scales = (0..rows)
                    .map(|_| r.f32().map(f64::from))
                    .collect::<Result<Vec<_>>>()?;
                Matrix::quantized(
                    QuantizedTensor::from_packed(rows, cols, &packed, scales)
                        .map_err(|e| r.wrap(at, e))?,
                )
            };
            mats.push(m);
        }
        if r.pos - payload_start != declared {
            return Err(r.fail(
                payload_start - 8,
                &format!(
                    "payload length {declared} disagrees with the tensors ({} bytes)",
                    r.pos - payload_start
                ),
            ));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, "trailing bytes after payload"));
        }

        let w = mats.pop().expect("model tensor");
        let encoder = if rank == 0 {
            Encoder::full(mats.pop().expect("P"))
        } else {
            let p2 = mats.pop().expect("P2");
            Encoder::decomposed(mats.pop().expect("P1"), p2)
        }
        .map_err(|e| r.wrap(payload_start, e))?;
        let model = HdcModel::new(w, query_bits).map_err(|e| r.wrap(payload_start, e))?;
        ModelBundle::new(standardizer, encoder, model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Write to a sibling temporary file, then rename over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".{}.tmp", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, at: usize, msg: &str) -> Error {
        Error::parse(self.path, format!("byte {at}"), msg)
    }

    fn wrap(&self, at: usize, e: Error) -> Error {
        self.fail(at, &e.to_string())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(
                self.pos,
                &format!(
                    "truncated: need {n} more bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}
