//! MNIST-style IDX files, the ISOLET text files, and seeded Gaussian blobs.
//!
//! Image pixels are scaled to `[0, 1]`. Per-feature standardization is a
//! separate step ([`Standardizer`]) fitted on the training split.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hdc::Dataset;
use crate::rng::{derive_seed, SeededRng};
use crate::tensor::DenseMatrix;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const ISOLET_FEATURES: usize = 617;
pub const ISOLET_CLASSES: usize = 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    /// Distance between class centers in units of the within-class std.
    pub separation: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Mnist { dir: PathBuf },
    FashionMnist { dir: PathBuf },
    Isolet { dir: PathBuf },
    SyntheticBlobs(BlobParams),
}

pub fn load(src: &DataSource, split: Split) -> Result<Dataset> {
    match src {
        DataSource::Mnist { dir } | DataSource::FashionMnist { dir } => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            load_idx_pair(
                &dir.join(format!("{prefix}-images-idx3-ubyte")),
                &dir.join(format!("{prefix}-labels-idx1-ubyte")),
                10,
            )
        }
        DataSource::Isolet { dir } => {
            let name = match split {
                Split::Train => "isolet1+2+3+4.data",
                Split::Test => "isolet5.data",
            };
            load_isolet(&dir.join(name))
        }
        DataSource::SyntheticBlobs(p) => synthetic_blobs(p, split),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::parse(
                path,
                format!("byte {offset}"),
                format!("header truncated: file has {} bytes", bytes.len()),
            )
        })
}

fn check_magic(bytes: &[u8], want: u32, path: &Path) -> Result<()> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != want {
        return Err(Error::parse(
            path,
            "byte 0",
            format!("bad magic {magic:#010x}, expected {want:#010x}"),
        ));
    }
    Ok(())
}

/// Raw pixels of an IDX3 image file: `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let want = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < want {
        return Err(Error::parse(
            path,
            format!("byte {}", 16 + body.len()),
            format!("truncated: {n} images of {rows}x{cols} need {want} bytes after the header, found {}", body.len()),
        ));
    }
    Ok((n, rows * cols, body[..want].to_vec()))
}

/// Labels of an IDX1 file.
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::parse(
            path,
            format!("byte {}", 8 + body.len()),
            format!("truncated: {n} labels declared, found {}", body.len()),
        ));
    }
    Ok(body[..n].to_vec())
}

pub fn load_idx_pair(images: &Path, labels: &Path, classes: usize) -> Result<Dataset> {
    let (n, f, pixels) = parse_idx_images(&read_file(images)?, images)?;
    let lab = parse_idx_labels(&read_file(labels)?, labels)?;
    if lab.len() != n {
        return Err(Error::parse(
            labels,
            "byte 4",
            format!(
                "{} labels but {} has {n} images",
                lab.len(),
                images.display()
            ),
        ));
    }
    if let Some(i) = lab.iter().position(|&l| l as usize >= classes) {
        return Err(Error::parse(
            labels,
            format!("byte {}", 8 + i),
            format!("label {} outside [0, {classes})", lab[i]),
        ));
    }
    let data = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Dataset::new(
        DenseMatrix::new(n, f, data)?,
        lab.iter().map(|&l| l as usize).collect(),
        classes,
    )
}

/// Comma-separated rows of 617 features followed by a 1-based class label.
pub fn parse_isolet(text: &str, path: &Path) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("line {}", lineno + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != ISOLET_FEATURES + 1 {
            return Err(Error::parse(
                path,
                loc(),
                format!(
                    "expected {} fields, found {}",
                    ISOLET_FEATURES + 1,
                    fields.len()
                ),
            ));
        }
        for (j, f) in fields[..ISOLET_FEATURES].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| {
                Error::parse(
                    path,
                    loc(),
                    format!("field {} is not a number: {f:?}", j + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(Error::parse(
                    path,
                    loc(),
                    format!("field {} is not finite", j + 1),
                ));
            }
            data.push(v);
        }
        let raw = fields[ISOLET_FEATURES];
        let label: f64 = raw
            .parse()
            .map_err(|_| Error::parse(path, loc(), format!("label {raw:?} is not a number")))?;
        if label.fract() != 0.0 || !(1.0..=ISOLET_CLASSES as f64).contains(&label) {
            return Err(Error::parse(
                path,
                loc(),
                format!("label {raw:?} outside 1..={ISOLET_CLASSES}"),
            ));
        }
        labels.push(label as usize - 1);
    }
    if labels.is_empty() {
        return Err(Error::parse(path, "line 1", "no samples"));
    }
    Dataset::new(
        DenseMatrix::new(labels.len(), ISOLET_FEATURES, data)?,
        labels,
        ISOLET_CLASSES,
    )
}

pub fn load_isolet(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| {
        Error::parse(
            path,
            format!("byte {}", e.utf8_error().valid_up_to()),
            "not UTF-8",
        )
    })?;
    parse_isolet(&text, path)
}

/// Isotropic unit-variance blobs centered at `separation · e_c`: each center
/// sits `separation` standard deviations from the origin along its own axis,
/// and centers are `separation·√2` apart. Samples cycle through the
/// classes. Train and test draw from independent streams.
pub fn synthetic_blobs(p: &BlobParams, split: Split) -> Result<Dataset> {
    if p.classes < 2 || p.features < p.classes || p.samples_per_class == 0 {
        return Err(Error::config(format!(
            "blobs need 2 <= classes <= features and samples > 0 (got C={}, F={}, n={})",
            p.classes, p.features, p.samples_per_class
        )));
    }
    if !(p.separation.is_finite() && p.separation >= 0.0) {
        return Err(Error::config("blob separation must be finite and >= 0"));
    }
    let label = match split {
        Split::Train => "blobs-train",
        Split::Test => "blobs-test",
    };
    let mut rng = SeededRng::new(derive_seed(p.seed, label));
    let n = p.classes * p.samples_per_class;
    let mut data = Vec::with_capacity(n * p.features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % p.classes;
        for j in 0..p.features {
            let center = if j == c { p.separation } else { 0.0 };
            data.push(center + rng.normal());
        }
        labels.push(c);
    }
    Dataset::new(DenseMatrix::new(n, p.features, data)?, labels, p.classes)
}

/// Per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Population statistics; constant features get std 1.
    pub fn fit(x: &DenseMatrix) -> Self {
        let (n, f) = (x.rows() as f64, x.cols());
        let mut mean = vec![0.0; f];
        for row in x.row_iter() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(features: usize) -> Self {
        Self {
            mean: vec![0.0; features],
            std: vec![1.0; features],
        }
    }

    pub fn features(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.cols() != self.features() {
            return Err(Error::dim(format!(
                "standardizer fitted on {} features, data has {}",
                self.features(),
                x.cols()
            )));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn apply_dataset(&self, d: &Dataset) -> Result<Dataset> {
        Dataset::new(
            self.apply(d.features())?,
            d.labels().to_vec(),
            d.num_classes(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, r: u32, c: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    #[test]
    fn parses_tiny_idx() {
        let b = idx_images(2, 1, 2, &[0, 255, 128, 1]);
        let (n, f, px) = parse_idx_images(&b, Path::new("x")).unwrap();
        assert_eq!((n, f), (2, 2));
        assert_eq!(px, vec![0, 255, 128, 1]);
    }

    #[test]
    fn bad_magic_names_offset_zero() {
        let mut b = idx_images(1, 1, 1, &[0]);
        b[3] = 0x01;
        let err = parse_idx_images(&b, Path::new("img")).unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");
        assert!(err.is_data_error());
    }

    #[test]
    fn truncated_pixels_are_reported() {
        let b = idx_images(2, 2, 2, &[0; 5]);
        let err = parse_idx_images(&b, Path::new("img")).unwrap_err();
        assert!(err.to_string().contains("byte 21"), "{err}");
    }

    #[test]
    fn truncated_header_is_reported() {
        let err = parse_idx_labels(&[0, 0, 8, 1, 0], Path::new("lab")).unwrap_err();
        assert!(err.to_string().contains("byte 4"), "{err}");
    }

    #[test]
    fn isolet_line_errors() {
        let mut row: Vec<String> = (0..ISOLET_FEATURES)
            .map(|i| format!("{}", i as f64 / 1000.0))
            .collect();
        row.push("3.".into());
        let good = row.join(", ");
        let d = parse_isolet(&format!("{good}\n{good}\n"), Path::new("iso")).unwrap();
        assert_eq!((d.len(), d.num_features(), d.labels()[0]), (2, 617, 2));

        let short = row[1..].join(",");
        let err = parse_isolet(&format!("{good}\n{short}\n"), Path::new("iso")).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let mut bad = row.clone();
        *bad.last_mut().unwrap() = "27.".into();
        let err = parse_isolet(&bad.join(","), Path::new("iso")).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn standardizer_zero_mean_unit_var() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 5.0]]).unwrap();
        let s = Standardizer::fit(&x);
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let y = s.apply(&x).unwrap();
        assert_eq!(y.as_slice(), &[-1.0, 0.0, 1.0, 0.0]);
    }
}
