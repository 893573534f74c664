//! Run configuration: a TOML file, then command-line overrides.
//!
//! ```toml
//! seed = 1
//! dim = 10000
//!
//! [data]
//! kind = "mnist"            # mnist | fashion-mnist | isolet | blobs
//! # dir = "data/mnist"      # default: <data-dir>/<kind>
//!
//! [train]
//! mode = "centroid"         # centroid | adaptive
//! lr = 0.035
//! epochs = 5
//!
//! [compression]
//! rank = 256
//! prune_ratio = 0.7
//! bitwidth = 3
//! mode = "weighted-svd"     # svd-approx | fresh-random | weighted-svd
//!
//! [calibration]             # optional; when present, rank and prune ratio are chosen
//! rank_grid = [64, 128, 256, 512]
//! prune_grid = [0.0, 0.5, 0.7]
//!
//! [adaptive]
//! # tau = 0.2               # default: calibrated on the compressed model
//! ```

use std::path::{Path, PathBuf};

use dpqhd::compression::{
    CompressionConfig, DecompositionMode, QuantizeTargets, DEFAULT_QUERY_BITS,
};
use dpqhd::datasets::{BlobParams, DataSource};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Mnist,
    FashionMnist,
    Isolet,
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    pub dir: Option<PathBuf>,
    // synthetic blobs only
    pub classes: usize,
    pub features: usize,
    pub samples_per_class: usize,
    pub separation: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Mnist,
            dir: None,
            classes: 3,
            features: 16,
            samples_per_class: 300,
            separation: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Centroid,
    Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Centroid,
            lr: 0.035,
            epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressionSection {
    pub rank: usize,
    pub prune_ratio: f64,
    pub bitwidth: u8,
    pub mode: DecompositionMode,
    pub query_bits: u8,
    pub quantize_p1: bool,
    pub quantize_p2: bool,
    pub quantize_w: bool,
}

impl Default for CompressionSection {
    fn default() -> Self {
        Self {
            rank: 256,
            prune_ratio: 0.7,
            bitwidth: 3,
            mode: DecompositionMode::SvdApprox,
            query_bits: DEFAULT_QUERY_BITS,
            quantize_p1: true,
            quantize_p2: true,
            quantize_w: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationSection {
    pub subset_size: usize,
    pub num_subsets: usize,
    pub rank_grid: Vec<usize>,
    pub prune_grid: Vec<f64>,
    pub tolerance: f64,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let p = dpqhd::calibration::CalibrationPlan::default();
        Self {
            subset_size: p.subset_size,
            num_subsets: p.num_subsets,
            rank_grid: p.rank_grid,
            prune_grid: p.prune_grid,
            tolerance: p.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveSection {
    pub tau: Option<f64>,
    pub elimination: bool,
    pub early_exit: bool,
}

impl Default for AdaptiveSection {
    fn default() -> Self {
        Self {
            tau: None,
            elimination: true,
            early_exit: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub dim: usize,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub compression: CompressionSection,
    pub calibration: Option<CalibrationSection>,
    pub adaptive: AdaptiveSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 10_000,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            compression: CompressionSection::default(),
            calibration: None,
            adaptive: AdaptiveSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.dim == 0 {
            return Err(CliError::usage("dim must be at least 1"));
        }
        Ok(())
    }

    pub fn source(&self, data_dir: &Path) -> DataSource {
        let dir = |name: &str| self.data.dir.clone().unwrap_or_else(|| data_dir.join(name));
        match self.data.kind {
            DataKind::Mnist => DataSource::Mnist { dir: dir("mnist") },
            DataKind::FashionMnist => DataSource::FashionMnist {
                dir: dir("fashion-mnist"),
            },
            DataKind::Isolet => DataSource::Isolet { dir: dir("isolet") },
            DataKind::Blobs => DataSource::SyntheticBlobs(BlobParams {
                classes: self.data.classes,
                features: self.data.features,
                samples_per_class: self.data.samples_per_class,
                separation: self.data.separation,
                seed: dpqhd::rng::derive_seed(self.seed, "blobs"),
            }),
        }
    }

    pub fn compression_config(&self) -> CompressionConfig {
        let c = &self.compression;
        CompressionConfig {
            rank: c.rank,
            prune_ratio: c.prune_ratio,
            bitwidth: c.bitwidth,
            mode: c.mode,
            targets: QuantizeTargets {
                p1: c.quantize_p1,
                p2: c.quantize_p2,
                w: c.quantize_w,
            },
            query_bits: c.query_bits,
            seed: dpqhd::rng::derive_seed(self.seed, "compression"),
        }
    }

    pub fn calibration_plan(&self) -> Option<dpqhd::calibration::CalibrationPlan> {
        self.calibration
            .as_ref()
            .map(|c| dpqhd::calibration::CalibrationPlan {
                subset_size: c.subset_size,
                num_subsets: c.num_subsets,
                rank_grid: c.rank_grid.clone(),
                prune_grid: c.prune_grid.clone(),
                tolerance: c.tolerance,
                seed: dpqhd::rng::derive_seed(self.seed, "calibration"),
            })
    }
}
