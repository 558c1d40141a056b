//! Paired teacher/IMU samples: preprocessing, synthetic generation and the
//! on-disk dataset formats.

mod files;
mod preprocess;
mod projection;
mod synthetic;

pub use files::{
    read_dataset, read_embeddings, read_embeddings_raw, write_dataset, write_embeddings,
    DatasetMeta, ManifestRecord, EMBEDDING_MAGIC, EMBEDDING_VERSION, WINDOW_MAGIC, WINDOW_VERSION,
};
pub use preprocess::{
    resample_linear, sensitivity_normalize, window_segments, R_ACC, R_GYRO, TARGET_RATE_HZ,
    WINDOW_SECONDS,
};
pub use projection::{fixed_random_projection, RandomProjection};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticData};

use crate::encoder::ImuWindow;
use crate::error::{Error, Result};
use crate::tensor::UnitVec;

/// One aligned (teacher embedding, IMU window) pair. Labels are only read by
/// the evaluation probe.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: u64,
    pub window: ImuWindow,
    pub teacher: UnitVec,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub samples: Vec<PairedSample>,
}

impl Dataset {
    pub fn new(num_classes: usize, samples: Vec<PairedSample>) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (c, t, d) = (first.window.channels(), first.window.len(), first.teacher.dim());
            for s in &samples {
                if s.window.channels() != c || s.window.len() != t || s.teacher.dim() != d {
                    return Err(Error::ShapeMismatch(format!(
                        "sample {} does not match the dataset shape {c}×{t}, d={d}",
                        s.id
                    )));
                }
                if let Some(label) = s.label {
                    if label >= num_classes {
                        return Err(Error::Malformed(format!(
                            "sample {} has label {label} but there are {num_classes} classes",
                            s.id
                        )));
                    }
                }
            }
        }
        Ok(Self {
            num_classes,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(channels, window_len, embed_dim)` of the first sample.
    pub fn shape(&self) -> Option<(usize, usize, usize)> {
        self.samples
            .first()
            .map(|s| (s.window.channels(), s.window.len(), s.teacher.dim()))
    }

    pub fn windows(&self) -> Vec<ImuWindow> {
        self.samples.iter().map(|s| s.window.clone()).collect()
    }

    /// Labels of every sample; fails if any sample is unlabeled.
    pub fn labels(&self) -> Result<Vec<usize>> {
        self.samples
            .iter()
            .map(|s| {
                s.label
                    .ok_or_else(|| Error::Malformed(format!("sample {} has no label", s.id)))
            })
            .collect()
    }
}
