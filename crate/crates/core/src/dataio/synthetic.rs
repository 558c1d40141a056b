//! Class-conditional synthetic pairs.
//!
//! Teacher embeddings scatter around per-class anchor directions; IMU windows
//! are per-class sinusoid banks. The two modalities share only the class
//! variable, never values.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, PairedSample};
use crate::encoder::ImuWindow;
use crate::error::{Error, Result};
use crate::tensor::{dot_slice, normalize_slice, UnitVec};

/// Largest allowed cosine between two class anchors.
pub const MAX_ANCHOR_DOT: f64 = 0.5;
const MAX_ANCHOR_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub window_len: usize,
    pub embed_dim: usize,
    pub teacher_noise_sigma: f64,
    pub imu_noise_sigma: f64,
    /// Per-sample phase offset drawn from `U(−phase_jitter, phase_jitter)`
    /// radians, independently per channel.
    pub phase_jitter: f64,
    pub sample_rate_hz: f64,
    /// Drives sample noise and the train/test split.
    pub seed: u64,
    /// Drives class anchors and class phases. Datasets generated with the same
    /// anchor seed share classes; defaults to `seed`.
    pub anchor_seed: Option<u64>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 5,
            train_per_class: 40,
            test_per_class: 20,
            channels: 6,
            window_len: 100,
            embed_dim: 32,
            teacher_noise_sigma: 0.05,
            imu_noise_sigma: 2.0,
            phase_jitter: 0.0,
            sample_rate_hz: 20.0,
            seed: 42,
            anchor_seed: None,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
            ("channels", self.channels),
            ("window_len", self.window_len),
            ("embed_dim", self.embed_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes = {} but the probe needs at least 2 classes",
                self.num_classes
            )));
        }
        for (name, v) in [
            ("teacher_noise_sigma", self.teacher_noise_sigma),
            ("imu_noise_sigma", self.imu_noise_sigma),
            ("phase_jitter", self.phase_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("sample_rate_hz must be positive".into()));
        }
        Ok(())
    }

    pub fn anchor_seed(&self) -> u64 {
        self.anchor_seed.unwrap_or(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub anchors: Vec<UnitVec>,
}

fn sample_anchors(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<Vec<UnitVec>> {
    let mut anchors: Vec<UnitVec> = Vec::with_capacity(cfg.num_classes);
    for _ in 0..cfg.num_classes {
        let mut placed = false;
        for _ in 0..MAX_ANCHOR_ATTEMPTS {
            let v: Vec<f64> = (0..cfg.embed_dim).map(|_| StandardNormal.sample(rng)).collect();
            let Ok(candidate) = normalize_slice(&v) else {
                continue;
            };
            if anchors
                .iter()
                .all(|a| dot_slice(a.as_slice(), candidate.as_slice()) <= MAX_ANCHOR_DOT)
            {
                anchors.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::RejectionOverflow {
                num_classes: cfg.num_classes,
                dim: cfg.embed_dim,
                max_dot: MAX_ANCHOR_DOT,
            });
        }
    }
    Ok(anchors)
}

/// Generates disjoint train and test sets, each shuffled.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut class_rng = ChaCha8Rng::seed_from_u64(cfg.anchor_seed());
    let anchors = sample_anchors(cfg, &mut class_rng)?;
    let phases: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| (0..cfg.channels).map(|_| class_rng.random_range(0.0..2.0 * PI)).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let teacher_noise = Normal::new(0.0, cfg.teacher_noise_sigma).expect("validated sigma");
    let imu_noise = Normal::new(0.0, cfg.imu_noise_sigma).expect("validated sigma");
    let t_len = cfg.window_len as f64;
    let per_class = cfg.train_per_class + cfg.test_per_class;

    let mut train = Vec::with_capacity(cfg.num_classes * cfg.train_per_class);
    let mut test = Vec::with_capacity(cfg.num_classes * cfg.test_per_class);
    for (class, anchor) in anchors.iter().enumerate() {
        let mut samples = Vec::with_capacity(per_class);
        for _ in 0..per_class {
            let teacher_raw: Vec<f64> = anchor
                .as_slice()
                .iter()
                .map(|a| a + teacher_noise.sample(&mut rng))
                .collect();
            let teacher = normalize_slice(&teacher_raw)?;
            let mut samples_ct = Vec::with_capacity(cfg.channels * cfg.window_len);
            for k in 0..cfg.channels {
                let freq = ((class + 1) * (k + 1)) as f64 / t_len;
                let jitter = if cfg.phase_jitter > 0.0 {
                    rng.random_range(-cfg.phase_jitter..=cfg.phase_jitter)
                } else {
                    0.0
                };
                let phase = phases[class][k] + jitter;
                for t in 0..cfg.window_len {
                    let clean = (2.0 * PI * freq * t as f64 + phase).sin();
                    samples_ct.push(clean + imu_noise.sample(&mut rng));
                }
            }
            let window = ImuWindow::new(cfg.channels, cfg.window_len, samples_ct, cfg.sample_rate_hz)?;
            samples.push((window, teacher));
        }
        samples.shuffle(&mut rng);
        let mut it = samples.into_iter();
        for (window, teacher) in it.by_ref().take(cfg.train_per_class) {
            train.push((class, window, teacher));
        }
        for (window, teacher) in it {
            test.push((class, window, teacher));
        }
    }
    train.shuffle(&mut rng);
    test.shuffle(&mut rng);

    let n_train = train.len() as u64;
    let to_samples = |rows: Vec<(usize, ImuWindow, UnitVec)>, first_id: u64| -> Vec<PairedSample> {
        rows.into_iter()
            .enumerate()
            .map(|(i, (label, window, teacher))| PairedSample {
                id: first_id + i as u64,
                window,
                teacher,
                label: Some(label),
            })
            .collect()
    };
    Ok(SyntheticData {
        train: Dataset::new(cfg.num_classes, to_samples(train, 0))?,
        test: Dataset::new(cfg.num_classes, to_samples(test, n_train))?,
        anchors,
    })
}
