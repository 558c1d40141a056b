//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored and
//! unknown keys are errors. List values are comma separated; temperature pairs
//! are written `tau_v:tau_x`. [`RunConfig::to_text`] renders every key and
//! parses back to an identical config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::adam::AdamHyper;
use crate::dataio::SyntheticConfig;
use crate::encoder::{Arch, Pooling};
use crate::error::{Error, Result};
use crate::losses::{LossKind, Temperatures};
use crate::probe::{ProbeHyper, ProbeKind};
use crate::trainer::TrainConfig;

trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! from_str_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

from_str_value!(usize, u64, bool, Pooling, LossKind, ProbeKind);

impl ConfigValue for f64 {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err("value must be finite".into())
        }
    }
    fn render(&self) -> String {
        // Debug prints the shortest representation that parses back exactly.
        format!("{self:?}")
    }
}

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s))
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Temperatures {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let (v, x) = s.split_once(':').ok_or("expected tau_v:tau_x")?;
        Ok(Temperatures {
            tau_v: f64::parse_value(v.trim())?,
            tau_x: f64::parse_value(x.trim())?,
        })
    }
    fn render(&self) -> String {
        format!("{}:{}", self.tau_v.render(), self.tau_x.render())
    }
}

/// `none` renders and parses as the absent value.
impl<T: ConfigValue> ConfigValue for Option<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s == "none" {
            Ok(None)
        } else {
            T::parse_value(s).map(Some)
        }
    }
    fn render(&self) -> String {
        self.as_ref().map_or_else(|| "none".into(), T::render)
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(T::parse_value)
            .collect()
    }
    fn render(&self) -> String {
        self.iter().map(T::render).collect::<Vec<_>>().join(", ")
    }
}

macro_rules! run_config {
    ($($(#[$doc:meta])* $key:ident : $ty:ty = $default:expr;)*) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct RunConfig {
            $($(#[$doc])* pub $key: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $($key: $default,)* }
            }
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($key)),*];

            fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
                match key {
                    $(stringify!($key) => self.$key = <$ty as ConfigValue>::parse_value(value)?,)*
                    _ => return Err("unknown key".into()),
                }
                Ok(())
            }

            /// Every key with its resolved value, in declaration order.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", stringify!($key), self.$key.render()).unwrap();)*
                out
            }
        }
    };
}

run_config! {
    /// Seeds model init, batch shuffling and synthetic generation.
    seed: u64 = 42;
    /// Directory written by `generate-data`; synthetic data is generated in
    /// memory from the keys below when unset.
    data_dir: Option<PathBuf> = None;

    num_classes: usize = 5;
    train_per_class: usize = 40;
    test_per_class: usize = 20;
    channels: usize = 6;
    window_len: usize = 100;
    embed_dim: usize = 32;
    teacher_noise_sigma: f64 = 0.05;
    imu_noise_sigma: f64 = 2.0;
    phase_jitter: f64 = 0.0;
    sample_rate_hz: f64 = 20.0;
    anchor_seed: Option<u64> = None;

    enc_hidden: usize = 64;
    channel_dim: usize = 32;
    proj_hidden: usize = 64;
    pooling: Pooling = Pooling::Concat;

    loss: LossKind = LossKind::Comodo;
    batch_size: usize = 32;
    epochs: usize = 20;
    queue_capacity: usize = 256;
    tau_v: f64 = 0.1;
    tau_x: f64 = 0.05;
    learning_rate: f64 = 3e-4;
    adam_beta1: f64 = 0.9;
    adam_beta2: f64 = 0.999;
    adam_eps: f64 = 1e-8;
    evict_after_loss: bool = false;

    probe: ProbeKind = ProbeKind::Centroid;
    knn_k: usize = 5;
    /// RBF width; `none` means 1 / feature dim.
    rbf_gamma: Option<f64> = None;
    ridge_lambda: f64 = 1e-3;

    ablate_seeds: usize = 5;
    ablate_queue_sizes: Vec<usize> = vec![32, 64, 128, 256];
    ablate_losses: Vec<LossKind> = LossKind::ALL.to_vec();
    ablate_poolings: Vec<Pooling> = vec![Pooling::Concat, Pooling::Mean];
    ablate_temperatures: Vec<Temperatures> = vec![
        Temperatures { tau_v: 0.1, tau_x: 0.05 },
        Temperatures { tau_v: 0.2, tau_x: 0.1 },
        Temperatures { tau_v: 0.05, tau_x: 0.05 },
    ];
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_owned()) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::Config(format!("line {}: `{key}`: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic().validate()?;
        self.train_config().validate()?;
        if self.ablate_seeds == 0 {
            return Err(Error::Config("ablate_seeds must be positive".into()));
        }
        if self.knn_k == 0 {
            return Err(Error::Config("knn_k must be positive".into()));
        }
        if !(self.ridge_lambda > 0.0) || self.rbf_gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::Config("ridge_lambda and rbf_gamma must be positive".into()));
        }
        Ok(())
    }

    pub fn arch(&self) -> Arch {
        Arch {
            window_len: self.window_len,
            enc_hidden: self.enc_hidden,
            channel_dim: self.channel_dim,
            channels: self.channels,
            proj_hidden: self.proj_hidden,
            embed_dim: self.embed_dim,
            pooling: self.pooling,
        }
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: self.num_classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            channels: self.channels,
            window_len: self.window_len,
            embed_dim: self.embed_dim,
            teacher_noise_sigma: self.teacher_noise_sigma,
            imu_noise_sigma: self.imu_noise_sigma,
            phase_jitter: self.phase_jitter,
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            anchor_seed: self.anchor_seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            arch: self.arch(),
            batch_size: self.batch_size,
            epochs: self.epochs,
            temps: Temperatures {
                tau_v: self.tau_v,
                tau_x: self.tau_x,
            },
            queue_capacity: self.queue_capacity,
            loss: self.loss,
            seed: self.seed,
            adam: AdamHyper {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            evict_after_loss: self.evict_after_loss,
        }
    }

    pub fn probe_hyper(&self) -> ProbeHyper {
        ProbeHyper {
            knn_k: self.knn_k,
            rbf_gamma: self.rbf_gamma,
            ridge_lambda: self.ridge_lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_library_defaults() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.synthetic(), SyntheticConfig::default());
        assert_eq!(cfg.train_config(), TrainConfig::default());
        assert_eq!(cfg.probe_hyper(), ProbeHyper::default());
    }

    #[test]
    fn parses_comments_and_overrides() {
        let cfg = RunConfig::parse(
            "# desk run\nlearning_rate = 1e-3  # faster\n\nloss = infonce\nanchor_seed = 7\nablate_temperatures = 0.1:0.05, 0.3:0.2\n",
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.loss, LossKind::Infonce);
        assert_eq!(cfg.anchor_seed, Some(7));
        assert_eq!(cfg.ablate_temperatures[1], Temperatures { tau_v: 0.3, tau_x: 0.2 });
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        for text in ["lerning_rate = 1e-3", "seed = 1\nseed = 2", "seed 1", "seed = -1", "tau_v = nan"] {
            assert!(matches!(RunConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn queue_batch_mismatch_names_both() {
        let msg = RunConfig::parse("queue_capacity = 100\nbatch_size = 32").unwrap_err().to_string();
        assert!(msg.contains("100") && msg.contains("32"), "{msg}");
    }

    #[test]
    fn text_round_trip() {
        let cfg = RunConfig::parse("learning_rate = 0.1\ntau_x = 0.07\ndata_dir = /tmp/x y\nrbf_gamma = 0.3").unwrap();
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
    }
}
