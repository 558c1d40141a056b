//! Commands behind the `comodo` binary.
//!
//! Each command takes a resolved [`RunConfig`] and an output directory and
//! returns a summary; [`exit_code`] maps failures to the binary's exit status.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataio::{generate_synthetic, read_dataset, write_dataset, Dataset, DatasetMeta};
use crate::encoder::StudentParams;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::Temperatures;
use crate::probe::{evaluate_features, extract_features, ProbeKind, ProbeReport, REPORT_KS};
use crate::trainer::{train_with, TrainEvent, TrainOutcome};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NON_FINITE: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::RejectionOverflow { .. } | Error::NonPositiveCoefficient(_) => EXIT_CONFIG,
        Error::Io { .. }
        | Error::BadMagic { .. }
        | Error::VersionMismatch { .. }
        | Error::TruncatedFile
        | Error::Malformed(_)
        | Error::NotNormalized { .. } => EXIT_IO,
        Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
        Error::ArchMismatch(_) | Error::DimMismatch { .. } | Error::ShapeMismatch(_) => EXIT_MISMATCH,
        _ => EXIT_FAILURE,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_text(path, &text)
}

fn json_line<T: Serialize>(out: &mut impl Write, path: &Path, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *out, value).expect("serializable");
    out.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// `(train, test)` from `cfg.data_dir`, or generated in memory from the config.
pub fn load_splits(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.data_dir {
        Some(dir) => read_dataset(dir).map(|(_, train, test)| (train, test)),
        None => generate_synthetic(&cfg.synthetic()).map(|d| (d.train, d.test)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub meta: DatasetMeta,
    pub seed: u64,
    pub anchor_seed: u64,
    /// Largest cosine between two class anchors.
    pub max_anchor_dot: f64,
    pub train_per_class: Vec<usize>,
    pub test_per_class: Vec<usize>,
}

/// Writes a synthetic dataset plus `generation.json` and `resolved.cfg`.
pub fn cmd_generate_data(cfg: &RunConfig, out: &Path) -> Result<GenerationReport> {
    let syn = cfg.synthetic();
    let data = generate_synthetic(&syn)?;
    let meta = write_dataset(out, &data.train, &data.test)?;
    let mut max_anchor_dot = f64::NEG_INFINITY;
    for (i, a) in data.anchors.iter().enumerate() {
        for b in &data.anchors[i + 1..] {
            max_anchor_dot = max_anchor_dot.max(crate::tensor::dot(a, b)?);
        }
    }
    let counts = |d: &Dataset| -> Result<Vec<usize>> {
        let mut c = vec![0; d.num_classes];
        for l in d.labels()? {
            c[l] += 1;
        }
        Ok(c)
    };
    let report = GenerationReport {
        meta,
        seed: syn.seed,
        anchor_seed: syn.anchor_seed(),
        max_anchor_dot,
        train_per_class: counts(&data.train)?,
        test_per_class: counts(&data.test)?,
    };
    write_json(&out.join("generation.json"), &report)?;
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    /// Every config key after defaults and overrides, as `key = value` text.
    pub config: String,
    pub seed: u64,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub final_checkpoint: PathBuf,
    pub state: PathBuf,
    pub started_unix_ms: u128,
    pub elapsed_ms: Option<u128>,
    pub version: String,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub manifest: RunManifest,
    pub outcome: TrainOutcome,
}

pub fn epoch_checkpoint_name(epoch: u64) -> String {
    format!("epoch-{epoch:03}.cmdo")
}

/// Trains on the train split and writes, under `out`:
/// `resolved.cfg`, `manifest.json` (before training, then again with the
/// elapsed time), `metrics.jsonl`, `checkpoints/epoch-NNN.cmdo`,
/// `final.cmdo` and `state.cmts`.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let tc = cfg.train_config();
    tc.validate()?;
    let (train_set, _) = load_splits(cfg)?;
    tc.check_dataset(&train_set)?;

    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let metrics_path = out.join("metrics.jsonl");
    let mut manifest = RunManifest {
        config: cfg.to_text(),
        seed: cfg.seed,
        metrics: PathBuf::from("metrics.jsonl"),
        checkpoints: (1..=tc.epochs as u64)
            .map(|e| Path::new("checkpoints").join(epoch_checkpoint_name(e)))
            .collect(),
        final_checkpoint: PathBuf::from("final.cmdo"),
        state: PathBuf::from("state.cmts"),
        started_unix_ms: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or_default(),
        elapsed_ms: None,
        version: env!("CARGO_PKG_VERSION").to_owned(),
    };
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    write_json(&out.join("manifest.json"), &manifest)?;

    let started = Instant::now();
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut metrics = BufWriter::new(file);
    let outcome = train_with(&tc, &train_set, Exec::default(), |event| match event {
        TrainEvent::Step(m) => json_line(&mut metrics, &metrics_path, m),
        TrainEvent::EpochEnd { epoch, state } => {
            state.params.save(&ckpt_dir.join(epoch_checkpoint_name(epoch)))?;
            metrics.flush().map_err(|e| Error::io(&metrics_path, e))
        }
    })?;
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    outcome.state.params.save(&out.join("final.cmdo"))?;
    let state_path = out.join("state.cmts");
    fs::write(&state_path, outcome.state.to_bytes()).map_err(|e| Error::io(&state_path, e))?;

    manifest.elapsed_ms = Some(started.elapsed().as_millis());
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(TrainSummary { manifest, outcome })
}

/// First 16 hex digits of the SHA-256 of the checkpoint bytes.
pub fn checkpoint_id(params: &StudentParams) -> String {
    let digest = Sha256::digest(params.to_checkpoint_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub probe: ProbeKind,
    pub k: usize,
    pub accuracy: f64,
    pub n_test: usize,
    pub seed: u64,
    pub checkpoint: String,
}

pub fn check_arch(params: &StudentParams, dataset: &Dataset) -> Result<()> {
    let a = params.arch();
    let (c, t, _) = dataset.shape().ok_or(Error::EmptyInput)?;
    if (c, t) != (a.channels, a.window_len) {
        return Err(Error::ArchMismatch(format!(
            "checkpoint expects C={}, T={}; dataset has C={c}, T={t}",
            a.channels, a.window_len
        )));
    }
    Ok(())
}

/// Fits `probe` on the train split's student features and scores the test
/// split. The probe may run on a different dataset than the one the checkpoint
/// was trained on.
pub fn evaluate_checkpoint(
    params: &StudentParams,
    train: &Dataset,
    test: &Dataset,
    cfg: &RunConfig,
    exec: Exec,
) -> Result<ProbeReport> {
    check_arch(params, train)?;
    check_arch(params, test)?;
    if train.num_classes != test.num_classes {
        return Err(Error::ShapeMismatch(format!(
            "train split has {} classes, test split {}",
            train.num_classes, test.num_classes
        )));
    }
    let train_f = extract_features(params, &train.windows(), exec)?;
    let test_f = extract_features(params, &test.windows(), exec)?;
    evaluate_features(
        &train_f,
        &train.labels()?,
        &test_f,
        &test.labels()?,
        train.num_classes,
        cfg.probe,
        &cfg.probe_hyper(),
        exec,
    )
}

/// Probes `checkpoint` on the dataset from `cfg` and writes `eval.jsonl`,
/// one record per k.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<Vec<EvalRecord>> {
    let params = StudentParams::load(checkpoint)?;
    let (train, test) = load_splits(cfg)?;
    let report = evaluate_checkpoint(&params, &train, &test, cfg, Exec::default())?;
    let id = checkpoint_id(&params);
    let records: Vec<EvalRecord> = report
        .accuracies
        .iter()
        .map(|&(k, accuracy)| EvalRecord {
            probe: report.probe,
            k,
            accuracy,
            n_test: report.n_test,
            seed: cfg.seed,
            checkpoint: id.clone(),
        })
        .collect();
    create_dir(out)?;
    let path = out.join("eval.jsonl");
    let mut text = Vec::new();
    for r in &records {
        json_line(&mut text, &path, r)?;
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    QueueSize,
    Loss,
    Pooling,
    Temperature,
}

impl std::fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::QueueSize => "queue_size",
            Self::Loss => "loss",
            Self::Pooling => "pooling",
            Self::Temperature => "temperature",
        })
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "queue_size" | "queue-size" => Ok(Self::QueueSize),
            "loss" => Ok(Self::Loss),
            "pooling" => Ok(Self::Pooling),
            "temperature" => Ok(Self::Temperature),
            other => Err(Error::Config(format!(
                "unknown ablation axis `{other}` (expected queue_size, loss, pooling or temperature)"
            ))),
        }
    }
}

/// The config variants an axis sweeps, with their row labels.
pub fn axis_variants(cfg: &RunConfig, axis: AblationAxis) -> Result<Vec<(String, RunConfig)>> {
    let variants: Vec<(String, RunConfig)> = match axis {
        AblationAxis::QueueSize => cfg
            .ablate_queue_sizes
            .iter()
            .map(|&k| (k.to_string(), RunConfig { queue_capacity: k, ..cfg.clone() }))
            .collect(),
        AblationAxis::Loss => cfg
            .ablate_losses
            .iter()
            .map(|&l| (l.to_string(), RunConfig { loss: l, ..cfg.clone() }))
            .collect(),
        AblationAxis::Pooling => cfg
            .ablate_poolings
            .iter()
            .map(|&p| (p.to_string(), RunConfig { pooling: p, ..cfg.clone() }))
            .collect(),
        AblationAxis::Temperature => cfg
            .ablate_temperatures
            .iter()
            .map(|&Temperatures { tau_v, tau_x }| {
                (format!("{tau_v}/{tau_x}"), RunConfig { tau_v, tau_x, ..cfg.clone() })
            })
            .collect(),
    };
    if variants.is_empty() {
        return Err(Error::Config(format!("no values listed for ablation axis {axis}")));
    }
    for (_, v) in &variants {
        v.validate()?;
    }
    Ok(variants)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRecord {
    pub axis: AblationAxis,
    pub value: String,
    /// `None` on the per-value mean rows.
    pub seed: Option<u64>,
    pub probe: ProbeKind,
    pub acc1: f64,
    pub acc3: f64,
    pub acc5: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub runs: Vec<AblationRecord>,
    pub means: Vec<AblationRecord>,
}

impl AblationTable {
    pub fn mean(&self, value: &str) -> Option<&AblationRecord> {
        self.means.iter().find(|r| r.value == value)
    }

    /// Fixed-width text table of the per-value means, accuracies in percent.
    pub fn render(&self) -> String {
        let width = self
            .means
            .iter()
            .map(|r| r.value.len())
            .chain([self.axis.to_string().len()])
            .max()
            .unwrap_or(0);
        let mut out = format!(
            "{:<width$}  {:>6}  {:>6}  {:>6}\n",
            self.axis.to_string(),
            "Acc@1",
            "Acc@3",
            "Acc@5"
        );
        out.push_str(&format!("{}\n", "-".repeat(width + 24)));
        for r in &self.means {
            out.push_str(&format!(
                "{:<width$}  {:>6.2}  {:>6.2}  {:>6.2}\n",
                r.value,
                100.0 * r.acc1,
                100.0 * r.acc3,
                100.0 * r.acc5
            ));
        }
        out
    }
}

fn ablation_run(axis: AblationAxis, value: &str, cfg: &RunConfig, exec: Exec) -> Result<AblationRecord> {
    let (train, test) = load_splits(cfg)?;
    let outcome = train_with(&cfg.train_config(), &train, exec, |_| Ok(()))?;
    let report = evaluate_checkpoint(outcome.params(), &train, &test, cfg, exec)?;
    let acc = |k| report.acc(k).expect("report covers every k");
    Ok(AblationRecord {
        axis,
        value: value.to_owned(),
        seed: Some(cfg.seed),
        probe: cfg.probe,
        acc1: acc(REPORT_KS[0]),
        acc3: acc(REPORT_KS[1]),
        acc5: acc(REPORT_KS[2]),
    })
}

/// One train + probe per (axis value, seed), seeds `cfg.seed ..` for
/// `cfg.ablate_seeds` runs. With `parallel`, whole runs fan out across the
/// pool instead of the per-sample work inside each run; results are identical.
pub fn run_ablation(cfg: &RunConfig, axis: AblationAxis, parallel: bool) -> Result<AblationTable> {
    let variants = axis_variants(cfg, axis)?;
    let jobs: Vec<(String, RunConfig)> = variants
        .iter()
        .flat_map(|(label, v)| {
            (0..cfg.ablate_seeds as u64).map(move |i| {
                (
                    label.clone(),
                    RunConfig {
                        seed: v.seed + i,
                        ..v.clone()
                    },
                )
            })
        })
        .collect();
    let runs = if parallel {
        Exec::Parallel.try_map(&jobs, |(label, c)| ablation_run(axis, label, c, Exec::Sequential))?
    } else {
        jobs.iter()
            .map(|(label, c)| ablation_run(axis, label, c, Exec::default()))
            .collect::<Result<Vec<_>>>()?
    };
    let means = variants
        .iter()
        .map(|(label, _)| {
            let rows: Vec<&AblationRecord> = runs.iter().filter(|r| &r.value == label).collect();
            let n = rows.len() as f64;
            let avg = |f: fn(&AblationRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationRecord {
                axis,
                value: label.clone(),
                seed: None,
                probe: cfg.probe,
                acc1: avg(|r| r.acc1),
                acc3: avg(|r| r.acc3),
                acc5: avg(|r| r.acc5),
            }
        })
        .collect();
    Ok(AblationTable { axis, runs, means })
}

/// Runs the sweep and writes `ablation-<axis>.txt` and `ablation-<axis>.jsonl`
/// (per-seed rows, then the mean rows).
pub fn cmd_ablate(cfg: &RunConfig, axis: AblationAxis, out: &Path, parallel: bool) -> Result<AblationTable> {
    let table = run_ablation(cfg, axis, parallel)?;
    create_dir(out)?;
    write_text(&out.join(format!("ablation-{axis}.txt")), &table.render())?;
    let path = out.join(format!("ablation-{axis}.jsonl"));
    let mut text = Vec::new();
    for r in table.runs.iter().chain(&table.means) {
        json_line(&mut text, &path, r)?;
    }
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    write_text(&out.join("resolved.cfg"), &cfg.to_text())?;
    Ok(table)
}
