//! Mini-batch distillation loop.
//!
//! Each step encodes the batch's IMU windows, pushes the batch's teacher
//! embeddings into the instance queue, evaluates the configured loss over the
//! queue, backpropagates through the student and applies one Adam update.
//!
//! Per-sample forward and backward passes may run on the rayon pool; the
//! per-sample gradients are always summed in batch order, so results are
//! bitwise identical for any thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_update, AdamHyper, Moments};
use crate::binio::{self, Reader};
use crate::dataio::{Dataset, PairedSample};
use crate::encoder::{Arch, StudentGrad, StudentParams};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::losses::{comodo_loss_exec, infonce_loss_exec, l2_loss, LossKind, LossOutput, Temperatures};
use crate::queue::InstanceQueue;
use crate::tensor::UnitVec;

pub const STATE_MAGIC: [u8; 4] = *b"CMTS";
pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub arch: Arch,
    pub batch_size: usize,
    pub epochs: usize,
    pub temps: Temperatures,
    pub queue_capacity: usize,
    pub loss: LossKind,
    pub seed: u64,
    pub adam: AdamHyper,
    /// Evict overflowing queue entries after the loss instead of before it,
    /// so the loss briefly sees up to `queue_capacity + batch_size` entries.
    pub evict_after_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: Arch::default(),
            batch_size: 32,
            epochs: 20,
            temps: Temperatures::default(),
            queue_capacity: 256,
            loss: LossKind::Comodo,
            seed: 42,
            adam: AdamHyper::default(),
            evict_after_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        self.adam.validate()?;
        Temperatures::new(self.temps.tau_v, self.temps.tau_x)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.queue_capacity == 0 || !self.queue_capacity.is_multiple_of(self.batch_size) {
            return Err(Error::Config(format!(
                "queue_capacity ({}) must be a positive multiple of batch_size ({})",
                self.queue_capacity, self.batch_size
            )));
        }
        Ok(())
    }

    /// Checks that `dataset` fits the architecture and holds at least one batch.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let (c, t, d) = dataset.shape().ok_or(Error::EmptyInput)?;
        let a = &self.arch;
        if (c, t, d) != (a.channels, a.window_len, a.embed_dim) {
            return Err(Error::ArchMismatch(format!(
                "dataset is C={c}, T={t}, d={d}; model expects C={}, T={}, d={}",
                a.channels, a.window_len, a.embed_dim
            )));
        }
        if dataset.len() < self.batch_size {
            return Err(Error::Config(format!(
                "dataset has {} samples, fewer than one batch of {}",
                dataset.len(),
                self.batch_size
            )));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len / self.batch_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: StudentParams,
    pub moments: Moments,
    pub step: u64,
    /// Completed epochs; also selects the shuffle stream of the next epoch.
    pub epoch: u64,
    pub queue: InstanceQueue,
}

impl TrainState {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = StudentParams::init(config.arch, config.seed)?;
        let moments = Moments::zeros(params.as_slice().len());
        Ok(Self {
            params,
            moments,
            step: 0,
            epoch: 0,
            queue: InstanceQueue::new(config.queue_capacity, config.arch.embed_dim)?,
        })
    }

    /// `CMTS` file: magic, version u32, step u64, epoch u64, an embedded `CMDO`
    /// checkpoint, Adam `m` then `v` (f64 each), then the queue as capacity u64,
    /// dim u32, total_enqueued u64, len u64 and `len × dim` f64, oldest first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&STATE_MAGIC);
        binio::write_u32(&mut out, STATE_VERSION).unwrap();
        binio::write_u64(&mut out, self.step).unwrap();
        binio::write_u64(&mut out, self.epoch).unwrap();
        self.params.write_checkpoint(&mut out).unwrap();
        binio::write_f64s(&mut out, &self.moments.m).unwrap();
        binio::write_f64s(&mut out, &self.moments.v).unwrap();
        binio::write_u64(&mut out, self.queue.capacity() as u64).unwrap();
        binio::write_u32(&mut out, self.queue.dim() as u32).unwrap();
        binio::write_u64(&mut out, self.queue.total_enqueued()).unwrap();
        binio::write_u64(&mut out, self.queue.len() as u64).unwrap();
        for e in self.queue.iter() {
            binio::write_f64s(&mut out, e.as_slice()).unwrap();
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(STATE_MAGIC)?;
        r.version(STATE_VERSION)?;
        let step = r.u64()?;
        let epoch = r.u64()?;
        let params = StudentParams::read_checkpoint(&mut r)?;
        let n = params.as_slice().len();
        let moments = Moments {
            m: r.f64s(n)?,
            v: r.f64s(n)?,
        };
        let capacity = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let total = r.u64()?;
        let len = r.u64()? as usize;
        if len > capacity {
            return Err(Error::Malformed(format!("queue length {len} exceeds capacity {capacity}")));
        }
        let entries = (0..len)
            .map(|_| UnitVec::new(r.f64s(dim)?, crate::queue::ENQUEUE_NORM_TOL))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;
        Ok(Self {
            params,
            moments,
            step,
            epoch,
            queue: InstanceQueue::restore(capacity, dim, entries, total)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    pub teacher_entropy: f64,
    pub kl: f64,
    /// Support size the loss was computed over.
    pub queue_size: usize,
    pub grad_norm: f64,
}

fn compute_loss(
    config: &TrainConfig,
    exec: Exec,
    z_x: &[UnitVec],
    teachers: &[UnitVec],
    queue: &mut InstanceQueue,
) -> Result<(LossOutput, usize)> {
    let positions = if config.evict_after_loss {
        queue.enqueue_deferred(teachers)?
    } else {
        queue.enqueue_batch(teachers)?
    };
    let support = queue.snapshot()?;
    let out = match config.loss {
        LossKind::Comodo => comodo_loss_exec(exec, z_x, &support, &positions, config.temps)?,
        LossKind::Infonce => infonce_loss_exec(exec, z_x, &support, &positions, config.temps.tau_x)?,
        LossKind::L2 => l2_loss(z_x, teachers)?,
    };
    if config.evict_after_loss {
        queue.evict_overflow();
    }
    Ok((out, support.len()))
}

/// One optimization step on `batch`. On error the state may have been partly
/// advanced (the queue in particular) and should be discarded.
pub fn train_step(
    state: &mut TrainState,
    batch: &[&PairedSample],
    config: &TrainConfig,
    exec: Exec,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    let params = &state.params;
    let traces = exec.try_map(batch, |s| params.forward_trace(&s.window))?;
    let z_x: Vec<UnitVec> = traces.iter().map(|t| t.embedding().clone()).collect();
    let teachers: Vec<UnitVec> = batch.iter().map(|s| s.teacher.clone()).collect();

    let (out, queue_size) = compute_loss(config, exec, &z_x, &teachers, &mut state.queue)?;
    let next_step = state.step + 1;
    if !out.loss.is_finite() || out.grad_z.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: next_step,
            loss: out.loss,
        });
    }

    let per_sample = exec.map_indexed(batch.len(), |i| {
        let mut g = StudentGrad::zeros(params.arch());
        params
            .backward_into(&batch[i].window, &traces[i], &out.grad_z[i], &mut g)
            .map(|_| g)
    });
    let mut grad = StudentGrad::zeros(params.arch());
    for g in per_sample {
        grad.accumulate(&g?);
    }
    let grad_norm = grad.norm();

    let hyper = config.adam;
    adam_update(
        state.params.as_mut_slice(),
        grad.as_slice(),
        &mut state.moments,
        next_step,
        &hyper,
    )?;
    state.step = next_step;
    if !state.params.is_finite() || state.moments.v.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: next_step,
            loss: out.loss,
        });
    }
    Ok(StepMetrics {
        step: next_step,
        epoch: state.epoch,
        loss: out.loss,
        teacher_entropy: out.teacher_entropy,
        kl: out.kl,
        queue_size,
        grad_norm,
    })
}

/// Seeded Fisher–Yates order for `epoch`; each epoch uses its own ChaCha stream.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch + 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

pub enum TrainEvent<'a> {
    Step(&'a StepMetrics),
    EpochEnd { epoch: u64, state: &'a TrainState },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<StepMetrics>,
}

impl TrainOutcome {
    pub fn params(&self) -> &StudentParams {
        &self.state.params
    }

    /// Mean loss of each epoch.
    pub fn epoch_losses(&self) -> Vec<f64> {
        let mut out: Vec<(u64, f64, usize)> = Vec::new();
        for m in &self.history {
            match out.last_mut() {
                Some((e, sum, n)) if *e == m.epoch => {
                    *sum += m.loss;
                    *n += 1;
                }
                _ => out.push((m.epoch, m.loss, 1)),
            }
        }
        out.into_iter().map(|(_, s, n)| s / n as f64).collect()
    }
}

pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    train_with(config, dataset, Exec::default(), |_| Ok(()))
}

/// Runs `config.epochs` epochs of `⌊|dataset| / batch_size⌋` steps each; the
/// last partial batch of every epoch is dropped. `on_event` sees every step
/// and every epoch end, and may abort the run by returning an error.
pub fn train_with<F>(config: &TrainConfig, dataset: &Dataset, exec: Exec, mut on_event: F) -> Result<TrainOutcome>
where
    F: FnMut(TrainEvent<'_>) -> Result<()>,
{
    config.validate()?;
    let mut state = TrainState::new(config)?;
    let mut history = Vec::new();
    if config.epochs == 0 {
        return Ok(TrainOutcome { state, history });
    }
    config.check_dataset(dataset)?;
    let steps = config.steps_per_epoch(dataset.len());
    for _ in 0..config.epochs {
        let order = epoch_order(config.seed, state.epoch, dataset.len());
        for chunk in order.chunks_exact(config.batch_size).take(steps) {
            let batch: Vec<&PairedSample> = chunk.iter().map(|&i| &dataset.samples[i]).collect();
            let metrics = train_step(&mut state, &batch, config, exec)?;
            on_event(TrainEvent::Step(&metrics))?;
            history.push(metrics);
        }
        state.epoch += 1;
        on_event(TrainEvent::EpochEnd {
            epoch: state.epoch,
            state: &state,
        })?;
    }
    Ok(TrainOutcome { state, history })
}
