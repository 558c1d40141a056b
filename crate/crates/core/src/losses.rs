//! Distillation objectives. Each returns the batch-mean loss and its gradient
//! with respect to the (already normalized) student embeddings; the
//! normalization Jacobian is applied by the encoder's backward pass.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::queue::BatchPositions;
use crate::tensor::{cross_entropy_slice, dot_slice, entropy_slice, softmax_slice, UnitVec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Temperatures {
    pub tau_v: f64,
    pub tau_x: f64,
}

impl Temperatures {
    pub fn new(tau_v: f64, tau_x: f64) -> Result<Self> {
        for (name, t) in [("tau_v", tau_v), ("tau_x", tau_x)] {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {t}")));
            }
        }
        Ok(Self { tau_v, tau_x })
    }
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            tau_v: 0.1,
            tau_x: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Comodo,
    Infonce,
    L2,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Comodo, LossKind::Infonce, LossKind::L2];
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Comodo => "comodo",
            LossKind::Infonce => "infonce",
            LossKind::L2 => "l2",
        })
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "comodo" => Ok(LossKind::Comodo),
            "infonce" => Ok(LossKind::Infonce),
            "l2" => Ok(LossKind::L2),
            other => Err(Error::Config(format!(
                "unknown loss {other:?} (expected comodo, infonce or l2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Batch mean.
    pub loss: f64,
    /// `∂loss/∂z_x` per sample, already divided by the batch size.
    pub grad_z: Vec<Vec<f64>>,
    /// Mean entropy of the target distribution (zero for InfoNCE and L2).
    pub teacher_entropy: f64,
    /// Mean `KL(target ‖ student)`; equals `loss − teacher_entropy` for the
    /// distribution losses and is zero for L2.
    pub kl: f64,
}

struct SampleTerm {
    loss: f64,
    entropy: f64,
    grad: Vec<f64>,
}

fn check_batch(z_x: &[UnitVec], queue: &[UnitVec], positions: &BatchPositions) -> Result<usize> {
    let dim = queue.first().ok_or(Error::EmptyQueue)?.dim();
    if z_x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if z_x.len() != positions.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} student embeddings but {} queue positions",
            z_x.len(),
            positions.len()
        )));
    }
    for v in z_x.iter().chain(queue) {
        if v.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: v.dim(),
            });
        }
    }
    if let Some(&position) = positions.as_slice().iter().find(|&&p| p >= queue.len()) {
        return Err(Error::PositionInvalid {
            position,
            support: queue.len(),
        });
    }
    Ok(dim)
}

fn logits(query: &[f64], queue: &[UnitVec]) -> Vec<f64> {
    queue.iter().map(|q| dot_slice(query, q.as_slice())).collect()
}

/// Teacher similarity logits for the sample stored at `position`; the
/// self-similarity is pinned to exactly 1.
pub fn teacher_logits(queue: &[UnitVec], position: usize) -> Vec<f64> {
    let mut l = logits(queue[position].as_slice(), queue);
    l[position] = 1.0;
    l
}

/// `(1/τ_x) Σ_j (P_x[j] − target[j]) q_j`, scaled by `scale`.
fn softmax_ce_grad(p_x: &[f64], target: &[f64], queue: &[UnitVec], tau_x: f64, scale: f64) -> Vec<f64> {
    let mut grad = vec![0.0; queue[0].dim()];
    for ((px, t), q) in p_x.iter().zip(target).zip(queue) {
        let w = (px - t) * scale / tau_x;
        if w != 0.0 {
            for (g, qi) in grad.iter_mut().zip(q.as_slice()) {
                *g += w * qi;
            }
        }
    }
    grad
}

fn reduce(terms: Vec<SampleTerm>, kl_is_loss_minus_entropy: bool) -> LossOutput {
    let n = terms.len() as f64;
    let loss = terms.iter().map(|t| t.loss).sum::<f64>() / n;
    let teacher_entropy = terms.iter().map(|t| t.entropy).sum::<f64>() / n;
    let kl = if kl_is_loss_minus_entropy {
        terms.iter().map(|t| t.loss - t.entropy).sum::<f64>() / n
    } else {
        0.0
    };
    LossOutput {
        loss,
        grad_z: terms.into_iter().map(|t| t.grad).collect(),
        teacher_entropy,
        kl,
    }
}

/// Cross-entropy between the teacher's and the student's similarity
/// distributions over the queue.
pub fn comodo_loss(
    z_x: &[UnitVec],
    queue: &[UnitVec],
    positions: &BatchPositions,
    temps: Temperatures,
) -> Result<LossOutput> {
    comodo_loss_exec(Exec::default(), z_x, queue, positions, temps)
}

pub fn comodo_loss_exec(
    exec: Exec,
    z_x: &[UnitVec],
    queue: &[UnitVec],
    positions: &BatchPositions,
    temps: Temperatures,
) -> Result<LossOutput> {
    check_batch(z_x, queue, positions)?;
    let scale = 1.0 / z_x.len() as f64;
    let terms = exec.map_indexed(z_x.len(), |i| {
        let p_v = softmax_slice(&teacher_logits(queue, positions.as_slice()[i]), temps.tau_v);
        let p_x = softmax_slice(&logits(z_x[i].as_slice(), queue), temps.tau_x);
        SampleTerm {
            loss: cross_entropy_slice(&p_v, &p_x),
            entropy: entropy_slice(&p_v),
            grad: softmax_ce_grad(&p_x, &p_v, queue, temps.tau_x, scale),
        }
    });
    Ok(reduce(terms, true))
}

/// `−log P_x[own position]`: the sample's own teacher embedding is the
/// positive and every other queue entry a negative.
pub fn infonce_loss(
    z_x: &[UnitVec],
    queue: &[UnitVec],
    positions: &BatchPositions,
    tau_x: f64,
) -> Result<LossOutput> {
    infonce_loss_exec(Exec::default(), z_x, queue, positions, tau_x)
}

pub fn infonce_loss_exec(
    exec: Exec,
    z_x: &[UnitVec],
    queue: &[UnitVec],
    positions: &BatchPositions,
    tau_x: f64,
) -> Result<LossOutput> {
    check_batch(z_x, queue, positions)?;
    let scale = 1.0 / z_x.len() as f64;
    let terms = exec.map_indexed(z_x.len(), |i| {
        let pos = positions.as_slice()[i];
        let p_x = softmax_slice(&logits(z_x[i].as_slice(), queue), tau_x);
        let mut target = vec![0.0; queue.len()];
        target[pos] = 1.0;
        SampleTerm {
            loss: -p_x[pos].ln(),
            entropy: 0.0,
            grad: softmax_ce_grad(&p_x, &target, queue, tau_x, scale),
        }
    });
    Ok(reduce(terms, true))
}

/// Mean squared L2 distance between paired student and teacher embeddings.
pub fn l2_loss(z_x: &[UnitVec], z_v: &[UnitVec]) -> Result<LossOutput> {
    if z_x.is_empty() {
        return Err(Error::EmptyInput);
    }
    if z_x.len() != z_v.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} student embeddings but {} teacher embeddings",
            z_x.len(),
            z_v.len()
        )));
    }
    let scale = 1.0 / z_x.len() as f64;
    let mut terms = Vec::with_capacity(z_x.len());
    for (x, v) in z_x.iter().zip(z_v) {
        if x.dim() != v.dim() {
            return Err(Error::DimMismatch {
                expected: v.dim(),
                found: x.dim(),
            });
        }
        let diff: Vec<f64> = x.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a - b).collect();
        terms.push(SampleTerm {
            loss: diff.iter().map(|d| d * d).sum(),
            entropy: 0.0,
            grad: diff.iter().map(|d| 2.0 * d * scale).collect(),
        });
    }
    Ok(reduce(terms, false))
}
