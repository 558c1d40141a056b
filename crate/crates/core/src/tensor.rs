//! Dense double-precision vectors and the probability-space primitives the
//! rest of the crate builds on.
//!
//! Three vector flavours carry their invariants in the type:
//!
//! * [`RealVec`]: any finite, non-empty vector (raw encoder output).
//! * [`UnitVec`]: L2 norm within `1e-9` of one (embeddings, queue entries).
//! * [`ProbVec`]: non-negative entries summing to one (similarity distributions).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate by [`l2_normalize`].
pub const MIN_NORM: f64 = 1e-12;

/// Accepted deviation of `‖v‖₂` from one for a [`UnitVec`].
pub const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealVec(Vec<f64>);

impl RealVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        check_finite(&values)?;
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitVec(Vec<f64>);

impl UnitVec {
    /// Accepts `values` if its norm is within `tol` of one. The values are
    /// kept as given, without renormalizing.
    pub fn new(values: Vec<f64>, tol: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        check_finite(&values)?;
        let norm = norm2(&values);
        if (norm - 1.0).abs() > tol {
            return Err(Error::NotNormalized { norm });
        }
        Ok(Self(values))
    }

    /// Standard basis vector `e_index` in `dim` dimensions.
    pub fn basis(dim: usize, index: usize) -> Self {
        assert!(index < dim, "basis index {index} out of range for dim {dim}");
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    /// Skips the norm check. Only for perturbation tests that need
    /// off-sphere inputs.
    #[cfg(test)]
    pub(crate) fn from_normalized_unchecked(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for UnitVec {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for RealVec {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    /// Validates a hand-built distribution: entries `>= 0`, sum within `1e-12` of one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::EmptyVector);
        }
        check_finite(&probs)?;
        if let Some(index) = probs.iter().position(|&p| p < 0.0) {
            return Err(Error::Malformed(format!(
                "negative probability at index {index}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Malformed(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

pub(crate) fn norm2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Plain slice dot product used on hot paths where both sides are already validated.
#[inline]
pub(crate) fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_normalize(v: &RealVec) -> Result<UnitVec> {
    normalize_slice(v.as_slice())
}

pub(crate) fn normalize_slice(values: &[f64]) -> Result<UnitVec> {
    let norm = norm2(values);
    if norm <= MIN_NORM {
        return Err(Error::ZeroNorm { norm });
    }
    Ok(UnitVec(values.iter().map(|v| v / norm).collect()))
}

pub fn dot(a: &UnitVec, b: &UnitVec) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(dot_slice(a.as_slice(), b.as_slice()))
}

/// Max-shifted softmax of `logits / tau`.
///
/// Panics if `tau` is not strictly positive.
pub fn softmax_temp(logits: &[f64], tau: f64) -> ProbVec {
    ProbVec(softmax_slice(logits, tau))
}

pub(crate) fn softmax_slice(logits: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau > 0.0, "temperature must be positive, got {tau}");
    assert!(!logits.is_empty(), "softmax over an empty support");
    let shift = logits
        .iter()
        .map(|l| l / tau)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l / tau - shift).exp()).collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    out
}

fn check_support(p: &ProbVec, q: &ProbVec) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// `−Σ p_i ln q_i`, skipping terms with `p_i = 0`.
pub fn cross_entropy(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    check_support(p, q)?;
    Ok(cross_entropy_slice(p.as_slice(), q.as_slice()))
}

pub(crate) fn cross_entropy_slice(p: &[f64], q: &[f64]) -> f64 {
    -p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(pi, qi)| pi * qi.ln())
        .sum::<f64>()
}

/// Shannon entropy in nats.
pub fn entropy(p: &ProbVec) -> f64 {
    entropy_slice(p.as_slice())
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    cross_entropy_slice(p, p)
}

/// `KL(p‖q) = CE(p, q) − H(p)`.
pub fn kl_divergence(p: &ProbVec, q: &ProbVec) -> Result<f64> {
    check_support(p, q)?;
    Ok(kl_slice(p.as_slice(), q.as_slice()))
}

pub(crate) fn kl_slice(p: &[f64], q: &[f64]) -> f64 {
    cross_entropy_slice(p, q) - entropy_slice(p)
}
