//! FIFO instance queue of frozen teacher embeddings.
//!
//! The queue is the softmax support for both similarity distributions. Entries
//! are stored oldest first and are never modified after insertion.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::tensor::UnitVec;

/// Norm tolerance for enqueued embeddings.
pub const ENQUEUE_NORM_TOL: f64 = 1e-6;

/// Queue positions of the most recently enqueued batch, in batch order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPositions(Vec<usize>);

impl BatchPositions {
    pub fn new(indices: Vec<usize>) -> Self {
        Self(indices)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceQueue {
    capacity: usize,
    dim: usize,
    entries: VecDeque<UnitVec>,
    total_enqueued: u64,
}

impl InstanceQueue {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::InvalidShape(format!(
                "queue capacity ({capacity}) and dim ({dim}) must be positive"
            )));
        }
        Ok(Self {
            capacity,
            dim,
            entries: VecDeque::with_capacity(capacity),
            total_enqueued: 0,
        })
    }

    /// Rebuilds a queue from saved state; `entries` are oldest first.
    pub fn restore(
        capacity: usize,
        dim: usize,
        entries: Vec<UnitVec>,
        total_enqueued: u64,
    ) -> Result<Self> {
        let mut queue = Self::new(capacity, dim)?;
        if entries.len() > capacity || (entries.len() as u64) > total_enqueued {
            return Err(Error::Malformed(format!(
                "{} queue entries inconsistent with capacity {capacity} and {total_enqueued} enqueued",
                entries.len()
            )));
        }
        for e in &entries {
            queue.check_entry(e)?;
        }
        queue.entries = entries.into();
        queue.total_enqueued = total_enqueued;
        Ok(queue)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_enqueued(&self) -> u64 {
        self.total_enqueued
    }

    pub fn iter(&self) -> impl Iterator<Item = &UnitVec> {
        self.entries.iter()
    }

    fn check_entry(&self, e: &UnitVec) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                found: e.dim(),
            });
        }
        let norm = e.norm();
        if (norm - 1.0).abs() > ENQUEUE_NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        Ok(())
    }

    /// Appends `batch` and evicts the oldest entries beyond capacity.
    ///
    /// Returns the positions of the new entries, which are always the newest
    /// `batch.len()` slots.
    pub fn enqueue_batch(&mut self, batch: &[UnitVec]) -> Result<BatchPositions> {
        let positions = self.enqueue_deferred(batch)?;
        let evicted = self.evict_overflow();
        Ok(BatchPositions(
            positions.0.into_iter().map(|p| p - evicted).collect(),
        ))
    }

    /// Appends `batch` without evicting, so the queue may temporarily hold up
    /// to `capacity + batch.len()` entries. Call [`evict_overflow`] once the
    /// loss has been computed.
    ///
    /// [`evict_overflow`]: InstanceQueue::evict_overflow
    pub fn enqueue_deferred(&mut self, batch: &[UnitVec]) -> Result<BatchPositions> {
        if batch.len() > self.capacity {
            return Err(Error::BatchTooLarge {
                batch: batch.len(),
                capacity: self.capacity,
            });
        }
        for e in batch {
            self.check_entry(e)?;
        }
        let start = self.entries.len();
        self.entries.extend(batch.iter().cloned());
        self.total_enqueued += batch.len() as u64;
        Ok(BatchPositions((start..start + batch.len()).collect()))
    }

    /// Drops the oldest entries until the queue is within capacity; returns
    /// how many were dropped.
    pub fn evict_overflow(&mut self) -> usize {
        let excess = self.entries.len().saturating_sub(self.capacity);
        self.entries.drain(..excess);
        excess
    }

    /// Owned copy of the current entries, oldest first.
    pub fn snapshot(&self) -> Result<Vec<UnitVec>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyQueue);
        }
        Ok(self.entries.iter().cloned().collect())
    }
}
