use std::fmt;

use super::{misclassification_report, AnnotatedExample, Reader, ReaderError};
use crate::corpus::Dataset;
use crate::metrics::MetricReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HookKind {
    Loss,
    Eval,
    Misclassification,
}

impl fmt::Display for HookKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HookKind::Loss => "loss",
            HookKind::Eval => "eval",
            HookKind::Misclassification => "misclassification",
        })
    }
}

/// What a hook reported when it fired.
#[derive(Debug, Clone, PartialEq)]
pub struct HookEvent {
    pub kind: HookKind,
    pub iteration: usize,
    pub epoch: usize,
    pub metrics: Vec<MetricReport>,
    pub examples: Vec<AnnotatedExample>,
}

impl fmt::Display for HookEvent {
    /// `iteration`, then `name value` pairs, tab separated.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.iteration)?;
        for m in &self.metrics {
            write!(f, "\t{}\t{:.4}", m.name, m.value)?;
        }
        if self.kind == HookKind::Misclassification {
            write!(f, "\tmisclassified\t{}", self.examples.len())?;
        }
        Ok(())
    }
}

/// Training-loop observer. The loop calls [`Hook::fire`] after iteration
/// `i` (counted from 1 across epochs) whenever `i % interval() == 0`.
pub trait Hook {
    fn kind(&self) -> HookKind;
    fn interval(&self) -> usize;
    fn epoch_start(&mut self) {}
    fn observe(&mut self, _loss: f64) {}
    fn fire(
        &mut self,
        iteration: usize,
        epoch: usize,
        reader: &Reader,
    ) -> Result<HookEvent, ReaderError>;
}

fn checked(interval: usize) -> usize {
    assert!(interval > 0, "hook interval must be positive");
    interval
}

/// Reports the mean training loss since the start of the current epoch.
#[derive(Debug, Clone)]
pub struct LossHook {
    interval: usize,
    sum: f64,
    count: usize,
}

impl LossHook {
    /// # Panics
    /// If `interval` is zero.
    pub fn new(interval: usize) -> Self {
        Self {
            interval: checked(interval),
            sum: 0.0,
            count: 0,
        }
    }
}

impl Hook for LossHook {
    fn kind(&self) -> HookKind {
        HookKind::Loss
    }

    fn interval(&self) -> usize {
        self.interval
    }

    fn epoch_start(&mut self) {
        self.sum = 0.0;
        self.count = 0;
    }

    fn observe(&mut self, loss: f64) {
        self.sum += loss;
        self.count += 1;
    }

    fn fire(
        &mut self,
        iteration: usize,
        epoch: usize,
        _reader: &Reader,
    ) -> Result<HookEvent, ReaderError> {
        let mean = if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        };
        Ok(HookEvent {
            kind: HookKind::Loss,
            iteration,
            epoch,
            metrics: vec![MetricReport::new("loss", mean, self.count)],
            examples: Vec::new(),
        })
    }
}

/// Evaluates the reader on a held-out dataset.
#[derive(Debug, Clone)]
pub struct EvalHook {
    interval: usize,
    data: Dataset,
}

impl EvalHook {
    /// # Panics
    /// If `interval` is zero.
    pub fn new(data: Dataset, interval: usize) -> Self {
        Self {
            interval: checked(interval),
            data,
        }
    }
}

impl Hook for EvalHook {
    fn kind(&self) -> HookKind {
        HookKind::Eval
    }

    fn interval(&self) -> usize {
        self.interval
    }

    fn fire(
        &mut self,
        iteration: usize,
        epoch: usize,
        reader: &Reader,
    ) -> Result<HookEvent, ReaderError> {
        Ok(HookEvent {
            kind: HookKind::Eval,
            iteration,
            epoch,
            metrics: reader.evaluate(&self.data)?,
            examples: Vec::new(),
        })
    }
}

/// Collects instances whose gold probability falls in `[lo, hi]`.
#[derive(Debug, Clone)]
pub struct MisclassificationHook {
    interval: usize,
    data: Dataset,
    lo: f64,
    hi: f64,
    limit: usize,
}

impl MisclassificationHook {
    /// # Panics
    /// If `interval` is zero.
    pub fn new(data: Dataset, lo: f64, hi: f64, limit: usize, interval: usize) -> Self {
        Self {
            interval: checked(interval),
            data,
            lo,
            hi,
            limit,
        }
    }
}

impl Hook for MisclassificationHook {
    fn kind(&self) -> HookKind {
        HookKind::Misclassification
    }

    fn interval(&self) -> usize {
        self.interval
    }

    fn fire(
        &mut self,
        iteration: usize,
        epoch: usize,
        reader: &Reader,
    ) -> Result<HookEvent, ReaderError> {
        Ok(HookEvent {
            kind: HookKind::Misclassification,
            iteration,
            epoch,
            metrics: Vec::new(),
            examples: misclassification_report(reader, &self.data, self.lo, self.hi, self.limit)?,
        })
    }
}
