use std::sync::atomic::{AtomicUsize, Ordering};

use crate::data::{SketchRecord, StrokeSketch};
use crate::error::{Error, Result};

/// Training records with audited label access.
///
/// Reading the label of a record whose label is hidden fails and is counted.
pub struct TrainingSet {
    sketches: Vec<StrokeSketch>,
    labels: Vec<usize>,
    visible: Vec<bool>,
    hidden_reads: AtomicUsize,
}

impl TrainingSet {
    pub fn new(records: &[SketchRecord]) -> Self {
        TrainingSet {
            sketches: records.iter().map(|r| r.sketch.clone()).collect(),
            labels: records.iter().map(|r| r.category_id).collect(),
            visible: records.iter().map(|r| r.label_visible).collect(),
            hidden_reads: AtomicUsize::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.sketches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sketches.is_empty()
    }

    pub fn sketch(&self, i: usize) -> &StrokeSketch {
        &self.sketches[i]
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible[i]).collect()
    }

    pub fn unlabeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.visible[i]).collect()
    }

    pub fn label(&self, i: usize) -> Result<usize> {
        if !self.visible[i] {
            self.hidden_reads.fetch_add(1, Ordering::Relaxed);
            return Err(Error::Precondition(format!("label of training record {i} is hidden")));
        }
        Ok(self.labels[i])
    }

    /// Number of attempted reads of hidden labels so far.
    pub fn hidden_reads(&self) -> usize {
        self.hidden_reads.load(Ordering::Relaxed)
    }
}
