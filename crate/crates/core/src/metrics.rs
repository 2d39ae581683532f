//! Top-1 accuracy and confidence histograms.

use std::io::Write;

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    check_len("label count", probs.rows(), labels.len())?;
    if labels.is_empty() {
        return Err(Error::Capacity("accuracy of an empty set".into()));
    }
    let correct = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Counts of correct and incorrect predictions per confidence bin, where
/// confidence is the row maximum and bins split `[1/C, 1]` evenly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceHistogram {
    pub bin_edges: Vec<f64>,
    pub correct_counts: Vec<u64>,
    pub incorrect_counts: Vec<u64>,
}

impl ConfidenceHistogram {
    pub fn empty(classes: usize, bins: usize) -> Self {
        let lo = 1.0 / classes as f64;
        let width = (1.0 - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..bins).map(|k| lo + width * k as f64).collect();
        edges.push(1.0);
        ConfidenceHistogram {
            bin_edges: edges,
            correct_counts: vec![0; bins],
            incorrect_counts: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.correct_counts.len()
    }

    pub fn total(&self) -> u64 {
        self.correct_counts.iter().sum::<u64>() + self.incorrect_counts.iter().sum::<u64>()
    }

    /// A value on an interior edge falls in the lower bin.
    pub fn bin_of(&self, confidence: f64) -> usize {
        let bins = self.bins();
        let lo = self.bin_edges[0];
        let width = (1.0 - lo) / bins as f64;
        if confidence <= lo {
            return 0;
        }
        let k = ((confidence - lo) / width).ceil() as usize;
        k.saturating_sub(1).min(bins - 1)
    }

    /// Element-wise sum of counts; used to pool several models.
    pub fn merge(&mut self, other: &ConfidenceHistogram) -> Result<()> {
        check_len("histogram bins", self.bins(), other.bins())?;
        for (a, b) in self.correct_counts.iter_mut().zip(&other.correct_counts) {
            *a += b;
        }
        for (a, b) in self.incorrect_counts.iter_mut().zip(&other.incorrect_counts) {
            *a += b;
        }
        Ok(())
    }

    /// Rows of `bin_lo,bin_hi,correct,incorrect,model_tag`, header excluded.
    pub fn write_rows(&self, tag: &str, out: &mut impl Write) -> std::io::Result<()> {
        for k in 0..self.bins() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.bin_edges[k],
                self.bin_edges[k + 1],
                self.correct_counts[k],
                self.incorrect_counts[k],
                tag
            )?;
        }
        Ok(())
    }
}

pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,correct,incorrect,model_tag";

pub fn confidence_histogram(probs: &Matrix, labels: &[usize], bins: usize) -> Result<ConfidenceHistogram> {
    check_len("label count", probs.rows(), labels.len())?;
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mut h = ConfidenceHistogram::empty(probs.cols(), bins);
    for (row, &y) in probs.iter_rows().zip(labels) {
        let pred = argmax(row);
        let k = h.bin_of(row[pred]);
        if pred == y {
            h.correct_counts[k] += 1;
        } else {
            h.incorrect_counts[k] += 1;
        }
    }
    Ok(h)
}
