//! Ensemble prediction, pseudo-labels, and distillation of an ensemble into a
//! single network.
//!
//! Distillation only ever sees an [`UnlabeledDataset`] or a
//! [`PseudoLabeledDataset`]; there is no path for ground-truth labels to reach
//! the server-side student.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::UnlabeledDataset;
use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::nn::{MlpArch, MlpModel, ParamVector, SgdConfig};
use crate::rng::RngStream;
use crate::train::{batches_per_epoch, Loop};

/// Unlabeled features paired with soft targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledDataset {
    features: Matrix,
    soft_targets: Matrix,
}

impl PseudoLabeledDataset {
    pub fn new(unlabeled: &UnlabeledDataset, soft_targets: Matrix) -> Result<Self> {
        check_len("soft target rows", unlabeled.len(), soft_targets.rows())?;
        for row in soft_targets.iter_rows() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Numeric("soft targets are not probability rows"));
            }
        }
        Ok(PseudoLabeledDataset {
            features: unlabeled.features().clone(),
            soft_targets,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn soft_targets(&self) -> &Matrix {
        &self.soft_targets
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    /// CSV with `x0..x{d-1}` then `p0..p{C-1}` columns.
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.features.cols())
            .map(|j| format!("x{j}"))
            .chain((0..self.soft_targets.cols()).map(|c| format!("p{c}")))
            .collect();
        w.write_record(&header)?;
        for (x, p) in self.features.iter_rows().zip(self.soft_targets.iter_rows()) {
            w.write_record(x.iter().chain(p).map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Uniform average of the members' softmax outputs. Members are evaluated in
/// parallel and summed in list order.
pub fn ensemble_predict(models: &[ParamVector], arch: &MlpArch, features: &Matrix) -> Result<Matrix> {
    if models.is_empty() {
        return Err(Error::Capacity("ensemble has no members".into()));
    }
    let outputs: Vec<Matrix> = models
        .par_iter()
        .map(|w| MlpModel::unflatten(w.clone(), arch)?.forward(features))
        .collect::<Result<_>>()?;
    if outputs.len() == 1 {
        return Ok(outputs.into_iter().next().unwrap());
    }
    let mut acc = Matrix::zeros(features.rows(), arch.class_count());
    for out in &outputs {
        for (a, p) in acc.as_mut_slice().iter_mut().zip(out.as_slice()) {
            *a += p;
        }
    }
    let inv = 1.0 / outputs.len() as f64;
    for a in acc.as_mut_slice() {
        *a *= inv;
    }
    Ok(acc)
}

/// Rowwise `p^power` renormalized.
pub fn sharpen(probs: &Matrix, power: f64) -> Result<Matrix> {
    if !(power >= 1.0) {
        return Err(Error::Config(format!("sharpen power {power} must be >= 1")));
    }
    let mut out = probs.clone();
    if power == 1.0 {
        return Ok(out);
    }
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        for v in row.iter_mut() {
            *v = v.powf(power);
        }
        let total: f64 = row.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Numeric("sharpen: zero row"));
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

pub fn make_pseudo_set(
    models: &[ParamVector],
    arch: &MlpArch,
    unlabeled: &UnlabeledDataset,
    sharpen_power: Option<f64>,
) -> Result<PseudoLabeledDataset> {
    let probs = ensemble_predict(models, arch, unlabeled.features())?;
    let targets = match sharpen_power {
        Some(p) => sharpen(&probs, p)?,
        None => probs,
    };
    PseudoLabeledDataset::new(unlabeled, targets)
}

/// Cyclical step-size schedule with snapshot averaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwaSchedule {
    pub eta_high: f64,
    pub eta_low: f64,
    pub cycle_len: usize,
    /// First global step index (0-based) eligible for a snapshot.
    pub collect_after: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for SwaSchedule {
    fn default() -> Self {
        SwaSchedule {
            eta_high: 1e-3,
            eta_low: 4e-4,
            cycle_len: 25,
            collect_after: 250,
            epochs: 20,
            batch_size: 128,
        }
    }
}

impl SwaSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_low > 0.0 && self.eta_low <= self.eta_high) {
            return Err(Error::Config("swa needs 0 < eta_low <= eta_high".into()));
        }
        if self.cycle_len == 0 || self.batch_size == 0 {
            return Err(Error::Config("swa cycle_len and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Linear decay from `eta_high` to `eta_low` within each cycle.
    pub fn step_size(&self, t: usize) -> f64 {
        if self.cycle_len == 1 {
            return self.eta_high;
        }
        let phase = (t % self.cycle_len) as f64 / (self.cycle_len - 1) as f64;
        self.eta_high - (self.eta_high - self.eta_low) * phase
    }

    /// Whether the iterate after step `t` is collected.
    pub fn is_snapshot(&self, t: usize) -> bool {
        t >= self.collect_after && (t + 1) % self.cycle_len == 0
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * batches_per_epoch(examples, self.batch_size)
    }
}

/// Everything a SWA distillation run produced.
#[derive(Debug, Clone)]
pub struct SwaOutcome {
    pub weights: ParamVector,
    pub step_sizes: Vec<f64>,
    pub snapshot_steps: Vec<usize>,
    pub snapshots: Vec<ParamVector>,
}

fn student(init: &ParamVector, arch: &MlpArch, teacher: &PseudoLabeledDataset) -> Result<MlpModel> {
    if teacher.is_empty() {
        return Err(Error::Capacity("teacher set is empty".into()));
    }
    check_len("teacher classes", arch.class_count(), teacher.soft_targets.cols())?;
    MlpModel::unflatten(init.clone(), arch)
}

/// SWA distillation, keeping the full trace.
pub fn distill_swa_traced(
    init: &ParamVector,
    arch: &MlpArch,
    teacher: &PseudoLabeledDataset,
    sched: &SwaSchedule,
    sgd: &SgdConfig,
    rng: &mut RngStream,
) -> Result<SwaOutcome> {
    sched.validate()?;
    let mut model = student(init, arch, teacher)?;
    let cfg = SgdConfig {
        prox_mu: 0.0,
        batch_size: sched.batch_size,
        step_size: sched.eta_high,
        ..sgd.clone()
    };
    let steps = sched.total_steps(teacher.len());
    let mut step_sizes = Vec::with_capacity(steps);
    let mut snapshot_steps = Vec::new();
    let mut snapshots = Vec::new();
    Loop {
        features: &teacher.features,
        targets: &teacher.soft_targets,
        cfg: &cfg,
        anchor: None,
    }
    .run(
        &mut model,
        steps,
        rng,
        |t| sched.step_size(t),
        |t, w| {
            step_sizes.push(sched.step_size(t));
            if sched.is_snapshot(t) {
                snapshot_steps.push(t);
                snapshots.push(w.clone());
            }
        },
    )?;

    let weights = if snapshots.is_empty() {
        warn!(
            "SWA collected no snapshots in {steps} steps (collect_after = {}); returning final iterate",
            sched.collect_after
        );
        model.into_params()
    } else {
        let mut mean = ParamVector::zeros(init.len());
        for s in &snapshots {
            mean.axpy(1.0, s)?;
        }
        mean.scale(1.0 / snapshots.len() as f64);
        mean
    };
    Ok(SwaOutcome {
        weights,
        step_sizes,
        snapshot_steps,
        snapshots,
    })
}

pub fn distill_swa(
    init: &ParamVector,
    arch: &MlpArch,
    teacher: &PseudoLabeledDataset,
    sched: &SwaSchedule,
    sgd: &SgdConfig,
    rng: &mut RngStream,
) -> Result<ParamVector> {
    distill_swa_traced(init, arch, teacher, sched, sgd, rng).map(|o| o.weights)
}

/// Plain momentum-SGD distillation; returns the final iterate.
pub fn distill_sgd(
    init: &ParamVector,
    arch: &MlpArch,
    teacher: &PseudoLabeledDataset,
    epochs: usize,
    sgd: &SgdConfig,
    rng: &mut RngStream,
) -> Result<ParamVector> {
    let mut model = student(init, arch, teacher)?;
    let cfg = SgdConfig {
        prox_mu: 0.0,
        ..sgd.clone()
    };
    cfg.validate()?;
    let steps = epochs * batches_per_epoch(teacher.len(), cfg.batch_size);
    Loop {
        features: &teacher.features,
        targets: &teacher.soft_targets,
        cfg: &cfg,
        anchor: None,
    }
    .run(&mut model, steps, rng, |_| cfg.step_size, |_, _| {})?;
    Ok(model.into_params())
}
