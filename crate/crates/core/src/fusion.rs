//! Multi-crop fusion.
//!
//! Per-crop representations can be averaged at three points of the
//! pipeline: before the head (features), after it (logits), or after the
//! softmax (probabilities). With an affine head the first two are the same
//! computation up to rounding; softmax averaging genuinely differs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BatchTensor;
use crate::model::{Backend, FeatureBatch, LogitBatch, RowBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FusionLevel {
    Feature,
    Logit,
    #[default]
    Softmax,
}

impl fmt::Display for FusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionLevel::Feature => "feature",
            FusionLevel::Logit => "logit",
            FusionLevel::Softmax => "softmax",
        })
    }
}

impl FromStr for FusionLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "feature" => Ok(FusionLevel::Feature),
            "logit" => Ok(FusionLevel::Logit),
            "softmax" => Ok(FusionLevel::Softmax),
            other => Err(Error::config(format!(
                "unknown fusion level '{other}' (expected feature, logit or softmax)"
            ))),
        }
    }
}

/// Class probabilities; non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVec(Vec<f64>);

impl ProbVec {
    /// Wraps probabilities after checking they lie on the simplex (within 1e-6).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid_input("empty probability vector"));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid_input("probability outside [0, 1]"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::invalid_input(format!("probabilities sum to {total}")));
        }
        Ok(Self(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: usize,
    pub probs: ProbVec,
    pub fusion: FusionLevel,
    pub crop_count: usize,
}

impl Prediction {
    fn new(probs: ProbVec, fusion: FusionLevel, crop_count: usize) -> Self {
        Self {
            label: probs.argmax(),
            probs,
            fusion,
            crop_count,
        }
    }
}

pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn mean_columns<'a>(rows: impl Iterator<Item = &'a [f32]>, cols: usize) -> Result<Vec<f64>> {
    let mut sums = vec![CompensatedSum::default(); cols];
    let mut n = 0usize;
    for row in rows {
        for (s, &v) in sums.iter_mut().zip(row) {
            s.add(f64::from(v));
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid_input("cannot average an empty batch"));
    }
    Ok(sums.iter().map(|s| s.value() / n as f64).collect())
}

/// Arithmetic mean over the batch dimension, accumulated with compensation.
pub fn average_rows<B: RowBatch>(batch: &B) -> Result<Vec<f32>> {
    let means = mean_columns((0..batch.rows()).map(|i| batch.row(i)), batch.cols())?;
    Ok(means.into_iter().map(|m| m as f32).collect())
}

/// Numerically stable softmax in double precision.
pub fn softmax(logits: &[f32]) -> Result<ProbVec> {
    if logits.is_empty() {
        return Err(Error::invalid_input("softmax of an empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid_input("softmax input is not finite"));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let exps: Vec<f64> = logits.iter().map(|&v| (f64::from(v) - max).exp()).collect();
    let mut total = CompensatedSum::default();
    for &e in &exps {
        total.add(e);
    }
    let total = total.value();
    Ok(ProbVec(exps.into_iter().map(|e| e / total).collect()))
}

fn mean_probs(probs: &[ProbVec]) -> Result<ProbVec> {
    let k = probs
        .first()
        .map(ProbVec::len)
        .ok_or_else(|| Error::invalid_input("cannot average zero probability vectors"))?;
    let mut sums = vec![CompensatedSum::default(); k];
    for p in probs {
        for (s, &v) in sums.iter_mut().zip(p.as_slice()) {
            s.add(v);
        }
    }
    let n = probs.len() as f64;
    let mut mean: Vec<f64> = sums.iter().map(|s| s.value() / n).collect();
    // already on the simplex up to rounding
    let total: f64 = mean.iter().sum();
    for m in &mut mean {
        *m = (*m / total).clamp(0.0, 1.0);
    }
    Ok(ProbVec(mean))
}

/// Fuses logit rows. Only logit and softmax fusion can be computed from logits.
pub fn fuse_logits(logits: &LogitBatch, level: FusionLevel) -> Result<Prediction> {
    let probs = match level {
        FusionLevel::Feature => {
            return Err(Error::Capability(
                "feature fusion needs the features, not logits".into(),
            ))
        }
        FusionLevel::Logit => softmax(&average_rows(logits)?)?,
        FusionLevel::Softmax => {
            let per_crop = (0..logits.count())
                .map(|i| softmax(logits.row(i)))
                .collect::<Result<Vec<_>>>()?;
            mean_probs(&per_crop)?
        }
    };
    Ok(Prediction::new(probs, level, logits.count()))
}

/// Fuses per-crop features through the backend's head.
pub fn fuse_features<B: Backend + ?Sized>(
    backend: &mut B,
    features: &FeatureBatch,
    level: FusionLevel,
) -> Result<Prediction> {
    match level {
        FusionLevel::Feature => {
            let mean = average_rows(features)?;
            let fused = FeatureBatch::new(1, features.dim(), mean)?;
            let logits = backend.classify(&fused)?;
            let probs = softmax(logits.row(0))?;
            Ok(Prediction::new(probs, level, features.count()))
        }
        FusionLevel::Logit | FusionLevel::Softmax => {
            let logits = backend.classify(features)?;
            fuse_logits(&logits, level)
        }
    }
}

/// Runs a crop batch through the backend and fuses at `level`.
pub fn fuse_predict<B: Backend + ?Sized>(
    backend: &mut B,
    batch: &BatchTensor,
    level: FusionLevel,
) -> Result<Prediction> {
    if backend.split_available() {
        let features = backend.extract_features(batch)?;
        return fuse_features(backend, &features, level);
    }
    if level == FusionLevel::Feature {
        return Err(Error::Capability(
            "this model is logits-only, so feature fusion is unavailable; use --fuse logit or --fuse softmax"
                .into(),
        ));
    }
    let logits = backend.logits(batch)?;
    fuse_logits(&logits, level)
}
