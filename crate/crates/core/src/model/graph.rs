//! ONNX execution through tract.
//!
//! A split model is a feature graph `(N, 3, C, C) -> (N, D)` plus a head graph
//! `(N, D) -> (N, K)`. A monolithic graph `(N, 3, C, C) -> (N, K)` is accepted
//! too, but then only logit and softmax fusion are possible.
//!
//! tract optimizes for concrete input shapes, so one plan is compiled per
//! batch size and cached.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use tract_onnx::prelude::*;
use tract_onnx::tract_hir::infer::Factoid;

use super::{Backend, FeatureBatch, LogitBatch, RowBatch};
use crate::error::{Error, Result};
use crate::imaging::{BatchTensor, CHANNELS};

fn runtime(context: &str, err: impl std::fmt::Display) -> Error {
    Error::Runtime(format!("{context}: {err}"))
}

struct GraphRunner {
    label: String,
    model: InferenceModel,
    plans: HashMap<Vec<usize>, Arc<TypedRunnableModel>>,
}

impl GraphRunner {
    fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let label = path.display().to_string();
        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| runtime(&label, e))?;
        Ok(Self {
            label,
            model,
            plans: HashMap::new(),
        })
    }

    /// Declared size of input axis `axis`, when the graph fixes it.
    fn declared_input_dim(&self, axis: usize) -> Option<usize> {
        let fact = self.model.input_fact(0).ok()?;
        let dim = fact.shape.dim(axis)?.concretize()?;
        dim.to_i64().ok().map(|d| d as usize)
    }

    fn plan(&mut self, shape: &[usize]) -> Result<Arc<TypedRunnableModel>> {
        if let Some(plan) = self.plans.get(shape) {
            return Ok(plan.clone());
        }
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact(shape).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(|e| runtime(&self.label, e))?;
        self.plans.insert(shape.to_vec(), plan.clone());
        Ok(plan)
    }

    /// Output width for the given input shape, without running the graph.
    fn output_width(&mut self, shape: &[usize]) -> Result<usize> {
        let plan = self.plan(shape)?;
        let fact = plan
            .model()
            .output_fact(0)
            .map_err(|e| runtime(&self.label, e))?;
        let dims = fact
            .shape
            .as_concrete()
            .ok_or_else(|| runtime(&self.label, "output shape is not concrete"))?;
        if dims.first() != Some(&shape[0]) {
            return Err(Error::ShapeMismatch(format!(
                "{}: output {dims:?} does not keep batch size {}",
                self.label, shape[0]
            )));
        }
        Ok(dims[1..].iter().product())
    }

    /// Runs the graph and flattens everything after the batch axis.
    fn run(&mut self, shape: &[usize], data: &[f32]) -> Result<(usize, Vec<f32>)> {
        let plan = self.plan(shape)?;
        let input = Tensor::from_shape(shape, data).map_err(|e| runtime(&self.label, e))?;
        let outputs = plan
            .run(tvec!(input.into()))
            .map_err(|e| runtime(&self.label, e))?;
        let out = outputs[0]
            .to_plain_array_view::<f32>()
            .map_err(|e| runtime(&self.label, e))?;
        let width = out.shape()[1..].iter().product();
        Ok((width, out.iter().copied().collect()))
    }
}

/// Backend over ONNX graphs. Either split (`features` + `head`) or monolithic.
pub struct GraphBackend {
    crop_size: usize,
    features: GraphRunner,
    head: Option<GraphRunner>,
    feature_dim: Option<usize>,
    num_classes: usize,
}

impl GraphBackend {
    /// Loads a feature/head pair and checks that their interfaces line up.
    pub fn split(feature_graph: &Path, head_graph: &Path, crop_size: usize) -> Result<Self> {
        let mut features = GraphRunner::load(feature_graph)?;
        let mut head = GraphRunner::load(head_graph)?;
        let feature_dim = features.output_width(&[1, CHANNELS, crop_size, crop_size])?;
        if let Some(expected) = head.declared_input_dim(1) {
            if expected != feature_dim {
                return Err(Error::ShapeMismatch(format!(
                    "feature graph produces {feature_dim} values per crop but head expects {expected}"
                )));
            }
        }
        let num_classes = head.output_width(&[1, feature_dim])?;
        Ok(Self {
            crop_size,
            features,
            head: Some(head),
            feature_dim: Some(feature_dim),
            num_classes,
        })
    }

    /// Loads a single image-to-logits graph.
    pub fn monolithic(graph: &Path, crop_size: usize) -> Result<Self> {
        let mut features = GraphRunner::load(graph)?;
        let num_classes = features.output_width(&[1, CHANNELS, crop_size, crop_size])?;
        Ok(Self {
            crop_size,
            features,
            head: None,
            feature_dim: None,
            num_classes,
        })
    }

    fn check_batch(&self, batch: &BatchTensor) -> Result<()> {
        if batch.height() != self.crop_size || batch.width() != self.crop_size {
            return Err(Error::ShapeMismatch(format!(
                "graph expects {0}x{0} crops, got {1}x{2}",
                self.crop_size,
                batch.height(),
                batch.width()
            )));
        }
        Ok(())
    }
}

impl Backend for GraphBackend {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> Option<usize> {
        self.feature_dim
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch> {
        let dim = self.feature_dim.ok_or_else(|| {
            Error::Capability(
                "monolithic graph has no feature output; use logit or softmax fusion".into(),
            )
        })?;
        self.check_batch(batch)?;
        let (width, data) = self.features.run(&batch.shape(), batch.data())?;
        if width != dim {
            return Err(Error::ShapeMismatch(format!("feature graph returned width {width}, expected {dim}")));
        }
        FeatureBatch::new(batch.count(), dim, data)
    }

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch> {
        let head = self.head.as_mut().ok_or_else(|| {
            Error::Capability("monolithic graph has no separate head".into())
        })?;
        if Some(features.dim()) != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {:?} features, got {}",
                self.feature_dim,
                features.dim()
            )));
        }
        let (width, data) = head.run(&[features.count(), features.dim()], features.data())?;
        LogitBatch::new(features.count(), width, data)
    }

    fn logits(&mut self, batch: &BatchTensor) -> Result<LogitBatch> {
        if self.head.is_some() {
            let features = self.extract_features(batch)?;
            return self.classify(&features);
        }
        self.check_batch(batch)?;
        let (width, data) = self.features.run(&batch.shape(), batch.data())?;
        LogitBatch::new(batch.count(), width, data)
    }
}
