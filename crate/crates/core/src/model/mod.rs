//! Split classifiers: a feature extractor producing one representation per
//! crop and an affine head mapping representations to class logits.

mod graph;
mod reference;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{BatchTensor, Interpolation, NormSpec, ResizeSpec};

pub use graph::GraphBackend;
pub use reference::ReferenceBackend;

/// Environment variable naming a JSON file that replaces the built-in presets.
pub const PRESETS_ENV: &str = "MID_PRESETS";

const BUILTIN_PRESETS: &str = include_str!("../../assets/presets.json");

/// Default number of crops per backend call.
pub const DEFAULT_BATCH_CAP: usize = 32;

/// Preprocessing contract and output sizes of one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDescriptor {
    #[serde(default)]
    pub name: String,
    pub resize_shorter_side: usize,
    pub crop_size: usize,
    pub interpolation: Interpolation,
    #[serde(default)]
    pub antialias: bool,
    pub feature_dim: usize,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default)]
    pub norm: NormSpec,
}

fn default_classes() -> usize {
    1000
}

impl ModelDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.crop_size == 0 || self.crop_size > self.resize_shorter_side {
            return Err(Error::config(format!(
                "{}: crop size {} must be in 1..={}",
                self.name, self.crop_size, self.resize_shorter_side
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::config(format!("{}: feature_dim must be >= 1", self.name)));
        }
        if self.num_classes < 2 {
            return Err(Error::config(format!("{}: need at least 2 classes", self.name)));
        }
        self.norm.validate().map_err(|e| Error::config(e.to_string()))
    }

    pub fn resize_spec(&self) -> ResizeSpec {
        ResizeSpec::new(self.resize_shorter_side, self.interpolation).with_antialias(self.antialias)
    }
}

/// Name -> descriptor map loaded from JSON.
#[derive(Debug, Clone)]
pub struct PresetRegistry {
    entries: BTreeMap<String, ModelDescriptor>,
}

impl PresetRegistry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_PRESETS).expect("built-in preset registry is valid")
    }

    /// The registry named by `MID_PRESETS`, or the built-in one.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(PRESETS_ENV) {
            Some(path) => Self::from_path(Path::new(&path)),
            None => Ok(Self::builtin()),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, ModelDescriptor> =
            serde_json::from_str(json).map_err(|e| Error::config(format!("preset registry: {e}")))?;
        let mut entries = BTreeMap::new();
        for (name, mut desc) in raw {
            desc.name = name.clone();
            desc.validate()?;
            entries.insert(name, desc);
        }
        Ok(Self { entries })
    }

    pub fn get(&self, name: &str) -> Option<&ModelDescriptor> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelDescriptor> {
        self.entries.values()
    }

    /// Looks `name` up in the registry; unknown names are read as the path of a
    /// JSON descriptor file.
    pub fn resolve(&self, name: &str) -> Result<ModelDescriptor> {
        if let Some(desc) = self.get(name) {
            return Ok(desc.clone());
        }
        let path = Path::new(name);
        if !path.is_file() {
            return Err(Error::config(format!(
                "unknown preset '{name}' and no descriptor file at that path"
            )));
        }
        let mut desc: ModelDescriptor = serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| Error::config(format!("{name}: {e}")))?;
        if desc.name.is_empty() {
            desc.name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
        }
        desc.validate()?;
        Ok(desc)
    }
}

/// Resolves a preset through the registry selected by `MID_PRESETS`.
pub fn load_descriptor_preset(name: &str) -> Result<ModelDescriptor> {
    PresetRegistry::from_env()?.resolve(name)
}

/// Row-major (rows, cols) float matrix view shared by feature and logit batches.
pub trait RowBatch {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn data(&self) -> &[f32];

    fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data()[i * c..(i + 1) * c]
    }
}

macro_rules! row_batch {
    ($(#[$meta:meta])* $name:ident, $cols:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            count: usize,
            $cols: usize,
            data: Vec<f32>,
        }

        impl $name {
            pub fn new(count: usize, $cols: usize, data: Vec<f32>) -> Result<Self> {
                if count == 0 || $cols == 0 || data.len() != count * $cols {
                    return Err(Error::ShapeMismatch(format!(
                        concat!(stringify!($name), " ({}, {}) with {} values"),
                        count,
                        $cols,
                        data.len()
                    )));
                }
                if data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid_input(concat!(
                        stringify!($name),
                        " contains non-finite values"
                    )));
                }
                Ok(Self { count, $cols, data })
            }

            pub fn count(&self) -> usize {
                self.count
            }

            pub fn $cols(&self) -> usize {
                self.$cols
            }

            pub fn into_data(self) -> Vec<f32> {
                self.data
            }

            /// Stacks batches with equal width, preserving order.
            pub fn concat(parts: Vec<Self>) -> Result<Self> {
                let first = parts
                    .first()
                    .ok_or_else(|| Error::invalid_input("nothing to concatenate"))?;
                let width = first.$cols;
                let mut count = 0;
                let mut data = Vec::new();
                for part in parts {
                    if part.$cols != width {
                        return Err(Error::ShapeMismatch(format!(
                            "cannot concatenate widths {} and {}",
                            width, part.$cols
                        )));
                    }
                    count += part.count;
                    data.extend(part.data);
                }
                Self::new(count, width, data)
            }
        }

        impl RowBatch for $name {
            fn rows(&self) -> usize {
                self.count
            }

            fn cols(&self) -> usize {
                self.$cols
            }

            fn data(&self) -> &[f32] {
                &self.data
            }
        }
    };
}

row_batch!(
    /// Per-crop representations, (N, D).
    FeatureBatch,
    dim
);
row_batch!(
    /// Per-crop class scores, (N, K).
    LogitBatch,
    classes
);

/// A classifier backend. `classify` must be affine for split models so that
/// averaging features and averaging logits agree.
///
/// Instances are used from one thread at a time; evaluation creates one per
/// worker.
pub trait Backend: Send {
    fn num_classes(&self) -> usize;

    /// Representation width, or `None` for logits-only models.
    fn feature_dim(&self) -> Option<usize>;

    fn split_available(&self) -> bool {
        self.feature_dim().is_some()
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch>;

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch>;

    /// Full forward pass; logits-only backends override this.
    fn logits(&mut self, batch: &BatchTensor) -> Result<LogitBatch> {
        let features = self.extract_features(batch)?;
        self.classify(&features)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn feature_dim(&self) -> Option<usize> {
        (**self).feature_dim()
    }

    fn split_available(&self) -> bool {
        (**self).split_available()
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch> {
        (**self).extract_features(batch)
    }

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch> {
        (**self).classify(features)
    }

    fn logits(&mut self, batch: &BatchTensor) -> Result<LogitBatch> {
        (**self).logits(batch)
    }
}

/// Splits large crop batches into runtime calls of at most `cap` crops and
/// concatenates the results.
pub struct ChunkedBackend<B> {
    inner: B,
    cap: usize,
}

impl<B: Backend> ChunkedBackend<B> {
    pub fn new(inner: B, cap: usize) -> Self {
        Self {
            inner,
            cap: cap.max(1),
        }
    }

    pub fn into_inner(self) -> B {
        self.inner
    }

    fn chunked<T>(
        &mut self,
        batch: &BatchTensor,
        mut run: impl FnMut(&mut B, &BatchTensor) -> Result<T>,
        concat: impl FnOnce(Vec<T>) -> Result<T>,
    ) -> Result<T> {
        if batch.count() <= self.cap {
            return run(&mut self.inner, batch);
        }
        let mut parts = Vec::with_capacity(batch.count().div_ceil(self.cap));
        let mut start = 0;
        while start < batch.count() {
            let end = (start + self.cap).min(batch.count());
            parts.push(run(&mut self.inner, &batch.slice(start, end)?)?);
            start = end;
        }
        concat(parts)
    }
}

impl<B: Backend> Backend for ChunkedBackend<B> {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn feature_dim(&self) -> Option<usize> {
        self.inner.feature_dim()
    }

    fn split_available(&self) -> bool {
        self.inner.split_available()
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch> {
        self.chunked(batch, |b, x| b.extract_features(x), FeatureBatch::concat)
    }

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch> {
        self.inner.classify(features)
    }

    fn logits(&mut self, batch: &BatchTensor) -> Result<LogitBatch> {
        self.chunked(batch, |b, x| b.logits(x), LogitBatch::concat)
    }
}
