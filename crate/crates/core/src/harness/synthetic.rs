//! Synthetic coverage benchmark.
//!
//! Each image holds one square marker on a gray background. The marker's
//! center pixel carries a flag color whose red channel encodes the class, so
//! a crop can be classified exactly iff it contains that pixel. Class 0 is
//! reserved for "no marker seen", which makes accuracy equal to the fraction
//! of images where at least one crop covers the marker center.

use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Scorer, SampleSource};
use crate::cropping::{compose_plan, CropStrategy};
use crate::error::{Error, Result};
use crate::fusion::{fuse_features, FusionLevel, Prediction};
use crate::imaging::{resized_dims, BatchTensor, Interpolation, NormSpec, RawImage};
use crate::model::{Backend, FeatureBatch, LogitBatch, ModelDescriptor, RowBatch};

pub const MARKER_CLASSES: usize = 10;
const BACKGROUND: [u8; 3] = [128, 128, 128];
const RED_STEP: usize = 25;
/// Logit scale of the oracle head; large enough that one hit dominates.
const HEAD_GAIN: f32 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MarkerGeometry {
    pub height: usize,
    pub width: usize,
    pub marker: usize,
    pub crop: usize,
}

impl MarkerGeometry {
    /// 256x341 images (already at the resize target), 32px markers, 224 crops.
    pub const STANDARD: MarkerGeometry = MarkerGeometry {
        height: 256,
        width: 341,
        marker: 32,
        crop: 224,
    };

    fn validate(&self) -> Result<()> {
        let short = self.height.min(self.width);
        if self.marker < 2 || self.marker > short || self.crop == 0 || self.crop > short {
            return Err(Error::config(format!("unusable marker geometry {self:?}")));
        }
        Ok(())
    }

    /// Descriptor whose resize step leaves these images untouched.
    pub fn descriptor(&self) -> ModelDescriptor {
        ModelDescriptor {
            name: "marker-oracle".into(),
            resize_shorter_side: self.height.min(self.width),
            crop_size: self.crop,
            interpolation: Interpolation::Bilinear,
            antialias: false,
            feature_dim: MARKER_CLASSES,
            num_classes: MARKER_CLASSES,
            norm: NormSpec::IMAGENET,
        }
    }

    /// Probability that the center crop contains a uniformly placed marker
    /// center.
    pub fn center_coverage(&self) -> f64 {
        let half = self.marker / 2;
        let axis = |len: usize| {
            let lo = (len - self.crop) / 2;
            let positions = lo..lo + self.crop;
            let valid = half..=len - self.marker + half;
            let inside = valid.clone().filter(|c| positions.contains(c)).count();
            inside as f64 / valid.count() as f64
        };
        axis(self.height) * axis(self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Marker {
    pub top: usize,
    pub left: usize,
    pub class: usize,
}

/// Deterministic marker dataset of `len` images.
#[derive(Debug, Clone)]
pub struct MarkerDataset {
    pub geometry: MarkerGeometry,
    markers: Vec<Marker>,
    keys: Vec<String>,
}

fn below(rng: &mut ChaCha8Rng, n: usize) -> usize {
    ((rng.next_u64() as u128 * n as u128) >> 64) as usize
}

fn flag_color(class: usize) -> [u8; 3] {
    [(class * RED_STEP) as u8, 255, 0]
}

fn body_color(class: usize) -> [u8; 3] {
    [(class * RED_STEP) as u8, 60, 200]
}

impl MarkerDataset {
    pub fn new(geometry: MarkerGeometry, len: usize, seed: u64) -> Result<Self> {
        geometry.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let markers: Vec<Marker> = (0..len)
            .map(|_| Marker {
                top: below(&mut rng, geometry.height - geometry.marker + 1),
                left: below(&mut rng, geometry.width - geometry.marker + 1),
                class: 1 + below(&mut rng, MARKER_CLASSES - 1),
            })
            .collect();
        let keys = markers
            .iter()
            .enumerate()
            .map(|(i, m)| format!("class{}/{i:05}.png", m.class))
            .collect();
        Ok(Self {
            geometry,
            markers,
            keys,
        })
    }

    pub fn marker(&self, index: usize) -> Marker {
        self.markers[index]
    }

    /// Marker center in image coordinates.
    pub fn center(&self, index: usize) -> (usize, usize) {
        let m = self.markers[index];
        let half = self.geometry.marker / 2;
        (m.top + half, m.left + half)
    }

    pub fn render(&self, index: usize) -> Result<RawImage> {
        let m = self.markers[index];
        let g = self.geometry;
        let center = self.center(index);
        RawImage::from_fn(g.height, g.width, |y, x| {
            if (y, x) == center {
                flag_color(m.class)
            } else if (m.top..m.top + g.marker).contains(&y) && (m.left..m.left + g.marker).contains(&x) {
                body_color(m.class)
            } else {
                BACKGROUND
            }
        })
    }

    /// Writes PNGs as `root/class<k>/<index>.png`, creating every class
    /// directory so that sorted directory order matches class indices.
    pub fn write_to_dir(&self, root: &Path) -> Result<()> {
        for class in 0..MARKER_CLASSES {
            std::fs::create_dir_all(root.join(format!("class{class}")))?;
        }
        for i in 0..self.markers.len() {
            let img = self.render(i)?;
            let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
                .expect("buffer size matches");
            buf.save(root.join(&self.keys[i]))
                .map_err(|e| Error::Data(format!("writing {}: {e}", self.keys[i])))?;
        }
        Ok(())
    }
}

impl SampleSource for MarkerDataset {
    fn len(&self) -> usize {
        self.markers.len()
    }

    fn num_classes(&self) -> usize {
        MARKER_CLASSES
    }

    fn key(&self, index: usize) -> &str {
        &self.keys[index]
    }

    fn label(&self, index: usize) -> usize {
        self.markers[index].class
    }

    fn load(&self, index: usize) -> Result<RawImage> {
        self.render(index)
    }
}

/// Pixel-level oracle: a crop's feature is the one-hot class of the flag
/// pixel it contains (all zeros if none). The head scales features, so it is
/// affine as required for feature fusion.
#[derive(Debug, Clone)]
pub struct MarkerOracleBackend {
    norm: NormSpec,
}

impl MarkerOracleBackend {
    pub fn new(norm: NormSpec) -> Self {
        Self { norm }
    }

    fn find_flag(&self, crop: &[f32], plane: usize) -> Option<usize> {
        let (r, g, b) = (&crop[..plane], &crop[plane..2 * plane], &crop[2 * plane..]);
        let byte = |v: f32, c: usize| self.norm.invert(v, c);
        (0..plane)
            .find(|&i| byte(g[i], 1) > 254.5 && byte(b[i], 2) < 0.5)
            .map(|i| (byte(r[i], 0) / RED_STEP as f32).round() as usize)
            .filter(|&class| class < MARKER_CLASSES)
    }
}

impl Backend for MarkerOracleBackend {
    fn num_classes(&self) -> usize {
        MARKER_CLASSES
    }

    fn feature_dim(&self) -> Option<usize> {
        Some(MARKER_CLASSES)
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch> {
        let plane = batch.height() * batch.width();
        let mut data = vec![0f32; batch.count() * MARKER_CLASSES];
        for i in 0..batch.count() {
            if let Some(class) = self.find_flag(batch.item(i), plane) {
                data[i * MARKER_CLASSES + class] = 1.0;
            }
        }
        FeatureBatch::new(batch.count(), MARKER_CLASSES, data)
    }

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch> {
        if features.dim() != MARKER_CLASSES {
            return Err(Error::ShapeMismatch(format!(
                "oracle head expects {MARKER_CLASSES} features, got {}",
                features.dim()
            )));
        }
        let data = features.data().iter().map(|v| v * HEAD_GAIN).collect();
        LogitBatch::new(features.count(), MARKER_CLASSES, data)
    }
}

/// Geometric twin of the pixel pipeline: plans crops exactly as evaluation
/// does, but decides coverage from the known marker position instead of
/// rendering pixels. Features, head and fusion are the real ones.
pub struct GeometricScorer {
    strategy: CropStrategy,
    fusion: FusionLevel,
    head: MarkerOracleBackend,
}

impl GeometricScorer {
    pub fn new(strategy: CropStrategy, fusion: FusionLevel) -> Self {
        Self {
            strategy,
            fusion,
            head: MarkerOracleBackend::new(NormSpec::IMAGENET),
        }
    }
}

impl Scorer<MarkerDataset> for GeometricScorer {
    fn score(&mut self, source: &MarkerDataset, index: usize, seed: u64) -> Result<Prediction> {
        let g = source.geometry;
        let short = g.height.min(g.width);
        if resized_dims(g.height, g.width, short) != (g.height, g.width) {
            return Err(Error::config("marker images must already be at the resize target"));
        }
        let plan = compose_plan(&self.strategy, g.height, g.width, g.crop, seed)?;
        let (cy, cx) = source.center(index);
        let class = source.label(index);
        let mut data = vec![0f32; plan.len() * MARKER_CLASSES];
        for (i, rect) in plan.rects.iter().enumerate() {
            if rect.contains(cy, cx) {
                data[i * MARKER_CLASSES + class] = 1.0;
            }
        }
        let features = FeatureBatch::new(plan.len(), MARKER_CLASSES, data)?;
        fuse_features(&mut self.head, &features, self.fusion)
    }
}
