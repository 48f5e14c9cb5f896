//! Small deterministic convolutional classifier used when no exported model
//! is at hand. Two 3x3 stride-2 convolutions with ReLU, global average
//! pooling, a projection to `feature_dim`, and an affine head. Every weight
//! is drawn from ChaCha8 seeded with the backend seed.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Backend, FeatureBatch, LogitBatch, RowBatch};
use crate::error::{Error, Result};
use crate::imaging::{BatchTensor, CHANNELS};

const HIDDEN1: usize = 8;
const HIDDEN2: usize = 16;

#[derive(Debug, Clone)]
struct Conv3x3 {
    in_ch: usize,
    out_ch: usize,
    weight: Vec<f32>, // (out, in, 3, 3)
    bias: Vec<f32>,
}

impl Conv3x3 {
    fn random(rng: &mut ChaCha8Rng, in_ch: usize, out_ch: usize) -> Self {
        let scale = 1.0 / ((in_ch * 9) as f32).sqrt();
        Self {
            in_ch,
            out_ch,
            weight: uniform(rng, out_ch * in_ch * 9, scale),
            bias: uniform(rng, out_ch, 0.1),
        }
    }

    /// Stride 2, zero padding 1, followed by ReLU. Input and output are (C, H, W).
    fn forward(&self, input: &[f32], h: usize, w: usize) -> (Vec<f32>, usize, usize) {
        let (oh, ow) = ((h + 1) / 2, (w + 1) / 2);
        let mut out = vec![0f32; self.out_ch * oh * ow];
        for o in 0..self.out_ch {
            let plane = &mut out[o * oh * ow..(o + 1) * oh * ow];
            plane.fill(self.bias[o]);
            for i in 0..self.in_ch {
                let src = &input[i * h * w..(i + 1) * h * w];
                let k = &self.weight[(o * self.in_ch + i) * 9..][..9];
                for oy in 0..oh {
                    for ky in 0..3 {
                        let y = (2 * oy + ky) as isize - 1;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let row = &src[y as usize * w..(y as usize + 1) * w];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for kx in 0..3 {
                                let x = (2 * ox + kx) as isize - 1;
                                if x >= 0 && x < w as isize {
                                    acc += row[x as usize] * k[ky * 3 + kx];
                                }
                            }
                            *d += acc;
                        }
                    }
                }
            }
            for v in plane.iter_mut() {
                *v = v.max(0.0);
            }
        }
        (out, oh, ow)
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let unit = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
            (2.0 * unit - 1.0) * scale
        })
        .collect()
}

/// Deterministic stand-in for a pretrained split model.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    crop_size: usize,
    feature_dim: usize,
    num_classes: usize,
    conv1: Conv3x3,
    conv2: Conv3x3,
    projection: Vec<f32>, // (feature_dim, HIDDEN2)
    projection_bias: Vec<f32>,
    head: Vec<f32>, // (num_classes, feature_dim)
    head_bias: Vec<f32>,
}

impl ReferenceBackend {
    pub fn new(seed: u64, feature_dim: usize, num_classes: usize, crop_size: usize) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 || crop_size == 0 {
            return Err(Error::config(format!(
                "reference backend needs feature_dim >= 1, classes >= 2, crop >= 1 \
                 (got {feature_dim}, {num_classes}, {crop_size})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv1 = Conv3x3::random(&mut rng, CHANNELS, HIDDEN1);
        let conv2 = Conv3x3::random(&mut rng, HIDDEN1, HIDDEN2);
        let projection = uniform(&mut rng, feature_dim * HIDDEN2, 1.0 / (HIDDEN2 as f32).sqrt());
        let projection_bias = uniform(&mut rng, feature_dim, 0.1);
        let head = uniform(&mut rng, num_classes * feature_dim, 4.0 / (feature_dim as f32).sqrt());
        let head_bias = uniform(&mut rng, num_classes, 0.5);
        Ok(Self {
            crop_size,
            feature_dim,
            num_classes,
            conv1,
            conv2,
            projection,
            projection_bias,
            head,
            head_bias,
        })
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }

    fn features_one(&self, crop: &[f32]) -> Vec<f32> {
        let (a, h, w) = self.conv1.forward(crop, self.crop_size, self.crop_size);
        let (b, h, w) = self.conv2.forward(&a, h, w);
        let area = (h * w) as f32;
        let pooled: Vec<f32> = b
            .chunks_exact(h * w)
            .map(|plane| plane.iter().sum::<f32>() / area)
            .collect();
        self.projection
            .chunks_exact(HIDDEN2)
            .zip(&self.projection_bias)
            .map(|(row, bias)| bias + row.iter().zip(&pooled).map(|(w, p)| w * p).sum::<f32>())
            .collect()
    }
}

impl Backend for ReferenceBackend {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn feature_dim(&self) -> Option<usize> {
        Some(self.feature_dim)
    }

    fn extract_features(&mut self, batch: &BatchTensor) -> Result<FeatureBatch> {
        if batch.height() != self.crop_size || batch.width() != self.crop_size {
            return Err(Error::ShapeMismatch(format!(
                "reference backend expects {0}x{0} crops, got {1}x{2}",
                self.crop_size,
                batch.height(),
                batch.width()
            )));
        }
        let mut data = Vec::with_capacity(batch.count() * self.feature_dim);
        for i in 0..batch.count() {
            data.extend(self.features_one(batch.item(i)));
        }
        FeatureBatch::new(batch.count(), self.feature_dim, data)
    }

    fn classify(&mut self, features: &FeatureBatch) -> Result<LogitBatch> {
        if features.dim() != self.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} features, got {}",
                self.feature_dim,
                features.dim()
            )));
        }
        let mut data = Vec::with_capacity(features.count() * self.num_classes);
        for i in 0..features.count() {
            let f = features.row(i);
            data.extend(
                self.head
                    .chunks_exact(self.feature_dim)
                    .zip(&self.head_bias)
                    .map(|(row, bias)| bias + row.iter().zip(f).map(|(w, x)| w * x).sum::<f32>()),
            );
        }
        LogitBatch::new(features.count(), self.num_classes, data)
    }
}
