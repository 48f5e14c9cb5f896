//! Crop planning: where each crop of a resized image goes.
//!
//! Every strategy evaluated for multi-crop inference is a composition of a
//! few primitives: the center crop, uniformly placed random crops, the five
//! fixed crops (center plus the four corners), their mirrored variants, and
//! an adaptive term whose crop count depends on how much room the resized
//! image leaves around the crop.
//!
//! Mirrored random crops are drawn from their own sampler stream, so they are
//! independent of the unmirrored random crops of the same plan. Mirrored
//! fixed crops reuse the fixed positions.

mod sampler;
mod strategy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{FloatImage, NormSpec, PlanarTensor, CHANNELS};

pub use sampler::CropSampler;
pub use strategy::{AdaptiveParams, CropPrimitive, CropStrategy};

/// Square crop window; `mirror` flips it horizontally after extraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CropRect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub mirror: bool,
}

impl CropRect {
    pub fn new(top: usize, left: usize, size: usize) -> Self {
        Self {
            top,
            left,
            size,
            mirror: false,
        }
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.size >= 1 && self.top + self.size <= height && self.left + self.size <= width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.size && x >= self.left && x < self.left + self.size
    }
}

/// Ordered crop windows for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPlan {
    pub rects: Vec<CropRect>,
    pub strategy: CropStrategy,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub size: usize,
}

impl CropPlan {
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }
}

fn check_fit(height: usize, width: usize, size: usize) -> Result<()> {
    if size == 0 || size > height || size > width {
        return Err(Error::invalid_plan(format!(
            "crop {size} does not fit in {height}x{width}"
        )));
    }
    Ok(())
}

pub fn center_crop_rect(height: usize, width: usize, size: usize) -> Result<CropRect> {
    check_fit(height, width, size)?;
    Ok(CropRect::new((height - size) / 2, (width - size) / 2, size))
}

/// `n` uniformly placed crops from sampler stream 0.
pub fn random_crop_rects(
    height: usize,
    width: usize,
    size: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<CropRect>> {
    random_stream(height, width, size, n, seed, 0, false)
}

fn random_stream(
    height: usize,
    width: usize,
    size: usize,
    n: usize,
    seed: u64,
    stream: u64,
    mirror: bool,
) -> Result<Vec<CropRect>> {
    check_fit(height, width, size)?;
    if n == 0 {
        return Err(Error::invalid_plan("random crop count must be >= 1"));
    }
    let mut sampler = CropSampler::new(seed, height, width, size, stream);
    let (tops, lefts) = (height - size + 1, width - size + 1);
    Ok((0..n as u64)
        .map(|i| {
            let (top, left) = sampler.position(i, tops, lefts);
            CropRect {
                top,
                left,
                size,
                mirror,
            }
        })
        .collect())
}

/// Center, top-left, top-right, bottom-left, bottom-right.
pub fn fixed5_rects(height: usize, width: usize, size: usize) -> Result<Vec<CropRect>> {
    let center = center_crop_rect(height, width, size)?;
    let (bottom, right) = (height - size, width - size);
    Ok(vec![
        center,
        CropRect::new(0, 0, size),
        CropRect::new(0, right, size),
        CropRect::new(bottom, 0, size),
        CropRect::new(bottom, right, size),
    ])
}

/// Sets the mirror flag on every rect (idempotent).
pub fn mirrored(rects: &[CropRect]) -> Vec<CropRect> {
    rects
        .iter()
        .map(|r| CropRect { mirror: true, ..*r })
        .collect()
}

/// Crop count from the slack `max(h, w) - size`: 1 with no slack, `low` up to
/// `size / 8`, `high` beyond.
pub fn adaptive_crop_count(height: usize, width: usize, size: usize, params: &AdaptiveParams) -> usize {
    let slack = height.max(width).saturating_sub(size);
    let count = if slack == 0 {
        1
    } else if slack * 8 <= size {
        params.low
    } else {
        params.high
    };
    count.clamp(1, params.high.max(1))
}

pub fn compose_plan(
    strategy: &CropStrategy,
    height: usize,
    width: usize,
    size: usize,
    seed: u64,
) -> Result<CropPlan> {
    check_fit(height, width, size)?;
    let mut rects = Vec::new();
    for (stream, primitive) in strategy.primitives().iter().enumerate() {
        let stream = stream as u64;
        match *primitive {
            CropPrimitive::Center => rects.push(center_crop_rect(height, width, size)?),
            CropPrimitive::Random(n) => {
                rects.extend(random_stream(height, width, size, n, seed, stream, false)?)
            }
            CropPrimitive::MirroredRandom(n) => {
                rects.extend(random_stream(height, width, size, n, seed, stream, true)?)
            }
            CropPrimitive::Fixed5 => rects.extend(fixed5_rects(height, width, size)?),
            CropPrimitive::MirroredFixed5 => {
                rects.extend(mirrored(&fixed5_rects(height, width, size)?))
            }
            CropPrimitive::Adaptive(params) => {
                match adaptive_crop_count(height, width, size, &params) {
                    1 => rects.push(center_crop_rect(height, width, size)?),
                    n => rects.extend(random_stream(height, width, size, n, seed, stream, false)?),
                }
            }
        }
    }
    Ok(CropPlan {
        rects,
        strategy: strategy.clone(),
        seed,
        height,
        width,
        size,
    })
}

/// 1 - crop / resize, the fraction of the shorter side left for random placement.
pub fn crop_to_image_ratio(crop: usize, resize: usize) -> Result<f64> {
    if crop == 0 || resize == 0 || crop > resize {
        return Err(Error::invalid_input(format!(
            "crop {crop} must be in 1..={resize}"
        )));
    }
    Ok(1.0 - crop as f64 / resize as f64)
}

/// Cuts `rect` out of `img` and normalizes it; mirrored rects have their
/// columns reversed.
pub fn extract(img: &FloatImage, rect: &CropRect, norm: &NormSpec) -> Result<PlanarTensor> {
    if !rect.fits(img.height(), img.width()) {
        return Err(Error::invalid_plan(format!(
            "rect {rect:?} outside {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let size = rect.size;
    let plane = size * size;
    let src = img.data();
    let stride = img.width() * CHANNELS;
    let mut data = vec![0f32; CHANNELS * plane];
    for y in 0..size {
        let row = &src[(rect.top + y) * stride + rect.left * CHANNELS..][..size * CHANNELS];
        for (x, px) in row.chunks_exact(CHANNELS).enumerate() {
            let dx = if rect.mirror { size - 1 - x } else { x };
            for c in 0..CHANNELS {
                data[c * plane + y * size + dx] = norm.apply(px[c], c);
            }
        }
    }
    PlanarTensor::new(size, size, data)
}
