//! Image decoding and the preprocessing shared by every model family:
//! shorter-side resize, per-channel normalization and batch stacking.
//!
//! Resampling uses half-pixel centers. Without antialiasing every output
//! sample reads a fixed tap window (2 taps bilinear, 4 taps bicubic) with
//! indices clamped at the borders. With antialiasing the filter support is
//! stretched by the downscale factor and the window is clipped to the image
//! and renormalized.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Coefficient of the cubic convolution kernel used for bicubic resampling.
pub const CUBIC_A: f64 = -0.5;

/// Decoded 8-bit RGB pixels, row-major and interleaved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid_input(format!(
                "degenerate image {height}x{width}"
            )));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::invalid_input(format!(
                "expected {} samples for {height}x{width} RGB, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(y, x)` for every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    /// Decodes a PNG or JPEG file. Grayscale is promoted to RGB by channel
    /// replication and any alpha channel is dropped.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(decoded)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let decoded = image::load_from_memory(bytes).map_err(|e| Error::Decode {
            path: "<memory>".into(),
            message: e.to_string(),
        })?;
        Self::from_dynamic(decoded)
    }

    fn from_dynamic(img: image::DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(h as usize, w as usize, rgb.into_raw())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// Interleaved 32-bit float RGB image with samples on the 0..=255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FloatImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * CHANNELS {
            return Err(Error::invalid_input(format!(
                "float image {height}x{width} with {} samples",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_input("float image contains non-finite samples"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn sample(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }
}

impl From<&RawImage> for FloatImage {
    fn from(img: &RawImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| f32::from(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Bilinear,
    Bicubic,
}

impl Interpolation {
    fn support(self) -> f64 {
        match self {
            Interpolation::Bilinear => 1.0,
            Interpolation::Bicubic => 2.0,
        }
    }

    fn weight(self, t: f64) -> f64 {
        match self {
            Interpolation::Bilinear => linear_kernel(t),
            Interpolation::Bicubic => cubic_kernel(t, CUBIC_A),
        }
    }
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interpolation::Bilinear => "bilinear",
            Interpolation::Bicubic => "bicubic",
        })
    }
}

impl FromStr for Interpolation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bilinear" => Ok(Interpolation::Bilinear),
            "bicubic" => Ok(Interpolation::Bicubic),
            other => Err(Error::config(format!("unknown interpolation '{other}'"))),
        }
    }
}

/// Resize the shorter side to `target_shorter_side`, keeping the aspect ratio.
/// The longer side is rounded half-to-even.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResizeSpec {
    pub target_shorter_side: usize,
    pub interpolation: Interpolation,
    pub antialias: bool,
}

impl ResizeSpec {
    pub fn new(target_shorter_side: usize, interpolation: Interpolation) -> Self {
        Self {
            target_shorter_side,
            interpolation,
            antialias: false,
        }
    }

    pub fn with_antialias(mut self, antialias: bool) -> Self {
        self.antialias = antialias;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_shorter_side == 0 {
            return Err(Error::invalid_input("target shorter side must be >= 1"));
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation on the 0..=1 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormSpec {
    pub const IMAGENET: NormSpec = NormSpec {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub const IDENTITY: NormSpec = NormSpec {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    pub fn new(mean: [f32; 3], std: [f32; 3]) -> Result<Self> {
        let spec = Self { mean, std };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::invalid_input(format!(
                "normalization std must be positive, got {:?}",
                self.std
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid_input("normalization mean must be finite"));
        }
        Ok(())
    }

    #[inline]
    pub fn apply(&self, value: f32, channel: usize) -> f32 {
        (value / 255.0 - self.mean[channel]) / self.std[channel]
    }

    #[inline]
    pub fn invert(&self, value: f32, channel: usize) -> f32 {
        (value * self.std[channel] + self.mean[channel]) * 255.0
    }
}

impl Default for NormSpec {
    fn default() -> Self {
        Self::IMAGENET
    }
}

/// Single normalized crop in channel-major (C, H, W) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl PlanarTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != CHANNELS * height * width {
            return Err(Error::invalid_input(format!(
                "planar tensor 3x{height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Reverses the column order of every channel (horizontal flip).
    pub fn mirrored(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_exact_mut(self.width) {
            row.reverse();
        }
        Self { data, ..*self }
    }
}

/// N crops of identical shape, laid out (N, C, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTensor {
    count: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl BatchTensor {
    pub fn from_raw(count: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if count == 0 || height == 0 || width == 0 {
            return Err(Error::invalid_input("batch dimensions must be >= 1"));
        }
        if data.len() != count * CHANNELS * height * width {
            return Err(Error::ShapeMismatch(format!(
                "batch ({count},3,{height},{width}) with {} values",
                data.len()
            )));
        }
        Ok(Self {
            count,
            height,
            width,
            data,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (N, C, H, W)
    pub fn shape(&self) -> [usize; 4] {
        [self.count, CHANNELS, self.height, self.width]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn item_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn item(&self, index: usize) -> &[f32] {
        let len = self.item_len();
        &self.data[index * len..(index + 1) * len]
    }

    /// Copies out crops `start..end` as a new batch.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.count {
            return Err(Error::invalid_input(format!(
                "batch slice {start}..{end} of {}",
                self.count
            )));
        }
        let len = self.item_len();
        Self::from_raw(
            end - start,
            self.height,
            self.width,
            self.data[start * len..end * len].to_vec(),
        )
    }

    /// Builds a batch from the given crop indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid_input("empty selection"));
        }
        let mut data = Vec::with_capacity(indices.len() * self.item_len());
        for &i in indices {
            if i >= self.count {
                return Err(Error::invalid_input(format!("crop index {i} out of range")));
            }
            data.extend_from_slice(self.item(i));
        }
        Self::from_raw(indices.len(), self.height, self.width, data)
    }
}

/// Dimensions after resizing the shorter side to `target`.
pub fn resized_dims(height: usize, width: usize, target: usize) -> (usize, usize) {
    if height <= width {
        (target, scale_half_even(width, target, height))
    } else {
        (scale_half_even(height, target, width), target)
    }
}

/// round_half_even(longer * target / shorter), computed exactly in integers.
fn scale_half_even(longer: usize, target: usize, shorter: usize) -> usize {
    let num = longer as u128 * target as u128;
    let den = shorter as u128;
    let q = num / den;
    let r = num % den;
    let rounded = match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    };
    rounded.max(1) as usize
}

pub fn resize_shorter_side(img: &RawImage, spec: &ResizeSpec) -> Result<FloatImage> {
    spec.validate()?;
    let (out_h, out_w) = resized_dims(img.height, img.width, spec.target_shorter_side);
    resize_to(img, out_h, out_w, spec.interpolation, spec.antialias)
}

/// Resize for a model that takes `crop`-sized inputs. When the resized image
/// would be smaller than the crop it is resized straight to `crop x crop`
/// (aspect ratio not preserved) and the second return value is `true`.
pub fn resize_for_crop(img: &RawImage, spec: &ResizeSpec, crop: usize) -> Result<(FloatImage, bool)> {
    spec.validate()?;
    if crop == 0 {
        return Err(Error::invalid_input("crop size must be >= 1"));
    }
    let (out_h, out_w) = resized_dims(img.height, img.width, spec.target_shorter_side);
    if out_h < crop || out_w < crop {
        log::warn!(
            "{}x{} resized to {out_h}x{out_w} is smaller than crop {crop}; resizing to {crop}x{crop}",
            img.height,
            img.width
        );
        let out = resize_to(img, crop, crop, spec.interpolation, spec.antialias)?;
        return Ok((out, true));
    }
    Ok((resize_to(img, out_h, out_w, spec.interpolation, spec.antialias)?, false))
}

/// Separable resize to an explicit output size.
pub fn resize_to(
    img: &RawImage,
    out_h: usize,
    out_w: usize,
    interpolation: Interpolation,
    antialias: bool,
) -> Result<FloatImage> {
    if img.height == 0 || img.width == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::invalid_input(format!(
            "cannot resize {}x{} to {out_h}x{out_w}",
            img.height, img.width
        )));
    }
    let col_taps = taps(img.width, out_w, interpolation, antialias);
    let row_taps = taps(img.height, out_h, interpolation, antialias);

    // horizontal pass: (in_h, out_w)
    let mut horiz = vec![0f32; img.height * out_w * CHANNELS];
    for y in 0..img.height {
        let src_row = &img.data[y * img.width * CHANNELS..(y + 1) * img.width * CHANNELS];
        let dst_row = &mut horiz[y * out_w * CHANNELS..(y + 1) * out_w * CHANNELS];
        for (x, window) in col_taps.iter().enumerate() {
            let mut acc = [0f32; CHANNELS];
            for &(src, w) in window {
                let px = &src_row[src * CHANNELS..src * CHANNELS + CHANNELS];
                for c in 0..CHANNELS {
                    acc[c] += f32::from(px[c]) * w;
                }
            }
            dst_row[x * CHANNELS..x * CHANNELS + CHANNELS].copy_from_slice(&acc);
        }
    }

    // vertical pass: (out_h, out_w)
    let row_len = out_w * CHANNELS;
    let mut out = vec![0f32; out_h * row_len];
    for (y, window) in row_taps.iter().enumerate() {
        let dst_row = &mut out[y * row_len..(y + 1) * row_len];
        for &(src, w) in window {
            let src_row = &horiz[src * row_len..(src + 1) * row_len];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += s * w;
            }
        }
    }

    if interpolation == Interpolation::Bicubic {
        for v in &mut out {
            *v = v.clamp(0.0, 255.0);
        }
    }
    FloatImage::new(out_h, out_w, out)
}

type Window = Vec<(usize, f32)>;

fn taps(in_len: usize, out_len: usize, interpolation: Interpolation, antialias: bool) -> Vec<Window> {
    if antialias {
        antialias_taps(in_len, out_len, interpolation)
    } else {
        match interpolation {
            Interpolation::Bilinear => bilinear_taps(in_len, out_len),
            Interpolation::Bicubic => bicubic_taps(in_len, out_len),
        }
    }
}

fn bilinear_taps(in_len: usize, out_len: usize) -> Vec<Window> {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len - 1;
    (0..out_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = (src - i0 as f64) as f32;
            vec![(i0, 1.0 - frac), (i1, frac)]
        })
        .collect()
}

fn bicubic_taps(in_len: usize, out_len: usize) -> Vec<Window> {
    let scale = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    (0..out_len)
        .map(|i| {
            let src = (i as f64 + 0.5) * scale - 0.5;
            let base = src.floor();
            let t = src - base;
            let base = base as isize;
            (-1..=2)
                .map(|k| {
                    let idx = (base + k).clamp(0, last) as usize;
                    (idx, cubic_kernel(t - k as f64, CUBIC_A) as f32)
                })
                .collect()
        })
        .collect()
}

fn antialias_taps(in_len: usize, out_len: usize, interpolation: Interpolation) -> Vec<Window> {
    let scale = in_len as f64 / out_len as f64;
    let stretch = scale.max(1.0);
    let support = interpolation.support() * stretch;
    (0..out_len)
        .map(|i| {
            let center = scale * (i as f64 + 0.5);
            let lo = ((center - support + 0.5).trunc() as isize).max(0) as usize;
            let hi = ((center + support + 0.5).trunc() as usize).min(in_len);
            let weights: Vec<f64> = (lo..hi)
                .map(|j| interpolation.weight((j as f64 - center + 0.5) / stretch))
                .collect();
            let total: f64 = weights.iter().sum();
            let norm = if total != 0.0 { 1.0 / total } else { 1.0 };
            (lo..hi)
                .zip(weights)
                .map(|(j, w)| (j, (w * norm) as f32))
                .collect()
        })
        .collect()
}

fn linear_kernel(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.0 - t
    } else {
        0.0
    }
}

/// Piecewise-cubic convolution kernel with coefficient `a`; zero for |t| >= 2.
pub fn cubic_kernel(t: f64, a: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Interleaved 0..=255 samples to a normalized (C, H, W) tensor.
pub fn to_planar_normalized(img: &FloatImage, norm: &NormSpec) -> PlanarTensor {
    let plane = img.height * img.width;
    let mut data = vec![0f32; CHANNELS * plane];
    for (p, px) in img.data.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            data[c * plane + p] = norm.apply(px[c], c);
        }
    }
    PlanarTensor {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Inverse of [`to_planar_normalized`].
pub fn denormalize(tensor: &PlanarTensor, norm: &NormSpec) -> FloatImage {
    let plane = tensor.height * tensor.width;
    let mut data = vec![0f32; CHANNELS * plane];
    for c in 0..CHANNELS {
        for p in 0..plane {
            data[p * CHANNELS + c] = norm.invert(tensor.data[c * plane + p], c);
        }
    }
    FloatImage {
        height: tensor.height,
        width: tensor.width,
        data,
    }
}

/// Concatenates crops along the batch dimension, preserving order.
pub fn stack(crops: &[PlanarTensor]) -> Result<BatchTensor> {
    let first = crops
        .first()
        .ok_or_else(|| Error::invalid_input("cannot stack an empty crop list"))?;
    let (h, w) = (first.height, first.width);
    let mut data = Vec::with_capacity(crops.len() * first.data.len());
    for (i, crop) in crops.iter().enumerate() {
        if crop.height != h || crop.width != w {
            return Err(Error::ShapeMismatch(format!(
                "crop {i} is {}x{}, expected {h}x{w}",
                crop.height, crop.width
            )));
        }
        data.extend_from_slice(&crop.data);
    }
    BatchTensor::from_raw(crops.len(), h, w, data)
}
