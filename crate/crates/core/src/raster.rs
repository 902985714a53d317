//! Raster and vector-field types shared by the whole pipeline.
//!
//! Every raster is row-major with samples in `[0, 1]`. Pixel `(x, y)` has
//! `x` growing to the right and `y` growing downwards.

use crate::error::{Error, Result};

/// A floating-point image with 1, 2 or 3 interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuf {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if !(1..=3).contains(&channels) {
            return Err(Error::UnsupportedChannels(channels));
        }
        if data.len() != width * height * channels {
            return Err(Error::DimensionMismatch(format!(
                "{}x{}x{} image needs {} samples, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidParameter(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(ImageBuf {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image, clamping every sample into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let data = data
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(0.0, 1.0) })
            .collect();
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Single-channel image from a per-pixel function; results are clamped.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                data.push(if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
            }
        }
        ImageBuf {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Luma with BT.601 weights. Single-channel input is returned unchanged.
    pub fn to_grayscale(&self) -> ImageBuf {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
                    .collect();
                ImageBuf {
                    width: self.width,
                    height: self.height,
                    channels: 1,
                    data,
                }
            }
            // Two channels only appear for intermediate rasters; average them.
            _ => {
                let data = self.data.chunks_exact(2).map(|p| 0.5 * (p[0] + p[1])).collect();
                ImageBuf {
                    width: self.width,
                    height: self.height,
                    channels: 1,
                    data,
                }
            }
        }
    }

    /// Expands a grayscale image to three identical channels.
    pub fn to_rgb(&self) -> ImageBuf {
        if self.channels == 3 {
            return self.clone();
        }
        let gray = self.to_grayscale();
        let data = gray.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Edge-aligned bilinear resize: the corner samples of the source map
    /// onto the corner samples of the destination.
    pub fn resize(&self, width: usize, height: usize) -> Result<ImageBuf> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter(format!(
                "resize target {width}x{height} has a zero dimension"
            )));
        }
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let xs = axis_samples(self.width, width);
        let ys = axis_samples(self.height, height);
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                for ch in 0..c {
                    let top = self.get(x0, y0, ch) * (1.0 - fx) + self.get(x1, y0, ch) * fx;
                    let bottom = self.get(x0, y1, ch) * (1.0 - fx) + self.get(x1, y1, ch) * fx;
                    let v = top * (1.0 - fy) + bottom * fy;
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(ImageBuf {
            width,
            height,
            channels: c,
            data,
        })
    }

    /// Bilinear sample of one channel at a continuous position, clamping
    /// coordinates to the image (replicate border).
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        bilinear(&self.data, self.width, self.height, self.channels, c, x, y)
    }
}

/// Source index pairs and blend weight for each destination sample.
fn axis_samples(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 {
                (src - 1) as f64 / 2.0
            } else {
                i as f64 * (src - 1) as f64 / (dst - 1) as f64
            };
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

#[inline]
pub(crate) fn bilinear(
    data: &[f64],
    width: usize,
    height: usize,
    stride: usize,
    c: usize,
    x: f64,
    y: f64,
) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| data[(yy * width + xx) * stride + c];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Single-channel line drawing: 0 is ink, 1 is paper.
#[derive(Clone, Debug, PartialEq)]
pub struct LineDrawing {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl LineDrawing {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} drawing needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|s| !(0.0..=1.0).contains(*s)) {
            return Err(Error::InvalidParameter(format!(
                "sample {bad} outside [0, 1]"
            )));
        }
        Ok(LineDrawing {
            width,
            height,
            data,
        })
    }

    pub fn blank(width: usize, height: usize) -> Self {
        LineDrawing {
            width,
            height,
            data: vec![1.0; width * height],
        }
    }

    /// Binarizes a grayscale image: samples below `threshold` become ink.
    pub fn from_image(img: &ImageBuf, threshold: f64) -> Self {
        let gray = img.to_grayscale();
        LineDrawing {
            width: gray.width(),
            height: gray.height(),
            data: gray
                .data()
                .iter()
                .map(|&v| if v < threshold { 0.0 } else { 1.0 })
                .collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_ink(&self, x: usize, y: usize) -> bool {
        self.get(x, y) < 0.5
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn ink_count(&self) -> usize {
        self.data.iter().filter(|&&v| v < 0.5).count()
    }

    pub fn to_image(&self) -> ImageBuf {
        ImageBuf {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

/// Edge tangent flow: a unit-or-zero tangent per pixel plus the normalized
/// gradient magnitude the field was built from.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    tangents: Vec<[f64; 2]>,
    magnitude: Vec<f64>,
}

/// Tolerance on `|‖t‖ − 1|` for a tangent to count as unit length.
pub const UNIT_TOLERANCE: f64 = 1e-4;

impl FlowField {
    pub fn new(
        width: usize,
        height: usize,
        tangents: Vec<[f64; 2]>,
        magnitude: Vec<f64>,
    ) -> Result<Self> {
        let n = width * height;
        if tangents.len() != n || magnitude.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} field needs {n} tangents and magnitudes, got {} and {}",
                tangents.len(),
                magnitude.len()
            )));
        }
        for t in &tangents {
            let norm = t[0].hypot(t[1]);
            if norm != 0.0 && (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "tangent ({}, {}) is neither unit nor zero",
                    t[0], t[1]
                )));
            }
        }
        if let Some(bad) = magnitude.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(Error::InvalidParameter(format!(
                "normalized magnitude {bad} outside [0, 1]"
            )));
        }
        Ok(FlowField {
            width,
            height,
            tangents,
            magnitude,
        })
    }

    pub(crate) fn from_parts(
        width: usize,
        height: usize,
        tangents: Vec<[f64; 2]>,
        magnitude: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(tangents.len(), width * height);
        debug_assert_eq!(magnitude.len(), width * height);
        FlowField {
            width,
            height,
            tangents,
            magnitude,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField::from_parts(
            width,
            height,
            vec![[0.0; 2]; width * height],
            vec![0.0; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn tangents(&self) -> &[[f64; 2]] {
        &self.tangents
    }

    pub fn magnitude(&self) -> &[f64] {
        &self.magnitude
    }

    #[inline]
    pub fn tangent(&self, x: usize, y: usize) -> [f64; 2] {
        self.tangents[y * self.width + x]
    }

    #[inline]
    pub fn magnitude_at(&self, x: usize, y: usize) -> f64 {
        self.magnitude[y * self.width + x]
    }

    /// The same field with every tangent flipped.
    pub fn negated(&self) -> FlowField {
        FlowField {
            tangents: self.tangents.iter().map(|t| [-t[0], -t[1]]).collect(),
            ..self.clone()
        }
    }
}

/// Normalizes `v`, mapping the zero vector to zero.
#[inline]
pub(crate) fn normalize_or_zero(v: [f64; 2]) -> [f64; 2] {
    let n = v[0].hypot(v[1]);
    if n > 0.0 {
        [v[0] / n, v[1] / n]
    } else {
        [0.0, 0.0]
    }
}
