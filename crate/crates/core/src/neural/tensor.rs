use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::raster::{FlowField, ImageBuf, LineDrawing};

/// Dense `[batch, channels, height, width]` array of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: [1, 1, 1, 1],
            data: vec![v],
        }
    }

    /// Samples from `N(0, std²)`.
    pub fn randn(shape: [usize; 4], std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let normal = Normal::new(0.0, std).expect("finite standard deviation");
        Tensor {
            shape,
            data: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }

    pub fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    t.shape, first.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Tensor::new([n, c, h, w], data)
    }

    /// Image as `[1, C, H, W]`.
    pub fn from_image(img: &ImageBuf) -> Tensor {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut data = vec![0.0; c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[(ch * h + y) * w + x] = img.get(x, y, ch);
                }
            }
        }
        Tensor {
            shape: [1, c, h, w],
            data,
        }
    }

    pub fn from_drawing(d: &LineDrawing) -> Tensor {
        Tensor {
            shape: [1, 1, d.height(), d.width()],
            data: d.data().to_vec(),
        }
    }

    /// Tangent components as a `[1, 2, H, W]` tensor.
    pub fn from_field(f: &FlowField) -> Tensor {
        let (w, h) = (f.width(), f.height());
        let mut data = vec![0.0; 2 * w * h];
        for (i, t) in f.tangents().iter().enumerate() {
            data[i] = t[0];
            data[w * h + i] = t[1];
        }
        Tensor {
            shape: [1, 2, h, w],
            data,
        }
    }

    /// One sample of the batch as a `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Drawing from a single-channel sample, thresholded at 0.5.
    pub fn to_drawing(&self) -> Result<LineDrawing> {
        let [n, c, h, w] = self.shape;
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("expected [1, 1, H, W], got {:?}", self.shape)));
        }
        LineDrawing::new(
            w,
            h,
            self.data.iter().map(|&v| if v < 0.5 { 0.0 } else { 1.0 }).collect(),
        )
    }

    /// Single-channel sample as an image, clamped to `[0, 1]`.
    pub fn to_image(&self) -> Result<ImageBuf> {
        let [n, c, h, w] = self.shape;
        if n != 1 || c != 1 {
            return Err(Error::Shape(format!("expected [1, 1, H, W], got {:?}", self.shape)));
        }
        ImageBuf::from_clamped(w, h, 1, self.data.clone())
    }

    /// Block-average downsampling by an integer factor.
    pub fn avg_pool(&self, factor: usize) -> Result<Tensor> {
        let [n, c, h, w] = self.shape;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::Shape(format!(
                "{h}x{w} is not divisible by pooling factor {factor}"
            )));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (oh, ow) = (h / factor, w / factor);
        let scale = 1.0 / (factor * factor) as f64;
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let src = &self.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..h {
                for x in 0..w {
                    dst[(y / factor) * ow + x / factor] += src[y * w + x] * scale;
                }
            }
        }
        Tensor::new([n, c, oh, ow], out)
    }
}
