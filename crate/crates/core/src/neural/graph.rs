//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as a node. Leaves are either
//! parameters (gradient requested) or constants. [`Graph::backward`] walks the
//! tape in reverse and returns gradients for every parameter leaf that the
//! loss depends on.

use num_complex::Complex64;
use rustfft::FftDirection;

use crate::error::{Error, Result};
use crate::metrics::{fft2_in_place, fft_distance_plane};

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Tap {
    i0: usize,
    i1: usize,
    f: f64,
}

enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    ConvT { x: Var, w: Var, b: Var, stride: usize, pad: usize },
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    LeakyRelu { x: Var, slope: f64 },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Affine { x: Var, scale: f64 },
    Upsample { x: Var, factor: usize },
    Resize { x: Var, ty: Vec<Tap>, tx: Vec<Tap> },
    Concat { xs: Vec<Var> },
    Gray { x: Var },
    L1 { a: Var, b: Var },
    SoftplusMean { x: Var, sign: f64 },
    FftL1 { a: Var, b: Var },
    WeightedSum { xs: Vec<Var>, weights: Vec<f64> },
    Mean { x: Var },
    SpatialMean { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by leaf.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros of length `len` when the loss does not
    /// depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map_or_else(|| vec![0.0; len], <[f64]>::to_vec)
    }
}

/// `c = beta * c + op(a) * op(b)` for row-major `op(a)` m×k and `op(b)` k×n.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the strides above address exactly the m×k, k×n and m×n
    // row-major blocks whose lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    (padded >= k).then(|| (padded - k) / stride + 1)
}

fn im2col(x: &[f64], g: ConvGeom, out: &mut [f64]) {
    let cols = g.cols();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(ch * g.h + iy as usize) * g.w..][..g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(cols_buf: &[f64], g: ConvGeom, out: &mut [f64]) {
    let cols = g.cols();
    for ch in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ch * g.k + ky) * g.k + kx;
                let src = &cols_buf[row * cols..(row + 1) * cols];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut out[(ch * g.h + iy as usize) * g.w..][..g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn resize_taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            Tap {
                i0,
                i1,
                f: src - i0 as f64,
            }
        })
        .collect()
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

const GRAY_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];
const NORM_EPS: f64 = 1e-5;

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf whose gradient is requested.
    pub fn parameter(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// 2-D convolution. `w` is `[out, in, k, k]`, `b` is `[1, out, 1, 1]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).shape();
        let [o, ci, k, k2] = self.value(w).shape();
        if ci != c || k != k2 || self.value(b).len() != o || stride == 0 {
            return Err(Error::Shape(format!(
                "conv2d: input {:?}, weight {:?}, bias {:?}, stride {stride}",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let (oh, ow) = match (conv_out(h, k, stride, pad), conv_out(wd, k, stride, pad)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d: {h}x{wd} input smaller than {k}x{k} kernel"
                )))
            }
        };
        let g = ConvGeom {
            c,
            h,
            w: wd,
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let mut out = vec![0.0; n * o * oh * ow];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        for s in 0..n {
            im2col(&xs[s * c * h * wd..(s + 1) * c * h * wd], g, &mut cols);
            let dst = &mut out[s * o * oh * ow..(s + 1) * o * oh * ow];
            for (ch, plane) in dst.chunks_mut(oh * ow).enumerate() {
                plane.fill(bs[ch]);
            }
            gemm(o, g.rows(), g.cols(), ws, false, &cols, false, dst, 1.0);
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new([n, o, oh, ow], out)?,
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Transposed convolution. `w` is `[in, out, k, k]`; output size is
    /// `(H - 1) * stride - 2 * pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).shape();
        let [ci, o, k, k2] = self.value(w).shape();
        let oh = ((h - 1) * stride + k).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + k).checked_sub(2 * pad);
        if ci != c || k != k2 || self.value(b).len() != o || stride == 0 || oh.is_none() || ow.is_none() {
            return Err(Error::Shape(format!(
                "conv_transpose2d: input {:?}, weight {:?}, stride {stride}, pad {pad}",
                self.value(x).shape(),
                self.value(w).shape()
            )));
        }
        let (oh, ow) = (oh.unwrap_or(0), ow.unwrap_or(0));
        // Geometry of the adjoint convolution: output image → input grid.
        let g = ConvGeom {
            c: o,
            h: oh,
            w: ow,
            k,
            stride,
            pad,
            oh: h,
            ow: wd,
        };
        let mut out = vec![0.0; n * o * oh * ow];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let bs = self.value(b).data();
        for s in 0..n {
            let xin = &xs[s * c * h * wd..(s + 1) * c * h * wd];
            gemm(g.rows(), c, h * wd, ws, true, xin, false, &mut cols, 0.0);
            let dst = &mut out[s * o * oh * ow..(s + 1) * o * oh * ow];
            col2im(&cols, g, dst);
            for (ch, plane) in dst.chunks_mut(oh * ow).enumerate() {
                plane.iter_mut().for_each(|v| *v += bs[ch]);
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            Tensor::new([n, o, oh, ow], out)?,
            Op::ConvT {
                x,
                w,
                b,
                stride,
                pad,
            },
            needs,
        ))
    }

    /// Per-sample, per-channel normalization without affine parameters.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let hw = h * w;
        let mut out = vec![0.0; t.len()];
        let mut inv_std = Vec::with_capacity(n * c);
        for (p, (src, dst)) in t.data().chunks(hw).zip(out.chunks_mut(hw)).enumerate() {
            let _ = p;
            let mean = src.iter().sum::<f64>() / hw as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            for (d, s) in dst.iter_mut().zip(src) {
                *d = (s - mean) * inv;
            }
            inv_std.push(inv);
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new([n, c, h, w], out).expect("same shape"),
            Op::InstanceNorm { x, inv_std },
            needs,
        )
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect()).expect("same shape");
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid { x })
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, |v| scale * v + shift, Op::Affine { x, scale })
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![0.0; n * c * oh * ow];
        for (src, dst) in t.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / factor) * w + x / factor];
                }
            }
        }
        let needs = self.needs(x);
        self.push(
            Tensor::new([n, c, oh, ow], out).expect("upsampled shape"),
            Op::Upsample { x, factor },
            needs,
        )
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize_bilinear(&mut self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        if oh == 0 || ow == 0 || h == 0 || w == 0 {
            return Err(Error::Shape("resize to or from an empty grid".into()));
        }
        let ty = resize_taps(h, oh);
        let tx = resize_taps(w, ow);
        let mut out = vec![0.0; n * c * oh * ow];
        for (src, dst) in t.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
            for (y, a) in ty.iter().enumerate() {
                for (x, b) in tx.iter().enumerate() {
                    let top = src[a.i0 * w + b.i0] * (1.0 - b.f) + src[a.i0 * w + b.i1] * b.f;
                    let bot = src[a.i1 * w + b.i0] * (1.0 - b.f) + src[a.i1 * w + b.i1] * b.f;
                    dst[y * ow + x] = top * (1.0 - a.f) + bot * a.f;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([n, c, oh, ow], out)?, Op::Resize { x, ty, tx }, needs))
    }

    /// Channel concatenation.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.value(*xs.first().ok_or_else(|| Error::Shape("empty concat".into()))?).shape();
        let (n, h, w) = (first[0], first[2], first[3]);
        let mut total_c = 0;
        for &v in xs {
            let s = self.value(v).shape();
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(Error::Shape(format!("concat of {first:?} with {s:?}")));
            }
            total_c += s[1];
        }
        let mut out = Vec::with_capacity(n * total_c * h * w);
        for s in 0..n {
            for &v in xs {
                let t = self.value(v);
                let len = t.shape()[1] * h * w;
                out.extend_from_slice(&t.data()[s * len..(s + 1) * len]);
            }
        }
        let needs = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::new([n, total_c, h, w], out)?,
            Op::Concat { xs: xs.to_vec() },
            needs,
        ))
    }

    /// BT.601 luma of a 3-channel input.
    pub fn grayscale(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        if c != 3 {
            return Err(Error::Shape(format!("grayscale needs 3 channels, got {c}")));
        }
        let hw = h * w;
        let mut out = vec![0.0; n * hw];
        for s in 0..n {
            for (ch, wt) in GRAY_WEIGHTS.iter().enumerate() {
                let src = &t.data()[(s * 3 + ch) * hw..][..hw];
                for (d, v) in out[s * hw..(s + 1) * hw].iter_mut().zip(src) {
                    *d += wt * v;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new([n, 1, h, w], out)?, Op::Gray { x }, needs))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1")?;
        let (ta, tb) = (self.value(a), self.value(b));
        let v = ta.data().iter().zip(tb.data()).map(|(p, q)| (p - q).abs()).sum::<f64>() / ta.len() as f64;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(v), Op::L1 { a, b }, needs))
    }

    /// `mean(softplus(sign * x))`.
    pub fn softplus_mean(&mut self, x: Var, sign: f64) -> Var {
        let t = self.value(x);
        let v = t.data().iter().map(|&z| softplus(sign * z)).sum::<f64>() / t.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::SoftplusMean { x, sign }, needs)
    }

    /// Mean over planes of `Σ |ΔRe| + |ΔIm|` of the 2-D DFT of `a - b`,
    /// divided by the plane size.
    pub fn fft_l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "fft_l1")?;
        let [n, c, h, w] = self.value(a).shape();
        let hw = h * w;
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let total: f64 = (0..n * c)
            .map(|p| fft_distance_plane(&ta[p * hw..(p + 1) * hw], &tb[p * hw..(p + 1) * hw], w, h))
            .sum();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(total / (n * c) as f64), Op::FftL1 { a, b }, needs))
    }

    /// `Σ weights[i] * xs[i]` over scalar nodes.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: &[f64]) -> Result<Var> {
        if xs.len() != weights.len() || xs.iter().any(|&v| self.value(v).len() != 1) {
            return Err(Error::Shape("weighted_sum needs one weight per scalar".into()));
        }
        let v = xs
            .iter()
            .zip(weights)
            .fold(0.0, |acc, (&x, &wt)| acc + wt * self.value(x).item());
        let needs = xs.iter().any(|&x| self.needs(x));
        Ok(self.push(
            Tensor::scalar(v),
            Op::WeightedSum {
                xs: xs.to_vec(),
                weights: weights.to_vec(),
            },
            needs,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = t.data().iter().sum::<f64>() / t.len() as f64;
        let needs = self.needs(x);
        self.push(Tensor::scalar(v), Op::Mean { x }, needs)
    }

    /// Per-plane mean: `[N, C, H, W]` to `[N, C, 1, 1]`.
    pub fn spatial_mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let [n, c, h, w] = t.shape();
        let out = t.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / (h * w) as f64).collect();
        let needs = self.needs(x);
        self.push(
            Tensor::new([n, c, 1, 1], out).expect("one value per plane"),
            Op::SpatialMean { x },
            needs,
        )
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", lt.shape())));
        }
        if !lt.item().is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", lt.item())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(existing) => existing.iter_mut().zip(&delta).for_each(|(e, d)| *e += d),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let [n, c, h, wd] = xt.shape();
                let [o, _, k, _] = wt.shape();
                let [_, _, oh, ow] = node.value.shape();
                let geom = ConvGeom {
                    c,
                    h,
                    w: wd,
                    k,
                    stride: *stride,
                    pad: *pad,
                    oh,
                    ow,
                };
                let (rows, cols_n) = (geom.rows(), geom.cols());
                let mut cols = vec![0.0; rows * cols_n];
                let mut dw = self.needs(*w).then(|| vec![0.0; wt.len()]);
                let mut db = self.needs(*b).then(|| vec![0.0; o]);
                let mut dx = self.needs(*x).then(|| vec![0.0; xt.len()]);
                let mut dcols = vec![0.0; if dx.is_some() { rows * cols_n } else { 0 }];
                for s in 0..n {
                    let gs = &g[s * o * cols_n..(s + 1) * o * cols_n];
                    if let Some(dw) = dw.as_mut() {
                        im2col(&xt.data()[s * c * h * wd..(s + 1) * c * h * wd], geom, &mut cols);
                        gemm(o, cols_n, rows, gs, false, &cols, true, dw, 1.0);
                    }
                    if let Some(db) = db.as_mut() {
                        for (ch, plane) in gs.chunks(cols_n).enumerate() {
                            db[ch] += plane.iter().sum::<f64>();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(rows, o, cols_n, wt.data(), true, gs, false, &mut dcols, 0.0);
                        col2im(&dcols, geom, &mut dx[s * c * h * wd..(s + 1) * c * h * wd]);
                    }
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
                if let Some(d) = db {
                    acc(*b, d);
                }
                if let Some(d) = dx {
                    acc(*x, d);
                }
            }
            Op::ConvT {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let [n, c, h, wd] = xt.shape();
                let [_, o, k, _] = wt.shape();
                let [_, _, oh, ow] = node.value.shape();
                let geom = ConvGeom {
                    c: o,
                    h: oh,
                    w: ow,
                    k,
                    stride: *stride,
                    pad: *pad,
                    oh: h,
                    ow: wd,
                };
                let (rows, hw) = (geom.rows(), h * wd);
                let mut gcols = vec![0.0; rows * hw];
                let mut dw = self.needs(*w).then(|| vec![0.0; wt.len()]);
                let mut db = self.needs(*b).then(|| vec![0.0; o]);
                let mut dx = self.needs(*x).then(|| vec![0.0; xt.len()]);
                for s in 0..n {
                    let gs = &g[s * o * oh * ow..(s + 1) * o * oh * ow];
                    if let Some(db) = db.as_mut() {
                        for (ch, plane) in gs.chunks(oh * ow).enumerate() {
                            db[ch] += plane.iter().sum::<f64>();
                        }
                    }
                    if dw.is_none() && dx.is_none() {
                        continue;
                    }
                    im2col(gs, geom, &mut gcols);
                    let xin = &xt.data()[s * c * hw..(s + 1) * c * hw];
                    if let Some(dw) = dw.as_mut() {
                        gemm(c, hw, rows, xin, false, &gcols, true, dw, 1.0);
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(c, rows, hw, wt.data(), false, &gcols, false, &mut dx[s * c * hw..(s + 1) * c * hw], 0.0);
                    }
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
                if let Some(d) = db {
                    acc(*b, d);
                }
                if let Some(d) = dx {
                    acc(*x, d);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let [_, _, h, w] = node.value.shape();
                let hw = h * w;
                let y = node.value.data();
                let mut dx = vec![0.0; y.len()];
                for (p, &inv) in inv_std.iter().enumerate() {
                    let gs = &g[p * hw..(p + 1) * hw];
                    let ys = &y[p * hw..(p + 1) * hw];
                    let mg = gs.iter().sum::<f64>() / hw as f64;
                    let mgy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / hw as f64;
                    for ((d, gv), yv) in dx[p * hw..(p + 1) * hw].iter_mut().zip(gs).zip(ys) {
                        *d = inv * (gv - mg - yv * mgy);
                    }
                }
                acc(*x, dx);
            }
            Op::LeakyRelu { x, slope } => {
                let xs = self.value(*x).data();
                acc(
                    *x,
                    g.iter()
                        .zip(xs)
                        .map(|(gv, &v)| if v > 0.0 { *gv } else { slope * gv })
                        .collect(),
                );
            }
            Op::Tanh { x } => {
                let y = node.value.data();
                acc(*x, g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect());
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                acc(*x, g.iter().zip(y).map(|(gv, yv)| gv * yv * (1.0 - yv)).collect());
            }
            Op::Affine { x, scale } => {
                acc(*x, g.iter().map(|gv| gv * scale).collect());
            }
            Op::Upsample { x, factor } => {
                let [n, c, h, w] = self.value(*x).shape();
                let (oh, ow) = (h * factor, w * factor);
                let mut dx = vec![0.0; n * c * h * w];
                for (src, dst) in g.chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
                    for y in 0..oh {
                        for xx in 0..ow {
                            dst[(y / factor) * w + xx / factor] += src[y * ow + xx];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Resize { x, ty, tx } => {
                let [n, c, h, w] = self.value(*x).shape();
                let (oh, ow) = (ty.len(), tx.len());
                let mut dx = vec![0.0; n * c * h * w];
                for (src, dst) in g.chunks(oh * ow).zip(dx.chunks_mut(h * w)) {
                    for (y, a) in ty.iter().enumerate() {
                        for (xx, b) in tx.iter().enumerate() {
                            let gv = src[y * ow + xx];
                            dst[a.i0 * w + b.i0] += gv * (1.0 - a.f) * (1.0 - b.f);
                            dst[a.i0 * w + b.i1] += gv * (1.0 - a.f) * b.f;
                            dst[a.i1 * w + b.i0] += gv * a.f * (1.0 - b.f);
                            dst[a.i1 * w + b.i1] += gv * a.f * b.f;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::Concat { xs } => {
                let [n, total_c, h, w] = node.value.shape();
                let hw = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if self.needs(v) {
                        let mut dx = Vec::with_capacity(n * c * hw);
                        for s in 0..n {
                            let start = (s * total_c + offset) * hw;
                            dx.extend_from_slice(&g[start..start + c * hw]);
                        }
                        acc(v, dx);
                    }
                    offset += c;
                }
            }
            Op::Gray { x } => {
                let [n, _, h, w] = self.value(*x).shape();
                let hw = h * w;
                let mut dx = vec![0.0; n * 3 * hw];
                for s in 0..n {
                    for (ch, wt) in GRAY_WEIGHTS.iter().enumerate() {
                        for (d, gv) in dx[(s * 3 + ch) * hw..][..hw].iter_mut().zip(&g[s * hw..(s + 1) * hw]) {
                            *d = wt * gv;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::L1 { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let scale = g[0] / ta.len() as f64;
                let da: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(p, q)| scale * sign(p - q))
                    .collect();
                if self.needs(*b) {
                    acc(*b, da.iter().map(|v| -v).collect());
                }
                if self.needs(*a) {
                    acc(*a, da);
                }
            }
            Op::SoftplusMean { x, sign: s } => {
                let t = self.value(*x);
                let scale = g[0] / t.len() as f64;
                acc(*x, t.data().iter().map(|&z| scale * s * sigmoid(s * z)).collect());
            }
            Op::FftL1 { a, b } => {
                let [n, c, h, w] = self.value(*a).shape();
                let hw = h * w;
                let (ta, tb) = (self.value(*a).data(), self.value(*b).data());
                let scale = g[0] / (hw * n * c) as f64;
                let mut da = vec![0.0; n * c * hw];
                let mut buf = vec![Complex64::new(0.0, 0.0); hw];
                for p in 0..n * c {
                    for (i, v) in buf.iter_mut().enumerate() {
                        *v = Complex64::new(ta[p * hw + i] - tb[p * hw + i], 0.0);
                    }
                    fft2_in_place(&mut buf, w, h, FftDirection::Forward);
                    for v in buf.iter_mut() {
                        *v = Complex64::new(sign(v.re), sign(v.im));
                    }
                    // ∂/∂d_x Σ_k |Re D_k| + |Im D_k| = Re Σ_k u_k e^{+iθ_kx}.
                    fft2_in_place(&mut buf, w, h, FftDirection::Inverse);
                    for (d, v) in da[p * hw..(p + 1) * hw].iter_mut().zip(&buf) {
                        *d = scale * v.re;
                    }
                }
                if self.needs(*b) {
                    acc(*b, da.iter().map(|v| -v).collect());
                }
                if self.needs(*a) {
                    acc(*a, da);
                }
            }
            Op::WeightedSum { xs, weights } => {
                for (&v, &wt) in xs.iter().zip(weights) {
                    if self.needs(v) {
                        acc(v, vec![g[0] * wt]);
                    }
                }
            }
            Op::Mean { x } => {
                let len = self.value(*x).len();
                acc(*x, vec![g[0] / len as f64; len]);
            }
            Op::SpatialMean { x } => {
                let [_, _, h, w] = self.value(*x).shape();
                let hw = h * w;
                acc(*x, g.iter().flat_map(|&gv| std::iter::repeat_n(gv / hw as f64, hw)).collect());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: [usize; 4], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_matches_hand_computation() {
        let mut g = Graph::new();
        let x = g.constant(t([1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
        let w = g.constant(t([1, 1, 2, 2], &[1., 0., 0., -1.]));
        let b = g.constant(t([1, 1, 1, 1], &[0.5]));
        let y = g.conv2d(x, w, b, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), [1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[-3.5, -3.5, -3.5, -3.5]);
    }

    #[test]
    fn conv_transpose_doubles_size() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::filled([1, 2, 4, 4], 1.0));
        let w = g.constant(Tensor::filled([2, 3, 4, 4], 0.1));
        let b = g.constant(Tensor::zeros([1, 3, 1, 1]));
        let y = g.conv_transpose2d(x, w, b, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), [1, 3, 8, 8]);
    }

    #[test]
    fn conv_transpose_is_adjoint_of_conv() {
        // <conv(x), y> = <x, convT(y)> with the same weights and no bias.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let xv = Tensor::randn([1, 2, 6, 6], 1.0, &mut rng);
        let yv = Tensor::randn([1, 3, 3, 3], 1.0, &mut rng);
        let wv = Tensor::randn([3, 2, 4, 4], 1.0, &mut rng);
        let mut g = Graph::new();
        let x = g.constant(xv.clone());
        let y = g.constant(yv.clone());
        let w = g.constant(wv.clone());
        let b3 = g.constant(Tensor::zeros([1, 3, 1, 1]));
        let b2 = g.constant(Tensor::zeros([1, 2, 1, 1]));
        let cx = g.conv2d(x, w, b3, 2, 1).unwrap();
        let ty = g.conv_transpose2d(y, w, b2, 2, 1).unwrap();
        let lhs: f64 = g.value(cx).data().iter().zip(yv.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = g.value(ty).data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn instance_norm_output_is_standardized() {
        let mut g = Graph::new();
        let x = g.constant(t([1, 1, 2, 2], &[1., 2., 3., 4.]));
        let y = g.instance_norm(x);
        let v = g.value(y).data();
        assert!(v.iter().sum::<f64>().abs() < 1e-12);
        let var = v.iter().map(|a| a * a).sum::<f64>() / 4.0;
        assert!((var - 1.25 / (1.25 + NORM_EPS)).abs() < 1e-9);
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros([1, 1, 2, 2]));
        let b = g.constant(Tensor::zeros([1, 1, 2, 3]));
        assert!(g.l1(a, b).is_err());
        assert!(g.fft_l1(a, b).is_err());
        assert!(g.concat(&[a, b]).is_err());
        assert!(g.grayscale(a).is_err());
        let nonscalar = g.constant(Tensor::zeros([1, 1, 2, 2]));
        assert!(g.backward(nonscalar).is_err());
    }
}
