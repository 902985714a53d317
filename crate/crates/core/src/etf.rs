//! Edge tangent flow construction.
//!
//! Tangents start as Sobel gradients rotated by +90° and are then smoothed
//! with a box neighbourhood, weighting each neighbour by how much stronger
//! its gradient is (`w_m`) and how well it is aligned (`w_d`). Neighbours
//! pointing the opposite way are flipped before they are summed, since the
//! field is only meaningful up to sign.
//!
//! Pixels whose tangent is zero (flat regions) take `w_d = 1`, so they pick
//! up the direction of nearby edges over successive passes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{normalize_or_zero, FlowField, ImageBuf};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtfParams {
    /// Neighbourhood radius μ; neighbours with distance strictly below it count.
    pub kernel_radius: usize,
    /// Sharpness η of the magnitude weight.
    pub eta: f64,
    pub iterations: usize,
}

impl Default for EtfParams {
    fn default() -> Self {
        EtfParams {
            kernel_radius: 5,
            eta: 1.0,
            iterations: 3,
        }
    }
}

impl EtfParams {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_radius < 1 {
            return Err(Error::InvalidParameter("kernel radius must be at least 1".into()));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// Raw Sobel response of a grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub width: usize,
    pub height: usize,
    /// `(gx, gy)` per pixel, unnormalized 3×3 Sobel.
    pub gradient: Vec<[f64; 2]>,
    pub magnitude: Vec<f64>,
}

/// 3×3 Sobel with replicate border padding.
pub fn sobel_gradients(gray: &ImageBuf) -> Result<Gradients> {
    if gray.channels() != 1 {
        return Err(Error::UnsupportedChannels(gray.channels()));
    }
    let (w, h) = (gray.width(), gray.height());
    if w < 3 || h < 3 {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: 3,
        });
    }
    let px = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        gray.get(xc, yc, 0)
    };
    let mut gradient = Vec::with_capacity(w * h);
    let mut magnitude = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (px(x + 1, y - 1) + 2.0 * px(x + 1, y) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x - 1, y) + px(x - 1, y + 1));
            let gy = (px(x - 1, y + 1) + 2.0 * px(x, y + 1) + px(x + 1, y + 1))
                - (px(x - 1, y - 1) + 2.0 * px(x, y - 1) + px(x + 1, y - 1));
            gradient.push([gx, gy]);
            magnitude.push(gx.hypot(gy));
        }
    }
    Ok(Gradients {
        width: w,
        height: h,
        gradient,
        magnitude,
    })
}

/// Initial field: gradients rotated +90° and normalized, with the
/// magnitude plane scaled so its maximum is 1.
pub fn etf_init(grad: &Gradients) -> FlowField {
    let max = grad.magnitude.iter().cloned().fold(0.0, f64::max);
    let magnitude = if max > 0.0 {
        grad.magnitude.iter().map(|m| m / max).collect()
    } else {
        vec![0.0; grad.magnitude.len()]
    };
    let tangents = grad
        .gradient
        .iter()
        .map(|g| normalize_or_zero([-g[1], g[0]]))
        .collect();
    FlowField::from_parts(grad.width, grad.height, tangents, magnitude)
}

/// Offsets `(dx, dy)` inside the open disk of radius `radius`.
fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) < (radius * radius) as f64 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// One smoothing pass. The magnitude plane is carried over unchanged.
pub fn etf_refine(field: &FlowField, params: &EtfParams) -> Result<FlowField> {
    params.validate()?;
    let (w, h) = (field.width(), field.height());
    let offsets = disk_offsets(params.kernel_radius);
    let r = params.kernel_radius;
    let tangents = field.tangents();
    let mags = field.magnitude();
    let eta = params.eta;

    let mut out = vec![[0.0; 2]; w * h];
    out.par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            // Rows far enough from the border skip coordinate clamping.
            let interior_y = y >= r && y + r < h;
            for (x, slot) in row.iter_mut().enumerate() {
                let idx = y * w + x;
                let tx = tangents[idx];
                let gx = mags[idx];
                let mut acc = [0.0f64; 2];
                // A zero tangent has no direction to agree with, so alignment
                // weighting is switched off and the pixel adopts its
                // neighbours' flow.
                let undirected = tx == [0.0, 0.0];
                let interior = interior_y && x >= r && x + r < w;
                for &(dx, dy) in &offsets {
                    let j = if interior {
                        ((y as isize + dy) as usize) * w + (x as isize + dx) as usize
                    } else {
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        yy * w + xx
                    };
                    let ty = tangents[j];
                    let dot = tx[0] * ty[0] + tx[1] * ty[1];
                    let phi = if dot < 0.0 { -1.0 } else { 1.0 };
                    let wm = 0.5 * (1.0 + (eta * (mags[j] - gx)).tanh());
                    let wd = if undirected { 1.0 } else { dot.abs() };
                    let k = phi * wm * wd;
                    acc[0] += k * ty[0];
                    acc[1] += k * ty[1];
                }
                *slot = normalize_or_zero(acc);
            }
        });
    Ok(FlowField::from_parts(w, h, out, mags.to_vec()))
}

/// Grayscale, Sobel, initialization and `params.iterations` refinement passes.
pub fn compute_etf(img: &ImageBuf, params: &EtfParams) -> Result<FlowField> {
    params.validate()?;
    let gray = img.to_grayscale();
    let grad = sobel_gradients(&gray)?;
    let mut field = etf_init(&grad);
    for _ in 0..params.iterations {
        field = etf_refine(&field, params)?;
    }
    Ok(field)
}

/// Tangent angle folded into `[0, π)`, identical for `t` and `-t`.
pub fn tangent_angle(t: [f64; 2]) -> f64 {
    let t = if t[1] < 0.0 || (t[1] == 0.0 && t[0] < 0.0) {
        [-t[0], -t[1]]
    } else {
        t
    };
    let a = t[1].atan2(t[0]);
    if a >= std::f64::consts::PI {
        0.0
    } else {
        a.max(0.0)
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = h6.floor() as u32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Color-coded field: hue is the tangent angle modulo π, value is the
/// normalized gradient magnitude. Zero tangents are black.
pub fn visualize_field(field: &FlowField) -> ImageBuf {
    let mut data = Vec::with_capacity(field.width() * field.height() * 3);
    for (t, &m) in field.tangents().iter().zip(field.magnitude()) {
        if *t == [0.0, 0.0] {
            data.extend_from_slice(&[0.0; 3]);
            continue;
        }
        let hue = tangent_angle(*t) / std::f64::consts::PI;
        data.extend_from_slice(&hsv_to_rgb(hue, 1.0, m));
    }
    ImageBuf::from_clamped(field.width(), field.height(), 3, data)
        .expect("visualization buffer has matching size")
}

/// [`visualize_field`] with white direction glyphs every `stride` pixels.
/// Each glyph is a segment along the tangent with a brighter head dot.
pub fn visualize_field_with_arrows(field: &FlowField, stride: usize) -> ImageBuf {
    let base = visualize_field(field);
    if stride == 0 {
        return base;
    }
    let (w, h) = (field.width(), field.height());
    let mut data = base.into_data();
    let mut plot = |x: f64, y: f64, v: f64| {
        let (xi, yi) = (x.round(), y.round());
        if xi >= 0.0 && yi >= 0.0 && (xi as usize) < w && (yi as usize) < h {
            let i = (yi as usize * w + xi as usize) * 3;
            for c in 0..3 {
                data[i + c] = data[i + c].max(v);
            }
        }
    };
    let half = stride as f64 * 0.4;
    for cy in (stride / 2..h).step_by(stride) {
        for cx in (stride / 2..w).step_by(stride) {
            let t = field.tangent(cx, cy);
            if t == [0.0, 0.0] {
                continue;
            }
            let steps = (2.0 * half).ceil() as usize * 2;
            for i in 0..=steps {
                let s = -half + 2.0 * half * i as f64 / steps as f64;
                plot(cx as f64 + s * t[0], cy as f64 + s * t[1], 0.8);
            }
            plot(cx as f64 + half * t[0], cy as f64 + half * t[1], 1.0);
        }
    }
    ImageBuf::new(w, h, 3, data).expect("glyph overlay keeps size")
}
