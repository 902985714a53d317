//! Brute-force reference implementations shared by the integration tests
//! and the acceptance runner. Deliberately slow and written from the
//! definitions, without reusing library internals.
#![allow(dead_code)]

use flowline::{FlowField, ImageBuf};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_gray(w: usize, h: usize, seed: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuf::new(w, h, 1, (0..w * h).map(|_| rng.gen_range(0.0..=1.0)).collect()).unwrap()
}

/// Random unit tangents with roughly `zero_frac` of pixels set to zero.
pub fn random_field(w: usize, h: usize, zero_frac: f64, seed: u64) -> FlowField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tangents = Vec::with_capacity(w * h);
    let mut mags = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        if rng.gen_bool(zero_frac) {
            tangents.push([0.0, 0.0]);
        } else {
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            tangents.push([a.cos(), a.sin()]);
        }
        mags.push(rng.gen_range(0.0..=1.0));
    }
    FlowField::new(w, h, tangents, mags).unwrap()
}

/// One refinement pass by direct summation over the full square window,
/// testing the disk condition per neighbour.
pub fn naive_refine(field: &FlowField, radius: usize, eta: f64) -> Vec<[f64; 2]> {
    let (w, h) = (field.width() as i64, field.height() as i64);
    let r = radius as i64;
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let tx = field.tangent(x as usize, y as usize);
            let gx = field.magnitude_at(x as usize, y as usize);
            let mut sum = [0.0, 0.0];
            for yy in y - r..=y + r {
                for xx in x - r..=x + r {
                    let d2 = ((xx - x) * (xx - x) + (yy - y) * (yy - y)) as f64;
                    if d2.sqrt() >= radius as f64 {
                        continue;
                    }
                    let (cx, cy) = (xx.clamp(0, w - 1) as usize, yy.clamp(0, h - 1) as usize);
                    let ty = field.tangent(cx, cy);
                    let gy = field.magnitude_at(cx, cy);
                    let dot = tx[0] * ty[0] + tx[1] * ty[1];
                    let phi = if dot >= 0.0 { 1.0 } else { -1.0 };
                    let wm = (1.0 + (eta * (gy - gx)).tanh()) / 2.0;
                    let wd = if tx[0] == 0.0 && tx[1] == 0.0 { 1.0 } else { dot.abs() };
                    sum[0] += phi * wm * wd * ty[0];
                    sum[1] += phi * wm * wd * ty[1];
                }
            }
            let n = (sum[0] * sum[0] + sum[1] * sum[1]).sqrt();
            out.push(if n > 0.0 { [sum[0] / n, sum[1] / n] } else { [0.0, 0.0] });
        }
    }
    out
}

fn gauss(x: f64, s: f64) -> f64 {
    (-(x * x) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
}

/// Bilinear sample with coordinates clamped to the pixel grid.
pub fn sample_clamped(img: &ImageBuf, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let x = x.max(0.0).min(w - 1.0);
    let y = y.max(0.0).min(h - 1.0);
    let (x0, y0) = (x.floor(), y.floor());
    let (x1, y1) = ((x0 + 1.0).min(w - 1.0), (y0 + 1.0).min(h - 1.0));
    let (fx, fy) = (x - x0, y - y0);
    let p = |a: f64, b: f64| img.get(a as usize, b as usize, 0);
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0)) + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
}

/// Dense response for a spatially uniform tangent `t` (or the zero field,
/// `t = None`). Each pixel sums a rotated 2-D kernel: along-flow Gaussian
/// times cross-flow DoG, over the samples `x + s·t` that stay inside the
/// image. Streamlines in a uniform field are straight, so this is the
/// direct form of the filter.
pub fn dense_response(
    img: &ImageBuf,
    t: Option<[f64; 2]>,
    sigma_c: f64,
    sigma_m: f64,
    rho: f64,
) -> Vec<f64> {
    let sigma_s = 1.6 * sigma_c;
    let big_t = (3.0 * sigma_s).ceil() as i64;
    let big_s = (3.0 * sigma_m).ceil() as i64;
    let (w, h) = (img.width(), img.height());
    let dir = t.unwrap_or([1.0, 0.0]);
    let n = [-dir[1], dir[0]];
    let inside = |p: [f64; 2]| p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for sign in [1.0, -1.0] {
                let range = if t.is_none() { 0..=0 } else { 0..=big_s };
                for s in range {
                    if sign < 0.0 && s == 0 {
                        continue;
                    }
                    let q = [x as f64 + sign * s as f64 * dir[0], y as f64 + sign * s as f64 * dir[1]];
                    if !inside(q) {
                        break;
                    }
                    for j in -big_t..=big_t {
                        let dog = gauss(j as f64, sigma_c) - rho * gauss(j as f64, sigma_s);
                        let v = sample_clamped(img, q[0] + j as f64 * n[0], q[1] + j as f64 * n[1]);
                        acc += gauss(s as f64, sigma_m) * dog * 255.0 * v;
                    }
                }
            }
            out.push(acc);
        }
    }
    out
}

/// 2-D DFT by direct summation.
pub fn naive_dft(data: &[f64], w: usize, h: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let (mut re, mut im) = (0.0, 0.0);
            for y in 0..h {
                for x in 0..w {
                    let ang = -2.0 * std::f64::consts::PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                    re += data[y * w + x] * ang.cos();
                    im += data[y * w + x] * ang.sin();
                }
            }
            out.push((re, im));
        }
    }
    out
}

/// Mean absolute difference of DFT real and imaginary parts, per pixel.
pub fn naive_fft_distance(a: &[f64], b: &[f64], w: usize, h: usize) -> f64 {
    let fa = naive_dft(a, w, h);
    let fb = naive_dft(b, w, h);
    fa.iter()
        .zip(&fb)
        .map(|(p, q)| (p.0 - q.0).abs() + (p.1 - q.1).abs())
        .sum::<f64>()
        / (w * h) as f64
}
