//! Flow-guided difference-of-Gaussians line rendering.
//!
//! For every pixel a streamline is traced through the tangent field. At each
//! streamline sample a 1-D DoG is taken across the flow (along the local
//! normal) and those responses are accumulated along the streamline with a
//! Gaussian of width `sigma_m`. Negative responses that are strong enough
//! become ink.
//!
//! The control value α ∈ [0, 1] selects the filter: small α gives thin,
//! detailed strokes; large α gives thick, smooth, continuous ones. A
//! [`LineControlMatrix`] assigns α per pixel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{bilinear, FlowField, ImageBuf, LineDrawing};

/// Intensities are filtered on the 8-bit scale, so thresholds on
/// `1 + tanh(H)` act on responses measured in gray levels.
pub const INTENSITY_SCALE: f64 = 255.0;

/// Surround-to-center width ratio of the DoG.
pub const SURROUND_RATIO: f64 = 1.6;

/// Anchor α levels used for spatially varying control and dataset drawings.
pub const ANCHOR_LEVELS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdogParams {
    pub sigma_c: f64,
    pub sigma_m: f64,
    pub rho: f64,
    pub tau: f64,
    pub passes: usize,
}

impl FdogParams {
    pub fn sigma_s(&self) -> f64 {
        SURROUND_RATIO * self.sigma_c
    }

    /// Cross-flow half-width `T = ceil(3 σs)`.
    pub fn cross_halfwidth(&self) -> usize {
        (3.0 * self.sigma_s()).ceil() as usize
    }

    /// Along-flow half-length `S = ceil(3 σm)`.
    pub fn flow_halflength(&self) -> usize {
        (3.0 * self.sigma_m).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.sigma_c > 0.0 && self.sigma_c.is_finite()) {
            return bad("sigma_c must be positive");
        }
        if !(self.sigma_m > 0.0 && self.sigma_m.is_finite()) {
            return bad("sigma_m must be positive");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad("rho must lie in (0, 1]");
        }
        if self.passes < 1 {
            return bad("at least one pass is required");
        }
        Ok(())
    }

    pub fn with_passes(self, passes: usize) -> Self {
        FdogParams { passes, ..self }
    }
}

/// Maps a control value onto filter parameters. Larger α widens both
/// Gaussians and lowers the threshold.
pub fn alpha_to_params(alpha: f64) -> Result<FdogParams> {
    check_alpha(alpha)?;
    Ok(FdogParams {
        sigma_c: 1.0 + 2.0 * alpha,
        sigma_m: 2.0 + 4.0 * alpha,
        rho: 0.99,
        tau: 0.6 - 0.2 * alpha,
        passes: 2,
    })
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside [0, 1]"
        )))
    }
}

#[inline]
pub fn gaussian(x: f64, sigma: f64) -> f64 {
    (-x * x / (2.0 * sigma * sigma)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma)
}

/// Per-pixel DoG response map.
#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Tangent at a continuous position: bilinear blend of the four
/// surrounding tangents after flipping each to agree with `reference`.
/// Returns `None` where the blend vanishes.
#[inline]
fn sample_tangent(field: &FlowField, x: f64, y: f64, reference: [f64; 2]) -> Option<[f64; 2]> {
    let (w, h) = (field.width(), field.height());
    let x0 = x.floor().clamp(0.0, (w - 1) as f64) as usize;
    let y0 = y.floor().clamp(0.0, (h - 1) as f64) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = (x - x0 as f64).clamp(0.0, 1.0);
    let fy = (y - y0 as f64).clamp(0.0, 1.0);
    let mut acc = [0.0f64; 2];
    for (xx, yy, wt) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        let t = field.tangent(xx, yy);
        let s = if t[0] * reference[0] + t[1] * reference[1] < 0.0 {
            -wt
        } else {
            wt
        };
        acc[0] += s * t[0];
        acc[1] += s * t[1];
    }
    let n = acc[0].hypot(acc[1]);
    if n > 1e-12 {
        Some([acc[0] / n, acc[1] / n])
    } else {
        None
    }
}

/// Fallback frame for pixels without a tangent: flow along +x.
const FALLBACK_TANGENT: [f64; 2] = [1.0, 0.0];

/// Streamline samples `(position, tangent)` on one side of a pixel, at most
/// `steps` unit steps long. Midpoint advection; stops at the image border
/// or where the field vanishes.
pub(crate) fn trace_half(
    field: &FlowField,
    start: [f64; 2],
    dir: [f64; 2],
    steps: usize,
    out: &mut Vec<([f64; 2], [f64; 2])>,
) {
    let (w, h) = (field.width() as f64, field.height() as f64);
    let mut p = start;
    let mut t = dir;
    for _ in 0..steps {
        let mid = [p[0] + 0.5 * t[0], p[1] + 0.5 * t[1]];
        let Some(tm) = sample_tangent(field, mid[0], mid[1], t) else {
            break;
        };
        let next = [p[0] + tm[0], p[1] + tm[1]];
        if next[0] < 0.0 || next[1] < 0.0 || next[0] > w - 1.0 || next[1] > h - 1.0 {
            break;
        }
        let Some(tn) = sample_tangent(field, next[0], next[1], tm) else {
            break;
        };
        out.push((next, tn));
        p = next;
        t = tn;
    }
}

/// Flow-guided DoG response of a grayscale image.
pub fn fdog_response(gray: &ImageBuf, field: &FlowField, params: &FdogParams) -> Result<Response> {
    params.validate()?;
    if gray.channels() != 1 {
        return Err(Error::UnsupportedChannels(gray.channels()));
    }
    let (w, h) = (gray.width(), gray.height());
    if field.width() != w || field.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "image is {w}x{h}, field is {}x{}",
            field.width(),
            field.height()
        )));
    }
    let big_t = params.cross_halfwidth() as isize;
    let big_s = params.flow_halflength();
    let sigma_s = params.sigma_s();
    let cross: Vec<(f64, f64)> = (-big_t..=big_t)
        .map(|t| {
            let t = t as f64;
            (t, gaussian(t, params.sigma_c) - params.rho * gaussian(t, sigma_s))
        })
        .collect();
    let along: Vec<f64> = (0..=big_s)
        .map(|s| gaussian(s as f64, params.sigma_m))
        .collect();
    let image = gray.data();

    let cross_dog = |p: [f64; 2], t: [f64; 2]| -> f64 {
        let n = [-t[1], t[0]];
        cross
            .iter()
            .map(|&(off, wt)| {
                wt * bilinear(image, w, h, 1, 0, p[0] + off * n[0], p[1] + off * n[1])
            })
            .sum::<f64>()
            * INTENSITY_SCALE
    };

    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let mut forward = Vec::with_capacity(big_s);
        let mut backward = Vec::with_capacity(big_s);
        for (x, slot) in row.iter_mut().enumerate() {
            let p = [x as f64, y as f64];
            let t0 = field.tangent(x, y);
            if t0 == [0.0, 0.0] {
                *slot = along[0] * cross_dog(p, FALLBACK_TANGENT);
                continue;
            }
            forward.clear();
            backward.clear();
            trace_half(field, p, t0, big_s, &mut forward);
            trace_half(field, p, [-t0[0], -t0[1]], big_s, &mut backward);
            let mut acc = along[0] * cross_dog(p, t0);
            for (k, &(q, t)) in forward.iter().enumerate() {
                acc += along[k + 1] * cross_dog(q, t);
            }
            for (k, &(q, t)) in backward.iter().enumerate() {
                acc += along[k + 1] * cross_dog(q, t);
            }
            *slot = acc;
        }
    });
    Ok(Response {
        width: w,
        height: h,
        data,
    })
}

/// Ink where `H < 0` and `1 + tanh(H) < τ`.
pub fn threshold_response(response: &Response, tau: f64) -> LineDrawing {
    let data = response
        .data
        .iter()
        .map(|&v| if v < 0.0 && 1.0 + v.tanh() < tau { 0.0 } else { 1.0 })
        .collect();
    LineDrawing::new(response.width, response.height, data).expect("binary drawing")
}

/// Renders with explicit parameters: each pass filters the working image,
/// thresholds it, and darkens the working image with the new ink.
pub fn render_with_params(img: &ImageBuf, field: &FlowField, params: &FdogParams) -> Result<LineDrawing> {
    params.validate()?;
    let mut working = img.to_grayscale();
    let mut drawing = LineDrawing::blank(img.width(), img.height());
    for _ in 0..params.passes {
        let response = fdog_response(&working, field, params)?;
        drawing = threshold_response(&response, params.tau);
        let merged = working
            .data()
            .iter()
            .zip(drawing.data())
            .map(|(&g, &d)| g.min(d))
            .collect();
        working = ImageBuf::new(working.width(), working.height(), 1, merged)?;
    }
    Ok(drawing)
}

/// Renders a line drawing at a single global control value.
pub fn render_line_drawing(img: &ImageBuf, field: &FlowField, alpha: f64) -> Result<LineDrawing> {
    render_with_params(img, field, &alpha_to_params(alpha)?)
}

/// Per-pixel control values α ∈ [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct LineControlMatrix {
    width: usize,
    height: usize,
    alpha: Vec<f64>,
}

impl LineControlMatrix {
    pub fn new(width: usize, height: usize, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} control matrix needs {} values, got {}",
                width * height,
                alpha.len()
            )));
        }
        if let Some(&bad) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidParameter(format!("alpha {bad} outside [0, 1]")));
        }
        Ok(LineControlMatrix {
            width,
            height,
            alpha,
        })
    }

    pub fn constant(width: usize, height: usize, alpha: f64) -> Result<Self> {
        Self::new(width, height, vec![alpha; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut alpha = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                alpha.push(f(x, y));
            }
        }
        Self::new(width, height, alpha)
    }

    /// Reads control values from an image: gray level / 255 for 8-bit input.
    pub fn from_image(img: &ImageBuf) -> Self {
        let gray = img.to_grayscale();
        LineControlMatrix {
            width: gray.width(),
            height: gray.height(),
            alpha: gray.into_data(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.alpha
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.alpha[y * self.width + x]
    }

    pub fn to_image(&self) -> ImageBuf {
        ImageBuf::new(self.width, self.height, 1, self.alpha.clone()).expect("values in [0, 1]")
    }

    /// The common value when every entry is equal.
    pub fn uniform_value(&self) -> Option<f64> {
        let first = *self.alpha.first()?;
        self.alpha.iter().all(|&a| a == first).then_some(first)
    }
}

const ANCHOR_SNAP: f64 = 1e-9;

/// `(lower anchor index, upper anchor index, weight of upper)` for a value.
fn bracket(alpha: f64) -> (usize, usize, f64) {
    let last = ANCHOR_LEVELS.len() - 1;
    if alpha <= ANCHOR_LEVELS[0] + ANCHOR_SNAP {
        return (0, 0, 0.0);
    }
    if alpha >= ANCHOR_LEVELS[last] - ANCHOR_SNAP {
        return (last, last, 0.0);
    }
    for i in 0..last {
        let (lo, hi) = (ANCHOR_LEVELS[i], ANCHOR_LEVELS[i + 1]);
        if (alpha - lo).abs() <= ANCHOR_SNAP {
            return (i, i, 0.0);
        }
        if (alpha - hi).abs() <= ANCHOR_SNAP {
            return (i + 1, i + 1, 0.0);
        }
        if alpha > lo && alpha < hi {
            return (i, i + 1, (alpha - lo) / (hi - lo));
        }
    }
    (last, last, 0.0)
}

/// Spatially varying rendering with the default number of passes.
pub fn render_with_lcm(img: &ImageBuf, field: &FlowField, lcm: &LineControlMatrix) -> Result<LineDrawing> {
    render_with_lcm_passes(img, field, lcm, None)
}

/// Renders the anchor levels the matrix touches, blends the two renderings
/// bracketing each pixel's α linearly and re-binarizes at 0.5. A constant
/// matrix is rendered directly at its value.
pub fn render_with_lcm_passes(
    img: &ImageBuf,
    field: &FlowField,
    lcm: &LineControlMatrix,
    passes: Option<usize>,
) -> Result<LineDrawing> {
    let (w, h) = (img.width(), img.height());
    if lcm.width() != w || lcm.height() != h {
        return Err(Error::DimensionMismatch(format!(
            "control matrix is {}x{}, image is {w}x{h}",
            lcm.width(),
            lcm.height()
        )));
    }
    let params_for = |alpha: f64| -> Result<FdogParams> {
        let p = alpha_to_params(alpha)?;
        Ok(passes.map_or(p, |n| p.with_passes(n)))
    };
    if let Some(v) = lcm.uniform_value() {
        return render_with_params(img, field, &params_for(v)?);
    }
    let brackets: Vec<_> = lcm.data().iter().map(|&a| bracket(a)).collect();
    let mut needed = [false; ANCHOR_LEVELS.len()];
    for &(lo, hi, _) in &brackets {
        needed[lo] = true;
        needed[hi] = true;
    }
    let renders: Vec<Option<LineDrawing>> = ANCHOR_LEVELS
        .par_iter()
        .zip(needed.par_iter())
        .map(|(&alpha, &use_it)| {
            if use_it {
                render_with_params(img, field, &params_for(alpha)?).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let data = brackets
        .iter()
        .enumerate()
        .map(|(i, &(lo, hi, wt))| {
            let a = renders[lo].as_ref().expect("rendered").data()[i];
            let b = renders[hi].as_ref().expect("rendered").data()[i];
            if (1.0 - wt) * a + wt * b < 0.5 {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    LineDrawing::new(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_mapping() {
        let p = alpha_to_params(0.0).unwrap();
        assert_eq!((p.sigma_c, p.sigma_m, p.tau), (1.0, 2.0, 0.6));
        let p = alpha_to_params(1.0).unwrap();
        assert!((p.sigma_c - 3.0).abs() < 1e-12);
        assert!((p.sigma_m - 6.0).abs() < 1e-12);
        assert!((p.tau - 0.4).abs() < 1e-12);
        let p = alpha_to_params(0.5).unwrap();
        assert_eq!((p.sigma_c, p.sigma_m, p.tau), (2.0, 4.0, 0.5));
        assert_eq!(p.rho, 0.99);
        assert_eq!(p.passes, 2);
        assert!(alpha_to_params(-0.01).is_err());
        assert!(alpha_to_params(1.01).is_err());
        assert!(alpha_to_params(f64::NAN).is_err());
    }

    #[test]
    fn derived_widths() {
        let p = alpha_to_params(0.0).unwrap();
        assert_eq!(p.cross_halfwidth(), 5); // ceil(3 * 1.6)
        assert_eq!(p.flow_halflength(), 6);
    }

    #[test]
    fn threshold_rule() {
        let r = Response {
            width: 3,
            height: 1,
            data: vec![0.5, -3.0, -0.1],
        };
        let d = threshold_response(&r, 0.5);
        assert_eq!(d.data(), &[1.0, 0.0, 1.0]);
    }

    #[test]
    fn bracket_snaps_to_anchors() {
        assert_eq!(bracket(0.3), (1, 1, 0.0));
        assert_eq!(bracket(0.3 + 1e-10), (1, 1, 0.0));
        assert_eq!(bracket(0.0), (0, 0, 0.0));
        assert_eq!(bracket(1.0), (4, 4, 0.0));
        let (lo, hi, wt) = bracket(0.4);
        assert_eq!((lo, hi), (1, 2));
        assert!((wt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn lcm_validation() {
        assert!(LineControlMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(LineControlMatrix::constant(2, 2, 1.2).is_err());
        let img = ImageBuf::filled(4, 4, 1, 0.5).unwrap();
        let field = FlowField::zeros(4, 4);
        let lcm = LineControlMatrix::constant(3, 4, 0.5).unwrap();
        assert!(render_with_lcm(&img, &field, &lcm).is_err());
    }
}
