//! Image quality metrics (SSIM, PSNR), the frequency-domain distance, and
//! diagnostic images (log spectra and ink difference maps).

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io::load_image;
use crate::raster::{ImageBuf, LineDrawing};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if a.channels() != 1 || b.channels() != 1 {
        return Err(Error::UnsupportedChannels(a.channels().max(b.channels())));
    }
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(data: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1).
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::TooSmall {
            width: w,
            height: h,
            min: SSIM_WINDOW,
        });
    }
    let k = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let [mx, my, mxx, myy, mxy] =
        [x, y, &xx[..], &yy[..], &xy[..]].map(|plane| filter_valid(plane, w, h, &k));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mx[i], my[i]);
            let va = mxx[i] - ma * ma;
            let vb = myy[i] - mb * mb;
            let cov = mxy[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// PSNR in decibels at unit dynamic range; `+∞` for identical inputs.
pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        / a.data().len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

/// A complex H×W spectrum, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Complex64>,
}

impl Spectrum {
    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[v * self.width + u]
    }
}

/// In-place unnormalized 2-D DFT of a row-major buffer.
pub fn fft2_in_place(buf: &mut [Complex64], width: usize, height: usize, direction: FftDirection) {
    assert_eq!(buf.len(), width * height);
    let mut planner = FftPlanner::new();
    let row_fft = planner.plan_fft(width, direction);
    row_fft.process(buf);
    let col_fft = planner.plan_fft(height, direction);
    let mut column = vec![Complex64::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            column[y] = buf[y * width + x];
        }
        col_fft.process(&mut column);
        for y in 0..height {
            buf[y * width + x] = column[y];
        }
    }
}

/// Forward unnormalized 2-D DFT of a real plane.
pub fn fft2d_plane(data: &[f64], width: usize, height: usize) -> Spectrum {
    let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2_in_place(&mut buf, width, height, FftDirection::Forward);
    Spectrum {
        width,
        height,
        data: buf,
    }
}

/// Forward unnormalized 2-D DFT of a single-channel image. Any size works.
pub fn fft2d(x: &ImageBuf) -> Result<Spectrum> {
    if x.channels() != 1 {
        return Err(Error::UnsupportedChannels(x.channels()));
    }
    Ok(fft2d_plane(x.data(), x.width(), x.height()))
}

/// `Σ |ΔRe| + |ΔIm|` over all bins of the difference spectrum, divided by
/// the pixel count. Shared with the differentiable training loss.
pub fn fft_distance_plane(a: &[f64], b: &[f64], width: usize, height: usize) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
    let spec = fft2d_plane(&diff, width, height);
    spec.data.iter().map(|c| c.re.abs() + c.im.abs()).sum::<f64>() / (width * height) as f64
}

pub fn fft_distance(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    Ok(fft_distance_plane(a.data(), b.data(), a.width(), a.height()))
}

/// `log(1 + |X|)`, shifted so the DC bin sits at `(W/2, H/2)`, scaled to a
/// maximum of 1.
pub fn spectrum_image(x: &ImageBuf) -> Result<ImageBuf> {
    let spec = fft2d(x)?;
    let (w, h) = (spec.width, spec.height);
    let mut data = vec![0.0; w * h];
    for v in 0..h {
        for u in 0..w {
            let su = (u + w / 2) % w;
            let sv = (v + h / 2) % h;
            data[sv * w + su] = (1.0 + spec.get(u, v).norm()).ln();
        }
    }
    let max = data.iter().cloned().fold(0.0, f64::max);
    if max > 0.0 {
        data.iter_mut().for_each(|v| *v /= max);
    }
    ImageBuf::from_clamped(w, h, 1, data)
}

/// Red where the ground truth has ink the prediction lacks, blue where the
/// prediction adds ink, white elsewhere.
pub fn diff_map(gt: &LineDrawing, pred: &LineDrawing) -> Result<ImageBuf> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    for d in [gt, pred] {
        if let Some(&bad) = d.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinary(bad));
        }
    }
    let data = gt
        .data()
        .iter()
        .zip(pred.data())
        .flat_map(|(&g, &p)| match (g == 0.0, p == 0.0) {
            (true, false) => [1.0, 0.0, 0.0],
            (false, true) => [0.0, 0.0, 1.0],
            _ => [1.0, 1.0, 1.0],
        })
        .collect();
    ImageBuf::new(gt.width(), gt.height(), 3, data)
}

/// Scores for one prediction against its ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    /// `+∞` for identical inputs; written to JSON as the string `"inf"`.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    #[serde(rename = "fftd")]
    pub fft_distance: f64,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Repr::Str(s) => Err(serde::de::Error::custom(format!("bad psnr value {s:?}"))),
    }
}

pub fn evaluate_pair(pred: &ImageBuf, gt: &ImageBuf) -> Result<MetricReport> {
    let (pred, gt) = (pred.to_grayscale(), gt.to_grayscale());
    Ok(MetricReport {
        ssim: ssim(&pred, &gt)?,
        psnr: psnr(&pred, &gt)?,
        fft_distance: fft_distance(&pred, &gt)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub records: Vec<FileReport>,
    pub aggregate: MetricReport,
}

impl BatchReport {
    /// Fixed-width table, one row per file plus the mean row.
    pub fn to_table(&self) -> String {
        let name_w = self
            .records
            .iter()
            .map(|r| r.file.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut out = format!(
            "{:<name_w$}  {:>8}  {:>10}  {:>10}\n",
            "file", "SSIM", "PSNR", "FFTD"
        );
        let row = |name: &str, r: &MetricReport| {
            format!(
                "{:<name_w$}  {:>8.4}  {:>10}  {:>10.4}\n",
                name,
                r.ssim,
                format_psnr(r.psnr),
                r.fft_distance
            )
        };
        for r in &self.records {
            out.push_str(&row(&r.file, &r.report));
        }
        out.push_str(&row("mean", &self.aggregate));
        out.push_str("FID: not supported\n");
        out
    }
}

fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut names = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_image = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
            .unwrap_or(false);
        if is_image && path.is_file() {
            names.insert(entry.file_name().to_string_lossy().into_owned());
        }
    }
    Ok(names)
}

/// Scores every same-named image pair of two directories, ordered by file
/// name, plus their means.
pub fn evaluate_batch(pred_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<BatchReport> {
    let (pred_dir, gt_dir) = (pred_dir.as_ref(), gt_dir.as_ref());
    let preds = image_names(pred_dir)?;
    let gts = image_names(gt_dir)?;
    if let Some(missing) = preds.difference(&gts).next() {
        return Err(Error::Unmatched(gt_dir.join(missing).display().to_string()));
    }
    if let Some(missing) = gts.difference(&preds).next() {
        return Err(Error::Unmatched(pred_dir.join(missing).display().to_string()));
    }
    if preds.is_empty() {
        return Err(Error::Unmatched(format!(
            "no images in {}",
            pred_dir.display()
        )));
    }
    let names: Vec<String> = preds.into_iter().collect();
    let records = names
        .par_iter()
        .map(|name| {
            let pred = load_image(pred_dir.join(name))?;
            let gt = load_image(gt_dir.join(name))?;
            Ok(FileReport {
                file: name.clone(),
                report: evaluate_pair(&pred, &gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = records.len() as f64;
    let aggregate = MetricReport {
        ssim: records.iter().map(|r| r.report.ssim).sum::<f64>() / n,
        psnr: records.iter().map(|r| r.report.psnr).sum::<f64>() / n,
        fft_distance: records.iter().map(|r| r.report.fft_distance).sum::<f64>() / n,
    };
    Ok(BatchReport { records, aggregate })
}
