//! Paired training data: for every source image, its edge tangent flow and
//! one line drawing per control level, indexed by a JSON manifest.
//!
//! Layout under the output directory:
//!
//! ```text
//! manifest.json
//! images/{stem}.png
//! etf/{stem}.flo        (+ {stem}.flo.mag)
//! drawings/{stem}_a{alpha:.2f}.png
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::etf::{compute_etf, EtfParams};
use crate::fdog::{alpha_to_params, render_with_params, ANCHOR_LEVELS};
use crate::io::{self, load_image, magnitude_path, read_flo, save_drawing, save_image, write_flo};
use crate::raster::{FlowField, ImageBuf, LineDrawing};

pub const MANIFEST_VERSION: &str = "flowline-dataset/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrawingRecord {
    pub path: String,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub etf_path: String,
    pub drawings: Vec<DrawingRecord>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestParams {
    pub etf: EtfParams,
    pub fdog_passes: usize,
    pub anchor_levels: Vec<f64>,
    pub size: usize,
    pub split_ratio: f64,
    pub seed: u64,
}

/// Paths inside a manifest are relative to the directory holding it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: String,
    pub params: ManifestParams,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BuildOptions {
    pub levels: Vec<f64>,
    pub size: usize,
    /// Fraction of images assigned to the training split.
    pub split_ratio: f64,
    pub seed: u64,
    pub etf: EtfParams,
    pub passes: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            levels: ANCHOR_LEVELS.to_vec(),
            size: 1024,
            split_ratio: 0.76,
            seed: 0,
            etf: EtfParams::default(),
            passes: 2,
        }
    }
}

/// Drawing file name for a stem and control level.
pub fn drawing_name(stem: &str, alpha: f64) -> String {
    format!("{stem}_a{alpha:.2}.png")
}

/// Split from a hash of the file name, so assignments do not move when
/// other images are added.
pub fn split_for(file_name: &str, ratio: f64) -> Split {
    let digest = Sha256::digest(file_name.as_bytes());
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    let unit = u64::from_be_bytes(word) as f64 / 2f64.powi(64);
    if unit < ratio {
        Split::Train
    } else {
        Split::Test
    }
}

fn source_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("no control levels given".into()));
    }
    if levels.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidParameter("control levels must lie in [0, 1]".into()));
    }
    if levels.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter(
            "control levels must be strictly increasing".into(),
        ));
    }
    Ok(())
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Renders one drawing exactly as the dataset builder does.
pub fn render_level(img: &ImageBuf, field: &FlowField, alpha: f64, passes: usize) -> Result<LineDrawing> {
    render_with_params(img, field, &alpha_to_params(alpha)?.with_passes(passes))
}

/// Builds a dataset from every PNG/JPEG in `src_dir` and writes
/// `manifest.json` last.
pub fn build_dataset(
    src_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &BuildOptions,
) -> Result<DatasetManifest> {
    let (src_dir, out_dir) = (src_dir.as_ref(), out_dir.as_ref());
    check_levels(&opts.levels)?;
    opts.etf.validate()?;
    if opts.size < 3 {
        return Err(Error::InvalidParameter(format!("size {} too small", opts.size)));
    }
    if !(0.0..=1.0).contains(&opts.split_ratio) {
        return Err(Error::InvalidParameter("split ratio must lie in [0, 1]".into()));
    }
    let sources = source_images(src_dir)?;
    if sources.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", src_dir.display())));
    }
    let stems: Vec<String> = sources
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let mut unique = stems.clone();
    unique.sort();
    unique.dedup();
    if unique.len() != stems.len() {
        return Err(Error::Dataset("source images share a file stem".into()));
    }
    for sub in ["images", "etf", "drawings"] {
        mkdir(&out_dir.join(sub))?;
    }

    let entries = sources
        .par_iter()
        .zip(stems.par_iter())
        .map(|(src, stem)| {
            let img = load_image(src)?.to_rgb().resize(opts.size, opts.size)?;
            let image_rel = format!("images/{stem}.png");
            save_image(&img, out_dir.join(&image_rel))?;
            // Work from what is on disk so every artifact can be regenerated
            // from the stored files alone.
            let img = load_image(out_dir.join(&image_rel))?;
            let etf_rel = format!("etf/{stem}.flo");
            write_flo(&compute_etf(&img, &opts.etf)?, out_dir.join(&etf_rel))?;
            let field = read_flo(out_dir.join(&etf_rel))?;
            let drawings = opts
                .levels
                .iter()
                .map(|&alpha| {
                    let rel = format!("drawings/{}", drawing_name(stem, alpha));
                    save_drawing(&render_level(&img, &field, alpha, opts.passes)?, out_dir.join(&rel))?;
                    Ok(DrawingRecord { path: rel, alpha })
                })
                .collect::<Result<Vec<_>>>()?;
            let file_name = src.file_name().unwrap_or_default().to_string_lossy();
            Ok(ManifestEntry {
                image_path: image_rel,
                etf_path: etf_rel,
                drawings,
                split: split_for(&file_name, opts.split_ratio),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = DatasetManifest {
        version: MANIFEST_VERSION.to_string(),
        params: ManifestParams {
            etf: opts.etf,
            fdog_passes: opts.passes,
            anchor_levels: opts.levels.clone(),
            size: opts.size,
            split_ratio: opts.split_ratio,
            seed: opts.seed,
        },
        entries,
    };
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Checks a manifest and the files it references. Returns the list of
/// violations; an empty list means the dataset is consistent. Only a
/// manifest that cannot be read or parsed is an error.
pub fn validate_manifest(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let manifest = DatasetManifest::load(path)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut violations = Vec::new();
    if manifest.version != MANIFEST_VERSION {
        violations.push(format!("unknown manifest version {:?}", manifest.version));
    }
    let levels = &manifest.params.anchor_levels;
    if let Err(e) = check_levels(levels) {
        violations.push(format!("params.anchor_levels: {e}"));
    }
    let size = manifest.params.size;
    for (i, entry) in manifest.entries.iter().enumerate() {
        let label = format!("entry {i} ({})", entry.image_path);
        if entry.drawings.len() != levels.len() {
            violations.push(format!(
                "{label}: {} drawings, expected {}",
                entry.drawings.len(),
                levels.len()
            ));
        }
        if entry.drawings.windows(2).any(|w| w[0].alpha >= w[1].alpha) {
            violations.push(format!("{label}: alphas not strictly increasing"));
        }
        if let Some(d) = entry.drawings.iter().find(|d| !(0.0..=1.0).contains(&d.alpha)) {
            violations.push(format!("{label}: alpha {} outside [0, 1]", d.alpha));
        }
        let mut files = vec![root.join(&entry.image_path)];
        files.extend(entry.drawings.iter().map(|d| root.join(&d.path)));
        for file in files {
            if !file.is_file() {
                violations.push(format!("{label}: missing file {}", file.display()));
            }
        }
        let flo = root.join(&entry.etf_path);
        match fs::read(&flo) {
            Err(_) => violations.push(format!("{label}: missing file {}", flo.display())),
            Ok(bytes) => match io::flo_header_info(&bytes) {
                Err(e) => violations.push(format!("{label}: {}: {e}", flo.display())),
                Ok((w, h)) if (w, h) != (size, size) => violations.push(format!(
                    "{label}: {} is {w}x{h}, expected {size}x{size}",
                    flo.display()
                )),
                Ok(_) => {}
            },
        }
        let mag = magnitude_path(&flo);
        if !mag.is_file() {
            violations.push(format!("{label}: missing file {}", mag.display()));
        }
    }
    Ok(violations)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairMode {
    /// `(image, etf)` for the flow generator.
    Etf,
    /// `(image, etf, drawing, alpha)` for the drawing generator and regressor.
    Drawing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRef {
    pub image: PathBuf,
    pub etf: PathBuf,
    pub drawing: Option<(PathBuf, f64)>,
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: ImageBuf,
    pub field: FlowField,
    pub drawing: Option<LineDrawing>,
    pub alpha: Option<f64>,
}

impl SampleRef {
    pub fn load(&self) -> Result<Sample> {
        let image = load_image(&self.image)?.to_rgb();
        let field = read_flo(&self.etf)?;
        let (drawing, alpha) = match &self.drawing {
            Some((path, alpha)) => (
                Some(LineDrawing::from_image(&load_image(path)?, 0.5)),
                Some(*alpha),
            ),
            None => (None, None),
        };
        Ok(Sample {
            image,
            field,
            drawing,
            alpha,
        })
    }
}

/// Training samples of one split in a seeded random order.
pub fn iter_pairs(
    manifest: &DatasetManifest,
    root: impl AsRef<Path>,
    split: Split,
    mode: PairMode,
    seed: u64,
) -> Result<Vec<SampleRef>> {
    let root = root.as_ref();
    let mut out = Vec::new();
    for entry in manifest.entries.iter().filter(|e| e.split == split) {
        let image = root.join(&entry.image_path);
        let etf = root.join(&entry.etf_path);
        match mode {
            PairMode::Etf => out.push(SampleRef {
                image,
                etf,
                drawing: None,
            }),
            PairMode::Drawing => out.extend(entry.drawings.iter().map(|d| SampleRef {
                image: image.clone(),
                etf: etf.clone(),
                drawing: Some((root.join(&d.path), d.alpha)),
            })),
        }
    }
    if out.is_empty() {
        return Err(Error::Dataset(format!("split {split:?} is empty")));
    }
    out.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drawing_names() {
        assert_eq!(drawing_name("cat", 0.1), "cat_a0.10.png");
        assert_eq!(drawing_name("cat", 0.5), "cat_a0.50.png");
    }

    #[test]
    fn split_is_stable_and_extreme_ratios_are_total() {
        assert_eq!(split_for("a.png", 0.5), split_for("a.png", 0.5));
        assert_eq!(split_for("a.png", 1.0), Split::Train);
        assert_eq!(split_for("a.png", 0.0), Split::Test);
    }

    #[test]
    fn level_checks() {
        assert!(check_levels(&[]).is_err());
        assert!(check_levels(&[0.3, 0.3]).is_err());
        assert!(check_levels(&[0.5, 1.2]).is_err());
        assert!(check_levels(&[0.5]).is_ok());
    }
}
