//! The rendering path shared by `flowline draw` and `POST /api/render`, so
//! both produce the same bytes for the same input.

use flowline::fdog::{alpha_to_params, render_with_lcm_passes, render_with_params};
use flowline::io::{decode_image, encode_drawing_png};
use flowline::{compute_etf, EtfParams, Error, FlowField, ImageBuf, LineControlMatrix, LineDrawing, Result};

pub const DEFAULT_PASSES: usize = 2;
pub const MAX_PASSES: usize = 8;

#[derive(Clone, Debug)]
pub enum Control {
    Alpha(f64),
    Matrix(LineControlMatrix),
}

pub fn check_passes(passes: usize) -> Result<()> {
    if (1..=MAX_PASSES).contains(&passes) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("passes must lie in 1..={MAX_PASSES}, got {passes}")))
    }
}

pub fn default_field(img: &ImageBuf) -> Result<FlowField> {
    compute_etf(img, &EtfParams::default())
}

pub fn render(img: &ImageBuf, field: &FlowField, control: &Control, passes: usize) -> Result<LineDrawing> {
    check_passes(passes)?;
    match control {
        Control::Alpha(a) => render_with_params(img, field, &alpha_to_params(*a)?.with_passes(passes)),
        Control::Matrix(m) => render_with_lcm_passes(img, field, m, Some(passes)),
    }
}

pub fn render_png(img: &ImageBuf, field: &FlowField, control: &Control, passes: usize) -> Result<Vec<u8>> {
    encode_drawing_png(&render(img, field, control, passes)?)
}

/// Control matrix from an encoded image; gray level / 255 is α.
pub fn decode_lcm(bytes: &[u8]) -> Result<LineControlMatrix> {
    Ok(LineControlMatrix::from_image(&decode_image(bytes)?))
}

pub fn check_lcm_size(lcm: &LineControlMatrix, img: &ImageBuf) -> Result<()> {
    if (lcm.width(), lcm.height()) == (img.width(), img.height()) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "control matrix is {}x{}, image is {}x{}",
            lcm.width(),
            lcm.height(),
            img.width(),
            img.height()
        )))
    }
}
