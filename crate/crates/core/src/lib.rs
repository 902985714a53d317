//! Controllable line drawings from photographs.
//!
//! The crate covers the whole pipeline: edge tangent flow ([`etf`]), flow-guided
//! DoG rendering under a global or per-pixel control value ([`fdog`]), the
//! evaluation metrics ([`metrics`]), dataset construction ([`dataset`]) and a
//! small reverse-mode network stack with the generator, discriminator and
//! regressor architectures and their training objective ([`neural`]).

pub mod error;
pub mod etf;
pub mod fdog;
pub mod fixtures;
pub mod io;
pub mod measure;
pub mod metrics;
pub mod dataset;
pub mod neural;
pub mod raster;

pub use error::{Error, Result};
pub use etf::{compute_etf, EtfParams};
pub use fdog::{alpha_to_params, render_line_drawing, render_with_lcm, FdogParams, LineControlMatrix};
pub use raster::{FlowField, ImageBuf, LineDrawing};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tangent-flow.md")]
    mod tangent_flow {}
    #[doc = include_str!("../../../book/src/line-drawings.md")]
    mod line_drawings {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/datasets.md")]
    mod datasets {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
}
