use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockKind {
    /// Convolution, leaky ReLU.
    Cl,
    /// Convolution, instance norm, leaky ReLU.
    Cil,
    /// Transposed convolution, ReLU.
    Dr,
    /// Transposed convolution, instance norm, ReLU.
    Dir,
    /// 2x nearest upsample, convolution, tanh.
    Uct,
    /// Bare convolution.
    PlainConv,
}

impl BlockKind {
    fn transposed(self) -> bool {
        matches!(self, BlockKind::Dr | BlockKind::Dir)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        BlockSpec {
            kind,
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
        }
    }

    /// Kernel 4, stride 2, padding 1: halves (or, transposed, doubles) the grid.
    pub fn down(kind: BlockKind, in_ch: usize, out_ch: usize) -> Self {
        BlockSpec::new(kind, in_ch, out_ch, 4, 2, 1)
    }

    /// Kernel 3, stride 1, padding 1: keeps the grid.
    pub fn same(kind: BlockKind, in_ch: usize, out_ch: usize) -> Self {
        BlockSpec::new(kind, in_ch, out_ch, 3, 1, 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        if self.kind.transposed() {
            [self.in_ch, self.out_ch, self.kernel, self.kernel]
        } else {
            [self.out_ch, self.in_ch, self.kernel, self.kernel]
        }
    }

    pub fn param_count(&self) -> usize {
        self.in_ch * self.out_ch * self.kernel * self.kernel + self.out_ch
    }

    /// Output side length for an input side length, or `None` if too small.
    pub fn output_size(&self, size: usize) -> Option<usize> {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        match self.kind {
            BlockKind::Dr | BlockKind::Dir => ((size.checked_sub(1)?) * s + k).checked_sub(2 * p),
            BlockKind::Uct => conv_size(size * 2, k, s, p),
            _ => conv_size(size, k, s, p),
        }
    }

    pub fn init(&self, rng: &mut impl Rng) -> [Tensor; 2] {
        [
            Tensor::randn(self.weight_shape(), INIT_STD, rng),
            Tensor::zeros([1, self.out_ch, 1, 1]),
        ]
    }

    pub fn apply(&self, g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
        let (s, p) = (self.stride, self.padding);
        Ok(match self.kind {
            BlockKind::Cl => {
                let y = g.conv2d(x, w, b, s, p)?;
                g.leaky_relu(y, LEAKY_SLOPE)
            }
            BlockKind::Cil => {
                let y = g.conv2d(x, w, b, s, p)?;
                let y = g.instance_norm(y);
                g.leaky_relu(y, LEAKY_SLOPE)
            }
            BlockKind::Dr => {
                let y = g.conv_transpose2d(x, w, b, s, p)?;
                g.relu(y)
            }
            BlockKind::Dir => {
                let y = g.conv_transpose2d(x, w, b, s, p)?;
                let y = g.instance_norm(y);
                g.relu(y)
            }
            BlockKind::Uct => {
                let y = g.upsample_nearest(x, 2);
                let y = g.conv2d(y, w, b, s, p)?;
                g.tanh(y)
            }
            BlockKind::PlainConv => g.conv2d(x, w, b, s, p)?,
        })
    }
}

fn conv_size(size: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let padded = size + 2 * p;
    (padded >= k).then(|| (padded - k) / s + 1)
}

/// Adds every tensor to the graph, as parameters or as constants.
pub fn bind(params: &[Tensor], g: &mut Graph, trainable: bool) -> Vec<Var> {
    params
        .iter()
        .map(|t| {
            if trainable {
                g.parameter(t.clone())
            } else {
                g.constant(t.clone())
            }
        })
        .collect()
}

pub(crate) fn init_blocks(specs: &[BlockSpec], rng: &mut impl Rng) -> Vec<Tensor> {
    specs.iter().flat_map(|s| s.init(rng)).collect()
}
