//! Generator, discriminator and regressor architectures.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{FlowField, ImageBuf};

use super::graph::{Graph, Var};
use super::layers::{bind, init_blocks, BlockKind, BlockSpec};
use super::tensor::Tensor;

/// Combined I2FNet + DFG parameter budget the default width is sized to.
pub const REFERENCE_PARAM_COUNT: usize = 51_541_000;
/// Base width that brings I2FNet + DFG closest to [`REFERENCE_PARAM_COUNT`].
pub const DEFAULT_BASE_CH: usize = 56;
pub const DEFAULT_DISC_BASE: usize = 64;
pub const I2F_DEPTH: usize = 4;
pub const DFG_DEPTH: usize = 5;
pub const LCR_DEPTH: usize = 4;
/// Tangents shorter than this are treated as undefined after prediction.
pub const TANGENT_CUTOFF: f64 = 0.1;

fn width(base: usize, level: usize) -> usize {
    base * (1usize << level.min(3))
}

/// Architecture description stored alongside checkpointed parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "network", rename_all = "kebab-case")]
pub enum Architecture {
    I2f(UNetConfig),
    Dfg(UNetConfig),
    Discriminator(DiscriminatorConfig),
    Lcr(LcrConfig),
}

impl Architecture {
    pub fn param_shapes(&self) -> Result<Vec<[usize; 4]>> {
        let specs = match self {
            Architecture::I2f(c) | Architecture::Dfg(c) => {
                c.validate()?;
                c.all_specs()
            }
            Architecture::Discriminator(c) => {
                c.validate()?;
                c.layers.clone()
            }
            Architecture::Lcr(c) => {
                c.validate()?;
                c.specs()
            }
        };
        Ok(specs
            .iter()
            .flat_map(|s| [s.weight_shape(), [1, s.out_ch, 1, 1]])
            .collect())
    }
}

/// Common access to a network's flat parameter list.
pub trait Network {
    fn architecture(&self) -> Architecture;
    fn params(&self) -> &[Tensor];
    fn params_mut(&mut self) -> &mut [Tensor];

    fn param_count(&self) -> usize {
        self.params().iter().map(Tensor::len).sum()
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        bind(self.params(), g, trainable)
    }
}

fn check_params(shapes: &[[usize; 4]], params: &[Tensor]) -> Result<()> {
    if shapes.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "architecture needs {} tensors, got {}",
            shapes.len(),
            params.len()
        )));
    }
    for (s, t) in shapes.iter().zip(params) {
        if *s != t.shape() {
            return Err(Error::Checkpoint(format!("expected tensor {s:?}, got {:?}", t.shape())));
        }
    }
    Ok(())
}

fn check_divisible(size: [usize; 4], divisor: usize, what: &str) -> Result<()> {
    let [_, _, h, w] = size;
    if h == 0 || w == 0 || h % divisor != 0 || w % divisor != 0 {
        return Err(Error::Shape(format!(
            "{what} input {h}x{w} must be divisible by {divisor}"
        )));
    }
    Ok(())
}

/// Encoder-decoder with one or more encoder branches and skip connections.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Input channels per encoder branch.
    pub branches: Vec<usize>,
    pub base_ch: usize,
    /// Number of stride-2 encoder layers.
    pub depth: usize,
    pub out_ch: usize,
    /// Append the control matrix to every decoder input.
    pub lcm: bool,
    /// Convert the (single, 3-channel) input to luma before encoding.
    pub gray_head: bool,
}

impl UNetConfig {
    pub fn i2f(base_ch: usize) -> Self {
        UNetConfig {
            branches: vec![3],
            base_ch,
            depth: I2F_DEPTH,
            out_ch: 2,
            lcm: false,
            gray_head: true,
        }
    }

    pub fn dfg(base_ch: usize) -> Self {
        UNetConfig {
            branches: vec![3, 2],
            base_ch,
            depth: DFG_DEPTH,
            out_ch: 1,
            lcm: true,
            gray_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_ch == 0 || self.depth == 0 || self.out_ch == 0 || self.branches.is_empty() {
            return Err(Error::InvalidParameter(format!("degenerate network config {self:?}")));
        }
        if self.branches.contains(&0) {
            return Err(Error::InvalidParameter("encoder branch with zero channels".into()));
        }
        if self.gray_head && self.branches != [3] {
            return Err(Error::InvalidParameter(
                "grayscale head needs a single 3-channel branch".into(),
            ));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        width(self.base_ch, level)
    }

    /// Spatial sizes must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    pub fn encoder_specs(&self) -> Vec<Vec<BlockSpec>> {
        self.branches
            .iter()
            .map(|&c| {
                let in_ch = if self.gray_head { 1 } else { c };
                let mut specs = vec![BlockSpec::same(BlockKind::Cl, in_ch, self.width(0))];
                for k in 1..=self.depth {
                    specs.push(BlockSpec::down(BlockKind::Cil, self.width(k - 1), self.width(k)));
                }
                specs
            })
            .collect()
    }

    /// `depth + 1` blocks: stride-2 DR/DIR up to half resolution, one
    /// stride-1 refinement at half resolution, then UCT.
    pub fn decoder_specs(&self) -> Vec<BlockSpec> {
        let nb = self.branches.len();
        let l = usize::from(self.lcm);
        let d = self.depth;
        let mut specs = Vec::with_capacity(d + 1);
        let bottleneck_in = nb * self.width(d) + l;
        if d == 1 {
            specs.push(BlockSpec::same(BlockKind::Dr, bottleneck_in, self.width(0)));
        } else {
            specs.push(BlockSpec::down(BlockKind::Dr, bottleneck_in, self.width(d - 1)));
            for j in 1..d - 1 {
                let level = d - j;
                let in_ch = self.width(level) * (1 + nb) + l;
                specs.push(BlockSpec::down(BlockKind::Dir, in_ch, self.width(level - 1)));
            }
            let in_ch = self.width(1) * (1 + nb) + l;
            specs.push(BlockSpec::same(BlockKind::Dir, in_ch, self.width(0)));
        }
        let in_ch = self.width(0) * (1 + nb) + l;
        specs.push(BlockSpec::same(BlockKind::Uct, in_ch, self.out_ch));
        specs
    }

    fn all_specs(&self) -> Vec<BlockSpec> {
        let mut all: Vec<BlockSpec> = self.encoder_specs().into_iter().flatten().collect();
        all.extend(self.decoder_specs());
        all
    }

    pub fn param_count(&self) -> usize {
        self.all_specs().iter().map(BlockSpec::param_count).sum()
    }
}

#[derive(Clone, Debug)]
pub struct UNet {
    config: UNetConfig,
    encoders: Vec<Vec<BlockSpec>>,
    decoder: Vec<BlockSpec>,
    params: Vec<Tensor>,
}

impl UNet {
    pub fn new(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = init_blocks(&config.all_specs(), rng);
        Self::from_params(config, params)
    }

    pub fn from_params(config: UNetConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let encoders = config.encoder_specs();
        let decoder = config.decoder_specs();
        check_params(&Architecture::I2f(config.clone()).param_shapes()?, &params)?;
        Ok(UNet {
            config,
            encoders,
            decoder,
            params,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// `vars` must come from binding this network's parameters.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], inputs: &[Var], lcm: Option<&Tensor>) -> Result<Var> {
        let cfg = &self.config;
        if inputs.len() != cfg.branches.len() {
            return Err(Error::Shape(format!(
                "expected {} inputs, got {}",
                cfg.branches.len(),
                inputs.len()
            )));
        }
        let first = g.value(inputs[0]).shape();
        check_divisible(first, cfg.divisor(), "network")?;
        for (&x, &c) in inputs.iter().zip(&cfg.branches) {
            let s = g.value(x).shape();
            if s[1] != c || s[0] != first[0] || s[2..] != first[2..] {
                return Err(Error::Shape(format!(
                    "branch input {s:?} does not match {c} channels at {:?}",
                    &first[2..]
                )));
            }
        }
        let lcm = match (cfg.lcm, lcm) {
            (true, Some(m)) => {
                let s = m.shape();
                if s != [first[0], 1, first[2], first[3]] {
                    return Err(Error::Shape(format!(
                        "control matrix {s:?} does not match input {first:?}"
                    )));
                }
                Some(m)
            }
            (true, None) => return Err(Error::Shape("network needs a control matrix".into())),
            (false, _) => None,
        };
        let lcm_at = |g: &mut Graph, level: usize| -> Result<Option<Var>> {
            match lcm {
                Some(m) => Ok(Some(g.constant(m.avg_pool(1 << level)?))),
                None => Ok(None),
            }
        };

        let mut p = 0;
        // skips[level][branch]
        let mut skips: Vec<Vec<Var>> = vec![Vec::new(); cfg.depth + 1];
        for (branch, specs) in self.encoders.iter().enumerate() {
            let mut x = inputs[branch];
            if cfg.gray_head {
                x = g.grayscale(x)?;
            }
            for (level, spec) in specs.iter().enumerate() {
                x = spec.apply(g, x, vars[p], vars[p + 1])?;
                p += 2;
                skips[level].push(x);
            }
        }

        let d = cfg.depth;
        let mut parts = skips[d].clone();
        parts.extend(lcm_at(g, d)?);
        let mut x = g.concat(&parts)?;
        let n_dec = self.decoder.len();
        for (j, spec) in self.decoder.iter().enumerate() {
            if j > 0 {
                let level = if j == n_dec - 1 { 0 } else { d - j };
                if spec.kind == BlockKind::Uct {
                    x = g.upsample_nearest(x, 2);
                }
                let mut parts = vec![x];
                parts.extend(skips[level].iter().copied());
                parts.extend(lcm_at(g, level)?);
                x = g.concat(&parts)?;
            }
            x = if spec.kind == BlockKind::Uct {
                // Upsampling already happened so the skips could join at full size.
                let y = g.conv2d(x, vars[p], vars[p + 1], spec.stride, spec.padding)?;
                g.tanh(y)
            } else {
                spec.apply(g, x, vars[p], vars[p + 1])?
            };
            p += 2;
        }
        Ok(x)
    }
}

/// Normalizes predicted tangents; vectors shorter than [`TANGENT_CUTOFF`]
/// become zero. Magnitude is the clamped raw length.
pub fn tangents_to_field(t: &Tensor) -> Result<FlowField> {
    let [n, c, h, w] = t.shape();
    if n != 1 || c != 2 {
        return Err(Error::Shape(format!("expected [1, 2, H, W], got {:?}", t.shape())));
    }
    let d = t.data();
    let mut tangents = Vec::with_capacity(h * w);
    let mut magnitude = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let (x, y) = (d[i], d[h * w + i]);
        let len = x.hypot(y);
        if len > TANGENT_CUTOFF {
            tangents.push([x / len, y / len]);
        } else {
            tangents.push([0.0, 0.0]);
        }
        magnitude.push(len.min(1.0));
    }
    FlowField::new(w, h, tangents, magnitude)
}

/// Photograph to edge tangent flow.
#[derive(Clone, Debug)]
pub struct I2fNet {
    unet: UNet,
}

impl I2fNet {
    pub fn new(base_ch: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(I2fNet {
            unet: UNet::new(UNetConfig::i2f(base_ch), rng)?,
        })
    }

    pub fn with_config(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(I2fNet {
            unet: UNet::new(config, rng)?,
        })
    }

    pub fn from_params(config: UNetConfig, params: Vec<Tensor>) -> Result<Self> {
        Ok(I2fNet {
            unet: UNet::from_params(config, params)?,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        self.unet.config()
    }

    /// Raw tangent prediction in `[-1, 1]`, shape `[N, 2, H, W]`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], photo: Var) -> Result<Var> {
        self.unet.forward(g, vars, &[photo], None)
    }

    pub fn predict_tensor(&self, photo: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let x = g.constant(photo.clone());
        let y = self.forward(&mut g, &vars, x)?;
        Ok(g.value(y).clone())
    }

    pub fn predict(&self, img: &ImageBuf) -> Result<FlowField> {
        tangents_to_field(&self.predict_tensor(&Tensor::from_image(&img.to_rgb()))?)
    }
}

impl Network for I2fNet {
    fn architecture(&self) -> Architecture {
        Architecture::I2f(self.unet.config.clone())
    }

    fn params(&self) -> &[Tensor] {
        &self.unet.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.unet.params
    }
}

/// Double Flow Generator: photograph + flow + control matrix to drawing.
#[derive(Clone, Debug)]
pub struct Dfg {
    unet: UNet,
}

impl Dfg {
    pub fn new(base_ch: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::with_config(UNetConfig::dfg(base_ch), rng)
    }

    pub fn with_config(config: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Dfg {
            unet: UNet::new(config, rng)?,
        })
    }

    pub fn from_params(config: UNetConfig, params: Vec<Tensor>) -> Result<Self> {
        Ok(Dfg {
            unet: UNet::from_params(config, params)?,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        self.unet.config()
    }

    /// Drawing intensities in `[0, 1]`, shape `[N, 1, H, W]`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], photo: Var, etf: Var, lcm: &Tensor) -> Result<Var> {
        let y = self.unet.forward(g, vars, &[photo, etf], Some(lcm))?;
        Ok(g.affine(y, 0.5, 0.5))
    }

    pub fn predict_tensor(&self, photo: &Tensor, etf: &Tensor, lcm: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let p = g.constant(photo.clone());
        let e = g.constant(etf.clone());
        let y = self.forward(&mut g, &vars, p, e, lcm)?;
        Ok(g.value(y).clone())
    }
}

impl Network for Dfg {
    fn architecture(&self) -> Architecture {
        Architecture::Dfg(self.unet.config.clone())
    }

    fn params(&self) -> &[Tensor] {
        &self.unet.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.unet.params
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub layers: Vec<BlockSpec>,
}

impl DiscriminatorConfig {
    /// Six 4x4 convolutions with strides (2, 2, 2, 1, 1, 1) and widths
    /// `base * (1, 2, 4, 8, 8)` followed by a single-channel output.
    pub fn patch_gan(in_ch: usize, base: usize) -> Self {
        let w = [base, 2 * base, 4 * base, 8 * base, 8 * base];
        let mut layers = vec![BlockSpec::down(BlockKind::Cl, in_ch, w[0])];
        for i in 1..3 {
            layers.push(BlockSpec::down(BlockKind::Cil, w[i - 1], w[i]));
        }
        for i in 3..5 {
            layers.push(BlockSpec::new(BlockKind::Cil, w[i - 1], w[i], 4, 1, 1));
        }
        layers.push(BlockSpec::new(BlockKind::PlainConv, w[4], 1, 4, 1, 1));
        DiscriminatorConfig { layers }
    }

    pub fn validate(&self) -> Result<()> {
        let (first, last) = match (self.layers.first(), self.layers.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InvalidParameter("discriminator without layers".into())),
        };
        if first.in_ch == 0 || last.out_ch != 1 {
            return Err(Error::InvalidParameter(
                "discriminator must map a nonempty input to one channel".into(),
            ));
        }
        for pair in self.layers.windows(2) {
            if pair[0].out_ch != pair[1].in_ch {
                return Err(Error::InvalidParameter("discriminator layer widths do not chain".into()));
            }
        }
        if self
            .layers
            .iter()
            .any(|l| matches!(l.kind, BlockKind::Dr | BlockKind::Dir | BlockKind::Uct) || l.stride == 0)
        {
            return Err(Error::InvalidParameter(
                "discriminator layers must be strided convolutions".into(),
            ));
        }
        Ok(())
    }

    pub fn in_ch(&self) -> usize {
        self.layers[0].in_ch
    }

    /// Input extent seen by one output logit.
    pub fn receptive_field(&self) -> usize {
        let (mut r, mut jump) = (1, 1);
        for l in &self.layers {
            r += (l.kernel - 1) * jump;
            jump *= l.stride;
        }
        r
    }

    /// Side length of the logit map for a square input, if it is large
    /// enough.
    pub fn patch_map_size(&self, size: usize) -> Option<usize> {
        self.layers
            .iter()
            .try_fold(size, |s, l| l.output_size(s).filter(|&o| o > 0))
    }
}

/// Conditional patch discriminator.
#[derive(Clone, Debug)]
pub struct PatchDiscriminator {
    config: DiscriminatorConfig,
    params: Vec<Tensor>,
}

impl PatchDiscriminator {
    pub fn new(config: DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = init_blocks(&config.layers, rng);
        Ok(PatchDiscriminator { config, params })
    }

    pub fn from_params(config: DiscriminatorConfig, params: Vec<Tensor>) -> Result<Self> {
        check_params(&Architecture::Discriminator(config.clone()).param_shapes()?, &params)?;
        Ok(PatchDiscriminator { config, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    /// Logit map for `candidate` judged under `condition`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], condition: Var, candidate: Var) -> Result<Var> {
        let mut x = g.concat(&[condition, candidate])?;
        let s = g.value(x).shape();
        if s[1] != self.config.in_ch() {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {}",
                self.config.in_ch(),
                s[1]
            )));
        }
        if self.config.patch_map_size(s[2].min(s[3])).is_none() {
            return Err(Error::Shape(format!(
                "input {}x{} is too small for the discriminator",
                s[2], s[3]
            )));
        }
        for (i, spec) in self.config.layers.iter().enumerate() {
            x = spec.apply(g, x, vars[2 * i], vars[2 * i + 1])?;
        }
        Ok(x)
    }
}

impl Network for PatchDiscriminator {
    fn architecture(&self) -> Architecture {
        Architecture::Discriminator(self.config.clone())
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LcrConfig {
    pub base_ch: usize,
    /// Number of stride-2 layers.
    pub depth: usize,
    /// Replace the per-pixel map by its spatial mean.
    #[serde(default)]
    pub global: bool,
}

impl LcrConfig {
    pub fn new(base_ch: usize) -> Self {
        LcrConfig {
            base_ch,
            depth: LCR_DEPTH,
            global: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_ch == 0 || self.depth == 0 {
            return Err(Error::InvalidParameter(format!("degenerate regressor config {self:?}")));
        }
        Ok(())
    }

    pub fn specs(&self) -> Vec<BlockSpec> {
        let mut specs = Vec::with_capacity(self.depth + 1);
        let mut in_ch = 3;
        for k in 0..self.depth {
            let out = width(self.base_ch, k);
            specs.push(BlockSpec::down(BlockKind::Cil, in_ch, out));
            in_ch = out;
        }
        specs.push(BlockSpec::new(BlockKind::PlainConv, in_ch, 1, 1, 1, 0));
        specs
    }
}

/// Line control regressor: drawing + flow to a control map in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Lcr {
    config: LcrConfig,
    params: Vec<Tensor>,
}

impl Lcr {
    pub fn new(config: LcrConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let params = init_blocks(&config.specs(), rng);
        Ok(Lcr { config, params })
    }

    pub fn from_params(config: LcrConfig, params: Vec<Tensor>) -> Result<Self> {
        check_params(&Architecture::Lcr(config.clone()).param_shapes()?, &params)?;
        Ok(Lcr { config, params })
    }

    pub fn config(&self) -> &LcrConfig {
        &self.config
    }

    /// Control map `[N, 1, H, W]` for a drawing `[N, 1, H, W]` and flow
    /// `[N, 2, H, W]`.
    pub fn forward(&self, g: &mut Graph, vars: &[Var], drawing: Var, etf: Var) -> Result<Var> {
        let (sd, se) = (g.value(drawing).shape(), g.value(etf).shape());
        if sd[1] != 1 || se[1] != 2 || sd[0] != se[0] || sd[2..] != se[2..] {
            return Err(Error::Shape(format!("regressor inputs {sd:?} and {se:?} do not match")));
        }
        check_divisible(sd, 1 << self.config.depth, "regressor")?;
        let mut x = g.concat(&[drawing, etf])?;
        for (i, spec) in self.config.specs().iter().enumerate() {
            x = spec.apply(g, x, vars[2 * i], vars[2 * i + 1])?;
        }
        x = g.sigmoid(x);
        if self.config.global {
            x = g.spatial_mean(x);
        }
        g.resize_bilinear(x, sd[2], sd[3])
    }

    pub fn predict_tensor(&self, drawing: &Tensor, etf: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let d = g.constant(drawing.clone());
        let e = g.constant(etf.clone());
        let y = self.forward(&mut g, &vars, d, e)?;
        Ok(g.value(y).clone())
    }
}

impl Network for Lcr {
    fn architecture(&self) -> Architecture {
        Architecture::Lcr(self.config.clone())
    }

    fn params(&self) -> &[Tensor] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }
}

/// I2FNet + DFG parameter count at a given base width.
pub fn generator_param_count(base_ch: usize) -> usize {
    UNetConfig::i2f(base_ch).param_count() + UNetConfig::dfg(base_ch).param_count()
}
