//! Seeded training loops for the flow generator, the regressor and the
//! drawing generator.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Sample, SampleRef};
use crate::error::{Error, Result};
use crate::metrics::ssim;
use crate::raster::{FlowField, ImageBuf, LineDrawing};

use super::graph::{Graph, Var};
use super::loss::{loss_adversarial, loss_control, loss_fft, loss_pixel, loss_total, LossParts, LossWeights, Role};
use super::nets::{tangents_to_field, Dfg, DiscriminatorConfig, I2fNet, Lcr, LcrConfig, Network, PatchDiscriminator, UNetConfig};
use super::optim::Adam;
use super::tensor::Tensor;

const STREAM_GENERATOR: u64 = 0;
const STREAM_DISCRIMINATOR: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// The stream generator weights are drawn from under `seed`. A network built
/// from it is the untrained starting point of a run with that seed.
pub fn generator_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, STREAM_GENERATOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub image_size: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Stop after this many optimizer steps even if epochs remain.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            learning_rate: 0.0002,
            epochs: 200,
            batch_size: 2,
            image_size: 64,
            weights: LossWeights::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with batch size 1.
    pub fn i2f() -> Self {
        TrainConfig {
            batch_size: 1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.adam_beta1, self.adam_beta2, self.learning_rate]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        let w = self.weights.as_array();
        if !positive
            || self.adam_beta1 >= 1.0
            || self.adam_beta2 >= 1.0
            || self.epochs == 0
            || self.batch_size == 0
            || self.image_size == 0
            || w.iter().any(|v| *v < 0.0 || !v.is_finite())
            || self.max_steps == Some(0)
        {
            return Err(Error::InvalidParameter(format!("invalid training config {self:?}")));
        }
        Ok(())
    }

    fn adam(&self, params: &[Tensor]) -> Adam {
        Adam::new(params, self.learning_rate, self.adam_beta1, self.adam_beta2)
    }
}

/// Losses recorded after one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub d_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub adv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub pixel: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fft: Option<f64>,
    pub total: f64,
}

pub fn history_to_jsonl(history: &[StepLog]) -> Result<String> {
    let mut out = String::new();
    for h in history {
        out.push_str(&serde_json::to_string(h)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_history(history: &[StepLog], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(history_to_jsonl(history)?.as_bytes())
        .map_err(|e| Error::io(path, e))
}

/// One preloaded training example at the network resolution.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub photo: Tensor,
    pub etf: Tensor,
    pub drawing: Option<Tensor>,
    pub alpha: Option<f64>,
}

fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    (((i as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1)
}

fn resize_field(f: &FlowField, size: usize) -> Result<FlowField> {
    if f.width() == size && f.height() == size {
        return Ok(f.clone());
    }
    let mut t = Vec::with_capacity(size * size);
    let mut m = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = nearest_index(y, f.height(), size);
        for x in 0..size {
            let sx = nearest_index(x, f.width(), size);
            t.push(f.tangent(sx, sy));
            m.push(f.magnitude_at(sx, sy));
        }
    }
    FlowField::new(size, size, t, m)
}

fn resize_drawing(d: &LineDrawing, size: usize) -> Result<LineDrawing> {
    if d.width() == size && d.height() == size {
        return Ok(d.clone());
    }
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        let sy = nearest_index(y, d.height(), size);
        for x in 0..size {
            out.push(d.get(nearest_index(x, d.width(), size), sy));
        }
    }
    LineDrawing::new(size, size, out)
}

impl TrainSample {
    /// Resizes to `size`×`size`: bilinear for the photograph, nearest for
    /// the flow and the drawing so they stay unit-or-zero and binary.
    pub fn from_sample(s: &Sample, size: usize) -> Result<Self> {
        let img = if s.image.width() == size && s.image.height() == size {
            s.image.to_rgb()
        } else {
            s.image.to_rgb().resize(size, size)?
        };
        Ok(TrainSample {
            photo: Tensor::from_image(&img),
            etf: Tensor::from_field(&resize_field(&s.field, size)?),
            drawing: s
                .drawing
                .as_ref()
                .map(|d| resize_drawing(d, size).map(|d| Tensor::from_drawing(&d)))
                .transpose()?,
            alpha: s.alpha,
        })
    }

    pub fn load_all(refs: &[SampleRef], size: usize) -> Result<Vec<Self>> {
        refs.iter().map(|r| TrainSample::from_sample(&r.load()?, size)).collect()
    }

    fn drawing(&self) -> Result<&Tensor> {
        self.drawing
            .as_ref()
            .ok_or_else(|| Error::Dataset("sample has no drawing".into()))
    }

    fn alpha(&self) -> Result<f64> {
        self.alpha
            .ok_or_else(|| Error::Dataset("sample has no recorded alpha".into()))
    }

    /// Constant control matrix at the recorded alpha.
    pub fn lcm(&self) -> Result<Tensor> {
        let [_, _, h, w] = self.photo.shape();
        Ok(Tensor::filled([1, 1, h, w], self.alpha()?))
    }
}

/// Epoch-major batch schedule; each epoch is a fresh shuffle.
fn schedule(n: usize, cfg: &TrainConfig) -> Vec<(usize, Vec<usize>)> {
    let mut rng = stream(cfg.seed, STREAM_SHUFFLE);
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if out.len() == limit {
                break 'epochs;
            }
            out.push((epoch, chunk.to_vec()));
        }
    }
    out
}

fn stack(items: impl Iterator<Item = Result<Tensor>>) -> Result<Tensor> {
    let owned = items.collect::<Result<Vec<_>>>()?;
    Tensor::stack(&owned.iter().collect::<Vec<_>>())
}

fn check_data(data: &[TrainSample], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Dataset("no training samples".into()));
    }
    Ok(())
}

fn grads_of(g: &Graph, loss: Var, vars: &[Var], params: &[Tensor]) -> Result<Vec<Vec<f64>>> {
    let grads = g.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p.len()))
        .collect())
}

/// One discriminator update on real and (detached) generated candidates.
fn discriminator_step(
    d: &mut PatchDiscriminator,
    opt: &mut Adam,
    condition: &Tensor,
    real: &Tensor,
    fake: &Tensor,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = d.bind(&mut g, true);
    let cond = g.constant(condition.clone());
    let r = g.constant(real.clone());
    let f = g.constant(fake.clone());
    let dr = d.forward(&mut g, &vars, cond, r)?;
    let df = d.forward(&mut g, &vars, cond, f)?;
    let loss = loss_adversarial(&mut g, Some(dr), df, Role::Discriminator)?;
    let grads = grads_of(&g, loss, &vars, d.params())?;
    opt.step(d.params_mut(), &grads)?;
    Ok(g.value(loss).item())
}

/// Adversarial flow generator training: alternating discriminator and
/// generator steps; the generator minimizes `adv + pixel * L1(flow)`.
pub fn train_i2fnet(
    data: &[TrainSample],
    generator: UNetConfig,
    discriminator: DiscriminatorConfig,
    cfg: &TrainConfig,
) -> Result<(I2fNet, Vec<StepLog>)> {
    check_data(data, cfg)?;
    let mut gen = I2fNet::with_config(generator, &mut stream(cfg.seed, STREAM_GENERATOR))?;
    let mut disc = PatchDiscriminator::new(discriminator, &mut stream(cfg.seed, STREAM_DISCRIMINATOR))?;
    let mut opt_g = cfg.adam(gen.params());
    let mut opt_d = cfg.adam(disc.params());
    let mut history = Vec::new();
    for (step, (epoch, batch)) in schedule(data.len(), cfg).into_iter().enumerate() {
        let photo = stack(batch.iter().map(|&i| Ok(data[i].photo.clone())))?;
        let target = stack(batch.iter().map(|&i| Ok(data[i].etf.clone())))?;

        let mut g = Graph::new();
        let gvars = gen.bind(&mut g, true);
        let p = g.constant(photo.clone());
        let fake = gen.forward(&mut g, &gvars, p)?;
        let d_loss = discriminator_step(&mut disc, &mut opt_d, &photo, &target, g.value(fake))?;

        let dvars = disc.bind(&mut g, false);
        let t = g.constant(target);
        let logits = disc.forward(&mut g, &dvars, p, fake)?;
        let adv = loss_adversarial(&mut g, None, logits, Role::Generator)?;
        let pixel = g.l1(fake, t)?;
        let total = g.weighted_sum(&[adv, pixel], &[cfg.weights.adv, cfg.weights.pixel])?;
        let grads = grads_of(&g, total, &gvars, gen.params())?;
        opt_g.step(gen.params_mut(), &grads)?;
        history.push(StepLog {
            step,
            epoch,
            d_loss: Some(d_loss),
            adv: Some(g.value(adv).item()),
            pixel: Some(g.value(pixel).item()),
            lc: None,
            fft: None,
            total: g.value(total).item(),
        });
    }
    Ok((gen, history))
}

/// Regressor training on ground-truth drawings, their flow and the
/// recorded alpha.
pub fn train_lcr(data: &[TrainSample], config: LcrConfig, cfg: &TrainConfig) -> Result<(Lcr, Vec<StepLog>)> {
    check_data(data, cfg)?;
    let mut lcr = Lcr::new(config, &mut stream(cfg.seed, STREAM_GENERATOR))?;
    let mut opt = cfg.adam(lcr.params());
    let mut history = Vec::new();
    for (step, (epoch, batch)) in schedule(data.len(), cfg).into_iter().enumerate() {
        let drawing = stack(batch.iter().map(|&i| data[i].drawing().cloned()))?;
        let etf = stack(batch.iter().map(|&i| Ok(data[i].etf.clone())))?;
        let lcm = stack(batch.iter().map(|&i| data[i].lcm()))?;
        let mut g = Graph::new();
        let vars = lcr.bind(&mut g, true);
        let d = g.constant(drawing);
        let e = g.constant(etf);
        let a = g.constant(lcm);
        let ahat = lcr.forward(&mut g, &vars, d, e)?;
        let loss = loss_control(&mut g, ahat, a)?;
        let grads = grads_of(&g, loss, &vars, lcr.params())?;
        opt.step(lcr.params_mut(), &grads)?;
        let v = g.value(loss).item();
        history.push(StepLog {
            step,
            epoch,
            d_loss: None,
            adv: None,
            pixel: None,
            lc: Some(v),
            fft: None,
            total: v,
        });
    }
    Ok((lcr, history))
}

/// Mean absolute control error of a regressor over samples.
pub fn lcr_error(lcr: &Lcr, data: &[TrainSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("no samples".into()));
    }
    let mut total = 0.0;
    for s in data {
        let ahat = lcr.predict_tensor(s.drawing()?, &s.etf)?;
        let a = s.alpha()?;
        total += ahat.data().iter().map(|v| (v - a).abs()).sum::<f64>() / ahat.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Generator objective used by [`train_dfg`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    /// Adversarial, pixel, control and spectral terms.
    #[default]
    Full,
    /// Pixel term only; no discriminator is trained.
    PixelOnly,
}

/// Frozen networks the drawing generator depends on.
#[derive(Clone, Copy)]
pub struct Frozen<'a> {
    pub i2f: &'a I2fNet,
    pub lcr: &'a Lcr,
}

/// Flow predicted by the frozen generator, as a `[1, 2, H, W]` tensor of
/// unit-or-zero tangents.
pub fn predicted_flow(i2f: &I2fNet, photo: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_field(&tangents_to_field(&i2f.predict_tensor(photo)?)?))
}

pub fn train_dfg(
    data: &[TrainSample],
    generator: UNetConfig,
    discriminator: DiscriminatorConfig,
    cfg: &TrainConfig,
    frozen: Option<Frozen<'_>>,
    objective: Objective,
) -> Result<(Dfg, Vec<StepLog>)> {
    check_data(data, cfg)?;
    let frozen = frozen.ok_or_else(|| {
        Error::InvalidParameter("drawing generator training needs the frozen flow generator and regressor".into())
    })?;
    let flows = data
        .iter()
        .map(|s| predicted_flow(frozen.i2f, &s.photo))
        .collect::<Result<Vec<_>>>()?;
    let mut gen = Dfg::with_config(generator, &mut stream(cfg.seed, STREAM_GENERATOR))?;
    let mut disc = PatchDiscriminator::new(discriminator, &mut stream(cfg.seed, STREAM_DISCRIMINATOR))?;
    let mut opt_g = cfg.adam(gen.params());
    let mut opt_d = cfg.adam(disc.params());
    let mut history = Vec::new();
    for (step, (epoch, batch)) in schedule(data.len(), cfg).into_iter().enumerate() {
        let photo = stack(batch.iter().map(|&i| Ok(data[i].photo.clone())))?;
        let etf = stack(batch.iter().map(|&i| Ok(flows[i].clone())))?;
        let truth = stack(batch.iter().map(|&i| data[i].drawing().cloned()))?;
        let lcm = stack(batch.iter().map(|&i| data[i].lcm()))?;

        let mut g = Graph::new();
        let gvars = gen.bind(&mut g, true);
        let p = g.constant(photo.clone());
        let e = g.constant(etf);
        let c = g.constant(truth.clone());
        let fake = gen.forward(&mut g, &gvars, p, e, &lcm)?;
        let pixel = loss_pixel(&mut g, fake, c)?;

        let log = match objective {
            Objective::PixelOnly => {
                let total = g.weighted_sum(&[pixel], &[cfg.weights.pixel])?;
                let grads = grads_of(&g, total, &gvars, gen.params())?;
                opt_g.step(gen.params_mut(), &grads)?;
                StepLog {
                    step,
                    epoch,
                    d_loss: None,
                    adv: None,
                    pixel: Some(g.value(pixel).item()),
                    lc: None,
                    fft: None,
                    total: g.value(total).item(),
                }
            }
            Objective::Full => {
                let d_loss = discriminator_step(&mut disc, &mut opt_d, &photo, &truth, g.value(fake))?;
                let dvars = disc.bind(&mut g, false);
                let logits = disc.forward(&mut g, &dvars, p, fake)?;
                let adv = loss_adversarial(&mut g, None, logits, Role::Generator)?;
                let lvars = frozen.lcr.bind(&mut g, false);
                let ahat = frozen.lcr.forward(&mut g, &lvars, fake, e)?;
                let a = g.constant(lcm);
                let lc = loss_control(&mut g, ahat, a)?;
                let fft = loss_fft(&mut g, fake, c)?;
                let parts = LossParts { adv, pixel, lc, fft };
                let total = loss_total(&mut g, parts, &cfg.weights)?;
                let grads = grads_of(&g, total, &gvars, gen.params())?;
                opt_g.step(gen.params_mut(), &grads)?;
                StepLog {
                    step,
                    epoch,
                    d_loss: Some(d_loss),
                    adv: Some(g.value(adv).item()),
                    pixel: Some(g.value(pixel).item()),
                    lc: Some(g.value(lc).item()),
                    fft: Some(g.value(fft).item()),
                    total: g.value(total).item(),
                }
            }
        };
        history.push(log);
    }
    Ok((gen, history))
}

/// Mean SSIM between generator output (intensities in `[0, 1]`) and the
/// ground-truth drawings, at each sample's recorded alpha.
pub fn dfg_mean_ssim(dfg: &Dfg, i2f: &I2fNet, data: &[TrainSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset("no samples".into()));
    }
    let mut total = 0.0;
    for s in data {
        let flow = predicted_flow(i2f, &s.photo)?;
        let out = dfg.predict_tensor(&s.photo, &flow, &s.lcm()?)?;
        let truth: ImageBuf = s.drawing()?.to_image()?;
        total += ssim(&out.to_image()?, &truth)?;
    }
    Ok(total / data.len() as f64)
}
