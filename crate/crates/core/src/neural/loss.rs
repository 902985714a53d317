//! Training objectives built on the graph.

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::graph::{Graph, Var};

/// Mean absolute difference between generated and ground-truth drawings.
pub fn loss_pixel(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.l1(pred, target)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Generator,
    Discriminator,
}

/// Non-saturating logistic loss on patch logits.
///
/// The discriminator minimizes `mean softplus(-real) + mean softplus(fake)`;
/// the generator minimizes `mean softplus(-fake)`, and `d_real` is ignored.
pub fn loss_adversarial(g: &mut Graph, d_real: Option<Var>, d_fake: Var, role: Role) -> Result<Var> {
    match role {
        Role::Generator => Ok(g.softplus_mean(d_fake, -1.0)),
        Role::Discriminator => {
            let real = d_real.ok_or_else(|| {
                crate::Error::InvalidParameter("discriminator loss needs real logits".into())
            })?;
            let r = g.softplus_mean(real, -1.0);
            let f = g.softplus_mean(d_fake, 1.0);
            g.weighted_sum(&[r, f], &[1.0, 1.0])
        }
    }
}

/// Mean absolute difference between the regressed and requested control maps.
pub fn loss_control(g: &mut Graph, alpha_hat: Var, lcm: Var) -> Result<Var> {
    g.l1(alpha_hat, lcm)
}

/// Differentiable spectral distance, identical in value to
/// [`crate::metrics::fft_distance`] averaged over planes.
pub fn loss_fft(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.fft_l1(pred, target)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub adv: f64,
    pub pixel: f64,
    pub lc: f64,
    pub fft: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 1.0,
            pixel: 100.0,
            lc: 1.0,
            fft: 0.05,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.adv, self.pixel, self.lc, self.fft]
    }

    /// Weighted total of plain component values, in the same order of
    /// accumulation as [`loss_total`].
    pub fn total(&self, parts: [f64; 4]) -> f64 {
        parts
            .iter()
            .zip(self.as_array())
            .fold(0.0, |acc, (p, w)| acc + w * p)
    }
}

/// The four generator loss components.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub adv: Var,
    pub pixel: Var,
    pub lc: Var,
    pub fft: Var,
}

pub fn loss_total(g: &mut Graph, parts: LossParts, weights: &LossWeights) -> Result<Var> {
    g.weighted_sum(&[parts.adv, parts.pixel, parts.lc, parts.fft], &weights.as_array())
}
