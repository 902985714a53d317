//! Finite-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

pub const MIN_COORDINATES: usize = 100;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Coordinates to probe; at least [`MIN_COORDINATES`] unless the inputs
    /// have fewer.
    pub coordinates: usize,
    /// Denominator floor for the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-6,
            coordinates: MIN_COORDINATES,
            floor: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares the gradient of the scalar built by `f` with central
/// differences `(f(x + e) - f(x - e)) / 2e` over a random subset of input
/// coordinates.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(opts.epsilon > 0.0 && opts.epsilon.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "finite-difference step must be positive, got {}",
            opts.epsilon
        )));
    }
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        let v = g.value(out);
        if v.len() != 1 {
            return Err(Error::Shape("grad_check needs a scalar function".into()));
        }
        let v = v.item();
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("function value {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
        .collect();

    let total: usize = inputs.iter().map(Tensor::len).sum();
    let n = opts.coordinates.max(MIN_COORDINATES).min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut picks = sample(&mut rng, total, n).into_vec();
    picks.sort_unstable();

    let mut work = inputs.to_vec();
    let mut max_rel: f64 = 0.0;
    for flat in picks {
        let (mut ti, mut idx) = (0, flat);
        while idx >= inputs[ti].len() {
            idx -= inputs[ti].len();
            ti += 1;
        }
        let x0 = inputs[ti].data()[idx];
        work[ti].data_mut()[idx] = x0 + opts.epsilon;
        let fp = eval(&work)?;
        work[ti].data_mut()[idx] = x0 - opts.epsilon;
        let fm = eval(&work)?;
        work[ti].data_mut()[idx] = x0;
        let numeric = (fp - fm) / (2.0 * opts.epsilon);
        let a = analytic[ti][idx];
        if !a.is_finite() {
            return Err(Error::NonFinite(format!("gradient {a}")));
        }
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        checked: n,
    })
}
