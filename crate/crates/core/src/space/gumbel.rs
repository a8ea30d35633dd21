use rand::Rng;

use crate::error::{bail, Result};
use crate::tensor::Var;

const U_MIN: f64 = 1e-10;

/// Standard Gumbel noise `-ln(-ln u)` with `u` clamped away from 0 and 1.
pub fn gumbel_noise<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.gen::<f64>().clamp(U_MIN, 1.0 - U_MIN);
            -(-u.ln()).ln()
        })
        .collect()
}

/// `softmax((theta + g) / tau)` for given noise `g`.
pub fn relaxed_softmax(theta: &[f64], noise: &[f64], tau: f64) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {}", tau);
    }
    if theta.len() != noise.len() || theta.is_empty() {
        bail!(Dimension, "{} logits with {} noise values", theta.len(), noise.len());
    }
    let z: Vec<f64> = theta.iter().zip(noise).map(|(t, g)| (t + g) / tau).collect();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// One Gumbel-Softmax sample of the categorical distribution with logits
/// `theta`.
pub fn gumbel_softmax<R: Rng>(theta: &[f64], tau: f64, rng: &mut R) -> Result<Vec<f64>> {
    let g = gumbel_noise(theta.len(), rng);
    relaxed_softmax(theta, &g, tau)
}

/// Differentiable version of [`relaxed_softmax`] on a tape.
pub fn relaxed_softmax_var<'t>(theta: &Var<'t>, noise: &[f64], tau: f64) -> Result<Var<'t>> {
    if !(tau > 0.0) {
        bail!(Config, "temperature must be positive, got {}", tau);
    }
    let g = theta.tape().constant(theta.shape(), noise.to_vec())?;
    theta.add(&g)?.scale(1.0 / tau).softmax()
}
